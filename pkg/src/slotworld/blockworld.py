"""2D pixel manipulation tasks: reach and push with colored blocks.

A desk-scale stand-in for tabletop robot manipulation: the workspace is the
unit square, the end-effector is a disk moved by direct velocity control, and
tasks come in four variants. In *specific* tasks the target object is the
single red one; in *distinct* tasks it is the odd-one-out color. Reach tasks
require moving the effector to the target object, push tasks require sliding
the target block onto a goal marker.

Rewards are shaped exponentials of workspace distances and success is a hard
distance threshold evaluated at the final step of an episode. Episode length,
control gains, and workspace extents are desk-scale choices.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

TASKS = ("reach-specific", "reach-distinct", "push-specific", "push-distinct")

# Workspace geometry (unit-square coordinates).
EFFECTOR_RADIUS = 0.045
OBJECT_RADIUS = 0.055
BLOCK_HALF_SIDE = 0.05
GOAL_RING_RADIUS = 0.07
GOAL_RING_WIDTH = 0.012
EFFECTOR_STEP = 0.05

BACKGROUND = np.array([0.08, 0.08, 0.10])
EFFECTOR_COLOR = np.array([0.92, 0.92, 0.95])
GOAL_COLOR = np.array([0.55, 0.55, 0.55])

# Fixed palette of saturated colors; index 0 (red) is the "specific" cue and
# never appears on distractors in specific tasks.
PALETTE = np.array(
    [
        [0.90, 0.10, 0.10],  # red
        [0.10, 0.75, 0.15],  # green
        [0.15, 0.35, 0.95],  # blue
        [0.95, 0.85, 0.10],  # yellow
        [0.90, 0.15, 0.85],  # magenta
        [0.10, 0.80, 0.85],  # cyan
        [0.95, 0.55, 0.10],  # orange
        [0.55, 0.20, 0.90],  # purple
    ]
)
RED = 0


@dataclass
class EnvConfig:
    task: str = "reach-specific"
    image_size: int = 64
    episode_length: int = 50
    goal_temp: float = 20.0       # steepness of the distance-to-goal reward
    contact_temp: float = 10.0    # steepness of the effector-to-block term
    success_dist: float = 0.05    # success threshold on the task distance
    max_distractors: int = 4

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}, expected one of {TASKS}")
        if self.image_size < 32:
            raise ValueError("image_size must be at least 32")
        if self.goal_temp <= 0 or self.contact_temp <= 0 or self.success_dist <= 0:
            raise ValueError("temperatures and success_dist must be positive")


@dataclass
class SceneObject:
    position: np.ndarray          # (2,) center in [0, 1]^2
    color: np.ndarray             # (3,) rgb in [0, 1]
    shape: str                    # "disk" or "block"


@dataclass
class EnvState:
    effector: np.ndarray | None   # (2,) or None for bare-scene rendering
    objects: list[SceneObject]
    goal: np.ndarray              # task target position: goal marker (push)
                                  # or a copy of the target object position (reach)
    target_index: int
    step_count: int = 0
    done: bool = False

    def copy(self) -> "EnvState":
        return EnvState(
            effector=None if self.effector is None else self.effector.copy(),
            objects=[dataclasses.replace(o, position=o.position.copy()) for o in self.objects],
            goal=self.goal.copy(),
            target_index=self.target_index,
            step_count=self.step_count,
            done=self.done,
        )


def reach_reward(effector_pos, target_pos, goal_temp: float = 20.0) -> float:
    """exp(-goal_temp * ||effector - target||); 1 at contact, decaying with distance."""
    effector_pos = np.asarray(effector_pos, dtype=np.float64)
    target_pos = np.asarray(target_pos, dtype=np.float64)
    if not (np.isfinite(effector_pos).all() and np.isfinite(target_pos).all()):
        raise ValueError("positions must be finite")
    return float(math.exp(-goal_temp * np.linalg.norm(effector_pos - target_pos)))


def push_reward(
    effector_pos, block_pos, goal_pos, goal_temp: float = 20.0, contact_temp: float = 10.0
) -> float:
    """0.9 * exp(-goal_temp * ||block - goal||) + 0.1 * exp(-contact_temp * ||effector - block||)."""
    effector_pos = np.asarray(effector_pos, dtype=np.float64)
    block_pos = np.asarray(block_pos, dtype=np.float64)
    goal_pos = np.asarray(goal_pos, dtype=np.float64)
    if not all(np.isfinite(p).all() for p in (effector_pos, block_pos, goal_pos)):
        raise ValueError("positions must be finite")
    to_goal = np.linalg.norm(block_pos - goal_pos)
    to_block = np.linalg.norm(effector_pos - block_pos)
    return float(0.9 * math.exp(-goal_temp * to_goal) + 0.1 * math.exp(-contact_temp * to_block))


def task_distance(state: EnvState, config: EnvConfig) -> float:
    """Distance whose threshold defines success: effector-target for reach,
    block-goal for push."""
    if config.task.startswith("reach"):
        return float(np.linalg.norm(state.effector - state.goal))
    target = state.objects[state.target_index]
    return float(np.linalg.norm(target.position - state.goal))


def compute_reward(state: EnvState, config: EnvConfig) -> float:
    if config.task.startswith("reach"):
        return reach_reward(state.effector, state.goal, config.goal_temp)
    target = state.objects[state.target_index]
    return push_reward(
        state.effector, target.position, state.goal, config.goal_temp, config.contact_temp
    )


def compute_success(state: EnvState, config: EnvConfig) -> bool:
    return task_distance(state, config) < config.success_dist


def _sample_positions(rng: np.random.Generator, count: int, lo: float, hi: float,
                      min_sep: float, avoid: list[np.ndarray] | None = None) -> list[np.ndarray]:
    """Rejection-sample `count` points in [lo, hi]^2 with pairwise separation."""
    points: list[np.ndarray] = []
    keep_away = list(avoid or [])
    for _ in range(count):
        for _attempt in range(1000):
            p = rng.uniform(lo, hi, size=2)
            if all(np.linalg.norm(p - q) >= min_sep for q in points + keep_away):
                points.append(p)
                break
        else:
            raise RuntimeError("could not place objects without overlap")
    return points


def sample_state(config: EnvConfig, rng: np.random.Generator) -> EnvState:
    """Draw an initial scene satisfying the task's target-selection rule."""
    push = config.task.startswith("push")
    shape = "block" if push else "disk"

    if config.task.endswith("specific"):
        n_objects = 1 + int(rng.integers(0, config.max_distractors + 1))
        distractor_colors = rng.choice(
            np.arange(1, len(PALETTE)), size=n_objects - 1, replace=False
        )
        target_index = int(rng.integers(n_objects))
        color_ids = list(distractor_colors)
        color_ids.insert(target_index, RED)
    else:
        n_objects = int(rng.integers(3, 6))
        majority, odd = rng.choice(len(PALETTE), size=2, replace=False)
        target_index = int(rng.integers(n_objects))
        color_ids = [int(majority)] * (n_objects - 1)
        color_ids.insert(target_index, int(odd))

    positions = _sample_positions(rng, n_objects, 0.1, 0.9, 2 * OBJECT_RADIUS + 0.02)
    objects = [
        SceneObject(position=p, color=PALETTE[c].copy(), shape=shape)
        for p, c in zip(positions, color_ids)
    ]

    target_pos = objects[target_index].position
    if push:
        # Goal marker away from the target block so success needs actual pushing.
        for _attempt in range(1000):
            goal = rng.uniform(0.12, 0.88, size=2)
            if np.linalg.norm(goal - target_pos) >= 0.25:
                break
        else:
            raise RuntimeError("could not place goal marker")
        avoid = [o.position for o in objects]
        effector = _sample_positions(
            rng, 1, 0.08, 0.92, EFFECTOR_RADIUS + OBJECT_RADIUS + 0.01, avoid=avoid
        )[0]
    else:
        goal = target_pos.copy()
        for _attempt in range(1000):
            effector = rng.uniform(0.08, 0.92, size=2)
            if np.linalg.norm(effector - target_pos) >= 0.25:
                break
        else:
            raise RuntimeError("could not place effector")

    return EnvState(
        effector=effector, objects=objects, goal=goal, target_index=target_index
    )


def _resolve_pushing(state: EnvState) -> None:
    """Rigid 2D pushing: overlapping blocks are displaced along the contact
    normal until just touching. No friction or rotation; block-block overlap
    is relaxed over a few symmetric passes."""
    reach = EFFECTOR_RADIUS + OBJECT_RADIUS
    for obj in state.objects:
        delta = obj.position - state.effector
        dist = float(np.linalg.norm(delta))
        if dist < reach:
            normal = delta / dist if dist > 1e-9 else np.array([1.0, 0.0])
            obj.position = state.effector + normal * reach

    sep = 2 * OBJECT_RADIUS
    for _pass in range(3):
        moved = False
        for i in range(len(state.objects)):
            for j in range(i + 1, len(state.objects)):
                a, b = state.objects[i], state.objects[j]
                delta = b.position - a.position
                dist = float(np.linalg.norm(delta))
                if dist < sep:
                    normal = delta / dist if dist > 1e-9 else np.array([1.0, 0.0])
                    push_out = 0.5 * (sep - dist)
                    a.position = a.position - normal * push_out
                    b.position = b.position + normal * push_out
                    moved = True
        if not moved:
            break
    for obj in state.objects:
        np.clip(obj.position, OBJECT_RADIUS, 1.0 - OBJECT_RADIUS, out=obj.position)


def step_state(state: EnvState, action, config: EnvConfig) -> tuple[EnvState, float, bool, bool]:
    """Advance one control step; returns (state, reward, done, success).

    Success is only ever reported on the final step of the episode.
    """
    if state.done:
        raise RuntimeError("cannot step a finished episode; call reset")
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (4,):
        raise ValueError(f"action must be a 4-vector, got shape {action.shape}")
    if not np.isfinite(action).all():
        raise ValueError("action must be finite")
    action = np.clip(action, -1.0, 1.0)

    new = state.copy()
    new.effector = np.clip(
        new.effector + EFFECTOR_STEP * action[:2],
        EFFECTOR_RADIUS,
        1.0 - EFFECTOR_RADIUS,
    )
    if config.task.startswith("push"):
        _resolve_pushing(new)

    new.step_count = state.step_count + 1
    done = new.step_count >= config.episode_length
    new.done = done
    reward = compute_reward(new, config)
    success = bool(done and compute_success(new, config))
    return new, reward, done, success


def render_frame(state: EnvState, config: EnvConfig) -> np.ndarray:
    """Deterministic rasterization to a float32 (H, W, 3) image in [0, 1].

    Position (x, y) maps to column x*W, row y*H. Layers are painted back to
    front (background, goal ring, objects in index order, effector) with a
    one-pixel anti-aliasing ramp.
    """
    size = config.image_size
    img = np.tile(BACKGROUND, (size, size, 1)).astype(np.float64)
    centers = (np.arange(size) + 0.5) / size
    ys, xs = np.meshgrid(centers, centers, indexing="ij")
    ramp = 1.0 / size

    def paint(signed_dist: np.ndarray, color: np.ndarray) -> None:
        alpha = np.clip(0.5 - signed_dist / ramp, 0.0, 1.0)[..., None]
        img[:] = img * (1.0 - alpha) + color * alpha

    if config.task.startswith("push"):
        d = np.hypot(xs - state.goal[0], ys - state.goal[1])
        paint(np.abs(d - GOAL_RING_RADIUS) - GOAL_RING_WIDTH, GOAL_COLOR)

    for obj in state.objects:
        dx = xs - obj.position[0]
        dy = ys - obj.position[1]
        if obj.shape == "block":
            d = np.maximum(np.abs(dx), np.abs(dy)) - BLOCK_HALF_SIDE
        else:
            d = np.hypot(dx, dy) - OBJECT_RADIUS
        paint(d, obj.color)

    if state.effector is not None:
        d = np.hypot(xs - state.effector[0], ys - state.effector[1]) - EFFECTOR_RADIUS
        paint(d, EFFECTOR_COLOR)

    return np.clip(img, 0.0, 1.0).astype(np.float32)


class BlockWorld:
    """Environment wrapper holding the current episode state.

    Instances are independent and single-user; run several in parallel for
    data collection if needed.
    """

    action_dim = 4

    def __init__(self, config: EnvConfig):
        self.config = config
        self.state: EnvState | None = None

    def reset(self, seed: int) -> tuple[EnvState, np.ndarray]:
        rng = np.random.Generator(np.random.PCG64(seed))
        self.state = sample_state(self.config, rng)
        return self.state, render_frame(self.state, self.config)

    def step(self, action) -> tuple[EnvState, np.ndarray, float, bool, bool]:
        if self.state is None:
            raise RuntimeError("reset the environment before stepping")
        self.state, reward, done, success = step_state(self.state, action, self.config)
        return self.state, render_frame(self.state, self.config), reward, done, success

    def reward(self) -> float:
        """Shaped reward of the current state (also defined at reset time)."""
        return compute_reward(self.state, self.config)
