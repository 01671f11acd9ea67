"""Episode containers and the bounded replay buffer.

An episode of E steps stores E+1 frames and state rewards (the reset state
has a well-defined shaped reward) and E actions. Replay sampling yields
fixed-length windows of aligned (frames, actions, rewards) that never cross
an episode boundary, uniformly over all valid windows in the buffer.

Frames are kept quantized to uint8 to bound memory; they dequantize to
float32 in [0, 1] on the way out.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass

import numpy as np


@dataclass
class Episode:
    """One environment episode; ``frames`` has one more entry than ``actions``."""

    frames: np.ndarray    # (E+1, H, W, 3) uint8
    actions: np.ndarray   # (E, 4) float32
    rewards: np.ndarray   # (E+1,) float32, reward of each visited state
    success: bool

    def __post_init__(self):
        if len(self.frames) != len(self.actions) + 1 or len(self.rewards) != len(self.frames):
            raise ValueError("episode arrays misaligned: need E+1 frames/rewards and E actions")

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def episode_return(self) -> float:
        return float(self.rewards[1:].sum())

    def frames_float(self) -> np.ndarray:
        return self.frames.astype(np.float32) / 255.0


def quantize_frames(frames: np.ndarray) -> np.ndarray:
    """float [0, 1] frames -> uint8 storage."""
    return np.clip(np.rint(np.asarray(frames) * 255.0), 0, 255).astype(np.uint8)


def write_episode_log(path, episode: Episode) -> None:
    """Line-delimited step records: index, action, reward, done, success."""
    last = len(episode) - 1
    with open(path, "w") as handle:
        for i in range(len(episode)):
            record = {
                "step": i,
                "action": [round(float(a), 6) for a in episode.actions[i]],
                "reward": float(episode.rewards[i + 1]),
                "done": i == last,
                "success": bool(episode.success) if i == last else False,
            }
            handle.write(json.dumps(record) + "\n")


class ReplayBuffer:
    """Bounded FIFO store of episodes with uniform window sampling."""

    def __init__(self, capacity: int = 500, window: int = 17):
        if capacity < 1 or window < 2:
            raise ValueError("capacity must be >= 1 and window >= 2")
        self.capacity = capacity
        self.window = window
        self.episodes: deque[Episode] = deque(maxlen=capacity)

    def add(self, episode: Episode) -> None:
        if len(episode) + 1 < self.window:
            raise ValueError(
                f"episode of {len(episode)} steps too short for window {self.window}"
            )
        self.episodes.append(episode)

    def __len__(self) -> int:
        return len(self.episodes)

    def _starts_per_episode(self) -> np.ndarray:
        # A window of W steps needs W frames and W actions: starts 0..E-W.
        return np.array([len(ep) - self.window + 1 for ep in self.episodes])

    @property
    def num_windows(self) -> int:
        return int(self._starts_per_episode().sum()) if self.episodes else 0

    def sample(
        self, batch_size: int, rng: np.random.Generator
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Uniform windows as (frames (B,W,H,W,3) float32, actions, rewards)."""
        if not self.episodes:
            raise RuntimeError("cannot sample from an empty replay buffer")
        starts = self._starts_per_episode()
        bounds = np.cumsum(starts)
        frames, actions, rewards = [], [], []
        for flat in rng.integers(0, bounds[-1], size=batch_size):
            ep_index = int(np.searchsorted(bounds, flat, side="right"))
            offset = int(flat - (bounds[ep_index - 1] if ep_index else 0))
            episode = self.episodes[ep_index]
            frames.append(episode.frames_float()[offset : offset + self.window])
            actions.append(episode.actions[offset : offset + self.window])
            rewards.append(episode.rewards[offset : offset + self.window])
        return np.stack(frames), np.stack(actions), np.stack(rewards)
