"""Training orchestration: pretraining, world-model and behavior updates,
environment interaction, and the full run loop.

Parameter-group isolation is enforced structurally: each loss is built while
every foreign module has ``requires_grad`` switched off, so gradients can flow
*through* those modules (as the actor objective requires) without ever
reaching their parameters. Optimizers then step exactly one group each.

Determinism contract: with ``single_threaded`` set, a run is a pure function
of (seed, config): episode seeds, replay sampling, and every draw from the
torch RNG happen in a fixed order.
"""

from __future__ import annotations

import contextlib
import json
import math
import random
from pathlib import Path

import numpy as np
import torch
from torch import Tensor

from slotworld.autoencoder import SlotVideoAutoencoder
from slotworld.blockworld import BlockWorld
from slotworld.checkpoint import load_checkpoint, save_checkpoint
from slotworld.config import RunConfig, config_to_dict, save_config
from slotworld.dynamics import ObjectDynamics, dynamics_loss
from slotworld.heads import (
    Actor,
    CriticPair,
    ImaginedTrajectory,
    ScalarHead,
    actor_loss,
    critic_loss,
    lambda_returns,
)
from slotworld.replay import Episode, ReplayBuffer, quantize_frames
from slotworld.scalarcodec import ReturnNormalizer, expected_value, make_bins

EVAL_SEED_OFFSET = 10_000_019
PRETRAIN_SEED_OFFSET = 5_000_011
EPISODE_SEED_STRIDE = 7919


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)


def learning_rate(
    step: int, base: float, warmup: int, total: int | None = None, cosine: bool = False
) -> float:
    """Linear warmup to ``base`` over ``warmup`` steps, then flat or cosine decay."""
    if warmup > 0 and step < warmup:
        return base * step / warmup
    if not cosine or total is None or total <= warmup:
        return base
    progress = min(1.0, (step - warmup) / (total - warmup))
    return base * 0.5 * (1.0 + math.cos(math.pi * progress))


def frames_to_tensor(frames: np.ndarray) -> Tensor:
    """(..., H, W, 3) float arrays -> (..., 3, H, W) float32 tensors."""
    tensor = torch.from_numpy(np.ascontiguousarray(frames)).float()
    return tensor.movedim(-1, -3)


@contextlib.contextmanager
def frozen(*modules: torch.nn.Module):
    """Temporarily switch off requires_grad so gradients pass through
    activations but never reach these modules' parameters."""
    params = [p for m in modules for p in m.parameters() if p.requires_grad]
    for p in params:
        p.requires_grad_(False)
    try:
        yield
    finally:
        for p in params:
            p.requires_grad_(True)


class MetricLogger:
    """Line-delimited JSON metric log with deterministic formatting."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def log(self, record: dict) -> None:
        with open(self.path, "a") as handle:
            handle.write(json.dumps(record, sort_keys=True) + "\n")


class Agent:
    """World model (autoencoder, dynamics, reward) plus actor and critic."""

    def __init__(self, config: RunConfig):
        self.config = config
        train = config.train
        self.bins = make_bins(config.heads.bin_count)
        self.autoencoder = SlotVideoAutoencoder(config.autoencoder)
        self.dynamics = ObjectDynamics(config.dynamics)
        self.reward_model = ScalarHead(config.backbone, self.bins, config.heads.hidden)
        self.critic = CriticPair(
            ScalarHead(config.backbone, self.bins, config.heads.hidden),
            decay=train.critic_ema_decay,
        )
        self.actor = Actor(
            config.backbone,
            action_dim=config.heads.action_dim,
            hidden=config.heads.hidden,
            sigma_min=config.heads.sigma_min,
        )
        self.normalizer = ReturnNormalizer(train.return_norm_decay)

        adam = torch.optim.Adam
        self.opt_autoencoder = adam(self.autoencoder.parameters(), lr=train.lr_autoencoder)
        self.opt_dynamics = adam(self.dynamics.parameters(), lr=train.lr_dynamics)
        self.opt_reward = adam(self.reward_model.parameters(), lr=train.lr_reward)
        self.opt_critic = adam(self.critic.online.parameters(), lr=train.lr_critic)
        self.opt_actor = adam(self.actor.parameters(), lr=train.lr_actor)
        self.wm_updates = 0
        self.behavior_updates = 0

    @staticmethod
    def _set_lr(optimizer: torch.optim.Optimizer, value: float) -> None:
        for group in optimizer.param_groups:
            group["lr"] = value

    # ------------------------------------------------------------------ #
    # World-model learning
    # ------------------------------------------------------------------ #

    def world_model_update(
        self, frames: Tensor, actions: Tensor, rewards: Tensor
    ) -> tuple[dict, Tensor]:
        """One gradient step on autoencoder (unless frozen), dynamics, reward.

        All three losses are computed from the same encoder output; the
        detached slot windows are returned for imagination starts.
        """
        train = self.config.train
        seed_steps, horizon = train.seed_steps, train.horizon
        if frames.shape[1] != train.window:
            raise ValueError(f"expected windows of {train.window} steps, got {frames.shape[1]}")
        self.wm_updates += 1
        step = self.wm_updates
        finetune = not train.freeze_autoencoder
        metrics: dict = {"wm_updates": step}

        for opt in (self.opt_autoencoder, self.opt_dynamics, self.opt_reward):
            opt.zero_grad(set_to_none=True)

        if finetune:
            slots_live = self.autoencoder.encode_video(frames)
            decomposition = self.autoencoder.decode_video(slots_live)
            recon = ((decomposition.composite - frames) ** 2).mean()
            recon.backward()
            slots = slots_live.detach()
            metrics["autoencoder_loss"] = recon.item()
        else:
            with torch.no_grad():
                slots = self.autoencoder.encode_video(frames)

        # Dynamics: the loss decodes predictions with the shared decoder, but
        # the decoder parameters are frozen here so only the dynamics learns.
        with frozen(self.autoencoder):
            predicted = self.dynamics.rollout(slots[:, :seed_steps], actions, horizon=horizon)
            dyn = dynamics_loss(
                frames[:, seed_steps:], slots[:, seed_steps:], predicted, self.autoencoder.decoder
            )
        dyn.backward()
        metrics["dynamics_loss"] = dyn.item()

        reward = self.reward_model.loss(slots, rewards)
        reward.backward()
        metrics["reward_loss"] = reward.item()

        if finetune:
            metrics["autoencoder_grad_norm"] = torch.nn.utils.clip_grad_norm_(
                self.autoencoder.parameters(), train.clip_autoencoder
            ).item()
            self._set_lr(
                self.opt_autoencoder, learning_rate(step, train.lr_autoencoder, train.warmup_steps)
            )
            self.opt_autoencoder.step()
        metrics["dynamics_grad_norm"] = torch.nn.utils.clip_grad_norm_(
            self.dynamics.parameters(), train.clip_dynamics
        ).item()
        self._set_lr(self.opt_dynamics, learning_rate(step, train.lr_dynamics, train.warmup_steps))
        self.opt_dynamics.step()
        metrics["reward_grad_norm"] = torch.nn.utils.clip_grad_norm_(
            self.reward_model.parameters(), train.clip_heads
        ).item()
        self._set_lr(self.opt_reward, learning_rate(step, train.lr_reward, train.warmup_steps))
        self.opt_reward.step()
        return metrics, slots

    # ------------------------------------------------------------------ #
    # Behavior learning
    # ------------------------------------------------------------------ #

    def imagine(
        self,
        seed_slots: Tensor,
        seed_actions: Tensor,
        horizon: int,
        deterministic: bool = False,
    ) -> ImaginedTrajectory:
        """Roll the world model forward under the current actor.

        ``seed_slots``: (B, L, N, D) encoded real steps; ``seed_actions``:
        (B, L-1, A) real actions between them. World model, reward model, and
        critic parameters are frozen while the graph is built, so the actor
        loss can only reach the actor through the sampled actions.
        """
        if seed_slots.ndim != 4 or seed_slots.shape[1] < 1:
            raise ValueError("seed history must be (B, L>=1, N, D)")
        if seed_actions.shape[1] != seed_slots.shape[1] - 1:
            raise ValueError("need exactly one fewer seed action than seed steps")
        train = self.config.train
        batch = seed_slots.shape[0]
        seed_len = seed_slots.shape[1]
        use_squashed = self.config.heads.squashed_entropy_correction

        slots_hist = seed_slots
        actions_hist = seed_actions
        entropies: list[Tensor] = []
        with frozen(self.dynamics, self.reward_model, self.critic.online):
            for _ in range(horizon):
                dist = self.actor.last_distribution(slots_hist)
                if deterministic:
                    action = dist.deterministic()
                    entropy = dist.entropy()
                else:
                    action, presquash = dist.sample()
                    entropy = (
                        dist.squashed_entropy(presquash) if use_squashed else dist.entropy()
                    )
                actions_hist = torch.cat([actions_hist, action.unsqueeze(1)], dim=1)
                prediction = self.dynamics.predict_next(slots_hist, actions_hist)
                slots_hist = torch.cat([slots_hist, prediction.unsqueeze(1)], dim=1)
                entropies.append(entropy)

            if horizon > 0:
                rewards = self.reward_model.predict(slots_hist)[:, seed_len:]
                values = self._snapshot_values(slots_hist)[:, seed_len - 1 :]
                returns = lambda_returns(rewards, values, train.discount, train.return_lambda)
                entropy_stack = torch.stack(entropies, dim=1)
            else:
                rewards = torch.zeros(batch, 0)
                values = self._snapshot_values(slots_hist)[:, -1:]
                returns = torch.zeros(batch, 0)
                entropy_stack = torch.zeros(batch, 0)

        return ImaginedTrajectory(
            slots=slots_hist,
            actions=actions_hist,
            seed_len=seed_len,
            entropies=entropy_stack,
            rewards=rewards,
            values=values,
            lambda_rets=returns,
        )

    def _snapshot_values(self, slots: Tensor) -> Tensor:
        """Critic values through a detached parameter snapshot.

        Imagined returns must stay differentiable w.r.t. the slots (the actor
        objective backpropagates through them) while the critic itself may be
        stepped before the actor backward runs; evaluating against cloned
        parameters keeps the graph valid and the critic gradient-isolated.
        """
        params = {
            name: value.detach().clone()
            for name, value in self.critic.online.named_parameters()
        }
        logits = torch.func.functional_call(self.critic.online, params, (slots,))
        return expected_value(logits, self.bins)

    def imagination_seed_lengths(self) -> list[int]:
        """Seed lengths used as imagination starts within a replay window."""
        train = self.config.train
        lo, hi = train.seed_steps, train.window
        if train.imagination_starts <= 0:
            return list(range(lo, hi + 1))
        count = min(train.imagination_starts, hi - lo + 1)
        return sorted(set(int(round(v)) for v in np.linspace(lo, hi, count)))

    def imagine_from_window(self, slots: Tensor, actions: Tensor) -> list[ImaginedTrajectory]:
        """One trajectory batch per configured start length of the window."""
        return [
            self.imagine(
                slots[:, :length], actions[:, : length - 1], self.config.train.horizon
            )
            for length in self.imagination_seed_lengths()
        ]

    def behavior_update(self, trajectories: list[ImaginedTrajectory]) -> dict:
        """Critic step, EMA update, normalizer update, then actor step."""
        if not trajectories:
            raise ValueError("behavior update needs at least one trajectory batch")
        train = self.config.train
        self.behavior_updates += 1
        step = self.behavior_updates
        metrics: dict = {"behavior_updates": step}

        self.opt_critic.zero_grad(set_to_none=True)
        critic_terms = []
        for traj in trajectories:
            detached = traj.slots.detach()
            lo = traj.seed_len - 1
            hi = lo + traj.horizon
            online_logits = self.critic.online(detached)[:, lo:hi]
            with torch.no_grad():
                target_logits = self.critic.target(detached)[:, lo:hi]
            critic_terms.append(
                critic_loss(
                    online_logits,
                    target_logits,
                    traj.lambda_rets.detach(),
                    self.bins,
                    train.critic_ema_weight,
                )
            )
        critic_total = torch.stack(critic_terms).mean()
        critic_total.backward()
        metrics["critic_loss"] = critic_total.item()
        metrics["critic_grad_norm"] = torch.nn.utils.clip_grad_norm_(
            self.critic.online.parameters(), train.clip_heads
        ).item()
        self._set_lr(self.opt_critic, learning_rate(step, train.lr_critic, train.warmup_steps))
        self.opt_critic.step()

        self.critic.ema_update()

        all_returns = torch.cat([t.lambda_rets.detach().reshape(-1) for t in trajectories])
        self.normalizer.update(all_returns)
        scale = self.normalizer.scale
        metrics["return_scale"] = scale

        self.opt_actor.zero_grad(set_to_none=True)
        actor_terms = [
            actor_loss(t.lambda_rets, t.entropies, scale, train.entropy_coef)
            for t in trajectories
        ]
        actor_total = torch.stack(actor_terms).mean()
        actor_total.backward()
        metrics["actor_loss"] = actor_total.item()
        metrics["actor_grad_norm"] = torch.nn.utils.clip_grad_norm_(
            self.actor.parameters(), train.clip_heads
        ).item()
        self._set_lr(self.opt_actor, learning_rate(step, train.lr_actor, train.warmup_steps))
        self.opt_actor.step()

        metrics["imagined_return_mean"] = all_returns.mean().item()
        metrics["imagined_reward_mean"] = (
            torch.cat([t.rewards.detach().reshape(-1) for t in trajectories]).mean().item()
        )
        return metrics

    # ------------------------------------------------------------------ #
    # Checkpointing
    # ------------------------------------------------------------------ #

    def state_payload(self) -> dict:
        return {
            "autoencoder": self.autoencoder.state_dict(),
            "dynamics": self.dynamics.state_dict(),
            "reward_model": self.reward_model.state_dict(),
            "critic": self.critic.state_dict(),
            "actor": self.actor.state_dict(),
            "opt_autoencoder": self.opt_autoencoder.state_dict(),
            "opt_dynamics": self.opt_dynamics.state_dict(),
            "opt_reward": self.opt_reward.state_dict(),
            "opt_critic": self.opt_critic.state_dict(),
            "opt_actor": self.opt_actor.state_dict(),
            "normalizer": self.normalizer.state_dict(),
        }

    def load_state_payload(self, modules: dict) -> None:
        self.autoencoder.load_state_dict(modules["autoencoder"])
        self.dynamics.load_state_dict(modules["dynamics"])
        self.reward_model.load_state_dict(modules["reward_model"])
        self.critic.load_state_dict(modules["critic"])
        self.actor.load_state_dict(modules["actor"])
        self.opt_autoencoder.load_state_dict(modules["opt_autoencoder"])
        self.opt_dynamics.load_state_dict(modules["opt_dynamics"])
        self.opt_reward.load_state_dict(modules["opt_reward"])
        self.opt_critic.load_state_dict(modules["opt_critic"])
        self.opt_actor.load_state_dict(modules["opt_actor"])
        self.normalizer.load_state_dict(modules["normalizer"])


# ---------------------------------------------------------------------- #
# Acting in the environment
# ---------------------------------------------------------------------- #


class PolicyRunner:
    """Recursive slot state and growing history for one episode of acting."""

    def __init__(self, agent: Agent, deterministic: bool = False):
        self.agent = agent
        self.deterministic = deterministic
        self.slots: Tensor | None = None
        self.history: list[Tensor] = []

    def reset(self) -> None:
        self.slots = None
        self.history = []

    @property
    def history_length(self) -> int:
        return len(self.history)

    @torch.no_grad()
    def observe(self, frame: np.ndarray) -> None:
        tensor = frames_to_tensor(frame).unsqueeze(0)
        self.slots = self.agent.autoencoder.encode_step(tensor, self.slots)
        self.history.append(self.slots)

    @torch.no_grad()
    def action(self) -> np.ndarray:
        if not self.history:
            raise RuntimeError("observe a frame before acting")
        slots_hist = torch.stack(self.history, dim=1)
        dist = self.agent.actor.last_distribution(slots_hist)
        action = dist.deterministic() if self.deterministic else dist.sample()[0]
        return action.squeeze(0).cpu().numpy().astype(np.float64)


def run_episode(agent: Agent, env: BlockWorld, seed: int, deterministic: bool) -> Episode:
    _, frame = env.reset(seed)
    runner = PolicyRunner(agent, deterministic=deterministic)
    runner.observe(frame)
    frames = [frame]
    rewards = [env.reward()]
    actions = []
    done = False
    success = False
    while not done:
        action = runner.action()
        _, frame, reward, done, success = env.step(action)
        runner.observe(frame)
        frames.append(frame)
        rewards.append(reward)
        actions.append(action)
    return Episode(
        frames=quantize_frames(np.stack(frames)),
        actions=np.stack(actions).astype(np.float32),
        rewards=np.array(rewards, dtype=np.float32),
        success=success,
    )


def random_episode(env: BlockWorld, seed: int) -> Episode:
    rng = np.random.Generator(np.random.PCG64(seed))
    _, frame = env.reset(seed)
    frames = [frame]
    rewards = [env.reward()]
    actions = []
    done = False
    success = False
    while not done:
        action = rng.uniform(-1.0, 1.0, size=4)
        _, frame, reward, done, success = env.step(action)
        frames.append(frame)
        rewards.append(reward)
        actions.append(action)
    return Episode(
        frames=quantize_frames(np.stack(frames)),
        actions=np.stack(actions).astype(np.float32),
        rewards=np.array(rewards, dtype=np.float32),
        success=success,
    )


def evaluate(agent: Agent, env: BlockWorld, episodes: int, base_seed: int) -> dict:
    successes, returns = [], []
    for i in range(episodes):
        episode = run_episode(agent, env, seed=base_seed + i, deterministic=True)
        successes.append(float(episode.success))
        returns.append(episode.episode_return)
    return {
        "episodes": episodes,
        "success_mean": float(np.mean(successes)),
        "success_std": float(np.std(successes)),
        "return_mean": float(np.mean(returns)),
        "return_std": float(np.std(returns)),
    }


# ---------------------------------------------------------------------- #
# Pretraining
# ---------------------------------------------------------------------- #


def collect_random_dataset(env: BlockWorld, config: RunConfig) -> list[Episode]:
    episodes: list[Episode] = []
    frame_count = 0
    index = 0
    while frame_count < config.train.pretrain_frames:
        episode = random_episode(env, seed=config.seed + PRETRAIN_SEED_OFFSET + index)
        episodes.append(episode)
        frame_count += len(episode.frames)
        index += 1
    return episodes


def pretrain_autoencoder(
    agent: Agent, env: BlockWorld, logger: MetricLogger | None = None
) -> list[Episode]:
    """Train the autoencoder reconstruction on random-policy clips.

    Returns the collected episodes so the caller can prefill replay.
    """
    config = agent.config
    train = config.train
    clip_len = train.pretrain_clip_len
    if train.pretrain_frames < clip_len:
        raise ValueError(
            f"pretrain_frames={train.pretrain_frames} cannot cover a clip of {clip_len}"
        )
    episodes = collect_random_dataset(env, config)
    clips = [
        (ep_index, start)
        for ep_index, episode in enumerate(episodes)
        for start in range(len(episode.frames) - clip_len + 1)
    ]
    rng = np.random.Generator(np.random.PCG64(config.seed + PRETRAIN_SEED_OFFSET))
    optimizer = torch.optim.Adam(agent.autoencoder.parameters(), lr=train.lr_pretrain)

    for step in range(train.pretrain_steps):
        lr = learning_rate(
            step, train.lr_pretrain, train.warmup_steps, total=train.pretrain_steps, cosine=True
        )
        Agent._set_lr(optimizer, lr)
        picks = rng.integers(0, len(clips), size=train.pretrain_batch)
        batch = np.stack(
            [episodes[clips[p][0]].frames_float()[clips[p][1] : clips[p][1] + clip_len] for p in picks]
        )
        frames = frames_to_tensor(batch)
        optimizer.zero_grad(set_to_none=True)
        loss = agent.autoencoder.reconstruction_loss(frames)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(agent.autoencoder.parameters(), train.clip_autoencoder)
        optimizer.step()
        if logger is not None and (step % 100 == 0 or step == train.pretrain_steps - 1):
            logger.log({"kind": "pretrain", "step": step, "loss": loss.item(), "lr": lr})
    return episodes


# ---------------------------------------------------------------------- #
# Held-out world-model quality report
# ---------------------------------------------------------------------- #


@torch.no_grad()
def world_model_report(agent: Agent, episodes: list[Episode], rollout_steps: int = 10) -> dict:
    """Open-loop slot errors and reconstruction PSNR on held-out episodes."""
    config = agent.config
    seed_steps = config.train.seed_steps
    window = seed_steps + rollout_steps
    one_step, long_step, mses = [], [], []
    for episode in episodes:
        frames = frames_to_tensor(episode.frames_float()[:window]).unsqueeze(0)
        actions = torch.from_numpy(episode.actions[:window]).float().unsqueeze(0)
        slots = agent.autoencoder.encode_video(frames)
        predicted = agent.dynamics.rollout(
            slots[:, :seed_steps], actions[:, : window - 1], horizon=rollout_steps
        )
        target = slots[:, seed_steps:]
        errors = ((predicted - target) ** 2).mean(dim=(0, 2, 3))
        one_step.append(errors[0].item())
        long_step.append(errors[-1].item())
        recon = agent.autoencoder.decode_video(slots).composite
        mses.append(((recon - frames) ** 2).mean().item())
    mse = float(np.mean(mses))
    return {
        "one_step_mse": float(np.mean(one_step)),
        "rollout_mse": float(np.mean(long_step)),
        "rollout_to_one_step_ratio": float(np.mean(long_step) / max(np.mean(one_step), 1e-12)),
        "reconstruction_mse": mse,
        "psnr_db": float(10.0 * math.log10(1.0 / max(mse, 1e-12))),
    }


def world_model_milestone(
    config: RunConfig, wm_updates: int, holdout_episodes: int = 8, rollout_steps: int = 10
) -> dict:
    """World-model-only training run: pretrain the autoencoder on random
    data, train dynamics/reward on replayed random episodes for the given
    number of updates, and report open-loop quality on held-out episodes."""
    if config.train.single_threaded:
        torch.set_num_threads(1)
    seed_everything(config.seed)
    env = BlockWorld(config.env)
    agent = Agent(config)
    probe = [
        random_episode(env, seed=config.seed + EVAL_SEED_OFFSET - 1 - i) for i in range(2)
    ]
    probe_frames = frames_to_tensor(
        np.stack([ep.frames_float()[: config.train.window] for ep in probe])
    )
    with torch.no_grad():
        pretrain_initial = agent.autoencoder.reconstruction_loss(probe_frames).item()
    episodes = pretrain_autoencoder(agent, env)
    with torch.no_grad():
        pretrain_final = agent.autoencoder.reconstruction_loss(probe_frames).item()
    replay = ReplayBuffer(capacity=config.train.replay_capacity, window=config.train.window)
    for episode in episodes:
        if len(episode) + 1 >= config.train.window:
            replay.add(episode)
    sample_rng = np.random.Generator(np.random.PCG64(config.seed + 2))
    for _ in range(wm_updates):
        frames_np, actions_np, rewards_np = replay.sample(config.train.batch_size, sample_rng)
        agent.world_model_update(
            frames_to_tensor(frames_np),
            torch.from_numpy(actions_np).float(),
            torch.from_numpy(rewards_np).float(),
        )
    holdout = [
        random_episode(env, seed=config.seed + EVAL_SEED_OFFSET + i)
        for i in range(holdout_episodes)
    ]
    report = world_model_report(agent, holdout, rollout_steps=rollout_steps)
    report["wm_updates"] = agent.wm_updates
    report["pretrain_initial_loss"] = pretrain_initial
    report["pretrain_final_loss"] = pretrain_final
    # Fixed-point behavior of the recursive parser: on a static video the
    # per-step slot change should not grow after the initial burn-in.
    with torch.no_grad():
        static = probe_frames[:1, :1].repeat(1, 8, 1, 1, 1)
        slots = agent.autoencoder.encode_video(static)
        deltas = (slots[:, 1:] - slots[:, :-1]).norm(dim=(-2, -1)).squeeze(0)
        report["static_video_early_slot_delta"] = float(deltas[:3].mean())
        report["static_video_late_slot_delta"] = float(deltas[-3:].mean())
    return report


# ---------------------------------------------------------------------- #
# Full training loop
# ---------------------------------------------------------------------- #


def _save_run_checkpoint(agent: Agent, path, env_steps: int, episode_index: int,
                         sample_rng: np.random.Generator) -> None:
    save_checkpoint(
        path,
        modules=agent.state_payload(),
        config=config_to_dict(agent.config),
        extra={
            "env_steps": env_steps,
            "episode_index": episode_index,
            "wm_updates": agent.wm_updates,
            "behavior_updates": agent.behavior_updates,
            "torch_rng": torch.get_rng_state(),
            "sample_rng": sample_rng.bit_generator.state,
        },
    )


def load_agent(path) -> Agent:
    """Rebuild an Agent (without loop state) from a checkpoint file."""
    from slotworld.config import config_from_dict

    payload = load_checkpoint(path)
    agent = Agent(config_from_dict(payload["config"]))
    agent.load_state_payload(payload["modules"])
    extra = payload.get("extra", {})
    agent.wm_updates = extra.get("wm_updates", 0)
    agent.behavior_updates = extra.get("behavior_updates", 0)
    return agent


def train(config: RunConfig, resume: str | None = None) -> Path:
    """Run the full loop; returns the output directory.

    Writes ``metrics.jsonl``, periodic ``checkpoint.ckpt`` snapshots, a
    ``pretrained.ckpt`` after autoencoder pretraining, and ``final.ckpt``.
    """
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(config, out_dir / "config.yaml")
    if config.train.single_threaded:
        torch.set_num_threads(1)
    seed_everything(config.seed)

    env = BlockWorld(config.env)
    eval_env = BlockWorld(config.env)
    agent = Agent(config)
    logger = MetricLogger(out_dir / "metrics.jsonl")
    replay = ReplayBuffer(capacity=config.train.replay_capacity, window=config.train.window)
    sample_rng = np.random.Generator(np.random.PCG64(config.seed + 1))
    env_steps = 0
    episode_index = 0

    if resume is not None:
        payload = load_checkpoint(resume)
        agent.load_state_payload(payload["modules"])
        extra = payload["extra"]
        agent.wm_updates = extra["wm_updates"]
        agent.behavior_updates = extra["behavior_updates"]
        env_steps = extra["env_steps"]
        episode_index = extra["episode_index"]
        torch.set_rng_state(extra["torch_rng"])
        sample_rng.bit_generator.state = extra["sample_rng"]
        # The replay contents are not checkpointed; reseed with fresh
        # random-policy episodes so updates can continue immediately.
        prefill = [
            random_episode(env, seed=config.seed + PRETRAIN_SEED_OFFSET + i)
            for i in range(config.train.prefill_episodes)
        ]
    else:
        (out_dir / "metrics.jsonl").unlink(missing_ok=True)
        pretrain_episodes = pretrain_autoencoder(agent, env, logger)
        save_checkpoint(
            out_dir / "pretrained.ckpt",
            modules={"autoencoder": agent.autoencoder.state_dict()},
            config=config_to_dict(config),
        )
        prefill = pretrain_episodes[-config.train.prefill_episodes :]
    for episode in prefill:
        if len(episode) + 1 >= config.train.window:
            replay.add(episode)

    next_eval = env_steps + config.train.eval_every
    next_checkpoint = env_steps + config.train.checkpoint_every

    while env_steps < config.train.total_env_steps:
        episode_seed = config.seed + EPISODE_SEED_STRIDE * (episode_index + 1)
        episode = run_episode(agent, env, episode_seed, deterministic=False)
        replay.add(episode)
        env_steps += len(episode)
        episode_index += 1
        logger.log(
            {
                "kind": "episode",
                "env_steps": env_steps,
                "episode": episode_index,
                "return": episode.episode_return,
                "success": bool(episode.success),
            }
        )

        updates = max(1, len(episode) // config.train.steps_per_update)
        for _ in range(updates):
            frames_np, actions_np, rewards_np = replay.sample(
                config.train.batch_size, sample_rng
            )
            frames = frames_to_tensor(frames_np)
            actions = torch.from_numpy(actions_np).float()
            rewards = torch.from_numpy(rewards_np).float()
            wm_metrics, slots = agent.world_model_update(frames, actions, rewards)
            trajectories = agent.imagine_from_window(slots, actions)
            behavior_metrics = agent.behavior_update(trajectories)
            record = {"kind": "update", "env_steps": env_steps}
            record.update(wm_metrics)
            record.update(behavior_metrics)
            logger.log(record)

        if env_steps >= next_eval:
            stats = evaluate(
                agent, eval_env, config.train.eval_episodes, config.seed + EVAL_SEED_OFFSET
            )
            stats.update({"kind": "eval", "env_steps": env_steps})
            logger.log(stats)
            next_eval += config.train.eval_every
        if env_steps >= next_checkpoint:
            _save_run_checkpoint(
                agent, out_dir / "checkpoint.ckpt", env_steps, episode_index, sample_rng
            )
            next_checkpoint += config.train.checkpoint_every

    final_stats = evaluate(
        agent, eval_env, config.train.eval_episodes, config.seed + EVAL_SEED_OFFSET
    )
    final_stats.update({"kind": "eval", "env_steps": env_steps})
    logger.log(final_stats)
    _save_run_checkpoint(agent, out_dir / "final.ckpt", env_steps, episode_index, sample_rng)
    return out_dir
