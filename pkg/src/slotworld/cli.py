"""Command-line entry points: train, eval, rollout, attn.

Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from slotworld.blockworld import TASKS, BlockWorld
from slotworld.config import RunConfig, load_config
from slotworld.trainer import (
    Agent,
    evaluate,
    load_agent,
    run_episode,
    seed_everything,
    train,
)
from slotworld.viz import (
    attention_rollout,
    image_grid,
    relevance_heatmap,
    render_attention_overlay,
    rollout_strip,
    save_image,
    _colormap,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slotworld",
        description="Object-centric world-model RL on 2D block-manipulation tasks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(cmd: argparse.ArgumentParser) -> None:
        cmd.add_argument("--config", type=Path, help="YAML run configuration")
        cmd.add_argument("--seed", type=int, help="override the config seed")
        cmd.add_argument("--task", choices=TASKS, help="override the environment task")
        cmd.add_argument("--out", type=Path, help="override the output location")

    cmd_train = sub.add_parser("train", help="run the full training loop")
    common(cmd_train)
    cmd_train.add_argument("--resume", type=Path, help="checkpoint to continue from")

    cmd_eval = sub.add_parser("eval", help="evaluate a policy over episodes")
    common(cmd_eval)
    cmd_eval.add_argument("--checkpoint", type=Path, help="trained checkpoint (default: fresh init)")
    cmd_eval.add_argument("--episodes", type=int, default=10)
    cmd_eval.add_argument(
        "--episode-logs", type=Path, help="directory for per-step episode logs (JSONL)"
    )

    cmd_rollout = sub.add_parser("rollout", help="export an open-loop prediction strip")
    common(cmd_rollout)
    cmd_rollout.add_argument("--checkpoint", type=Path)
    cmd_rollout.add_argument("--horizon", type=int, default=None,
                             help="prediction steps after the seed (default: config horizon)")

    cmd_attn = sub.add_parser("attn", help="export actor attention-rollout overlays")
    common(cmd_attn)
    cmd_attn.add_argument("--checkpoint", type=Path)
    return parser


def _resolve_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config.seed = args.seed
    if args.task is not None:
        config.env.task = args.task
        config.env.__post_init__()
    return config


def _resolve_agent(args, config: RunConfig) -> Agent:
    seed_everything(config.seed)
    if getattr(args, "checkpoint", None):
        agent = load_agent(args.checkpoint)
        if args.task is not None:
            agent.config.env.task = args.task
        return agent
    return Agent(config)


def _cmd_train(args) -> int:
    config = _resolve_config(args)
    if args.out is not None:
        config.out_dir = str(args.out)
    out = train(config, resume=str(args.resume) if args.resume else None)
    print(f"run complete: {out}")
    return 0


def _cmd_eval(args) -> int:
    config = _resolve_config(args)
    agent = _resolve_agent(args, config)
    env = BlockWorld(agent.config.env)
    base_seed = agent.config.seed + 10_000_019
    if args.episode_logs is not None:
        from slotworld.replay import write_episode_log

        args.episode_logs.mkdir(parents=True, exist_ok=True)
        successes, returns = [], []
        for i in range(args.episodes):
            episode = run_episode(agent, env, seed=base_seed + i, deterministic=True)
            write_episode_log(args.episode_logs / f"episode_{i:04d}.jsonl", episode)
            successes.append(float(episode.success))
            returns.append(episode.episode_return)
        stats = {
            "episodes": args.episodes,
            "success_mean": float(np.mean(successes)),
            "success_std": float(np.std(successes)),
            "return_mean": float(np.mean(returns)),
            "return_std": float(np.std(returns)),
        }
    else:
        stats = evaluate(agent, env, episodes=args.episodes, base_seed=base_seed)
    print(
        f"{agent.config.env.task}: success {100 * stats['success_mean']:.1f}% "
        f"± {100 * stats['success_std']:.1f} | return {stats['return_mean']:.2f} "
        f"± {stats['return_std']:.2f} ({args.episodes} episodes)"
    )
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(stats, sort_keys=True) + "\n")
    return 0


def _cmd_rollout(args) -> int:
    config = _resolve_config(args)
    agent = _resolve_agent(args, config)
    env = BlockWorld(agent.config.env)
    episode = run_episode(agent, env, seed=agent.config.seed, deterministic=True)
    seed_steps = agent.config.train.seed_steps
    horizon = args.horizon or agent.config.train.horizon
    horizon = min(horizon, len(episode) + 1 - seed_steps)
    strip = rollout_strip(agent, episode, seed_steps, horizon)
    out = args.out or Path(agent.config.out_dir) / "rollout.png"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_image(out, strip)
    print(f"wrote {out}")
    return 0


def _cmd_attn(args) -> int:
    config = _resolve_config(args)
    agent = _resolve_agent(args, config)
    env = BlockWorld(agent.config.env)
    episode = run_episode(agent, env, seed=agent.config.seed, deterministic=True)
    out_dir = args.out or Path(agent.config.out_dir) / "attention"
    out_dir.mkdir(parents=True, exist_ok=True)

    with torch.no_grad():
        from slotworld.trainer import frames_to_tensor

        frames = frames_to_tensor(episode.frames_float()).unsqueeze(0)
        slots = agent.autoencoder.encode_video(frames)
        _, record = agent.actor(slots, collect_attention=True)
        relevance = attention_rollout(record)  # (steps, slots)
        decomposition = agent.autoencoder.decode_video(slots)

        # Headline pair for the final step.
        final = _step_decomposition(decomposition, slots.shape[1] - 1)
        overlay, heat = render_attention_overlay(
            episode.frames_float()[-1], final, relevance[-1]
        )
        save_image(out_dir / "attn_overlay.png", overlay)
        save_image(out_dir / "attn_heat.png", heat)

        # Cross-step strip sharing one global scale, Fig-style.
        global_max = relevance.max().item() or 1.0
        truth_row, heat_row = [], []
        for t in range(slots.shape[1]):
            step = _step_decomposition(decomposition, t)
            heat_map = relevance_heatmap(step, relevance[t]) / global_max
            heat_row.append(_colormap(heat_map).astype(np.float32))
            truth_row.append(episode.frames_float()[t].astype(np.float32))
        save_image(out_dir / "attn_strip.png", image_grid([truth_row, heat_row]))
    print(f"wrote {out_dir}")
    return 0


def _step_decomposition(decomposition, t: int):
    from slotworld.autoencoder import SlotDecomposition

    return SlotDecomposition(
        rgb=decomposition.rgb[0, t],
        alpha_logits=decomposition.alpha_logits[0, t],
        masks=decomposition.masks[0, t],
        composite=decomposition.composite[0, t],
    )


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "train": _cmd_train,
        "eval": _cmd_eval,
        "rollout": _cmd_rollout,
        "attn": _cmd_attn,
    }
    try:
        return handlers[args.command](args)
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
