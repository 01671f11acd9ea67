import torch

from slotworld.autoencoder import AutoencoderConfig
from slotworld.backbone import BackboneConfig
from slotworld.blockworld import EnvConfig
from slotworld.config import RunConfig, TrainConfig
from slotworld.dynamics import DynamicsConfig
from slotworld.heads import HeadConfig

torch.set_num_threads(1)


def tiny_run_config(out_dir="runs/test", task="reach-specific", **train_overrides) -> RunConfig:
    """A miniature but fully wired configuration for fast end-to-end tests."""
    train = dict(
        horizon=3,
        seed_steps=2,
        imagination_starts=1,
        lr_dynamics=1e-3,
        lr_reward=1e-3,
        lr_actor=1e-3,
        lr_critic=1e-3,
        lr_autoencoder=1e-3,
        lr_pretrain=1e-3,
        warmup_steps=0,
        batch_size=2,
        replay_capacity=8,
        steps_per_update=4,
        total_env_steps=16,
        eval_every=16,
        eval_episodes=1,
        checkpoint_every=16,
        prefill_episodes=2,
        pretrain_frames=18,
        pretrain_steps=2,
        pretrain_batch=2,
        pretrain_clip_len=2,
    )
    train.update(train_overrides)
    return RunConfig(
        seed=0,
        out_dir=str(out_dir),
        env=EnvConfig(task=task, image_size=32, episode_length=8),
        autoencoder=AutoencoderConfig(
            num_slots=3,
            slot_dim=16,
            feature_dim=12,
            image_size=32,
            encoder_channels=(8, 12, 12, 12),
            encoder_strides=(2, 2, 1, 1),
            decoder_channels=(16, 16),
            decoder_initial_size=8,
            slot_mlp_hidden=24,
        ),
        dynamics=DynamicsConfig(
            layers=1, heads=2, token_dim=16, mlp_dim=24, slot_dim=16, action_dim=4, max_steps=32
        ),
        backbone=BackboneConfig(
            layers=1, heads=2, token_dim=16, mlp_dim=24, registers=1, slot_dim=16
        ),
        heads=HeadConfig(action_dim=4, bin_count=21, hidden=16),
        train=TrainConfig(**train),
    )
