"""Reward, value, and action heads over slot histories, plus their losses.

Each head owns its own slot-history transformer backbone followed by a small
MLP. Reward and value heads regress scalars as categorical distributions over
the shared exponential bins and decode by expectation; the actor outputs a
per-dimension normal whose samples are squashed into the action box by tanh.

Value targets are bootstrapped lambda-returns computed backwards over
imagined trajectories; the critic is additionally regularized towards an
exponential moving average of its own parameters.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import torch
from torch import Tensor, nn

from slotworld.backbone import BackboneConfig, SlotHistoryTransformer
from slotworld.scalarcodec import (
    BinSpec,
    categorical_symlog_loss,
    expected_value,
)


@dataclass
class HeadConfig:
    action_dim: int = 4
    bin_count: int = 255
    hidden: int = 256
    sigma_min: float = 1e-3
    # The entropy bonus uses the pre-squash normal entropy by default (an
    # upper bound on the tanh-squashed entropy); flip this to correct it with
    # a single-sample change-of-variables estimate.
    squashed_entropy_correction: bool = False


def _mlp_head(token_dim: int, hidden: int, out_dim: int) -> nn.Sequential:
    head = nn.Sequential(nn.Linear(token_dim, hidden), nn.SiLU(), nn.Linear(hidden, out_dim))
    # Zero-init the output layer: scalar heads then start from the uniform
    # distribution, which decodes to exactly 0 on the symmetric bins, and the
    # actor starts from a centered unit-ish policy.
    nn.init.zeros_(head[-1].weight)
    nn.init.zeros_(head[-1].bias)
    return head


class ScalarHead(nn.Module):
    """Backbone plus categorical scalar head; used for rewards and values."""

    def __init__(self, backbone_config: BackboneConfig, bins: BinSpec, hidden: int = 256):
        super().__init__()
        self.bins = bins
        self.backbone = SlotHistoryTransformer(backbone_config)
        self.head = _mlp_head(backbone_config.token_dim, hidden, bins.count)

    def forward(self, slots: Tensor, collect_attention: bool = False):
        """(B, T, N, D) slot history -> per-step logits (B, T, bins)."""
        if collect_attention:
            summary, record = self.backbone(slots, collect_attention=True)
            return self.head(summary), record
        return self.head(self.backbone(slots))

    def predict(self, slots: Tensor) -> Tensor:
        """Expected scalar per step, (B, T)."""
        return expected_value(self(slots), self.bins)

    def loss(self, slots: Tensor, targets: Tensor) -> Tensor:
        """Negative two-hot log-likelihood, summed over steps, batch-averaged."""
        return categorical_symlog_loss(self(slots), targets, self.bins).sum(-1).mean()


class CriticPair:
    """Online critic plus an EMA copy of its parameters used as a regularizer."""

    def __init__(self, online: ScalarHead, decay: float = 0.98):
        self.online = online
        self.target = copy.deepcopy(online)
        self.target.requires_grad_(False)
        self.decay = decay

    @torch.no_grad()
    def ema_update(self) -> None:
        for tgt, src in zip(self.target.parameters(), self.online.parameters()):
            tgt.mul_(self.decay).add_(src, alpha=1.0 - self.decay)

    def state_dict(self) -> dict:
        return {
            "online": self.online.state_dict(),
            "target": self.target.state_dict(),
            "decay": self.decay,
        }

    def load_state_dict(self, state: dict) -> None:
        self.online.load_state_dict(state["online"])
        self.target.load_state_dict(state["target"])
        self.decay = state["decay"]


class ActionDistribution:
    """Independent normals per action dimension, squashed by tanh on sampling."""

    def __init__(self, mean: Tensor, std: Tensor):
        self.mean = mean
        self.std = std

    def sample(self) -> tuple[Tensor, Tensor]:
        """Reparameterized draw; returns (squashed action, pre-squash value)."""
        presquash = self.mean + self.std * torch.randn_like(self.std)
        return torch.tanh(presquash), presquash

    def deterministic(self) -> Tensor:
        return torch.tanh(self.mean)

    def entropy(self) -> Tensor:
        """Entropy of the pre-squash normal, summed over action dimensions."""
        return torch.distributions.Normal(self.mean, self.std).entropy().sum(-1)

    def squashed_entropy(self, presquash: Tensor) -> Tensor:
        """Single-sample change-of-variables estimate of the tanh-squashed entropy."""
        # log(1 - tanh(u)^2) = 2 * (log 2 - u - softplus(-2u)), stable for large |u|.
        log_jacobian = 2.0 * (
            torch.log(torch.tensor(2.0, dtype=presquash.dtype)) - presquash
            - torch.nn.functional.softplus(-2.0 * presquash)
        )
        return self.entropy() + log_jacobian.sum(-1)


class Actor(nn.Module):
    """Backbone plus a head producing the action distribution per step."""

    def __init__(
        self,
        backbone_config: BackboneConfig,
        action_dim: int = 4,
        hidden: int = 256,
        sigma_min: float = 1e-3,
    ):
        super().__init__()
        self.action_dim = action_dim
        self.sigma_min = sigma_min
        self.backbone = SlotHistoryTransformer(backbone_config)
        self.head = _mlp_head(backbone_config.token_dim, hidden, 2 * action_dim)

    def forward(self, slots: Tensor, collect_attention: bool = False):
        """(B, T, N, D) slot history -> ActionDistribution with (B, T, A) stats."""
        if collect_attention:
            summary, record = self.backbone(slots, collect_attention=True)
        else:
            summary, record = self.backbone(slots), None
        mean, raw_std = self.head(summary).chunk(2, dim=-1)
        std = torch.nn.functional.softplus(raw_std) + self.sigma_min
        dist = ActionDistribution(mean, std)
        return (dist, record) if collect_attention else dist

    def last_distribution(self, slots: Tensor) -> ActionDistribution:
        """Distribution conditioned on the full history, for the newest step only."""
        dist = self(slots)
        return ActionDistribution(dist.mean[:, -1], dist.std[:, -1])


@dataclass
class ImaginedTrajectory:
    """A latent rollout: real seed prefix followed by imagined steps.

    ``slots`` covers seed and imagined steps; rewards/values/returns are
    indexed in imagination-local time where step 0 is the last seed state.
    """

    slots: Tensor          # (B, seed_len + horizon, N, D)
    actions: Tensor        # (B, seed_len - 1 + horizon, A) full action history
    seed_len: int
    entropies: Tensor      # (B, horizon) actor entropy at each decision point
    rewards: Tensor        # (B, horizon) predicted reward at imagined steps 1..horizon
    values: Tensor         # (B, horizon + 1) critic values at steps 0..horizon
    lambda_rets: Tensor    # (B, horizon) bootstrapped return targets

    @property
    def horizon(self) -> int:
        return self.rewards.shape[-1]


def lambda_returns(rewards: Tensor, values: Tensor, discount: float, lam: float) -> Tensor:
    """Backward recursion of bootstrapped lambda-returns.

    ``rewards``: (..., T) rewards at steps 1..T; ``values``: (..., T+1) value
    estimates at steps 0..T. Returns targets for steps 0..T-1:
    ret[t] = rewards[t] + discount * ((1 - lam) * values[t+1] + lam * ret[t+1])
    with ret[T] = values[T].
    """
    if not 0.0 < discount <= 1.0:
        raise ValueError(f"discount must be in (0, 1], got {discount}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    if values.shape[-1] != rewards.shape[-1] + 1 or values.shape[:-1] != rewards.shape[:-1]:
        raise ValueError(
            f"values must have one more step than rewards, got {tuple(values.shape)} "
            f"vs {tuple(rewards.shape)}"
        )
    horizon = rewards.shape[-1]
    bootstrap = values[..., -1]
    out: list[Tensor] = []
    for t in reversed(range(horizon)):
        bootstrap = rewards[..., t] + discount * (
            (1.0 - lam) * values[..., t + 1] + lam * bootstrap
        )
        out.append(bootstrap)
    out.reverse()
    return torch.stack(out, dim=-1)


def critic_loss(
    online_logits: Tensor,
    target_logits: Tensor,
    returns: Tensor,
    bins: BinSpec,
    ema_weight: float = 1.0,
) -> Tensor:
    """Two-hot likelihood of the return targets plus EMA regularization.

    The regularizer is the cross-entropy from the EMA target critic's
    predicted distribution to the online one; return targets and target
    logits carry no gradient.
    """
    likelihood = categorical_symlog_loss(online_logits, returns.detach(), bins)
    target_probs = torch.softmax(target_logits.detach(), dim=-1)
    regularizer = -(target_probs * torch.log_softmax(online_logits, dim=-1)).sum(-1)
    return (likelihood + ema_weight * regularizer).sum(-1).mean()


def actor_loss(
    lambda_rets: Tensor, entropies: Tensor, scale: float, entropy_coef: float
) -> Tensor:
    """Maximize normalized imagined returns plus entropy.

    ``scale`` is max(1, return-range EMA) from the normalizer. Gradients are
    expected to reach the actor only through the reparameterized actions that
    produced ``lambda_rets``; the caller freezes every other parameter group.
    """
    returns_term = (lambda_rets / scale).sum(-1).mean()
    entropy_term = entropies.sum(-1).mean()
    return -returns_term - entropy_coef * entropy_term
