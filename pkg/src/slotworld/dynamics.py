"""Action-conditional autoregressive dynamics over object slots.

Each step contributes its N slot tokens plus one embedded action token.
Every layer first runs *temporal* attention (each token index attends
causally over its own time trajectory, no cross-object mixing) and then
*relational* attention (all tokens of one step attend to each other),
followed by a feed-forward block, all residual. The action token acts as a
key/value peer in both stages but its output is discarded; because nothing
distinguishes slot indices, predictions are slot-permutation equivariant.

Rollouts are autoregressive without teacher forcing: each predicted slot set
is appended to the context before predicting the next step.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from slotworld.autoencoder import SlotDecoder
from slotworld.nets import MultiheadSelfAttention, causal_bias, feed_forward


@dataclass
class DynamicsConfig:
    layers: int = 4
    heads: int = 8
    token_dim: int = 256
    mlp_dim: int = 512
    slot_dim: int = 128
    action_dim: int = 4
    max_steps: int = 64  # learned time embeddings cap the history length

    def __post_init__(self):
        if self.token_dim % self.heads != 0:
            raise ValueError("token_dim must be divisible by heads")


class _DynamicsLayer(nn.Module):
    def __init__(self, config: DynamicsConfig):
        super().__init__()
        dim = config.token_dim
        self.norm_temporal = nn.LayerNorm(dim)
        self.temporal = MultiheadSelfAttention(dim, config.heads)
        self.norm_relational = nn.LayerNorm(dim)
        self.relational = MultiheadSelfAttention(dim, config.heads)
        self.norm_ff = nn.LayerNorm(dim)
        self.ff = feed_forward(dim, config.mlp_dim)

    def forward(self, x: Tensor, causal: Tensor) -> Tensor:
        batch, steps, tokens, dim = x.shape
        # Temporal: fold token index into the batch, attend causally over time.
        t = x.transpose(1, 2).reshape(batch * tokens, steps, dim)
        t = t + self.temporal(self.norm_temporal(t), causal)
        x = t.reshape(batch, tokens, steps, dim).transpose(1, 2)
        # Relational: fold time into the batch, attend within the step.
        r = x.reshape(batch * steps, tokens, dim)
        r = r + self.relational(self.norm_relational(r))
        x = r.reshape(batch, steps, tokens, dim)
        return x + self.ff(self.norm_ff(x))


class ObjectDynamics(nn.Module):
    """Predicts the next slot set from a history of slots and actions."""

    def __init__(self, config: DynamicsConfig):
        super().__init__()
        self.config = config
        self.slot_in = nn.Linear(config.slot_dim, config.token_dim)
        self.action_in = nn.Linear(config.action_dim, config.token_dim)
        self.time_embed = nn.Embedding(config.max_steps, config.token_dim)
        self.layers = nn.ModuleList(_DynamicsLayer(config) for _ in range(config.layers))
        self.norm_out = nn.LayerNorm(config.token_dim)
        self.slot_out = nn.Linear(config.token_dim, config.slot_dim)

    def _validate(self, slots: Tensor, actions: Tensor) -> None:
        if slots.ndim != 4 or actions.ndim != 3:
            raise ValueError(
                f"expected (B, T, N, D) slots and (B, T, A) actions, got "
                f"{tuple(slots.shape)} and {tuple(actions.shape)}"
            )
        if slots.shape[1] < 1:
            raise ValueError("history must contain at least one step")
        if slots.shape[:2] != actions.shape[:2]:
            raise ValueError("slots and actions disagree on batch or history length")
        if slots.shape[3] != self.config.slot_dim or actions.shape[2] != self.config.action_dim:
            raise ValueError("slot or action dimension mismatch")
        if slots.shape[1] > self.config.max_steps:
            raise ValueError(
                f"history of {slots.shape[1]} steps exceeds max_steps={self.config.max_steps}"
            )

    def predict_next(self, slots: Tensor, actions: Tensor) -> Tensor:
        """(B, T, N, slot_dim) + (B, T, action_dim) -> next slots (B, N, slot_dim)."""
        self._validate(slots, actions)
        batch, steps, n_slots, _ = slots.shape
        tokens = torch.cat(
            [self.slot_in(slots), self.action_in(actions).unsqueeze(2)], dim=2
        )
        times = torch.arange(steps, device=slots.device)
        tokens = tokens + self.time_embed(times).view(1, steps, 1, -1)
        causal = causal_bias(steps).to(tokens.device)
        for layer in self.layers:
            tokens = layer(tokens, causal)
        return self.slot_out(self.norm_out(tokens[:, -1, :n_slots]))

    def rollout(self, seed_slots: Tensor, actions: Tensor, horizon: int) -> Tensor:
        """Autoregressive prediction of ``horizon`` steps after the seed.

        ``actions`` covers the whole window: either seed+horizon entries (the
        final one, aligned with the last predicted step, is unused) or exactly
        the seed+horizon-1 that are consumed. No ground truth is injected
        after the seed.
        """
        if horizon < 1:
            raise ValueError("horizon must be at least 1")
        seed = seed_slots.shape[1]
        needed = seed + horizon - 1
        if actions.shape[1] not in (needed, needed + 1):
            raise ValueError(
                f"rollout over {horizon} steps from {seed} seeds needs {needed} "
                f"(or {needed + 1}) actions, got {actions.shape[1]}"
            )
        history = seed_slots
        predictions = []
        for step in range(horizon):
            upto = seed + step
            pred = self.predict_next(history, actions[:, :upto])
            predictions.append(pred)
            history = torch.cat([history, pred.unsqueeze(1)], dim=1)
        return torch.stack(predictions, dim=1)


def dynamics_loss(
    true_frames: Tensor,
    true_slots: Tensor,
    predicted_slots: Tensor,
    decoder: SlotDecoder,
    recon_weight: float = 1.0,
) -> Tensor:
    """Hybrid prediction loss: slot-space match plus pixel reconstruction.

    Sums squared errors over elements and steps (mean over the batch): the
    joint-embedding term compares predicted slots against the encoder's slots
    for the same frames (targets carry no gradient), the reconstruction term
    decodes the predictions with the shared decoder and compares to the true
    frames. Callers are responsible for restricting the parameter group that
    optimizes this loss to the dynamics model.
    """
    if not (true_frames.shape[:2] == true_slots.shape[:2] == predicted_slots.shape[:2]):
        raise ValueError("frames, target slots, and predictions disagree on (B, T)")
    batch, steps = predicted_slots.shape[:2]
    joint = ((predicted_slots - true_slots.detach()) ** 2).sum(dim=(2, 3))
    loss = joint.sum(dim=1).mean()
    if recon_weight != 0.0:
        decomposition = decoder(predicted_slots.reshape(batch * steps, *predicted_slots.shape[2:]))
        composite = decomposition.composite.reshape(batch, steps, *true_frames.shape[2:])
        recon = ((composite - true_frames) ** 2).sum(dim=(2, 3, 4))
        loss = loss + recon_weight * recon.sum(dim=1).mean()
    return loss
