"""Causal transformer over slot histories with register and output tokens.

Each time step contributes its N slot tokens, R learned register tokens, and
one learned output token; the processed output token per step feeds the
reward, value, and action heads. Masking lets tokens of step t attend to all
tokens of step t but only to *slot* tokens of earlier steps, so registers and
outputs never leak computation across steps. Recency is encoded with linear
attention biases on the step distance (one slope per head), which needs no
absolute positions and therefore handles histories of any length.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import Tensor, nn

from slotworld.nets import MultiheadSelfAttention, feed_forward

SLOT, REGISTER, OUTPUT = 0, 1, 2


@dataclass(frozen=True)
class TokenLayout:
    """Deterministic token ordering: per step [slots..., registers..., output]."""

    steps: int
    slots_per_step: int
    registers: int

    def __post_init__(self):
        if self.steps < 1 or self.slots_per_step < 1 or self.registers < 0:
            raise ValueError("layout needs steps >= 1, slots >= 1, registers >= 0")

    @property
    def tokens_per_step(self) -> int:
        return self.slots_per_step + self.registers + 1

    @property
    def total_tokens(self) -> int:
        return self.steps * self.tokens_per_step

    def token_steps(self) -> Tensor:
        return torch.arange(self.steps).repeat_interleave(self.tokens_per_step)

    def token_kinds(self) -> Tensor:
        per_step = torch.cat(
            [
                torch.full((self.slots_per_step,), SLOT),
                torch.full((self.registers,), REGISTER),
                torch.tensor([OUTPUT]),
            ]
        )
        return per_step.repeat(self.steps)

    def output_indices(self) -> Tensor:
        return torch.arange(self.steps) * self.tokens_per_step + (self.tokens_per_step - 1)


def build_mask(layout: TokenLayout) -> Tensor:
    """Boolean (Q, K) matrix of permitted attention pairs.

    Allowed iff step(k) <= step(q) and (k is a slot token or same step), i.e.
    cross-step attention reaches only slot tokens.
    """
    steps = layout.token_steps()
    kinds = layout.token_kinds()
    q_step = steps.unsqueeze(1)
    k_step = steps.unsqueeze(0)
    causal = k_step <= q_step
    reachable = (kinds.unsqueeze(0) == SLOT) | (k_step == q_step)
    return causal & reachable


def alibi_slopes(heads: int) -> Tensor:
    """Geometric slope schedule 2^(-8h/heads) for h = 1..heads."""
    exponents = torch.arange(1, heads + 1, dtype=torch.float64) * (-8.0 / heads)
    return torch.pow(2.0, exponents)


def build_alibi_bias(layout: TokenLayout, heads: int) -> Tensor:
    """(heads, Q, K) additive attention bias.

    Permitted pairs get -slope * (step(q) - step(k)); all tokens of one step
    share a position, so same-step bias is 0. Forbidden pairs are -inf, which
    folds the mask into the bias.
    """
    steps = layout.token_steps().to(torch.float64)
    distance = steps.unsqueeze(1) - steps.unsqueeze(0)
    bias = -alibi_slopes(heads).view(-1, 1, 1) * distance.unsqueeze(0)
    return bias.masked_fill(~build_mask(layout).unsqueeze(0), float("-inf"))


@dataclass
class BackboneConfig:
    layers: int = 4
    heads: int = 8
    token_dim: int = 256
    mlp_dim: int = 512
    registers: int = 4
    slot_dim: int = 128

    def __post_init__(self):
        if self.token_dim % self.heads != 0:
            raise ValueError("token_dim must be divisible by heads")


@dataclass
class AttentionRecord:
    """Per-layer post-softmax attention weights captured in one forward pass."""

    layout: TokenLayout
    layers: list[Tensor] = field(default_factory=list)  # each (B, heads, Q, K)


class _Block(nn.Module):
    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.norm_attn = nn.RMSNorm(config.token_dim)
        self.attn = MultiheadSelfAttention(config.token_dim, config.heads)
        self.norm_ff = nn.RMSNorm(config.token_dim)
        self.ff = feed_forward(config.token_dim, config.mlp_dim)

    def forward(self, x: Tensor, bias: Tensor, collect: bool):
        attended, weights = self.attn(self.norm_attn(x), bias, return_weights=True)
        x = x + attended
        x = x + self.ff(self.norm_ff(x))
        return x, (weights if collect else None)


class SlotHistoryTransformer(nn.Module):
    """Backbone mapping a slot history to one summary embedding per step."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        self.slot_in = nn.Linear(config.slot_dim, config.token_dim)
        self.register_tokens = nn.Parameter(torch.randn(config.registers, config.token_dim) * 0.02)
        self.output_token = nn.Parameter(torch.randn(config.token_dim) * 0.02)
        self.blocks = nn.ModuleList(_Block(config) for _ in range(config.layers))
        self.norm_out = nn.RMSNorm(config.token_dim)

    def forward(self, slots: Tensor, collect_attention: bool = False):
        """slots: (B, T, N, slot_dim) -> output embeddings (B, T, token_dim).

        With ``collect_attention`` also returns the AttentionRecord of the pass.
        """
        if slots.ndim != 4:
            raise ValueError(f"expected (B, T, N, D) slot history, got {tuple(slots.shape)}")
        batch, steps, n_slots, dim = slots.shape
        if steps < 1 or dim != self.config.slot_dim:
            raise ValueError("empty history or slot dimension mismatch")
        layout = TokenLayout(steps, n_slots, self.config.registers)

        tokens = torch.cat(
            [
                self.slot_in(slots),
                self.register_tokens.expand(batch, steps, -1, -1),
                self.output_token.expand(batch, steps, 1, -1),
            ],
            dim=2,
        ).reshape(batch, layout.total_tokens, self.config.token_dim)

        bias = build_alibi_bias(layout, self.config.heads).to(tokens.device)
        record = AttentionRecord(layout)
        for block in self.blocks:
            tokens, weights = block(tokens, bias, collect_attention)
            if collect_attention:
                record.layers.append(weights.detach())

        outputs = self.norm_out(tokens)[:, layout.output_indices()]
        if collect_attention:
            return outputs, record
        return outputs
