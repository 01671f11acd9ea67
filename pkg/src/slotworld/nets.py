"""Small shared network pieces: explicit multi-head self-attention and MLPs.

Attention is written out longhand (no fused kernels) so that masking is
strictly -inf-before-softmax. That makes causality exact at the bit level:
a masked key contributes a weight of exactly zero, so perturbing future
tokens cannot change earlier outputs.
"""

from __future__ import annotations

import torch
from torch import Tensor, nn


class MultiheadSelfAttention(nn.Module):
    """Self-attention over the middle dimension of (batch, tokens, dim).

    ``bias`` is an additive per-head score matrix of shape
    (heads, tokens, tokens); masked pairs carry -inf there. Returns the
    attended values and, when asked, the post-softmax weights.
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = dim // heads
        self.scale = self.head_dim ** -0.5
        self.to_q = nn.Linear(dim, dim)
        self.to_k = nn.Linear(dim, dim)
        self.to_v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def forward(
        self, x: Tensor, bias: Tensor | None = None, return_weights: bool = False
    ):
        batch, tokens, _ = x.shape

        def split(t: Tensor) -> Tensor:
            return t.view(batch, tokens, self.heads, self.head_dim).transpose(1, 2)

        q, k, v = split(self.to_q(x)), split(self.to_k(x)), split(self.to_v(x))
        scores = (q @ k.transpose(-2, -1)) * self.scale
        if bias is not None:
            scores = scores + bias.to(scores.dtype).unsqueeze(0)
        weights = torch.softmax(scores, dim=-1)
        y = (weights @ v).transpose(1, 2).reshape(batch, tokens, -1)
        y = self.out(y)
        if return_weights:
            return y, weights
        return y


def feed_forward(dim: int, hidden: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))


def causal_bias(length: int) -> Tensor:
    """(1, length, length) additive bias: 0 on/below the diagonal, -inf above."""
    bias = torch.full((length, length), float("-inf"))
    return torch.triu(bias, diagonal=1).unsqueeze(0)
