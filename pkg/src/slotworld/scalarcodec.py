"""Symmetric-log transforms and categorical scalar-regression math.

Rewards and returns are regressed as categorical distributions over
exponentially spaced bins: a scalar target is squashed with ``symlog``,
spread onto the two nearest grid points (two-hot encoding), and decoded
back as the expectation of the softmax distribution over the bin values.
Also hosts the percentile-range normalizer used to rescale returns in the
actor objective.
"""

from __future__ import annotations

import torch
from torch import Tensor

# Extent of the symlog-space grid; bin values span symexp(+-20) ~ +-4.85e8.
SYMLOG_LIMIT = 20.0


def _check_finite(x: Tensor, name: str) -> None:
    if not torch.isfinite(x).all():
        raise ValueError(f"{name} must be finite")


def _as_tensor(x) -> Tensor:
    # Python scalars and lists are double precision; don't downcast to the
    # torch default dtype. Tensors keep their own dtype.
    if isinstance(x, Tensor):
        return x
    return torch.as_tensor(x, dtype=torch.float64)


def symlog(x) -> Tensor:
    """sign(x) * ln(1 + |x|), elementwise. Odd, monotone, symexp's inverse."""
    x = _as_tensor(x)
    _check_finite(x, "symlog input")
    return torch.sign(x) * torch.log1p(torch.abs(x))


def symexp(y) -> Tensor:
    """sign(y) * (exp(|y|) - 1), elementwise. Inverse of :func:`symlog`."""
    y = _as_tensor(y)
    _check_finite(y, "symexp input")
    return torch.sign(y) * torch.expm1(torch.abs(y))


class BinSpec:
    """Exponentially spaced discretization shared by reward and value heads.

    ``symlog_grid`` holds ``count`` evenly spaced points on
    [-SYMLOG_LIMIT, +SYMLOG_LIMIT]; ``bin_values`` is its elementwise symexp.
    Both are float64 so that two-hot round trips stay exact well below 1e-6.
    """

    def __init__(self, count: int, symlog_grid: Tensor, bin_values: Tensor):
        self.count = count
        self.symlog_grid = symlog_grid
        self.bin_values = bin_values

    def __repr__(self) -> str:
        return f"BinSpec(count={self.count})"


def make_bins(count: int = 255) -> BinSpec:
    """Build a ``BinSpec`` with ``count`` bins (odd counts represent 0 exactly)."""
    if count < 2:
        raise ValueError(f"need at least 2 bins, got {count}")
    if count % 2 == 1:
        # Mirror a half grid so the midpoint is exactly 0.0.
        half = torch.linspace(0.0, SYMLOG_LIMIT, (count + 1) // 2, dtype=torch.float64)
        grid = torch.cat([-half.flip(0)[:-1], half])
    else:
        grid = torch.linspace(-SYMLOG_LIMIT, SYMLOG_LIMIT, count, dtype=torch.float64)
    return BinSpec(count=count, symlog_grid=grid, bin_values=symexp(grid))


def twohot_encode(target, bins: BinSpec) -> Tensor:
    """Encode scalars as weights on the two nearest symlog-grid points.

    Returns a float64 tensor of shape ``target.shape + (bins.count,)`` whose
    rows sum to 1, have at most two adjacent nonzero entries, and satisfy
    ``weights @ symlog_grid == clamp(symlog(target), -20, 20)`` exactly.
    Out-of-range targets saturate at the grid ends.
    """
    target = _as_tensor(target)
    _check_finite(target, "two-hot target")
    y = symlog(target.to(torch.float64)).clamp(-SYMLOG_LIMIT, SYMLOG_LIMIT)
    grid = bins.symlog_grid

    flat = y.reshape(-1)
    hi = torch.searchsorted(grid, flat).clamp(1, bins.count - 1)
    lo = hi - 1
    w_hi = (flat - grid[lo]) / (grid[hi] - grid[lo])
    weights = torch.zeros(flat.shape[0], bins.count, dtype=torch.float64)
    weights.scatter_(1, lo.unsqueeze(1), (1.0 - w_hi).unsqueeze(1))
    # scatter_add_: lo == hi - 1 always, but w_hi may be 0/1 on grid points.
    weights.scatter_add_(1, hi.unsqueeze(1), w_hi.unsqueeze(1))
    return weights.reshape(*y.shape, bins.count)


def expected_value(logits: Tensor, bins: BinSpec) -> Tensor:
    """Decode logits to a scalar as softmax(logits) @ bin_values.

    Operates on the trailing dimension; differentiable in ``logits`` and
    invariant to adding a constant to all logits.
    """
    _check_finite(logits, "logits")
    probs = torch.softmax(logits, dim=-1)
    return probs @ bins.bin_values.to(logits.dtype)


def categorical_symlog_loss(logits: Tensor, target, bins: BinSpec) -> Tensor:
    """Cross-entropy between the two-hot encoding of ``target`` and ``logits``.

    Returns per-element losses of shape ``target.shape`` (trailing logits
    dimension consumed). Zero iff the softmax reproduces the two-hot weights
    exactly, which requires the target to sit on a grid point.
    """
    weights = twohot_encode(target, bins).to(logits.dtype)
    logp = torch.log_softmax(logits, dim=-1)
    return -(weights * logp).sum(-1)


class ReturnNormalizer:
    """EMA of the 5th-to-95th percentile range of per-batch returns.

    The actor objective divides returns by ``scale = max(1, range_ema)`` so
    small or degenerate return spreads are never amplified. Owned by a single
    trainer; not safe for concurrent mutation.
    """

    def __init__(self, decay: float = 0.99):
        if not 0.0 < decay < 1.0:
            raise ValueError(f"decay must be in (0, 1), got {decay}")
        self.decay = decay
        self.range_ema = 0.0
        self.initialized = False

    def update(self, returns) -> float:
        """Fold one batch of returns into the EMA; returns the new range."""
        r = torch.as_tensor(returns, dtype=torch.float64).detach().reshape(-1)
        if r.numel() == 0:
            raise ValueError("cannot update normalizer from an empty batch")
        batch_range = (torch.quantile(r, 0.95) - torch.quantile(r, 0.05)).item()
        if self.initialized:
            self.range_ema = self.decay * self.range_ema + (1.0 - self.decay) * batch_range
        else:
            self.range_ema = batch_range
            self.initialized = True
        return self.range_ema

    @property
    def scale(self) -> float:
        return max(1.0, self.range_ema)

    def state_dict(self) -> dict:
        return {
            "decay": self.decay,
            "range_ema": self.range_ema,
            "initialized": self.initialized,
        }

    def load_state_dict(self, state: dict) -> None:
        self.decay = state["decay"]
        self.range_ema = state["range_ema"]
        self.initialized = state["initialized"]
