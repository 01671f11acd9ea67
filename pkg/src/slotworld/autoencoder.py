"""Slot autoencoder for video: recursive scene parsing and compositing.

Frames are encoded to a feature grid, a fixed set of learned slots competes
for grid locations through slot attention (softmax over slots, rows then
re-normalized over locations), and each slot is decoded independently into an
RGB image plus alpha logits. Per-pixel softmax over the slot alphas yields
masks that composite the per-slot images back into a frame.

The first frame of a video is parsed with several refinement iterations from
the learned initial slots; each later frame applies a single self-attention
predictor step to the previous slots followed by one corrective refinement on
the new frame's features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn

from slotworld.nets import MultiheadSelfAttention, feed_forward


@dataclass
class AutoencoderConfig:
    num_slots: int = 8
    slot_dim: int = 128
    feature_dim: int = 64
    image_size: int = 64
    encoder_channels: tuple = (32, 64, 64, 64)
    encoder_strides: tuple = (2, 2, 2, 1)
    decoder_channels: tuple = (64, 64, 64)
    decoder_initial_size: int = 8
    slot_mlp_hidden: int = 128
    refine_iters_first: int = 3
    refine_iters_later: int = 1
    predictor_heads: int = 4

    def __post_init__(self):
        if len(self.encoder_channels) != len(self.encoder_strides):
            raise ValueError("encoder channels and strides must align")
        stride_product = math.prod(self.encoder_strides)
        if self.image_size % stride_product != 0:
            raise ValueError("encoder strides must divide the image size")
        ups = 2 ** len(self.decoder_channels)
        if self.decoder_initial_size * ups != self.image_size:
            raise ValueError(
                "decoder must upsample from decoder_initial_size to image_size "
                f"({self.decoder_initial_size} * 2^{len(self.decoder_channels)} "
                f"!= {self.image_size})"
            )

    @property
    def grid_size(self) -> int:
        return self.image_size // math.prod(self.encoder_strides)


def _position_grid(size: int) -> Tensor:
    """(1, size*size, 4) grid of (y, x, 1-y, 1-x) in [0, 1], row-major."""
    coords = torch.linspace(0.0, 1.0, size)
    ys, xs = torch.meshgrid(coords, coords, indexing="ij")
    grid = torch.stack([ys, xs, 1.0 - ys, 1.0 - xs], dim=-1)
    return grid.reshape(1, size * size, 4)


class PositionEmbed(nn.Module):
    """Adds a linear projection of normalized grid coordinates."""

    def __init__(self, dim: int, size: int):
        super().__init__()
        self.proj = nn.Linear(4, dim)
        self.register_buffer("grid", _position_grid(size), persistent=False)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.proj(self.grid.to(x.dtype))


class FrameEncoder(nn.Module):
    """CNN to a flattened feature grid with positional embedding."""

    def __init__(self, config: AutoencoderConfig):
        super().__init__()
        self.config = config
        layers: list[nn.Module] = []
        in_ch = 3
        for ch, stride in zip(config.encoder_channels, config.encoder_strides):
            # Replicate padding keeps constant inputs constant at the borders,
            # so positional structure comes only from the position embedding.
            layers += [
                nn.Conv2d(in_ch, ch, kernel_size=5, stride=stride, padding=2,
                          padding_mode="replicate"),
                nn.ReLU(),
            ]
            in_ch = ch
        self.conv = nn.Sequential(*layers)
        self.project = nn.Conv2d(in_ch, config.feature_dim, kernel_size=1)
        self.position = PositionEmbed(config.feature_dim, config.grid_size)
        self.norm = nn.LayerNorm(config.feature_dim)
        self.mlp = nn.Sequential(
            nn.Linear(config.feature_dim, config.feature_dim),
            nn.ReLU(),
            nn.Linear(config.feature_dim, config.feature_dim),
        )

    def forward(self, frames: Tensor) -> Tensor:
        """frames: (B, 3, H, W) in [0, 1] -> features (B, L, feature_dim)."""
        size = self.config.image_size
        if frames.ndim != 4 or frames.shape[1] != 3 or frames.shape[-2:] != (size, size):
            raise ValueError(
                f"expected (B, 3, {size}, {size}) frames, got {tuple(frames.shape)}"
            )
        x = self.project(self.conv(frames))
        x = x.flatten(2).transpose(1, 2)  # (B, L, D), row-major locations
        return self.mlp(self.norm(self.position(x)))


class SlotAttention(nn.Module):
    """Iterative slot refinement against a feature grid.

    Attention is softmax-normalized over the slot dimension so slots compete
    for locations; each slot's row is then re-normalized over locations to
    form the weights of its value mean. Updates go through a shared GRU cell
    and a residual MLP, so the whole refinement is permutation-equivariant.
    """

    def __init__(self, config: AutoencoderConfig):
        super().__init__()
        dim = config.slot_dim
        self.scale = dim ** -0.5
        self.eps = 1e-8
        self.norm_features = nn.LayerNorm(config.feature_dim)
        self.norm_slots = nn.LayerNorm(dim)
        self.to_q = nn.Linear(dim, dim, bias=False)
        self.to_k = nn.Linear(config.feature_dim, dim, bias=False)
        self.to_v = nn.Linear(config.feature_dim, dim, bias=False)
        self.gru = nn.GRUCell(dim, dim)
        self.norm_mlp = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, config.slot_mlp_hidden),
            nn.ReLU(),
            nn.Linear(config.slot_mlp_hidden, dim),
        )

    def refine(self, slots: Tensor, features: Tensor, iters: int) -> tuple[Tensor, Tensor]:
        """Run ``iters`` refinement steps; returns (slots, last attention).

        ``slots``: (B, N, slot_dim); ``features``: (B, L, feature_dim). The
        returned attention is the location-normalized (B, N, L) matrix whose
        rows each sum to 1.
        """
        if iters < 1:
            raise ValueError("need at least one refinement iteration")
        if slots.shape[0] != features.shape[0]:
            raise ValueError("slots and features disagree on batch size")
        batch, n_slots, dim = slots.shape
        feats = self.norm_features(features)
        k = self.to_k(feats)
        v = self.to_v(feats)
        attn = None
        for _ in range(iters):
            q = self.to_q(self.norm_slots(slots))
            logits = (q @ k.transpose(-2, -1)) * self.scale  # (B, N, L)
            attn = torch.softmax(logits, dim=1) + self.eps   # compete over slots
            attn = attn / attn.sum(dim=-1, keepdim=True)     # weights over locations
            updates = attn @ v
            slots = self.gru(
                updates.reshape(batch * n_slots, dim), slots.reshape(batch * n_slots, dim)
            ).reshape(batch, n_slots, dim)
            slots = slots + self.mlp(self.norm_mlp(slots))
        return slots, attn


@dataclass
class SlotDecomposition:
    """Per-slot render products; masks softmax-normalize across slots."""

    rgb: Tensor          # (B, N, 3, H, W)
    alpha_logits: Tensor  # (B, N, 1, H, W)
    masks: Tensor        # (B, N, 1, H, W), sums to 1 over N at every pixel
    composite: Tensor    # (B, 3, H, W)


class SlotDecoder(nn.Module):
    """Spatial-broadcast decoder shared across slots."""

    def __init__(self, config: AutoencoderConfig):
        super().__init__()
        self.config = config
        size = config.decoder_initial_size
        self.position = PositionEmbed(config.slot_dim, size)
        layers: list[nn.Module] = []
        in_ch = config.slot_dim
        for ch in config.decoder_channels:
            layers += [
                nn.ConvTranspose2d(in_ch, ch, kernel_size=5, stride=2, padding=2, output_padding=1),
                nn.ReLU(),
            ]
            in_ch = ch
        layers.append(nn.Conv2d(in_ch, 4, kernel_size=3, padding=1))
        self.deconv = nn.Sequential(*layers)

    def forward(self, slots: Tensor) -> SlotDecomposition:
        """slots: (B, N, slot_dim) -> SlotDecomposition at full resolution."""
        batch, n_slots, dim = slots.shape
        size = self.config.decoder_initial_size
        x = slots.reshape(batch * n_slots, dim, 1, 1).expand(-1, -1, size, size)
        x = x.flatten(2).transpose(1, 2)
        x = self.position(x)
        x = x.transpose(1, 2).reshape(batch * n_slots, dim, size, size)
        out = self.deconv(x)
        out = out.reshape(batch, n_slots, 4, *out.shape[-2:])
        rgb, alpha = out[:, :, :3], out[:, :, 3:4]
        masks = torch.softmax(alpha, dim=1)
        composite = (masks * rgb).sum(dim=1)
        return SlotDecomposition(rgb=rgb, alpha_logits=alpha, masks=masks, composite=composite)


class SlotPredictor(nn.Module):
    """Single self-attention block advancing slots between frames."""

    def __init__(self, config: AutoencoderConfig):
        super().__init__()
        dim = config.slot_dim
        self.norm_attn = nn.LayerNorm(dim)
        self.attn = MultiheadSelfAttention(dim, config.predictor_heads)
        self.norm_ff = nn.LayerNorm(dim)
        self.ff = feed_forward(dim, 2 * dim)

    def forward(self, slots: Tensor) -> Tensor:
        slots = slots + self.attn(self.norm_attn(slots))
        return slots + self.ff(self.norm_ff(slots))


class SlotVideoAutoencoder(nn.Module):
    """Encoder, recursive slot state, and compositing decoder in one module."""

    def __init__(self, config: AutoencoderConfig):
        super().__init__()
        self.config = config
        self.encoder = FrameEncoder(config)
        self.slot_attention = SlotAttention(config)
        self.decoder = SlotDecoder(config)
        self.predictor = SlotPredictor(config)
        # Learned deterministic initialization keeps parsing reproducible.
        self.initial_slots = nn.Parameter(
            torch.randn(config.num_slots, config.slot_dim) * config.slot_dim ** -0.5
        )

    def encode_features(self, frames: Tensor) -> Tensor:
        return self.encoder(frames)

    def refine(self, slots: Tensor, features: Tensor, iters: int) -> tuple[Tensor, Tensor]:
        return self.slot_attention.refine(slots, features, iters)

    def encode_step(self, frame: Tensor, prev_slots: Tensor | None) -> Tensor:
        """Advance the recursive slot state by one frame.

        ``prev_slots`` None means this is the first frame: refinement starts
        from the learned initial slots with the deeper iteration count.
        """
        features = self.encode_features(frame)
        if prev_slots is None:
            start = self.initial_slots.expand(frame.shape[0], -1, -1)
            slots, _ = self.refine(start, features, self.config.refine_iters_first)
        else:
            slots, _ = self.refine(
                self.predictor(prev_slots), features, self.config.refine_iters_later
            )
        return slots

    def encode_video(self, frames: Tensor) -> Tensor:
        """frames: (B, T, 3, H, W) -> slot history (B, T, N, slot_dim)."""
        if frames.ndim != 5 or frames.shape[1] < 1:
            raise ValueError(f"expected nonempty (B, T, 3, H, W) video, got {tuple(frames.shape)}")
        slots = None
        history = []
        for t in range(frames.shape[1]):
            slots = self.encode_step(frames[:, t], slots)
            history.append(slots)
        return torch.stack(history, dim=1)

    def decode(self, slots: Tensor) -> SlotDecomposition:
        return self.decoder(slots)

    def decode_video(self, slots: Tensor) -> SlotDecomposition:
        """slots: (B, T, N, D) -> decomposition with (B, T, ...) leading dims."""
        batch, steps = slots.shape[:2]
        flat = self.decoder(slots.reshape(batch * steps, *slots.shape[2:]))
        return SlotDecomposition(
            rgb=flat.rgb.reshape(batch, steps, *flat.rgb.shape[1:]),
            alpha_logits=flat.alpha_logits.reshape(batch, steps, *flat.alpha_logits.shape[1:]),
            masks=flat.masks.reshape(batch, steps, *flat.masks.shape[1:]),
            composite=flat.composite.reshape(batch, steps, *flat.composite.shape[1:]),
        )

    def reconstruction_loss(self, frames: Tensor) -> Tensor:
        """Mean squared error of the composite over pixels, channels, and steps."""
        slots = self.encode_video(frames)
        decomposition = self.decode_video(slots)
        return torch.mean((decomposition.composite - frames) ** 2)
