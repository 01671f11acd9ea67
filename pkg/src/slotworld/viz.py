"""Attention-rollout interpretability and image export utilities.

Attention rollout turns a stack of per-layer attention matrices into a
relevance distribution over input tokens: each layer's head-averaged matrix
is blended with the identity (residual paths carry signal too), row
normalized, and the layer matrices are multiplied in order. Reading the final
output token's row, restricted to slot tokens, gives per-slot relevance that
can be splatted over the frame through the decoder masks.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import Tensor
from PIL import Image

from slotworld.autoencoder import SlotDecomposition
from slotworld.backbone import SLOT, AttentionRecord

# Fixed palette for per-slot segmentation colors (extended cyclically).
SEGMENT_COLORS = np.array(
    [
        [0.91, 0.31, 0.26],
        [0.35, 0.70, 0.90],
        [0.45, 0.80, 0.29],
        [0.95, 0.77, 0.06],
        [0.61, 0.35, 0.71],
        [0.95, 0.45, 0.77],
        [0.20, 0.55, 0.50],
        [0.90, 0.55, 0.20],
        [0.55, 0.57, 0.67],
        [0.30, 0.35, 0.85],
    ]
)


def attention_rollout(record: AttentionRecord, batch_index: int = 0) -> Tensor:
    """Relevance of each step's slots for the final step's output token.

    Returns a (steps, slots_per_step) matrix that sums to 1. Heads are
    averaged arithmetically; the residual path enters as 0.5*A + 0.5*I before
    row normalization, and layers multiply in application order.
    """
    if not record.layers:
        raise ValueError("attention record is empty")
    layout = record.layout
    total = layout.total_tokens
    rollout = None
    for weights in record.layers:
        if weights.ndim != 4 or weights.shape[-2:] != (total, total):
            raise ValueError(
                f"attention matrices must be (B, H, {total}, {total}), got "
                f"{tuple(weights.shape)}"
            )
        mean_heads = weights[batch_index].mean(dim=0)
        mixed = 0.5 * mean_heads + 0.5 * torch.eye(total, dtype=mean_heads.dtype)
        mixed = mixed / mixed.sum(dim=-1, keepdim=True)
        rollout = mixed if rollout is None else mixed @ rollout
    target = layout.output_indices()[-1]
    relevance = rollout[target]
    slot_mask = layout.token_kinds() == SLOT
    slot_relevance = relevance[slot_mask].reshape(layout.steps, layout.slots_per_step)
    return slot_relevance / slot_relevance.sum()


def relevance_heatmap(decomposition: SlotDecomposition, relevance: Tensor) -> np.ndarray:
    """Splat per-slot relevance through the masks: (H, W) map in [0, 1]."""
    masks = decomposition.masks
    if masks.ndim == 5:  # (B, N, 1, H, W) -> first batch element
        masks = masks[0]
    n_slots = masks.shape[0]
    if relevance.numel() != n_slots:
        raise ValueError(f"need one relevance per slot ({n_slots}), got {relevance.numel()}")
    weights = relevance.reshape(n_slots, 1, 1, 1).to(masks.dtype)
    heat = (weights * masks).sum(dim=0)[0]
    return heat.detach().cpu().numpy()


def _colormap(values: np.ndarray) -> np.ndarray:
    """Small deterministic blue->red colormap for [0, 1] heat values."""
    v = np.clip(values, 0.0, 1.0)[..., None]
    cold = np.array([0.05, 0.05, 0.35])
    hot = np.array([0.95, 0.25, 0.10])
    return (1.0 - v) * cold + v * hot


def render_attention_overlay(
    frame: np.ndarray, decomposition: SlotDecomposition, relevance: Tensor
) -> tuple[np.ndarray, np.ndarray]:
    """(overlay over the reconstruction, standalone colormap), both (H, W, 3)."""
    heat = relevance_heatmap(decomposition, relevance)
    peak = heat.max()
    normalized = heat / peak if peak > 0 else heat
    composite = decomposition.composite
    if composite.ndim == 4:
        composite = composite[0]
    base = composite.detach().cpu().numpy().transpose(1, 2, 0)
    base = np.clip(base, 0.0, 1.0)
    overlay = 0.5 * base + 0.5 * _colormap(normalized)
    return overlay.astype(np.float32), _colormap(normalized).astype(np.float32)


def segmentation_image(decomposition: SlotDecomposition, batch_index: int = 0) -> np.ndarray:
    """Color each pixel by the argmax slot mask; colors are fixed per slot."""
    masks = decomposition.masks
    if masks.ndim == 5:
        masks = masks[batch_index]
    owner = masks[:, 0].argmax(dim=0).detach().cpu().numpy()
    colors = SEGMENT_COLORS[np.arange(masks.shape[0]) % len(SEGMENT_COLORS)]
    return colors[owner].astype(np.float32)


def save_image(path, image: np.ndarray) -> None:
    """Write a float [0, 1] (H, W, 3) array as PNG."""
    data = np.clip(np.asarray(image), 0.0, 1.0)
    Image.fromarray((data * 255.0).round().astype(np.uint8)).save(path)


def image_grid(rows: list[list[np.ndarray]], pad: int = 2) -> np.ndarray:
    """Tile equally sized images into a grid with a light separator."""
    cell_h, cell_w = rows[0][0].shape[:2]
    height = len(rows) * (cell_h + pad) - pad
    width = len(rows[0]) * (cell_w + pad) - pad
    grid = np.full((height, width, 3), 1.0, dtype=np.float32)
    for r, row in enumerate(rows):
        for c, cell in enumerate(row):
            y = r * (cell_h + pad)
            x = c * (cell_w + pad)
            grid[y : y + cell_h, x : x + cell_w] = cell
    return grid


@torch.no_grad()
def rollout_strip(agent, episode, seed_steps: int, horizon: int) -> np.ndarray:
    """Open-loop prediction strip: truth, prediction, segmentation, then one
    masked-reconstruction row per slot; columns are time steps.

    The prediction row shows decoded encoder slots for the seed steps and
    decoded dynamics predictions afterwards.
    """
    from slotworld.trainer import frames_to_tensor

    window = seed_steps + horizon
    frames_np = episode.frames_float()[:window]
    frames = frames_to_tensor(frames_np).unsqueeze(0)
    actions = torch.from_numpy(episode.actions[: window - 1]).float().unsqueeze(0)
    slots = agent.autoencoder.encode_video(frames)
    predicted = agent.dynamics.rollout(slots[:, :seed_steps], actions, horizon=horizon)
    full = torch.cat([slots[:, :seed_steps], predicted], dim=1)
    decomposition = agent.autoencoder.decode_video(full)

    def to_image(tensor: Tensor) -> np.ndarray:
        return np.clip(tensor.cpu().numpy().transpose(1, 2, 0), 0.0, 1.0).astype(np.float32)

    truth_row = [frames_np[t].astype(np.float32) for t in range(window)]
    pred_row = [to_image(decomposition.composite[0, t]) for t in range(window)]
    seg_row = []
    slot_rows = [[] for _ in range(full.shape[2])]
    for t in range(window):
        step = SlotDecomposition(
            rgb=decomposition.rgb[0, t],
            alpha_logits=decomposition.alpha_logits[0, t],
            masks=decomposition.masks[0, t],
            composite=decomposition.composite[0, t],
        )
        seg_row.append(segmentation_image(step))
        masked = decomposition.masks[0, t] * decomposition.rgb[0, t]
        for n in range(full.shape[2]):
            slot_rows[n].append(to_image(masked[n]))
    return image_grid([truth_row, pred_row, seg_row] + slot_rows)
