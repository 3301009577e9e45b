"""Masked-reconstruction pretraining of the skeleton encoder.

Sequences are pelvis-centered per frame (mask-aware, so the transform is
computable from corrupted data), masked joints are zero-filled, and the
autoencoder is trained to reproduce the clean centered coordinates. The
trained encoder is what downstream prediction consumes; the small decoder is
kept for coordinate completion.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from .nets import EncoderConfig, SkeletonAutoencoder
from .skeleton import MaskSpec, SkeletonGraph, pelvis_reference, sample_mask

LOSS_MODES = ("all_joint", "masked_only")
DEFAULT_VAL_RATIOS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


@dataclass
class PretrainConfig:
    strategy: str = "random"
    ratio: float = 0.5
    loss_mode: str = "all_joint"
    lr: float = 1.5e-4
    batch_size: int = 256
    epochs: int = 50
    val_ratios: tuple[float, ...] = DEFAULT_VAL_RATIOS
    val_mask_seed: int = 9000
    val_limit: int = 256

    def __post_init__(self):
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}")
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError("training mask ratio must be in [0, 1]")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


def reconstruction_loss(target, recon, mask=None, mode: str = "all_joint") -> torch.Tensor:
    """Mean squared reconstruction error over (frame, joint) locations.

    all_joint averages the squared coordinate-error norm over every (t, n);
    masked_only restricts both the sum and the denominator to masked ones.
    """
    if mode not in LOSS_MODES:
        raise ValueError(f"unknown loss mode {mode!r}")
    target = torch.as_tensor(target, dtype=torch.float64) if not torch.is_tensor(target) else target
    recon = torch.as_tensor(recon, dtype=torch.float64) if not torch.is_tensor(recon) else recon
    if target.shape != recon.shape:
        raise ValueError(f"shape mismatch: {tuple(target.shape)} vs {tuple(recon.shape)}")
    sq = ((target - recon) ** 2).sum(dim=-1)  # (..., T, N)
    if mode == "all_joint":
        return sq.mean()
    if mask is None:
        raise ValueError("masked_only loss requires a mask")
    mask_t = torch.as_tensor(np.asarray(mask, dtype=bool))
    mask_t = mask_t.expand(sq.shape)
    count = int(mask_t.sum())
    if count == 0:
        raise ValueError("no masked joints: masked_only loss undefined for an empty mask")
    return sq[mask_t].sum() / count


def mpjpe(target, recon, subset=None) -> float:
    """Mean Euclidean per-joint error (meters) over selected (t, n)."""
    target = np.asarray(target, dtype=np.float64)
    recon = np.asarray(recon, dtype=np.float64)
    if target.shape != recon.shape:
        raise ValueError(f"shape mismatch: {target.shape} vs {recon.shape}")
    dist = np.linalg.norm(target - recon, axis=-1)
    if subset is None:
        return float(dist.mean())
    subset = np.broadcast_to(np.asarray(subset, dtype=bool), dist.shape)
    if not subset.any():
        raise ValueError("empty subset")
    return float(dist[subset].mean())


def feature_consistency(h_clean, h_masked) -> float:
    """Mean per-token cosine similarity; zero-norm tokens contribute 0."""
    a = torch.as_tensor(np.asarray(h_clean, dtype=np.float64)) if not torch.is_tensor(h_clean) else h_clean
    b = torch.as_tensor(np.asarray(h_masked, dtype=np.float64)) if not torch.is_tensor(h_masked) else h_masked
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    a = a.reshape(-1, a.shape[-1]).double()
    b = b.reshape(-1, b.shape[-1]).double()
    num = (a * b).sum(dim=-1)
    den = a.norm(dim=-1) * b.norm(dim=-1)
    cos = torch.where(den > 0, num / torch.where(den > 0, den, torch.ones_like(den)),
                      torch.zeros_like(num))
    return float(cos.mean())


def _mask_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def prepare_masked_batch(batch: np.ndarray, masks: np.ndarray, pelvis_index: int):
    """Center by (mask-aware) pelvis, zero-fill, and split input/target.

    batch: (B, T, N, 3) world frame; masks: (B, T, N) bool.
    Returns float64 tensors (inputs, targets) in the centered frame.
    """
    b = batch.shape[0]
    inputs = np.empty_like(batch)
    targets = np.empty_like(batch)
    for i in range(b):
        centers = pelvis_reference(batch[i], pelvis_index, masks[i])
        centered = batch[i] - centers[:, None, :]
        targets[i] = centered
        filled = centered.copy()
        filled[masks[i]] = 0.0
        inputs[i] = filled
    return torch.from_numpy(inputs), torch.from_numpy(targets)


def evaluate_recon_grid(model: SkeletonAutoencoder, sequences: np.ndarray, graph: SkeletonGraph,
                        ratios, strategy: str = "random", mask_seed: int = 9000,
                        pelvis_index: int | None = None) -> dict[float, float]:
    """All-joint reconstruction MPJPE per test-time mask ratio."""
    pelvis_index = graph.joint_index("pelvis") if pelvis_index is None else pelvis_index
    t_frames = sequences.shape[1]
    out = {}
    model.eval()
    with torch.no_grad():
        for ri, r in enumerate(ratios):
            masks = np.stack([
                sample_mask(MaskSpec(strategy, r, seed=_mask_seed(mask_seed, ri, i)), t_frames, graph)
                for i in range(sequences.shape[0])])
            inputs, targets = prepare_masked_batch(sequences, masks, pelvis_index)
            recon = model(inputs)
            out[float(r)] = mpjpe(targets.numpy(), recon.numpy())
    return out


@dataclass
class PretrainResult:
    model: SkeletonAutoencoder
    history: list[dict] = field(default_factory=list)
    final_train_loss: float = float("nan")
    first_step_loss: float = float("nan")


def pretrain(sequences: np.ndarray, graph: SkeletonGraph, encoder_config: EncoderConfig,
             config: PretrainConfig, seed: int, val_sequences: np.ndarray | None = None,
             log_path: str | Path | None = None, max_steps: int | None = None) -> PretrainResult:
    """Train the masked autoencoder; deterministic given seed.

    sequences: (M, T, N, 3) world-frame skeleton windows. A fresh mask per
    sequence is drawn every epoch from a seed stream. Aborts on non-finite
    loss. Writes a line-delimited training log when log_path is given.
    """
    sequences = np.asarray(sequences, dtype=np.float64)
    if sequences.ndim != 4 or sequences.shape[0] == 0:
        raise ValueError("sequences must be a non-empty (M, T, N, C) array")
    pelvis_index = graph.joint_index("pelvis")
    t_frames = sequences.shape[1]

    torch.manual_seed(seed)
    model = SkeletonAutoencoder(graph, encoder_config)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    order_rng = np.random.default_rng(seed)

    history: list[dict] = []
    log_fh = open(log_path, "w") if log_path is not None else None
    first_step_loss = None
    last_loss = float("nan")
    steps = 0
    try:
        for epoch in range(config.epochs):
            model.train()
            order = order_rng.permutation(sequences.shape[0])
            epoch_losses = []
            for lo in range(0, len(order), config.batch_size):
                idx = order[lo:lo + config.batch_size]
                masks = np.stack([
                    sample_mask(MaskSpec(config.strategy, config.ratio,
                                         seed=_mask_seed(seed, epoch, int(i))), t_frames, graph)
                    for i in idx])
                inputs, targets = prepare_masked_batch(sequences[idx], masks, pelvis_index)
                recon = model(inputs)
                if config.loss_mode == "masked_only" and not masks.any():
                    raise ValueError("no masked joints: masked_only loss with ratio 0")
                loss = reconstruction_loss(targets, recon,
                                           mask=masks if config.loss_mode == "masked_only" else None,
                                           mode=config.loss_mode)
                if not torch.isfinite(loss):
                    raise RuntimeError(f"training diverged: non-finite loss at epoch {epoch}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                last_loss = float(loss.detach())
                if first_step_loss is None:
                    first_step_loss = last_loss
                epoch_losses.append(last_loss)
                steps += 1
                if max_steps is not None and steps >= max_steps:
                    break
            rec = {"epoch": epoch, "split": "train", "loss": float(np.mean(epoch_losses))}
            history.append(rec)
            if log_fh:
                log_fh.write(json.dumps(rec) + "\n")
            if val_sequences is not None and len(val_sequences):
                val = val_sequences[:config.val_limit]
                grid = evaluate_recon_grid(model, val, graph, config.val_ratios,
                                           strategy="random", mask_seed=config.val_mask_seed)
                vrec = {"epoch": epoch, "split": "val",
                        "mpjpe_by_ratio": {f"{r:.1f}": v for r, v in grid.items()}}
                history.append(vrec)
                if log_fh:
                    log_fh.write(json.dumps(vrec) + "\n")
            if max_steps is not None and steps >= max_steps:
                break
    finally:
        if log_fh:
            log_fh.close()
    model.eval()
    return PretrainResult(model=model, history=history,
                          final_train_loss=last_loss,
                          first_step_loss=first_step_loss if first_step_loss is not None else float("nan"))


def load_autoencoder(payload: dict, graph: SkeletonGraph | None = None) -> SkeletonAutoencoder:
    """Rebuild a pretrained autoencoder from a checkpoint payload."""
    from .skeleton import build_skeleton_graph

    ckpt_graph = payload["graph"] if "graph" in payload else build_skeleton_graph(payload["graph_spec"])
    if graph is not None and ckpt_graph.to_spec() != graph.to_spec():
        raise ValueError("checkpoint/graph mismatch")
    enc_cfg = EncoderConfig(**payload["config"]["encoder"])
    model = SkeletonAutoencoder(ckpt_graph, enc_cfg)
    model.load_state_dict(payload["state"])
    model.eval()
    return model


def reconstruct_complete(seq_data: np.ndarray, mask: np.ndarray, model: SkeletonAutoencoder,
                         pelvis_index: int) -> np.ndarray:
    """Replace masked joints with decoder output; observed joints pass through."""
    seq_data = np.asarray(seq_data, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != seq_data.shape[:2]:
        raise ValueError("mask shape does not match sequence")
    out = seq_data.copy()
    if not mask.any():
        return out
    centers = pelvis_reference(seq_data, pelvis_index, mask)
    centered = seq_data - centers[:, None, :]
    centered[mask] = 0.0
    model.eval()
    with torch.no_grad():
        recon = model(torch.from_numpy(centered)).numpy()
    world = recon + centers[:, None, :]
    out[mask] = world[mask]
    return out
