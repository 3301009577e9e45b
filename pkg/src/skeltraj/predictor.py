"""Trajectory predictor: modality tokens, cross-modality and social attention.

Per agent, a latent query sequence (one token per future step), trajectory
tokens, and per-(frame, joint) pose tokens are fused by full self-attention
(the cross-modality stage). The query and trajectory streams of every agent
are then concatenated, tagged as target or neighbor, and passed through the
social stage; the target's query stream feeds the prediction head.

Variants differ only in how pose tokens are produced and trained:
  standard / corruption_trained / recon_frontend: linear projection of joint
      coordinates (corruption_trained sees masked skeletons during training,
      recon_frontend reuses standard weights behind coordinate completion);
  stgcn_scratch / ours / ours_plus_recon: the graph-convolutional encoder
      (trained end-to-end from scratch, or loaded pretrained and frozen).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
from torch import nn

from .nets import EncoderConfig, SkeletonAutoencoder, SkeletonEncoder, positional_encoding, params_digest
from .pretrain import reconstruct_complete
from .skeleton import MaskSpec, SkeletonGraph, pelvis_reference, sample_mask
from .synth import WindowSample

VARIANTS = ("standard", "corruption_trained", "stgcn_scratch", "ours", "ours_plus_recon", "recon_frontend")
ENCODER_VARIANTS = ("stgcn_scratch", "ours", "ours_plus_recon")
FROZEN_VARIANTS = ("ours", "ours_plus_recon")
FRONTEND_VARIANTS = ("recon_frontend", "ours_plus_recon")


@dataclass
class PredictorConfig:
    variant: str = "standard"
    d_model: int = 128
    cmt_layers: int = 6
    cmt_heads: int = 4
    social_layers: int = 3
    social_heads: int = 4
    ffn_mult: int = 4
    t_obs: int = 9
    t_pred: int = 12
    neighbor_cap: int = 8
    lr: float = 1e-4
    epochs: int = 50
    batch_size: int = 64
    lr_decay: float = 0.1
    decay_frac: float = 0.8
    corruption_ratio: float = 0.5
    zero_pose_tokens: bool = False      # trajectory-only ablation
    dtype: str = "float64"
    encoder: EncoderConfig | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")
        if self.d_model % 2 != 0:
            raise ValueError("d_model must be even (positional encoding)")
        if self.d_model % self.cmt_heads or self.d_model % self.social_heads:
            raise ValueError("attention heads must divide d_model")
        if isinstance(self.encoder, dict):
            self.encoder = EncoderConfig(**self.encoder)
        if self.uses_encoder:
            if self.encoder is None:
                self.encoder = EncoderConfig(feature_dim=self.d_model)
            if self.encoder.feature_dim != self.d_model:
                raise ValueError("encoder feature_dim must equal d_model (pose tokens feed the fusion stage)")

    @property
    def uses_encoder(self) -> bool:
        return self.variant in ENCODER_VARIANTS

    @property
    def frozen_encoder(self) -> bool:
        return self.variant in FROZEN_VARIANTS

    def to_dict(self) -> dict:
        d = asdict(self)
        return d


@dataclass
class TokenSet:
    queries: torch.Tensor   # (T_pred, D)
    traj: torch.Tensor      # (T_obs, D)
    pose: torch.Tensor      # (T_obs, N, D)


@dataclass
class FusedRepresentation:
    m_queries: torch.Tensor  # (T_pred, D)
    m_traj: torch.Tensor     # (T_obs, D)

    def concat(self) -> torch.Tensor:
        """Queries first, then the trajectory stream."""
        return torch.cat([self.m_queries, self.m_traj], dim=0)


class SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, pad: torch.Tensor | None = None) -> torch.Tensor:
        b, l, d = x.shape
        qkv = self.qkv(x).reshape(b, l, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        att = (q @ k.transpose(-2, -1)) * self.scale
        if pad is not None:
            att = att.masked_fill(pad[:, None, None, :], float("-inf"))
        att = att.softmax(dim=-1)
        y = (att @ v).transpose(1, 2).reshape(b, l, d)
        return self.proj(y)


class TransformerBlock(nn.Module):
    def __init__(self, dim: int, heads: int, ffn_mult: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(
            nn.Linear(dim, ffn_mult * dim),
            nn.ReLU(),
            nn.Linear(ffn_mult * dim, dim),
        )

    def forward(self, x, pad=None):
        x = x + self.attn(self.norm1(x), pad=pad)
        x = x + self.ffn(self.norm2(x))
        return x


class TransformerStack(nn.Module):
    def __init__(self, dim: int, layers: int, heads: int, ffn_mult: int):
        super().__init__()
        self.layers = nn.ModuleList(TransformerBlock(dim, heads, ffn_mult) for _ in range(layers))

    def forward(self, x, pad=None):
        for layer in self.layers:
            x = layer(x, pad=pad)
        return x


class TrajPredictor(nn.Module):
    def __init__(self, graph: SkeletonGraph, config: PredictorConfig):
        super().__init__()
        self.config = config
        self.graph = graph
        d = config.d_model
        n = graph.n_joints

        if config.uses_encoder:
            self.pose_encoder = SkeletonEncoder(graph, config.encoder)
            self.pose_proj = None
        else:
            self.pose_encoder = None
            self.pose_proj = nn.Linear(3, d)
        self.traj_proj = nn.Linear(2, d)
        self.query_embed = nn.Parameter(torch.empty(config.t_pred, d).normal_(0, 0.02))
        # stream tags for the social stage: row 0 = target, row 1 = neighbor
        self.slot_embed = nn.Parameter(torch.empty(2, d).normal_(0, 0.02))

        # element axis: joints 0..n-1, trajectory stream n, queries n+1
        pe = positional_encoding(config.t_obs + config.t_pred, n + 2, d)
        self.register_buffer("pe_pose", pe[:config.t_obs, :n, :].contiguous())
        self.register_buffer("pe_traj", pe[:config.t_obs, n, :].contiguous())
        self.register_buffer("pe_query", pe[config.t_obs:, n + 1, :].contiguous())

        self.cmt = TransformerStack(d, config.cmt_layers, config.cmt_heads, config.ffn_mult)
        self.social = TransformerStack(d, config.social_layers, config.social_heads, config.ffn_mult)
        self.head = nn.Sequential(nn.Linear(d, d), nn.ReLU(), nn.Linear(d, 2))
        self.torch_dtype = torch.float64 if config.dtype == "float64" else torch.float32
        self.to(self.torch_dtype)

    # ---- per-agent API ---------------------------------------------------

    def embed_agent_tokens(self, traj_norm: torch.Tensor, skel_centered: torch.Tensor) -> TokenSet:
        """Tokens for one agent: traj_norm (T_obs, 2), skel_centered (T_obs, N, 3)."""
        batch = self._embed_batch(traj_norm.unsqueeze(0), skel_centered.unsqueeze(0))
        return TokenSet(queries=batch["queries"][0], traj=batch["traj"][0], pose=batch["pose"][0])

    def cmt_forward(self, tokens: TokenSet, disable_skeleton: bool = False) -> FusedRepresentation:
        """Full self-attention over [queries | traj | pose]; optionally zero
        the pose-token block before attention (skeleton-disabled probe)."""
        t_pred, t_obs = self.config.t_pred, self.config.t_obs
        pose_flat = tokens.pose.reshape(-1, tokens.pose.shape[-1])
        seq = torch.cat([tokens.queries, tokens.traj, pose_flat], dim=0).unsqueeze(0)
        if disable_skeleton:
            seq = torch.cat([seq[:, :t_pred + t_obs], torch.zeros_like(seq[:, t_pred + t_obs:])], dim=1)
        out = self.cmt(seq).squeeze(0)
        return FusedRepresentation(m_queries=out[:t_pred], m_traj=out[t_pred:t_pred + t_obs])

    def social_forward(self, agent_reprs: list[torch.Tensor],
                       valid: list[bool] | None = None) -> tuple[torch.Tensor, torch.Tensor]:
        """Cross-agent attention; agent 0 is the target.

        agent_reprs: per-agent (T_pred + T_obs, D) fused sequences.
        Returns the target's (SM_Q, SM_T) streams.
        """
        if not agent_reprs:
            raise ValueError("social stage needs at least one agent")
        x = torch.stack(agent_reprs, dim=0).unsqueeze(0)  # (1, S, L, D)
        valid_t = torch.ones(1, len(agent_reprs), dtype=torch.bool)
        if valid is not None:
            valid_t = torch.tensor([list(valid)], dtype=torch.bool)
        out = self._social_batch(x, valid_t)
        t_pred = self.config.t_pred
        return out[0, 0, :t_pred], out[0, 0, t_pred:]

    # ---- batched core ----------------------------------------------------

    def _embed_batch(self, traj: torch.Tensor, skel: torch.Tensor) -> dict:
        """traj (B, T_obs, 2), skel (B, T_obs, N, 3) -> token tensors."""
        traj = traj.to(self.torch_dtype)
        skel = skel.to(self.torch_dtype)
        b = traj.shape[0]
        if self.pose_encoder is not None:
            pose_feat = self.pose_encoder(skel)
        else:
            pose_feat = self.pose_proj(skel)
        pose = pose_feat + self.pe_pose
        if self.config.zero_pose_tokens:
            pose = torch.zeros_like(pose)
        traj_tok = self.traj_proj(traj) + self.pe_traj
        queries = (self.query_embed + self.pe_query).unsqueeze(0).expand(b, -1, -1)
        return {"queries": queries, "traj": traj_tok, "pose": pose}

    def _cmt_batch(self, tok: dict, disable_skeleton: bool) -> torch.Tensor:
        t_pred, t_obs = self.config.t_pred, self.config.t_obs
        b = tok["traj"].shape[0]
        pose_flat = tok["pose"].reshape(b, -1, tok["pose"].shape[-1])
        seq = torch.cat([tok["queries"], tok["traj"], pose_flat], dim=1)
        if disable_skeleton:
            seq = torch.cat([seq[:, :t_pred + t_obs], torch.zeros_like(seq[:, t_pred + t_obs:])], dim=1)
        out = self.cmt(seq)
        return out[:, :t_pred + t_obs]   # queries then trajectory stream

    def _social_batch(self, x: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        """x (B, S, L, D) fused per-agent sequences, valid (B, S) -> (B, S, L, D)."""
        b, s, l, d = x.shape
        tags = torch.cat([self.slot_embed[:1], self.slot_embed[1:].expand(s - 1, d)], dim=0) \
            if s > 1 else self.slot_embed[:1]
        x = x + tags[None, :, None, :]
        pad = ~valid.repeat_interleave(l, dim=1)
        out = self.social(x.reshape(b, s * l, d), pad=pad)
        return out.reshape(b, s, l, d)

    def forward(self, batch: dict, disable_skeleton: bool = False) -> torch.Tensor:
        """batch: traj (B,S,T_obs,2), skel (B,S,T_obs,N,3), valid (B,S).

        Returns normalized predictions (B, T_pred, 2) for slot-0 agents.
        """
        traj, skel, valid = batch["traj"], batch["skel"], batch["valid"]
        b, s = traj.shape[:2]
        tok = self._embed_batch(traj.reshape(b * s, *traj.shape[2:]),
                                skel.reshape(b * s, *skel.shape[2:]))
        fused = self._cmt_batch(tok, disable_skeleton)
        fused = fused.reshape(b, s, -1, fused.shape[-1])
        social_out = self._social_batch(fused, valid)
        sm_q = social_out[:, 0, :self.config.t_pred]
        return self.head(sm_q)


def trajectory_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean over steps (and any batch dims) of squared Euclidean error."""
    pred = torch.as_tensor(pred, dtype=torch.float64) if not torch.is_tensor(pred) else pred
    target = torch.as_tensor(target, dtype=torch.float64) if not torch.is_tensor(target) else target
    if pred.shape != target.shape:
        raise ValueError(f"horizon mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return ((pred - target) ** 2).sum(dim=-1).mean()


# ---- window preparation ----------------------------------------------------


def window_slots(window: WindowSample, neighbor_cap: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Agent slots for one window: target first, then capped neighbors."""
    slots = [(window.observed_traj, window.observed_skeleton)]
    slots.extend(window.neighbors[:neighbor_cap])
    return slots


def prepare_windows(windows: list[WindowSample], graph: SkeletonGraph, config: PredictorConfig,
                    masks: list[list[np.ndarray | None]] | None = None,
                    recon_model: SkeletonAutoencoder | None = None) -> dict:
    """Assemble padded, normalized batch tensors from window samples.

    Trajectories are translated so each window's target agent ends its
    observation at the origin. Skeletons are pelvis-centered per frame
    (mask-aware); masked joints are zero-filled unless a completion model is
    given, in which case masked joints are completed first and no zeros
    remain. masks[w][slot] may be None for a clean slot.
    """
    n_slots = 1 + config.neighbor_cap
    t_obs, t_pred = config.t_obs, config.t_pred
    n = graph.n_joints
    pelvis = graph.joint_index("pelvis")
    w_count = len(windows)

    traj = np.zeros((w_count, n_slots, t_obs, 2))
    skel = np.zeros((w_count, n_slots, t_obs, n, 3))
    valid = np.zeros((w_count, n_slots), dtype=bool)
    future = np.zeros((w_count, t_pred, 2))
    origin = np.zeros((w_count, 2))

    for w, window in enumerate(windows):
        if window.observed_traj.shape[0] != t_obs or window.future_traj.shape[0] != t_pred:
            raise ValueError("window horizons do not match predictor config")
        slots = window_slots(window, config.neighbor_cap)
        org = window.observed_traj[-1]
        origin[w] = org
        future[w] = window.future_traj - org
        for s, (s_traj, s_skel) in enumerate(slots):
            mask = None
            if masks is not None and s < len(masks[w]):
                mask = masks[w][s]
            if mask is not None and recon_model is not None and mask.any():
                s_skel = reconstruct_complete(s_skel, mask, recon_model, pelvis)
                mask = None
            centers = pelvis_reference(s_skel, pelvis, mask)
            centered = s_skel - centers[:, None, :]
            if mask is not None:
                centered[mask] = 0.0
            traj[w, s] = s_traj - org
            skel[w, s] = centered
            valid[w, s] = True

    return {
        "traj": torch.from_numpy(traj),
        "skel": torch.from_numpy(skel),
        "valid": torch.from_numpy(valid),
        "future": torch.from_numpy(future),
        "origin": torch.from_numpy(origin),
    }


def predict_windows(model: TrajPredictor, windows: list[WindowSample], graph: SkeletonGraph,
                    masks=None, recon_model: SkeletonAutoencoder | None = None,
                    disable_skeleton: bool = False, batch_size: int = 128) -> np.ndarray:
    """World-frame predictions (W, T_pred, 2) for the target agents."""
    model.eval()
    preds = []
    with torch.no_grad():
        for lo in range(0, len(windows), batch_size):
            chunk = windows[lo:lo + batch_size]
            chunk_masks = masks[lo:lo + batch_size] if masks is not None else None
            batch = prepare_windows(chunk, graph, model.config, masks=chunk_masks,
                                    recon_model=recon_model)
            out = model(batch, disable_skeleton=disable_skeleton)
            preds.append((out + batch["origin"][:, None, :]).numpy())
    return np.concatenate(preds, axis=0) if preds else np.zeros((0, model.config.t_pred, 2))


def predict(model: TrajPredictor, window: WindowSample, graph: SkeletonGraph, **kwargs) -> np.ndarray:
    """Single-window convenience wrapper; returns (T_pred, 2) world frame."""
    return predict_windows(model, [window], graph, **kwargs)[0]


# ---- training --------------------------------------------------------------


@dataclass
class TrainResult:
    model: TrajPredictor
    history: list[dict] = field(default_factory=list)
    encoder_digest_before: str | None = None
    encoder_digest_after: str | None = None
    recon_model: SkeletonAutoencoder | None = None


def _mask_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _corruption_masks(windows, graph, config, seed, epoch) -> list[list[np.ndarray]]:
    out = []
    for w, window in enumerate(windows):
        n_slots = len(window_slots(window, config.neighbor_cap))
        t_obs = window.observed_traj.shape[0]
        out.append([
            sample_mask(MaskSpec("random", config.corruption_ratio,
                                 seed=_mask_seed(seed, epoch, w, s)), t_obs, graph)
            for s in range(n_slots)])
    return out


def train_predictor(windows: list[WindowSample], graph: SkeletonGraph, config: PredictorConfig,
                    seed: int, encoder_state: dict | None = None,
                    base_state: dict | None = None,
                    recon_model: SkeletonAutoencoder | None = None,
                    max_steps: int | None = None) -> TrainResult:
    """Train (or assemble) a predictor variant; deterministic given seed.

    ours: loads the pretrained encoder state and freezes it.
    corruption_trained: draws a fresh random mask per window every epoch.
    recon_frontend / ours_plus_recon: no optimization; reuses base_state
    weights unchanged and attaches the completion model for evaluation.
    """
    if config.variant == "ours" and encoder_state is None:
        raise ValueError("variant 'ours' requires a pretrained encoder checkpoint")
    if config.variant in FRONTEND_VARIANTS:
        if base_state is None:
            raise ValueError(f"variant {config.variant!r} requires the base predictor checkpoint")
        if recon_model is None:
            raise ValueError(f"variant {config.variant!r} requires the reconstruction checkpoint")

    torch.manual_seed(seed)
    model = TrajPredictor(graph, config)

    if config.variant in FRONTEND_VARIANTS:
        model.load_state_dict(base_state)
        model.eval()
        return TrainResult(model=model, recon_model=recon_model)

    digest_before = None
    if config.variant == "ours":
        model.pose_encoder.load_state_dict(encoder_state)
    if config.frozen_encoder:
        for p in model.pose_encoder.parameters():
            p.requires_grad_(False)
    if model.pose_encoder is not None:
        digest_before = params_digest(model.pose_encoder)

    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=config.lr)
    milestone = max(1, int(math.floor(config.decay_frac * config.epochs)))
    sched = torch.optim.lr_scheduler.MultiStepLR(opt, milestones=[milestone], gamma=config.lr_decay)
    order_rng = np.random.default_rng(seed)

    history = []
    steps = 0
    for epoch in range(config.epochs):
        model.train()
        masks = None
        if config.variant == "corruption_trained":
            masks = _corruption_masks(windows, graph, config, seed, epoch)
        order = order_rng.permutation(len(windows))
        epoch_losses = []
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo:lo + config.batch_size]
            chunk = [windows[i] for i in idx]
            chunk_masks = [masks[i] for i in idx] if masks is not None else None
            batch = prepare_windows(chunk, graph, config, masks=chunk_masks)
            pred = model(batch)
            loss = trajectory_loss(pred, batch["future"].to(model.torch_dtype))
            if not torch.isfinite(loss):
                raise RuntimeError(f"training diverged: non-finite loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_losses.append(float(loss.detach()))
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        sched.step()
        history.append({"epoch": epoch, "split": "train", "loss": float(np.mean(epoch_losses))})
        if max_steps is not None and steps >= max_steps:
            break

    model.eval()
    digest_after = params_digest(model.pose_encoder) if model.pose_encoder is not None else None
    return TrainResult(model=model, history=history,
                       encoder_digest_before=digest_before,
                       encoder_digest_after=digest_after)


def constant_velocity_baseline(windows: list[WindowSample], t_pred: int) -> np.ndarray:
    """Extrapolate each target's last observed velocity; (W, T_pred, 2)."""
    out = np.zeros((len(windows), t_pred, 2))
    for w, window in enumerate(windows):
        last = window.observed_traj[-1]
        vel = window.observed_traj[-1] - window.observed_traj[-2]
        out[w] = last + vel * np.arange(1, t_pred + 1)[:, None]
    return out
