"""Graph-convolutional skeleton encoder, reconstruction decoder, and support.

The encoder stacks spatial graph convolutions over a symmetric-normalized
(A + I) adjacency with temporal convolutions; the decoder is a deliberately
small per-joint MLP so representational capacity stays in the encoder.
All modules run in float64 on CPU.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, asdict, field

import numpy as np
import torch
from torch import nn

from .skeleton import SkeletonGraph, build_skeleton_graph

CHECKPOINT_STAGES = ("pretrained_encoder", "predictor")


@dataclass
class EncoderConfig:
    depth: int = 3
    feature_dim: int = 128
    temporal_kernel: int = 3
    in_channels: int = 3
    decoder_hidden: int | None = None   # None -> feature_dim

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("encoder depth must be >= 1")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if self.temporal_kernel < 1 or self.temporal_kernel % 2 == 0:
            raise ValueError("temporal_kernel must be odd so padding preserves T")


def normalized_adjacency(adjacency: np.ndarray) -> np.ndarray:
    """Symmetric normalization of (A + I): D^-1/2 (A + I) D^-1/2."""
    a = np.asarray(adjacency, dtype=np.float64) + np.eye(adjacency.shape[0])
    d = a.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(d)
    return a * inv_sqrt[:, None] * inv_sqrt[None, :]


def _affine_init(weight: torch.Tensor, bias: torch.Tensor | None, fan_in: int):
    # uniform fan-in scaling, same family as torch's default affine init
    nn.init.kaiming_uniform_(weight, a=math.sqrt(5))
    if bias is not None:
        bound = 1.0 / math.sqrt(fan_in) if fan_in > 0 else 0.0
        nn.init.uniform_(bias, -bound, bound)


class SpatialGraphConv(nn.Module):
    """Single-partition graph convolution: aggregate over Â, then project."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(in_channels, out_channels))
        self.bias = nn.Parameter(torch.empty(out_channels))
        _affine_init(self.weight, self.bias, in_channels)

    def forward(self, x: torch.Tensor, a_hat: torch.Tensor) -> torch.Tensor:
        # x: (B, T, N, C)
        x = torch.einsum("mn,btnc->btmc", a_hat, x)
        return torch.einsum("btnc,cd->btnd", x, self.weight) + self.bias


class STGCNBlock(nn.Module):
    """Spatial graph conv + temporal conv + LayerNorm + PReLU, with residual
    when input and output widths match."""

    def __init__(self, in_channels: int, out_channels: int, temporal_kernel: int):
        super().__init__()
        self.gcn = SpatialGraphConv(in_channels, out_channels)
        self.tcn = nn.Conv2d(out_channels, out_channels,
                             kernel_size=(temporal_kernel, 1),
                             padding=(temporal_kernel // 2, 0))
        self.norm = nn.LayerNorm(out_channels)
        self.act = nn.PReLU()
        self.residual = in_channels == out_channels

    def forward(self, x: torch.Tensor, a_hat: torch.Tensor) -> torch.Tensor:
        y = self.gcn(x, a_hat)
        y = self.tcn(y.permute(0, 3, 1, 2)).permute(0, 2, 3, 1)
        y = self.act(self.norm(y))
        if self.residual:
            y = y + x
        return y


class SkeletonEncoder(nn.Module):
    """Maps a (possibly zero-filled) skeleton sequence to per-joint features.

    Accepts (T, N, C) or (B, T, N, C); returns matching rank with C -> D.
    """

    def __init__(self, graph: SkeletonGraph, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.n_joints = graph.n_joints
        a_hat = torch.from_numpy(normalized_adjacency(graph.adjacency))
        self.register_buffer("a_hat", a_hat)
        blocks = []
        in_ch = config.in_channels
        for _ in range(config.depth):
            blocks.append(STGCNBlock(in_ch, config.feature_dim, config.temporal_kernel))
            in_ch = config.feature_dim
        self.blocks = nn.ModuleList(blocks)
        self.double()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        if x.shape[2] != self.n_joints:
            raise ValueError(f"input has {x.shape[2]} joints, graph has {self.n_joints}")
        for block in self.blocks:
            x = block(x, self.a_hat)
        return x.squeeze(0) if squeeze else x


class ReconstructionDecoder(nn.Module):
    """Per-(frame, joint) shared 2-layer MLP back to coordinates.

    No temporal or graph mixing happens here; the fixed rectifier keeps the
    parameter count at exactly the two affine maps.
    """

    def __init__(self, config: EncoderConfig):
        super().__init__()
        hidden = config.decoder_hidden or config.feature_dim
        self.net = nn.Sequential(
            nn.Linear(config.feature_dim, hidden),
            nn.ReLU(),
            nn.Linear(hidden, config.in_channels),
        )
        self.double()

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.net(h)


class SkeletonAutoencoder(nn.Module):
    def __init__(self, graph: SkeletonGraph, config: EncoderConfig):
        super().__init__()
        self.encoder = SkeletonEncoder(graph, config)
        self.decoder = ReconstructionDecoder(config)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decoder(self.encoder(x))


def sinusoid_table(length: int, dim: int) -> torch.Tensor:
    """(length, dim) sinusoidal table; channel 2k is sin, 2k+1 is cos."""
    pos = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    idx = torch.arange(dim, dtype=torch.float64)
    freq = torch.pow(torch.tensor(10000.0, dtype=torch.float64),
                     -2.0 * torch.floor(idx / 2) / dim)
    ang = pos * freq.unsqueeze(0)
    return torch.where(idx.long() % 2 == 0, torch.sin(ang), torch.cos(ang))


def positional_encoding(n_frames: int, n_elements: int, dim: int) -> torch.Tensor:
    """(T, N, dim) encoding: first half encodes t, second half encodes n."""
    if dim % 2 != 0:
        raise ValueError("positional encoding dimension must be even")
    half = dim // 2
    t_tab = sinusoid_table(n_frames, half)
    n_tab = sinusoid_table(n_elements, half)
    pe = torch.cat([
        t_tab.unsqueeze(1).expand(n_frames, n_elements, half),
        n_tab.unsqueeze(0).expand(n_frames, n_elements, half),
    ], dim=-1)
    return pe.contiguous()


@dataclass
class ParamReport:
    per_module: dict[str, int] = field(default_factory=dict)
    total: int = 0
    latency_ms_per_sample: float | None = None


def count_params(model: nn.Module) -> ParamReport:
    per = {}
    for name, child in model.named_children():
        n = sum(p.numel() for p in child.parameters())
        if n:
            per[name] = n
    own = sum(p.numel() for p in model.parameters(recurse=False))
    if own:
        per["(own)"] = own
    total = sum(p.numel() for p in model.parameters())
    return ParamReport(per_module=per, total=total)


def measure_latency(model: nn.Module, batch: torch.Tensor, reps: int = 10, warmup: int = 3) -> ParamReport:
    report = count_params(model)
    n_samples = max(1, batch.shape[0])
    with torch.no_grad():
        for _ in range(warmup):
            model(batch)
        times = []
        for _ in range(reps):
            t0 = time.perf_counter()
            model(batch)
            times.append(time.perf_counter() - t0)
    report.latency_ms_per_sample = 1000.0 * float(np.mean(times)) / n_samples
    return report


def params_digest(module_or_state) -> str:
    """sha256 over sorted named parameter bytes; stable across processes."""
    import hashlib

    state = module_or_state.state_dict() if isinstance(module_or_state, nn.Module) else module_or_state
    h = hashlib.sha256()
    for name in sorted(state):
        t = state[name]
        h.update(name.encode())
        h.update(np.ascontiguousarray(t.detach().cpu().numpy()).tobytes())
    return h.hexdigest()


def save_checkpoint(path, *, state: dict, stage: str, config: dict, seed: int,
                    epoch: int, graph: SkeletonGraph, extra: dict | None = None) -> None:
    if stage not in CHECKPOINT_STAGES:
        raise ValueError(f"unknown checkpoint stage {stage!r}")
    payload = {
        "format_version": 1,
        "stage": stage,
        "seed": int(seed),
        "epoch": int(epoch),
        "config": config,
        "graph_spec": graph.to_spec(),
        "state": {k: v.detach().cpu() for k, v in state.items()},
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format_version") != 1:
        raise ValueError("unsupported checkpoint format")
    payload["graph"] = build_skeleton_graph(payload["graph_spec"])
    return payload
