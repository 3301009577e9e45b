"""Skeleton data types, graph construction, and joint-masking strategies.

A skeleton sequence is a (T, N, C) array of joint coordinates in meters on a
fixed body graph. Masking hides a fraction of joints per frame; masked
coordinates are zero-filled so the zeros act as the missing-input indicator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

MASK_STRATEGIES = ("temporally_consistent", "random", "body_part")
PART_NAMES = ("center_upper", "center_lower", "right_limb", "left_limb")

PELVIS = "pelvis"


@dataclass(frozen=True)
class SkeletonGraph:
    """Joint names, symmetric binary adjacency, and the four-part partition."""

    joints: tuple[str, ...]
    adjacency: np.ndarray
    parts: dict[str, tuple[int, ...]]

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    def joint_index(self, name: str) -> int:
        return self.joints.index(name)

    def edge_list(self) -> list[tuple[str, str]]:
        """Undirected edges as name pairs, each listed once (i < j)."""
        rows, cols = np.nonzero(np.triu(self.adjacency))
        return [(self.joints[i], self.joints[j]) for i, j in zip(rows, cols)]

    def part_names_by_joint(self) -> dict[str, list[str]]:
        return {p: [self.joints[i] for i in idx] for p, idx in self.parts.items()}

    def to_spec(self) -> dict:
        return {
            "joints": list(self.joints),
            "edges": [list(e) for e in self.edge_list()],
            "parts": self.part_names_by_joint(),
        }


@dataclass
class SkeletonSequence:
    """T frames of N joint coordinates (meters) for one agent."""

    data: np.ndarray
    fps: float
    frame_index_origin: int = 0
    agent_id: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ValueError(f"skeleton data must be (T, N, C), got shape {self.data.shape}")
        if self.data.shape[0] < 1:
            raise ValueError("skeleton sequence needs at least one frame")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("skeleton data contains non-finite values")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_joints(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class MaskSpec:
    """Masking strategy, target masked fraction, and sampling seed."""

    strategy: str
    ratio: float
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in MASK_STRATEGIES:
            raise ValueError(f"unknown mask strategy {self.strategy!r}; choose from {MASK_STRATEGIES}")
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError(f"mask ratio must be in [0, 1], got {self.ratio}")


def build_skeleton_graph(joint_spec: dict) -> SkeletonGraph:
    """Build a validated SkeletonGraph from {joints, edges, parts}.

    Edges are undirected name pairs; parts map the four part names to
    joint-name lists that must partition the joint set. The edge set must
    form a single connected component.
    """
    joints = tuple(joint_spec["joints"])
    if len(set(joints)) != len(joints):
        raise ValueError("duplicate joint names")
    index = {name: i for i, name in enumerate(joints)}
    n = len(joints)

    adj = np.zeros((n, n), dtype=np.float64)
    for a, b in joint_spec["edges"]:
        if a not in index or b not in index:
            raise ValueError(f"unknown joint name in edge ({a!r}, {b!r})")
        if a == b:
            raise ValueError(f"self edge on joint {a!r}")
        adj[index[a], index[b]] = 1.0
        adj[index[b], index[a]] = 1.0

    # connectivity via BFS from joint 0
    seen = {0}
    frontier = [0]
    while frontier:
        i = frontier.pop()
        for j in np.nonzero(adj[i])[0]:
            if j not in seen:
                seen.add(int(j))
                frontier.append(int(j))
    if len(seen) != n:
        raise ValueError("disconnected graph: edge set does not connect all joints")

    parts_in = joint_spec["parts"]
    if set(parts_in) != set(PART_NAMES):
        raise ValueError(f"parts must be exactly {PART_NAMES}, got {tuple(parts_in)}")
    parts: dict[str, tuple[int, ...]] = {}
    covered: list[int] = []
    for pname in PART_NAMES:
        idx = []
        for name in parts_in[pname]:
            if name not in index:
                raise ValueError(f"unknown joint name {name!r} in part {pname!r}")
            idx.append(index[name])
        parts[pname] = tuple(idx)
        covered.extend(idx)
    if len(set(covered)) != len(covered):
        raise ValueError("overlapping partition: a joint appears in more than one part")
    if len(covered) != n:
        raise ValueError("incomplete partition: parts do not cover all joints")

    return SkeletonGraph(joints=joints, adjacency=adj, parts=parts)


def default_walker_graph() -> SkeletonGraph:
    """The bundled 16-joint walker skeleton."""
    spec = json.loads(resources.files("skeltraj.data").joinpath("walker16.json").read_text())
    return build_skeleton_graph(spec)


def _masked_count(ratio: float, n_joints: int) -> int:
    # floor(r*N) with a guard against float noise on exact products
    return int(np.floor(ratio * n_joints + 1e-9))


def sample_mask(spec: MaskSpec, n_frames: int, graph: SkeletonGraph) -> np.ndarray:
    """Sample a (T, N) boolean mask; True marks a masked (hidden) joint.

    Deterministic given (spec.seed, n_frames, graph). Per-frame masked
    counts are exactly floor(ratio * N) for the temporally_consistent and
    random strategies; body_part masks whole parts until the masked
    fraction first reaches the requested ratio.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    n = graph.n_joints
    rng = np.random.default_rng(spec.seed)
    mask = np.zeros((n_frames, n), dtype=bool)
    if spec.ratio == 0.0:
        return mask

    if spec.strategy == "temporally_consistent":
        m = _masked_count(spec.ratio, n)
        cols = rng.permutation(n)[:m]
        mask[:, cols] = True
    elif spec.strategy == "random":
        m = _masked_count(spec.ratio, n)
        if m > 0:
            order = np.argsort(rng.random((n_frames, n)), axis=1)
            rows = np.repeat(np.arange(n_frames), m)
            mask[rows, order[:, :m].ravel()] = True
    else:  # body_part: one part draw per sequence, same union in every frame
        cols: list[int] = []
        frac = 0.0
        for pname in (PART_NAMES[i] for i in rng.permutation(len(PART_NAMES))):
            cols.extend(graph.parts[pname])
            frac = len(cols) / n
            if frac >= spec.ratio:
                break
        mask[:, cols] = True
    return mask


def apply_mask(seq: SkeletonSequence, mask: np.ndarray) -> SkeletonSequence:
    """Zero-fill masked joints; returns a new sequence, input untouched."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != seq.data.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match sequence frames/joints {seq.data.shape[:2]}")
    data = seq.data.copy()
    data[mask] = 0.0
    return SkeletonSequence(data=data, fps=seq.fps,
                            frame_index_origin=seq.frame_index_origin,
                            agent_id=seq.agent_id)


def pelvis_reference(data: np.ndarray, pelvis_index: int, mask: np.ndarray | None = None) -> np.ndarray:
    """Per-frame (T, C) pelvis positions usable as centering references.

    When a mask is given and hides the pelvis in some frames, those frames
    are filled by linear interpolation over the frames where the pelvis is
    observed (held constant beyond the first/last observed frame). With the
    pelvis hidden everywhere the reference is all zeros.
    """
    data = np.asarray(data, dtype=np.float64)
    t_total = data.shape[0]
    pelvis = data[:, pelvis_index, :]
    if mask is None:
        return pelvis.copy()
    observed = ~np.asarray(mask, dtype=bool)[:, pelvis_index]
    if observed.all():
        return pelvis.copy()
    if not observed.any():
        return np.zeros_like(pelvis)
    t_obs = np.nonzero(observed)[0]
    t_all = np.arange(t_total)
    out = np.empty_like(pelvis)
    for c in range(pelvis.shape[1]):
        out[:, c] = np.interp(t_all, t_obs, pelvis[t_obs, c])
    return out


def center_skeleton(data: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Subtract a per-frame reference point from every joint."""
    data = np.asarray(data, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    if centers.shape != (data.shape[0], data.shape[2]):
        raise ValueError(f"centers shape {centers.shape} does not match sequence {data.shape}")
    return data - centers[:, None, :]


def canonicalize(data: np.ndarray, pelvis_index: int, mask: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Pelvis-center a world-frame skeleton and zero-fill masked joints.

    The centering reference is mask aware (see pelvis_reference), so the
    transform is computable from corrupted data alone and is identical
    whether it is fed clean-then-masked or already zero-filled input.
    Returns (centered_and_masked, centers).
    """
    centers = pelvis_reference(data, pelvis_index, mask)
    centered = center_skeleton(data, centers)
    if mask is not None:
        centered[np.asarray(mask, dtype=bool)] = 0.0
    return centered, centers
