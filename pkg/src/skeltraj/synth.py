"""Synthetic pedestrian scenes with a procedural gait whose pose leads the path.

Each agent walks a scripted behavior (straight, turn, stop-and-go) and carries
a rigid 16-joint skeleton animated by a sinusoidal gait. During turns the
torso (shoulder line and head) starts rotating a configurable number of frames
before the trajectory heading changes, so skeletons carry predictive cues.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .skeleton import SkeletonGraph, SkeletonSequence, default_walker_graph

BEHAVIORS = ("straight", "turn_left", "turn_right", "stop_go")

# body segment dimensions (m); rigid by construction
PELVIS_HEIGHT = 1.0
TORSO_LOWER = 0.25      # pelvis -> chest
TORSO_UPPER = 0.20      # chest -> neck
NECK_UP = 0.12          # neck -> head, vertical part
HEAD_FORWARD = 0.06     # neck -> head, forward offset (carries head yaw)
SHOULDER_HALF = 0.22
SHOULDER_UP = 0.03
HIP_HALF = 0.12
UPPER_ARM = 0.30
FOREARM = 0.27
THIGH = 0.45
SHIN = 0.45

MAX_SPEED = 2.5         # m/s, hard cap on per-frame speed

SWING_MAX = 0.5         # rad, gait amplitude saturation
SWING_IDLE = 0.12       # rad, sway amplitude at rest
SWING_PER_SPEED = 0.35  # rad per m/s
STRIDE_HZ_IDLE = 0.15   # gait cycles/s at rest
STRIDE_HZ_PER_SPEED = 0.9


@dataclass
class GenConfig:
    n_agents: int = 3
    duration_s: float = 12.0
    fps: float = 2.5
    behavior_mix: dict[str, float] = field(
        default_factory=lambda: {"straight": 0.4, "turn_left": 0.2, "turn_right": 0.2, "stop_go": 0.2})
    turn_anticipation_frames: int = 4
    noise_std: float = 0.01
    speed_range: tuple[float, float] = (0.8, 1.6)
    turn_angle_range_deg: tuple[float, float] = (60.0, 110.0)
    spawn_extent: float = 8.0

    def __post_init__(self):
        if self.n_agents < 1:
            raise ValueError("n_agents must be >= 1")
        if self.fps <= 0 or self.duration_s <= 0:
            raise ValueError("fps and duration_s must be positive")
        unknown = set(self.behavior_mix) - set(BEHAVIORS)
        if unknown:
            raise ValueError(f"unknown behaviors in mix: {sorted(unknown)}")
        total = sum(self.behavior_mix.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"behavior mix weights must sum to 1, got {total}")

    @property
    def n_frames(self) -> int:
        return max(1, int(round(self.duration_s * self.fps)))


@dataclass
class AgentTrack:
    agent_id: str
    trajectory: np.ndarray          # (T, 2) planar positions, world frame
    skeleton: SkeletonSequence      # (T, N, 3), pelvis xy == trajectory
    behavior_label: str = "straight"


@dataclass
class Scene:
    scene_id: str
    fps: float
    agents: list[AgentTrack]


@dataclass
class WindowSample:
    observed_traj: np.ndarray       # (T_obs, 2)
    observed_skeleton: np.ndarray   # (T_obs, N, 3)
    future_traj: np.ndarray         # (T_pred, 2)
    neighbors: list[tuple[np.ndarray, np.ndarray]]   # [(traj, skeleton), ...]
    scene_id: str = ""
    agent_id: str = ""
    start_frame: int = 0
    behavior_label: str = ""


def _speed_heading_profiles(behavior: str, theta0: float, speed: float, n_frames: int,
                            cfg: GenConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame speed (m/s) and heading (rad) before noise."""
    t = np.arange(n_frames)
    heading = np.full(n_frames, theta0, dtype=np.float64)
    speeds = np.full(n_frames, speed, dtype=np.float64)

    if behavior in ("turn_left", "turn_right"):
        lo, hi = cfg.turn_angle_range_deg
        delta = math.radians(rng.uniform(lo, hi))
        if behavior == "turn_right":
            delta = -delta
        start = int(rng.uniform(0.35, 0.55) * n_frames)
        dur = max(3, int(round(2.0 * cfg.fps)))
        u = np.clip((t - start) / max(dur, 1), 0.0, 1.0)
        heading = theta0 + delta * (3 * u**2 - 2 * u**3)  # smoothstep ramp
    elif behavior == "stop_go":
        start = int(rng.uniform(0.3, 0.5) * n_frames)
        hold = max(2, int(round(rng.uniform(1.0, 2.0) * cfg.fps)))
        ramp = max(1, int(round(0.8 * cfg.fps)))
        profile = np.ones(n_frames)
        down = np.clip((t - start) / ramp, 0.0, 1.0)
        up = np.clip((t - (start + ramp + hold)) / ramp, 0.0, 1.0)
        profile = np.where(t < start, 1.0, np.where(t < start + ramp + hold, 1.0 - down, up))
        speeds = speed * np.clip(profile, 0.0, 1.0)

    return speeds, heading


def build_agent_track(agent_id: str, behavior: str, start_xy: np.ndarray, theta0: float,
                      speed: float, n_frames: int, cfg: GenConfig,
                      rng: np.random.Generator | None = None,
                      graph: SkeletonGraph | None = None) -> AgentTrack:
    """Simulate one agent: planar trajectory plus rigid gait skeleton.

    The torso yaw used for shoulders and head equals the trajectory heading
    shifted cfg.turn_anticipation_frames frames into the future (clamped at
    the end of the track), which makes the upper body rotate before the
    path bends.
    """
    if behavior not in BEHAVIORS:
        raise ValueError(f"unknown behavior {behavior!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    graph = graph if graph is not None else default_walker_graph()
    ji = {name: graph.joint_index(name) for name in graph.joints}

    speeds, heading = _speed_heading_profiles(behavior, theta0, speed, n_frames, cfg, rng)
    if cfg.noise_std > 0:
        heading = heading + cfg.noise_std * rng.standard_normal(n_frames)
        speeds = speeds * np.clip(1.0 + cfg.noise_std * rng.standard_normal(n_frames), 0.0, None)
    speeds = np.clip(speeds, 0.0, MAX_SPEED - 1e-6)

    dt = 1.0 / cfg.fps
    traj = np.empty((n_frames, 2), dtype=np.float64)
    traj[0] = start_xy
    for k in range(n_frames - 1):
        step = speeds[k] * dt
        traj[k + 1, 0] = traj[k, 0] + step * math.cos(heading[k])
        traj[k + 1, 1] = traj[k, 1] + step * math.sin(heading[k])

    # torso yaw leads the heading by the anticipation horizon
    lead = np.minimum(np.arange(n_frames) + cfg.turn_anticipation_frames, n_frames - 1)
    torso_yaw = heading[lead]

    # gait phase advances with speed; never fully freezes
    phase = np.empty(n_frames)
    phase[0] = rng.uniform(0.0, 2.0 * math.pi)
    incr = 2.0 * math.pi * (STRIDE_HZ_IDLE + STRIDE_HZ_PER_SPEED * speeds) * dt
    phase[1:] = phase[0] + np.cumsum(incr[:-1])
    amp_leg = np.minimum(SWING_MAX, SWING_IDLE + SWING_PER_SPEED * speeds)
    amp_arm = 0.8 * amp_leg

    skel = _gait_skeleton(traj, heading, torso_yaw, phase, amp_leg, amp_arm, ji, graph.n_joints)
    seq = SkeletonSequence(data=skel, fps=cfg.fps, agent_id=agent_id)
    return AgentTrack(agent_id=agent_id, trajectory=traj, skeleton=seq, behavior_label=behavior)


def _gait_skeleton(traj, heading, torso_yaw, phase, amp_leg, amp_arm, ji, n_joints):
    t_total = traj.shape[0]
    up = np.array([0.0, 0.0, 1.0])

    def fwd(yaw):
        return np.stack([np.cos(yaw), np.sin(yaw), np.zeros_like(yaw)], axis=-1)

    def lat(yaw):
        return np.stack([-np.sin(yaw), np.cos(yaw), np.zeros_like(yaw)], axis=-1)

    f_torso, l_torso = fwd(torso_yaw), lat(torso_yaw)
    f_legs, l_legs = fwd(heading), lat(heading)

    out = np.zeros((t_total, n_joints, 3), dtype=np.float64)
    pelvis = np.concatenate([traj, np.full((t_total, 1), PELVIS_HEIGHT)], axis=1)
    chest = pelvis + TORSO_LOWER * up
    neck = chest + TORSO_UPPER * up
    out[:, ji["pelvis"]] = pelvis
    out[:, ji["chest"]] = chest
    out[:, ji["neck"]] = neck
    out[:, ji["head"]] = neck + NECK_UP * up + HEAD_FORWARD * f_torso

    def swing(base, seg_len, frame_f, angle):
        return base + seg_len * (np.sin(angle)[:, None] * frame_f - np.cos(angle)[:, None] * up)

    for side, sgn in (("l", 1.0), ("r", -1.0)):
        arm = amp_arm * np.sin(phase + (math.pi if side == "l" else 0.0))
        shoulder = chest + sgn * SHOULDER_HALF * l_torso + SHOULDER_UP * up
        elbow = swing(shoulder, UPPER_ARM, f_torso, arm)
        wrist = swing(elbow, FOREARM, f_torso, arm)
        out[:, ji[f"{side}_shoulder"]] = shoulder
        out[:, ji[f"{side}_elbow"]] = elbow
        out[:, ji[f"{side}_wrist"]] = wrist

        leg = amp_leg * np.sin(phase + (0.0 if side == "l" else math.pi))
        hip = pelvis + sgn * HIP_HALF * l_legs
        knee = swing(hip, THIGH, f_legs, leg)
        ankle = swing(knee, SHIN, f_legs, leg)
        out[:, ji[f"{side}_hip"]] = hip
        out[:, ji[f"{side}_knee"]] = knee
        out[:, ji[f"{side}_ankle"]] = ankle
    return out


def generate_scene(cfg: GenConfig, seed: int, graph: SkeletonGraph | None = None,
                   scene_id: str | None = None) -> Scene:
    """Generate one deterministic scene for (cfg, seed)."""
    graph = graph if graph is not None else default_walker_graph()
    rng = np.random.default_rng(seed)
    n_frames = cfg.n_frames
    behaviors = sorted(cfg.behavior_mix)
    weights = np.array([cfg.behavior_mix[b] for b in behaviors])
    weights = weights / weights.sum()

    agents = []
    for a in range(cfg.n_agents):
        behavior = behaviors[rng.choice(len(behaviors), p=weights)]
        start = rng.uniform(-cfg.spawn_extent, cfg.spawn_extent, size=2)
        theta0 = rng.uniform(0.0, 2.0 * math.pi)
        speed = rng.uniform(*cfg.speed_range)
        agents.append(build_agent_track(f"a{a}", behavior, start, theta0, speed,
                                        n_frames, cfg, rng=rng, graph=graph))
    return Scene(scene_id=scene_id if scene_id is not None else f"scene{seed}",
                 fps=cfg.fps, agents=agents)


def window_scene(scene: Scene, t_obs: int = 9, t_pred: int = 12, stride: int = 1,
                 neighbor_cap: int = 8) -> list[WindowSample]:
    """Slice a scene into contiguous observation/prediction windows.

    One sample per (agent, start); neighbors are the other agents over the
    same observed frames, nearest first at the last observed frame, capped.
    Scenes shorter than one window yield an empty list.
    """
    if t_obs < 1 or t_pred < 1:
        raise ValueError("t_obs and t_pred must be >= 1")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    samples: list[WindowSample] = []
    span = t_obs + t_pred
    for agent in scene.agents:
        t_total = agent.trajectory.shape[0]
        if t_total < span:
            continue
        for start in range(0, t_total - span + 1, stride):
            mid = start + t_obs
            anchor = agent.trajectory[mid - 1]
            others = []
            for other in scene.agents:
                if other.agent_id == agent.agent_id:
                    continue
                d = float(np.linalg.norm(other.trajectory[mid - 1] - anchor))
                others.append((d, other.agent_id, other))
            others.sort(key=lambda x: (x[0], x[1]))
            neighbors = [(o.trajectory[start:mid].copy(), o.skeleton.data[start:mid].copy())
                         for _, _, o in others[:neighbor_cap]]
            samples.append(WindowSample(
                observed_traj=agent.trajectory[start:mid].copy(),
                observed_skeleton=agent.skeleton.data[start:mid].copy(),
                future_traj=agent.trajectory[mid:start + span].copy(),
                neighbors=neighbors,
                scene_id=scene.scene_id,
                agent_id=agent.agent_id,
                start_frame=start,
                behavior_label=agent.behavior_label,
            ))
    return samples


def shoulder_line_yaw(skeleton_data: np.ndarray, graph: SkeletonGraph) -> np.ndarray:
    """Torso yaw per frame recovered from the shoulder line."""
    li = graph.joint_index("l_shoulder")
    ri = graph.joint_index("r_shoulder")
    d = skeleton_data[:, li, :2] - skeleton_data[:, ri, :2]
    return np.arctan2(d[:, 1], d[:, 0]) - math.pi / 2.0


def trajectory_heading(traj: np.ndarray) -> np.ndarray:
    """Heading of each step (length T-1); undefined segments need motion."""
    d = np.diff(traj, axis=0)
    return np.arctan2(d[:, 1], d[:, 0])


def estimate_yaw_lag(shoulder_yaw: np.ndarray, heading: np.ndarray, max_lag: int = 8) -> int:
    """Integer lag of the shoulder yaw relative to the heading.

    Returns the lag minimizing the mean squared angular difference between
    shoulder_yaw[t] and heading[t - lag]; negative means the shoulders lead.
    """
    t_s, t_h = len(shoulder_yaw), len(heading)
    best_lag, best_err = 0, np.inf
    for lag in range(-max_lag, max_lag + 1):
        lo, hi = max(0, lag), min(t_s, t_h + lag)
        if hi - lo < 3:
            continue
        a = shoulder_yaw[lo:hi]
        b = heading[lo - lag:hi - lag]
        diff = np.arctan2(np.sin(a - b), np.cos(a - b))
        err = float(np.mean(diff ** 2))
        if err < best_err - 1e-18:
            best_err, best_lag = err, lag
    return best_lag


def split_scene_ids(scene_ids: list[str]) -> dict[str, str]:
    """Stable 70/15/15 train/val/test assignment by scene-id hash."""
    import hashlib

    out = {}
    for sid in scene_ids:
        h = int(hashlib.md5(sid.encode()).hexdigest(), 16) % 100
        out[sid] = "train" if h < 70 else ("val" if h < 85 else "test")
    return out
