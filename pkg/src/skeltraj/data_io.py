"""On-disk scene format: line-delimited JSON with a self-describing header.

Line 1 is a header record {format_version, fps, joint_names, edges, parts};
every following line is one (scene, agent, frame) record
{scene_id, agent_id, frame, xy, joints[, behavior]}. Floats are written at
full repr precision, so write -> read round-trips coordinates bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .skeleton import SkeletonGraph, SkeletonSequence, build_skeleton_graph
from .synth import AgentTrack, Scene

FORMAT_VERSION = 1


def write_dataset(scenes: list[Scene], path: str | Path, graph: SkeletonGraph) -> None:
    path = Path(path)
    spec = graph.to_spec()
    fps = scenes[0].fps if scenes else 0.0
    with path.open("w") as fh:
        header = {"format_version": FORMAT_VERSION, "fps": fps,
                  "joint_names": spec["joints"], "edges": spec["edges"], "parts": spec["parts"]}
        fh.write(json.dumps(header) + "\n")
        for scene in scenes:
            if scene.fps != fps:
                raise ValueError("all scenes in one file must share fps")
            for agent in scene.agents:
                for k in range(agent.trajectory.shape[0]):
                    rec = {
                        "scene_id": scene.scene_id,
                        "agent_id": agent.agent_id,
                        "frame": int(agent.skeleton.frame_index_origin + k),
                        "xy": agent.trajectory[k].tolist(),
                        "joints": agent.skeleton.data[k].tolist(),
                        "behavior": agent.behavior_label,
                    }
                    fh.write(json.dumps(rec) + "\n")


def read_dataset(path: str | Path) -> tuple[list[Scene], SkeletonGraph]:
    path = Path(path)
    with path.open() as fh:
        header_line = fh.readline()
        if not header_line:
            raise ValueError("empty file: missing header record")
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"malformed header: {exc}") from exc
        if header.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"malformed header: unsupported format_version {header.get('format_version')!r}")
        graph = build_skeleton_graph({"joints": header["joint_names"],
                                      "edges": header["edges"],
                                      "parts": header["parts"]})
        fps = float(header["fps"])
        n = graph.n_joints

        # scene_id -> agent_id -> list of (frame, xy, joints, behavior)
        rows: dict[str, dict[str, list]] = {}
        order: list[str] = []
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if len(rec["joints"]) != n:
                raise ValueError(
                    f"joint count mismatch: record has {len(rec['joints'])} joints, header declares {n}")
            sid = rec["scene_id"]
            if sid not in rows:
                rows[sid] = {}
                order.append(sid)
            rows[sid].setdefault(rec["agent_id"], []).append(
                (int(rec["frame"]), rec["xy"], rec["joints"], rec.get("behavior", "")))

    scenes = []
    for sid in order:
        agents = []
        for aid, frames in rows[sid].items():
            frames.sort(key=lambda r: r[0])
            idx = [r[0] for r in frames]
            if idx != list(range(idx[0], idx[0] + len(idx))):
                raise ValueError(f"non-contiguous frames for agent {aid!r} in scene {sid!r}")
            traj = np.array([r[1] for r in frames], dtype=np.float64)
            joints = np.array([r[2] for r in frames], dtype=np.float64)
            seq = SkeletonSequence(data=joints, fps=fps, frame_index_origin=idx[0], agent_id=aid)
            agents.append(AgentTrack(agent_id=aid, trajectory=traj, skeleton=seq,
                                     behavior_label=frames[0][3]))
        scenes.append(Scene(scene_id=sid, fps=fps, agents=agents))
    return scenes, graph


def write_masks(path: str | Path, graph: SkeletonGraph, entries: list[dict]) -> None:
    """Persist realized masks in the shared record layout.

    Each entry: {"scene_id", "agent_id", "start_frame", "mask": (T, N) bool}.
    """
    path = Path(path)
    with path.open("w") as fh:
        header = {"format_version": FORMAT_VERSION, "joint_names": list(graph.joints)}
        fh.write(json.dumps(header) + "\n")
        for e in entries:
            mask = np.asarray(e["mask"], dtype=bool)
            for k in range(mask.shape[0]):
                rec = {"scene_id": e.get("scene_id", ""), "agent_id": e.get("agent_id", ""),
                       "frame": int(e.get("start_frame", 0)) + k,
                       "mask": mask[k].astype(int).tolist()}
                fh.write(json.dumps(rec) + "\n")


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def mask_digest(masks: list[np.ndarray]) -> str:
    h = hashlib.sha256()
    for m in masks:
        m = np.ascontiguousarray(np.asarray(m, dtype=bool))
        h.update(str(m.shape).encode())
        h.update(np.packbits(m).tobytes())
    return h.hexdigest()
