"""Displacement metrics, robustness sweeps, reliance probes, and reports.

All evaluations are paired: for a given (ratio, seed) every method sees the
identical realized masks, and the clean condition is the 0.0 grid point of
the same pipeline, so the zero-mask row equals the clean run bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data_io import mask_digest
from .nets import SkeletonAutoencoder, count_params, measure_latency
from .pretrain import evaluate_recon_grid, feature_consistency, mpjpe, prepare_masked_batch
from .predictor import TrajPredictor, predict_windows, window_slots
from .skeleton import MaskSpec, SkeletonGraph, sample_mask
from .synth import WindowSample

# Published full-scale results kept for report footers; runs at this desk
# scale are not expected to match them.
REFERENCE_FULL_SCALE = {
    "robustness_clean": {"standard": (0.920, 1.884), "ours": (0.898, 1.832)},
    "reliance_delta": {"standard": (0.643, 1.301), "ours": (1.491, 2.957)},
    "mask_ratio_best": {"r_train": 0.5, "mpjpe": 0.046},
    "params": {
        "standard": (3188546, 1.942),
        "graph-encoder": (3703198, 2.099),
        "completion-frontend": (3720097, 2.132),
        "combined": (4234749, 2.273),
    },
}


def ade(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean Euclidean displacement over the prediction horizon (meters)."""
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.linalg.norm(pred - target, axis=-1).mean())


def fde(pred: np.ndarray, target: np.ndarray) -> float:
    """Euclidean displacement at the final prediction step (meters)."""
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.linalg.norm(pred[..., -1, :] - target[..., -1, :], axis=-1).mean())


def degradation_rate(metric_masked: float, metric_clean: float) -> float:
    """Percent increase relative to the clean condition."""
    if metric_clean <= 0:
        raise ValueError("clean metric must be positive")
    return 100.0 * (metric_masked - metric_clean) / metric_clean


@dataclass
class MethodBundle:
    name: str
    model: TrajPredictor
    recon_model: SkeletonAutoencoder | None = None


@dataclass
class EvalRow:
    method: str
    strategy: str
    r_test: float
    ade: float
    fde: float
    deg_ade: float
    deg_fde: float
    mpjpe: float | None = None
    cos_sim: float | None = None


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)


def _mask_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def make_eval_masks(windows: list[WindowSample], graph: SkeletonGraph, ratio: float,
                    strategy: str, seed: int, neighbor_cap: int) -> tuple[list[list[np.ndarray]], str]:
    """Per-window, per-slot masks shared across methods (paired evaluation)."""
    masks = []
    flat = []
    for w, window in enumerate(windows):
        n_slots = len(window_slots(window, neighbor_cap))
        t_obs = window.observed_traj.shape[0]
        per_slot = [
            sample_mask(MaskSpec(strategy, ratio, seed=_mask_seed(seed, w, s)), t_obs, graph)
            for s in range(n_slots)]
        masks.append(per_slot)
        flat.extend(per_slot)
    return masks, mask_digest(flat)


def _eval_ade_fde(bundle: MethodBundle, windows, graph, masks=None, disable=False) -> tuple[float, float]:
    preds = predict_windows(bundle.model, windows, graph, masks=masks,
                            recon_model=bundle.recon_model, disable_skeleton=disable)
    targets = np.stack([w.future_traj for w in windows])
    per_ade = np.linalg.norm(preds - targets, axis=-1).mean(axis=1)
    per_fde = np.linalg.norm(preds[:, -1] - targets[:, -1], axis=-1)
    return float(per_ade.mean()), float(per_fde.mean())


def robustness_eval(methods: list[MethodBundle], windows: list[WindowSample], graph: SkeletonGraph,
                    ratios=(0.0, 0.2, 0.4, 0.6), strategy: str = "random",
                    seeds=(0, 1, 2)) -> EvalReport:
    """ADE/FDE per (method, ratio) with degradation vs the 0.0 row."""
    neighbor_cap = methods[0].model.config.neighbor_cap
    report = EvalReport(metadata={"strategy": strategy, "seeds": list(seeds),
                                  "n_windows": len(windows), "mask_digests": {}})
    per_method: dict[str, dict[float, tuple[float, float]]] = {m.name: {} for m in methods}
    for ratio in ratios:
        seed_metrics = {m.name: [] for m in methods}
        for seed in seeds:
            masks, digest = make_eval_masks(windows, graph, ratio, strategy, seed, neighbor_cap)
            report.metadata["mask_digests"][f"r={ratio}|seed={seed}"] = digest
            for m in methods:
                seed_metrics[m.name].append(_eval_ade_fde(m, windows, graph, masks=masks))
        for m in methods:
            vals = np.array(seed_metrics[m.name])
            per_method[m.name][ratio] = (float(vals[:, 0].mean()), float(vals[:, 1].mean()))
    for m in methods:
        clean = per_method[m.name].get(0.0)
        for ratio in ratios:
            a, f = per_method[m.name][ratio]
            deg_a = degradation_rate(a, clean[0]) if clean else float("nan")
            deg_f = degradation_rate(f, clean[1]) if clean else float("nan")
            report.rows.append(EvalRow(method=m.name, strategy=strategy, r_test=float(ratio),
                                       ade=a, fde=f, deg_ade=deg_a, deg_fde=deg_f))
    return report


@dataclass
class RelianceRow:
    method: str
    clean_ade: float
    clean_fde: float
    disabled_ade: float
    disabled_fde: float

    @property
    def delta_ade(self) -> float:
        return self.disabled_ade - self.clean_ade

    @property
    def delta_fde(self) -> float:
        return self.disabled_fde - self.clean_fde


def reliance_probe(methods: list[MethodBundle], windows: list[WindowSample],
                   graph: SkeletonGraph) -> list[RelianceRow]:
    """Clean ADE/FDE vs pose-tokens-zeroed ADE/FDE for each method."""
    rows = []
    for m in methods:
        clean = _eval_ade_fde(m, windows, graph)
        disabled = _eval_ade_fde(m, windows, graph, disable=True)
        rows.append(RelianceRow(m.name, clean[0], clean[1], disabled[0], disabled[1]))
    return rows


@dataclass
class CrossEvalResult:
    # cells[(train_strategy, test_strategy)] -> per-seed list of (mpjpe, cos_sim)
    cells: dict[tuple[str, str], list[tuple[float, float]]]
    strategies: tuple[str, ...]
    verdicts: dict[str, str] = field(default_factory=dict)

    def mean_cell(self, train: str, test: str) -> tuple[float, float]:
        vals = np.array(self.cells[(train, test)])
        return float(vals[:, 0].mean()), float(vals[:, 1].mean())


def cross_mask_eval(models: dict[str, SkeletonAutoencoder], sequences: np.ndarray,
                    graph: SkeletonGraph, strategies=("temporally_consistent", "random", "body_part"),
                    r_test: float = 0.5, seeds=(0, 1, 2)) -> CrossEvalResult:
    """Train-strategy x test-strategy grid of (reconstruction MPJPE, cos sim).

    Masks for a given (test strategy, seed) are shared across models. The
    directional verdicts report whether each row's matched-mask cell is its
    minimum and whether the random-trained row has the smallest spread.
    """
    pelvis = graph.joint_index("pelvis")
    t_frames = sequences.shape[1]
    cells = {(tr, te): [] for tr in models for te in strategies}
    for si, seed in enumerate(seeds):
        for ti, te in enumerate(strategies):
            masks = np.stack([
                sample_mask(MaskSpec(te, r_test, seed=_mask_seed(seed, ti, i)), t_frames, graph)
                for i in range(sequences.shape[0])])
            inputs, targets = prepare_masked_batch(sequences, masks, pelvis)
            clean_inputs, _ = prepare_masked_batch(
                sequences, np.zeros_like(masks), pelvis)
            for tr, model in models.items():
                model.eval()
                with torch.no_grad():
                    recon = model(inputs)
                    h_masked = model.encoder(inputs)
                    h_clean = model.encoder(clean_inputs)
                err = mpjpe(targets.numpy(), recon.numpy())
                cos = feature_consistency(h_clean, h_masked)
                cells[(tr, te)].append((err, cos))

    result = CrossEvalResult(cells=cells, strategies=tuple(strategies))
    n_seeds = len(seeds)
    diag_votes, spread_votes = 0, 0
    for si in range(n_seeds):
        diag_ok = all(
            cells[(tr, tr)][si][0] <= min(cells[(tr, te)][si][0] for te in strategies if te != tr)
            for tr in models if tr in strategies)
        spreads = {tr: (max(cells[(tr, te)][si][0] for te in strategies) /
                        max(min(cells[(tr, te)][si][0] for te in strategies), 1e-12))
                   for tr in models}
        spread_ok = "random" in spreads and spreads["random"] == min(spreads.values())
        diag_votes += diag_ok
        spread_votes += spread_ok
    result.verdicts["diagonal_min"] = "pass" if diag_votes * 2 > n_seeds else "warn"
    result.verdicts["random_smallest_spread"] = "pass" if spread_votes * 2 > n_seeds else "warn"
    return result


@dataclass
class SweepResult:
    # matrix[(r_train, r_test)] -> per-seed mpjpe list
    matrix: dict[tuple[float, float], list[float]]
    r_train_grid: tuple[float, ...]
    r_test_grid: tuple[float, ...]
    verdicts: dict[str, str] = field(default_factory=dict)

    def row_average(self, r_train: float) -> float:
        vals = [float(np.mean(self.matrix[(r_train, rt)])) for rt in self.r_test_grid]
        return float(np.mean(vals))


def mask_ratio_sweep(models: dict[float, SkeletonAutoencoder], sequences: np.ndarray,
                     graph: SkeletonGraph, r_test_grid=(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
                     strategy: str = "random", seeds=(0, 1, 2)) -> SweepResult:
    """MPJPE matrix over (r_train model, r_test); paired mask seeds."""
    r_train_grid = tuple(sorted(models))
    matrix = {(rtr, float(rte)): [] for rtr in r_train_grid for rte in r_test_grid}
    for seed in seeds:
        for rtr in r_train_grid:
            grid = evaluate_recon_grid(models[rtr], sequences, graph, r_test_grid,
                                       strategy=strategy, mask_seed=int(seed))
            for rte, v in grid.items():
                matrix[(rtr, float(rte))].append(v)
    result = SweepResult(matrix=matrix, r_train_grid=r_train_grid,
                         r_test_grid=tuple(float(r) for r in r_test_grid))
    # U-shape: per seed, the row average must be minimized at an interior ratio
    n_seeds = len(seeds)
    votes = 0
    if len(r_train_grid) >= 3:
        for si in range(n_seeds):
            avgs = {rtr: float(np.mean([matrix[(rtr, rte)][si] for rte in result.r_test_grid]))
                    for rtr in r_train_grid}
            best = min(avgs, key=avgs.get)
            votes += best not in (r_train_grid[0], r_train_grid[-1])
        result.verdicts["interior_minimum"] = "pass" if votes * 2 > n_seeds else "warn"
    return result


# ---- rendering --------------------------------------------------------------


def _fmt(x, nd=3):
    if x is None or (isinstance(x, float) and not np.isfinite(x)):
        return "-"
    return f"{x:.{nd}f}"


def render_table(headers: list[str], rows: list[list[str]], title: str = "") -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    lines = []
    if title:
        lines.append(title)
    lines.append("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines) + "\n"


def render_robustness(report: EvalReport) -> str:
    ratios = sorted({r.r_test for r in report.rows})
    methods = []
    for r in report.rows:
        if r.method not in methods:
            methods.append(r.method)
    by_key = {(r.method, r.r_test): r for r in report.rows}
    # column-best markers (min ADE and min FDE per ratio)
    best_ade = {rt: min(by_key[(m, rt)].ade for m in methods) for rt in ratios}
    best_fde = {rt: min(by_key[(m, rt)].fde for m in methods) for rt in ratios}
    headers = ["method"] + [f"r={rt:g}" for rt in ratios]
    rows = []
    for m in methods:
        cells = [m]
        for rt in ratios:
            row = by_key[(m, rt)]
            a = _fmt(row.ade) + ("*" if row.ade == best_ade[rt] else "")
            f = _fmt(row.fde) + ("*" if row.fde == best_fde[rt] else "")
            cells.append(f"{a} / {f} ({row.deg_ade:+.1f} / {row.deg_fde:+.1f}%)")
        rows.append(cells)
    out = render_table(headers, rows, title="Robustness under joint masking (ADE / FDE, degradation %)")
    ref = REFERENCE_FULL_SCALE["robustness_clean"]
    out += ("# reference full-scale clean rows: "
            + ", ".join(f"{k} {v[0]:.3f}/{v[1]:.3f}" for k, v in sorted(ref.items())) + "\n")
    return out


def render_reliance(rows: list[RelianceRow]) -> str:
    headers = ["method", "clean ADE/FDE", "disabled ADE/FDE", "delta ADE/FDE"]
    body = [[r.method,
             f"{_fmt(r.clean_ade)} / {_fmt(r.clean_fde)}",
             f"{_fmt(r.disabled_ade)} / {_fmt(r.disabled_fde)}",
             f"{r.delta_ade:+.3f} / {r.delta_fde:+.3f}"] for r in rows]
    out = render_table(headers, body, title="Skeleton reliance (pose tokens zeroed)")
    ref = REFERENCE_FULL_SCALE["reliance_delta"]
    out += ("# reference full-scale deltas: "
            + ", ".join(f"{k} +{v[0]:.3f}/+{v[1]:.3f}" for k, v in sorted(ref.items())) + "\n")
    return out


def render_cross_eval(result: CrossEvalResult) -> str:
    headers = ["train \\ test"] + [f"{te}" for te in result.strategies]
    body = []
    for tr in result.strategies:
        if (tr, result.strategies[0]) not in result.cells:
            continue
        cells = [tr]
        for te in result.strategies:
            err, cos = result.mean_cell(tr, te)
            cells.append(f"{_fmt(err)} / {_fmt(cos)}")
        body.append(cells)
    out = render_table(headers, body, title="Cross-evaluation by mask strategy (MPJPE / cos sim)")
    for k, v in sorted(result.verdicts.items()):
        out += f"# directional check {k}: {v}\n"
    return out


def render_sweep(result: SweepResult) -> str:
    headers = ["r_train"] + [f"r_test={rt:g}" for rt in result.r_test_grid] + ["mask-rate avg"]
    body = []
    for rtr in result.r_train_grid:
        cells = [f"{rtr:g}"]
        for rte in result.r_test_grid:
            cells.append(_fmt(float(np.mean(result.matrix[(rtr, rte)]))))
        cells.append(_fmt(result.row_average(rtr)))
        body.append(cells)
    out = render_table(headers, body, title="Reconstruction MPJPE over (r_train, r_test)")
    ref = REFERENCE_FULL_SCALE["mask_ratio_best"]
    out += f"# reference full-scale minimum: r_train={ref['r_train']:g} at {ref['mpjpe']:.3f}\n"
    for k, v in sorted(result.verdicts.items()):
        out += f"# directional check {k}: {v}\n"
    return out


def render_params(reports: dict[str, object]) -> str:
    headers = ["model", "params", "ms/sample"]
    body = [[name, str(rep.total), _fmt(rep.latency_ms_per_sample)]
            for name, rep in sorted(reports.items())]
    out = render_table(headers, body, title="Parameter counts and forward latency")
    out += "# reference full-scale models (params, ms/sample):\n"
    for name, (p, ms) in sorted(REFERENCE_FULL_SCALE["params"].items()):
        out += f"#   {name}: {p:,} params, {ms:.3f} ms/sample\n"
    return out


# ---- file emission -----------------------------------------------------------


def emit_report(out_dir: str | Path, *, robustness: EvalReport | None = None,
                reliance: list[RelianceRow] | None = None,
                cross: CrossEvalResult | None = None,
                sweep: SweepResult | None = None,
                params: dict | None = None,
                qualitative: list[dict] | None = None,
                metadata: dict | None = None) -> list[Path]:
    """Write text tables, delimited data, and plot-data files; byte-stable."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def _write(name: str, text: str):
        p = out_dir / name
        p.write_text(text)
        written.append(p)

    if metadata is not None:
        _write("report_meta.json", json.dumps(metadata, indent=2, sort_keys=True) + "\n")

    if robustness is not None:
        _write("robustness.txt", render_robustness(robustness))
        lines = ["method,strategy,r_test,ade,fde,deg_ade,deg_fde"]
        for r in robustness.rows:
            lines.append(f"{r.method},{r.strategy},{r.r_test!r},{r.ade!r},{r.fde!r},{r.deg_ade!r},{r.deg_fde!r}")
        _write("robustness.csv", "\n".join(lines) + "\n")

    if reliance is not None:
        _write("reliance.txt", render_reliance(reliance))
        lines = ["method,clean_ade,clean_fde,disabled_ade,disabled_fde,delta_ade,delta_fde"]
        for r in reliance:
            lines.append(f"{r.method},{r.clean_ade!r},{r.clean_fde!r},{r.disabled_ade!r},"
                         f"{r.disabled_fde!r},{r.delta_ade!r},{r.delta_fde!r}")
        _write("reliance.csv", "\n".join(lines) + "\n")

    if cross is not None:
        _write("cross_eval.txt", render_cross_eval(cross))
        lines = ["train_strategy,test_strategy,mpjpe,cos_sim"]
        for tr in cross.strategies:
            for te in cross.strategies:
                if (tr, te) in cross.cells:
                    err, cos = cross.mean_cell(tr, te)
                    lines.append(f"{tr},{te},{err!r},{cos!r}")
        _write("cross_eval.csv", "\n".join(lines) + "\n")

    if sweep is not None:
        _write("mask_ratio_sweep.txt", render_sweep(sweep))
        lines = ["r_train,r_test,mpjpe"]
        for rtr in sweep.r_train_grid:
            for rte in sweep.r_test_grid:
                lines.append(f"{rtr!r},{rte!r},{float(np.mean(sweep.matrix[(rtr, rte)]))!r}")
        _write("heatmap.csv", "\n".join(lines) + "\n")
        lines = ["r_train,mask_rate_avg_mpjpe"]
        for rtr in sweep.r_train_grid:
            lines.append(f"{rtr!r},{sweep.row_average(rtr)!r}")
        _write("line.csv", "\n".join(lines) + "\n")

    if params is not None:
        _write("params.txt", render_params(params))

    if qualitative is not None:
        _write("qualitative.jsonl", "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in qualitative))

    return written


def qualitative_records(methods: list[MethodBundle], windows: list[WindowSample],
                        graph: SkeletonGraph, ratio: float = 0.4, strategy: str = "random",
                        seed: int = 0, limit: int = 6) -> list[dict]:
    """Trajectory-overlay records for a few windows, clean and masked."""
    chosen = windows[:limit]
    cap = methods[0].model.config.neighbor_cap
    masks, _ = make_eval_masks(chosen, graph, ratio, strategy, seed, cap)
    records = []
    preds_clean = {m.name: predict_windows(m.model, chosen, graph, recon_model=m.recon_model)
                   for m in methods}
    preds_masked = {m.name: predict_windows(m.model, chosen, graph, masks=masks,
                                            recon_model=m.recon_model) for m in methods}
    for i, w in enumerate(chosen):
        for cond, preds in (("clean", preds_clean), (f"masked_r={ratio:g}", preds_masked)):
            records.append({
                "scene_id": w.scene_id, "agent_id": w.agent_id, "start_frame": w.start_frame,
                "condition": cond,
                "observed": w.observed_traj.tolist(),
                "future": w.future_traj.tolist(),
                "predictions": {name: preds[name][i].tolist() for name in sorted(preds)},
            })
    return records


def params_latency_report(models: dict[str, torch.nn.Module], example_batches: dict[str, torch.Tensor],
                          reps: int = 5) -> dict:
    out = {}
    for name, model in models.items():
        if name in example_batches:
            out[name] = measure_latency(model, example_batches[name], reps=reps)
        else:
            out[name] = count_params(model)
    return out
