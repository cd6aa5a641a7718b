"""Scene-suite generation, held-out evaluation, and the mode ablation.

The suite is a set of obstacle-split scenes with ground-truth grouping.
Evaluation draws K futures per held-out scene, scores minADE/minFDE in
the scene's original coordinates, and scores the inferred hypergraph
incidence (averaged over samples) against the truth segment that covers
each prediction window.  The ablation driver trains every mode with the
same seeds and data split and emits a delimited table, a structured
summary, and validation-error curves.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import AblationConfig, SuiteConfig
from .data import (
    SceneRecord,
    attach_truth,
    load_scenes,
    load_truth,
    normalize_scene,
    save_scenes,
    save_truth,
)
from .errors import ContractError
from .metrics import (
    MetricReport,
    count_distinct_hyperedges,
    evaluate_scene,
    incidence_score,
    summarize,
)
from .model import MODES, Model, PredictionBundle, predict
from .rng import RngStream
from .simulator import simulate, split_scenario
from .training import TrainConfig, TrainResult, split_scenes, train

logger = logging.getLogger(__name__)

TRAJECTORY_FILE = "trajectories.csv"
TRUTH_FILE = "truth.json"


def generate_suite(cfg: SuiteConfig) -> list[SceneRecord]:
    stream = RngStream(seed=cfg.seed)
    scenes = []
    for i in range(cfg.n_scenes):
        sim_cfg = split_scenario(cfg.n_agents, stream.derive("scene", i))
        scenes.append(simulate(sim_cfg, scene_id=f"scene_{i:05d}"))
    return scenes


def save_suite(scenes, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_scenes(scenes, out / TRAJECTORY_FILE)
    save_truth(scenes, out / TRUTH_FILE)


def load_suite(data_dir) -> list[SceneRecord]:
    data = Path(data_dir)
    scenes = load_scenes(data / TRAJECTORY_FILE)
    truth_path = data / TRUTH_FILE
    if truth_path.exists():
        scenes = attach_truth(scenes, load_truth(truth_path))
    return scenes


def predict_scene(model: Model, record: SceneRecord, k: int, rng: RngStream | None) -> PredictionBundle:
    """K sampled futures in the scene's original coordinates."""
    cfg = model.config
    normalized, norm = normalize_scene(record.trajectories, t_h=cfg.t_h)
    bundle = predict(model, normalized.positions[:, : cfg.t_h], k, rng)
    return replace(bundle, trajectories=norm.invert(bundle.trajectories))


def window_stop_step(bundle: PredictionBundle, beta: int) -> int:
    """Last absolute recorded step decoded by window beta (1-based)."""
    return min(bundle.t_h + (beta + 1) * bundle.tau_gap, bundle.t_h + bundle.t_f)


def scene_incidence(bundle: PredictionBundle, truth, threshold: float = 0.5):
    """Mean incidence precision/recall/F1 across prediction windows.

    Each window's sample-averaged incidence is scored against the truth
    segment covering the window's final decoded step.
    """
    scores = []
    for window in bundle.windows:
        segment = truth.segment_at(window_stop_step(bundle, window["beta"]))
        scores.append(incidence_score(window["i_hg"].mean(axis=0), segment.incidence, threshold))
    return tuple(float(np.mean([s[i] for s in scores])) for i in range(3))


def recovers_two_hyperedges(bundle: PredictionBundle, threshold: float = 0.5) -> bool:
    """Whether the final window's mean incidence forms exactly two groups."""
    final = bundle.windows[-1]["i_hg"].mean(axis=0)
    return count_distinct_hyperedges(final, threshold) == 2


def evaluate_records(
    model: Model, records, k: int, rng: RngStream | None, threshold: float = 0.5
) -> MetricReport:
    cfg = model.config
    scenes = []
    for record in records:
        bundle = predict_scene(model, record, k, rng)
        truth_future = record.trajectories.positions[:, cfg.t_h : cfg.t_h + cfg.t_f]
        incidence = scene_incidence(bundle, record.truth, threshold) if record.truth else None
        scenes.append(
            evaluate_scene(record.scene_id, truth_future, bundle.trajectories, incidence=incidence)
        )
    return summarize(scenes)


@dataclass(frozen=True)
class ModeRun:
    mode: str
    seed: int
    report: MetricReport
    val_min_ade: float
    best_val_loss: float
    recovery_rate: float | None
    curve: tuple[tuple[int, float], ...]  # (epoch, val minADE)


@dataclass(frozen=True)
class AblationResult:
    runs: tuple[ModeRun, ...]

    def by_mode(self, mode: str) -> list[ModeRun]:
        return [r for r in self.runs if r.mode == mode]

    def mean_min_ade(self, mode: str) -> float:
        return float(np.mean([r.report.min_ade for r in self.by_mode(mode)]))


def _records_by_id(records) -> dict[str, SceneRecord]:
    return {r.scene_id: r for r in records}


def _curve_recorder(records_by_id, split, cfg: TrainConfig, samples: int, every: int):
    """Per-epoch callback computing held-out minADE on a small val subset."""
    val_ids = split["val"][:8]
    subset = [records_by_id[i] for i in val_ids]
    curve: list[tuple[int, float]] = []

    def on_epoch(stats, model):
        if not subset or stats.epoch % every:
            return
        rng = RngStream(seed=cfg.seed).derive("curve", stats.epoch)
        report = evaluate_records(model, subset, min(samples, 5), rng)
        curve.append((stats.epoch, report.min_ade))

    return curve, on_epoch


def run_mode(
    records,
    cfg: TrainConfig,
    samples: int = 20,
    curve_every: int = 0,
    threshold: float = 0.5,
) -> tuple[TrainResult, ModeRun]:
    """Train one mode/seed and evaluate it on the held-out test split."""
    by_id = _records_by_id(records)
    curve, on_epoch = [], None
    if curve_every:
        split = split_scenes(sorted(by_id))
        curve, on_epoch = _curve_recorder(by_id, split, cfg, samples, curve_every)
    start = time.time()
    result = train(records, cfg, on_epoch=on_epoch)
    logger.info("mode %s seed %d trained in %.1fs", cfg.mode, cfg.seed, time.time() - start)

    test = [by_id[i] for i in result.split["test"]] or records
    val = [by_id[i] for i in result.split["val"]] or test
    rng = RngStream(seed=cfg.seed)
    report = evaluate_records(result.model, test, samples, rng.derive("test"), threshold)
    val_report = evaluate_records(result.model, val, samples, rng.derive("val"), threshold)

    recovery = None
    if all(r.truth is not None for r in test):
        hits = [
            recovers_two_hyperedges(
                predict_scene(result.model, r, samples, rng.derive("recover", r.scene_id)), threshold
            )
            for r in test
        ]
        recovery = float(np.mean(hits))
    run = ModeRun(
        mode=cfg.mode,
        seed=cfg.seed,
        report=report,
        val_min_ade=val_report.min_ade,
        best_val_loss=result.best_val_loss,
        recovery_rate=recovery,
        curve=tuple(curve),
    )
    return result, run


def run_ablation(records, base: TrainConfig, ablation: AblationConfig, out_dir=None) -> AblationResult:
    runs = []
    for mode in MODES:
        for seed in ablation.seeds:
            cfg = replace(base, mode=mode, seed=seed)
            _, run = run_mode(records, cfg, ablation.samples, ablation.curve_every)
            runs.append(run)
    result = AblationResult(runs=tuple(runs))
    if out_dir is not None:
        write_ablation_files(result, out_dir)
    return result


def pooled_stderr(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    var_a = a.var(ddof=1) if a.size > 1 else 0.0
    var_b = b.var(ddof=1) if b.size > 1 else 0.0
    return float(np.sqrt(var_a / a.size + var_b / b.size))


ABLATION_ORDER = ("DCG+DHG+SM+SP", "DCG+DHG+SM", "DCG+DHG", "SCG+SHG", "SCG")


def ordering_gaps(result: AblationResult, order=ABLATION_ORDER):
    """(better, worse, mean gap, pooled stderr) per adjacent mode pair.

    The expected ordering holds when each mean gap (better minus worse)
    is at most one pooled standard error above zero.
    """
    gaps = []
    for better, worse in zip(order, order[1:]):
        a = [r.report.min_ade for r in result.by_mode(better)]
        b = [r.report.min_ade for r in result.by_mode(worse)]
        gaps.append((better, worse, float(np.mean(a) - np.mean(b)), pooled_stderr(a, b)))
    return gaps


def write_ablation_files(result: AblationResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "table.tsv", "w", encoding="utf-8") as fh:
        fh.write(
            "mode\tmin_ade_mean\tmin_ade_std\tmin_fde_mean\tmin_fde_std"
            "\tincidence_f1_mean\trecovery_mean\tval_min_ade_std\n"
        )
        for mode in MODES:
            runs = result.by_mode(mode)
            ade = [r.report.min_ade for r in runs]
            fde = [r.report.min_fde for r in runs]
            f1 = [r.report.incidence[2] for r in runs if r.report.incidence]
            rec = [r.recovery_rate for r in runs if r.recovery_rate is not None]
            val = [r.val_min_ade for r in runs]
            fh.write(
                f"{mode}\t{np.mean(ade):.6f}\t{np.std(ade, ddof=1) if len(ade) > 1 else 0.0:.6f}"
                f"\t{np.mean(fde):.6f}\t{np.std(fde, ddof=1) if len(fde) > 1 else 0.0:.6f}"
                f"\t{np.mean(f1) if f1 else float('nan'):.6f}"
                f"\t{np.mean(rec) if rec else float('nan'):.6f}"
                f"\t{np.std(val, ddof=1) if len(val) > 1 else 0.0:.6f}\n"
            )

    with open(out / "curves.tsv", "w", encoding="utf-8") as fh:
        fh.write("mode\tseed\tepoch\tval_min_ade\n")
        for run in result.runs:
            for epoch, value in run.curve:
                fh.write(f"{run.mode}\t{run.seed}\t{epoch}\t{value:.6f}\n")

    summary = {
        "modes": {
            mode: {
                "min_ade": [r.report.min_ade for r in result.by_mode(mode)],
                "min_fde": [r.report.min_fde for r in result.by_mode(mode)],
                "val_min_ade": [r.val_min_ade for r in result.by_mode(mode)],
                "incidence": [
                    list(r.report.incidence) if r.report.incidence else None
                    for r in result.by_mode(mode)
                ],
                "recovery_rate": [r.recovery_rate for r in result.by_mode(mode)],
            }
            for mode in MODES
        },
        "ordering_gaps": [
            {"better": b, "worse": w, "gap": g, "pooled_stderr": s}
            for b, w, g, s in ordering_gaps(result)
        ],
    }
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")


def ablation_table_rows(result: AblationResult) -> list[tuple[str, float, float]]:
    """(mode, mean minADE, mean minFDE) rows in canonical mode order."""
    rows = []
    for mode in MODES:
        runs = result.by_mode(mode)
        if not runs:
            raise ContractError(f"no runs recorded for mode {mode}")
        rows.append(
            (
                mode,
                float(np.mean([r.report.min_ade for r in runs])),
                float(np.mean([r.report.min_fde for r in runs])),
            )
        )
    return rows
