"""Trajectory and grouping metrics.

minADE/minFDE take the best of K predicted samples, minimized
independently per metric.  Incidence recovery scores a soft predicted
incidence matrix against a binary truth matrix: predicted rows are
thresholded, true hyperedges are matched one-to-one to predicted ones by
optimal assignment on per-pair set F1 (row order carries no meaning), and
set-membership precision/recall/F1 are aggregated over the matching.
Unmatched nonempty predicted rows count against precision; unmatched true
rows count against recall.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ContractError

HORIZON_FRACTIONS = (0.25, 0.50, 0.75, 1.0)


def min_ade_fde(truth: np.ndarray, samples: np.ndarray) -> tuple[float, float]:
    """Minimum average / final displacement error over K samples.

    ``truth`` is (N, T, 2); ``samples`` is (K, N, T, 2).  Each sample's ADE
    averages the Euclidean error over agents and steps, FDE over agents at
    the final step; the minima over samples are taken independently.
    """
    truth = np.asarray(truth, dtype=np.float64)
    samples = np.asarray(samples, dtype=np.float64)
    if truth.ndim != 3 or truth.shape[-1] != 2:
        raise ContractError(f"truth must be (N, T, 2), got {truth.shape}")
    if samples.ndim != 4 or samples.shape[1:] != truth.shape:
        raise ContractError(
            f"samples must be (K,) + {truth.shape}, got {samples.shape}"
        )
    err = np.linalg.norm(samples - truth[None], axis=-1)  # (K, N, T)
    ade = err.mean(axis=(1, 2))
    fde = err[:, :, -1].mean(axis=1)
    return float(ade.min()), float(fde.min())


def horizon_grid(n_steps: int, fractions=HORIZON_FRACTIONS) -> tuple[int, ...]:
    """Step counts at the requested fractions of the horizon."""
    return tuple(max(1, int(round(f * n_steps))) for f in fractions)


def horizon_ade_fde(truth: np.ndarray, samples: np.ndarray, fractions=HORIZON_FRACTIONS):
    """(minADE, minFDE) at each fraction of the prediction horizon."""
    steps = horizon_grid(np.asarray(truth).shape[1], fractions)
    return tuple(min_ade_fde(truth[:, :t], samples[:, :, :t]) for t in steps)


def incidence_score(
    i_pred: np.ndarray, i_true: np.ndarray, threshold: float = 0.5
) -> tuple[float, float, float]:
    """Set-membership precision/recall/F1 between incidence matrices."""
    i_pred = np.asarray(i_pred, dtype=np.float64)
    i_true = np.asarray(i_true, dtype=np.float64)
    if i_pred.ndim != 2 or i_true.ndim != 2 or i_pred.shape[1] != i_true.shape[1]:
        raise ContractError(
            f"incidence matrices must share the agent axis, got {i_pred.shape} and {i_true.shape}"
        )
    pred_sets = [set(np.flatnonzero(row > threshold)) for row in i_pred]
    pred_sets = [s for s in pred_sets if s]  # empty rows predict nothing
    true_sets = [set(np.flatnonzero(row > 0.5)) for row in i_true if row.max() > 0.5]
    # canonical order makes the assignment's tie-breaking independent of the
    # callers' row order, which carries no meaning
    pred_sets.sort(key=lambda s: (len(s), sorted(s)))
    true_sets.sort(key=lambda s: (len(s), sorted(s)))

    score = np.zeros((len(pred_sets), len(true_sets)))
    for p, ps in enumerate(pred_sets):
        for t, ts in enumerate(true_sets):
            score[p, t] = 2.0 * len(ps & ts) / (len(ps) + len(ts))
    if score.size:
        rows, cols = linear_sum_assignment(score, maximize=True)
    else:
        rows, cols = np.asarray([], dtype=int), np.asarray([], dtype=int)

    tp = sum(len(pred_sets[p] & true_sets[t]) for p, t in zip(rows, cols))
    n_pred = sum(len(s) for s in pred_sets)
    n_true = sum(len(s) for s in true_sets)
    precision = tp / n_pred if n_pred else 1.0
    recall = tp / n_true if n_true else 1.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
    return float(precision), float(recall), float(f1)


def count_distinct_hyperedges(i_pred: np.ndarray, threshold: float = 0.5) -> int:
    """Number of distinct nonempty member sets among thresholded rows."""
    i_pred = np.asarray(i_pred, dtype=np.float64)
    if i_pred.ndim != 2:
        raise ContractError(f"incidence must be (M, N), got {i_pred.shape}")
    sets = {tuple(np.flatnonzero(row > threshold)) for row in i_pred}
    return len(sets - {()})


@dataclass(frozen=True)
class SceneMetrics:
    scene_id: str
    min_ade: float
    min_fde: float
    horizon: tuple[tuple[float, float], ...]  # (minADE, minFDE) at HORIZON_FRACTIONS
    incidence: tuple[float, float, float] | None = None


@dataclass(frozen=True)
class MetricReport:
    scenes: tuple[SceneMetrics, ...]
    min_ade: float
    min_fde: float
    horizon: tuple[tuple[float, float], ...]
    incidence: tuple[float, float, float] | None = None


def evaluate_scene(
    scene_id: str,
    truth: np.ndarray,
    samples: np.ndarray,
    incidence: tuple[float, float, float] | None = None,
) -> SceneMetrics:
    ade, fde = min_ade_fde(truth, samples)
    return SceneMetrics(
        scene_id=scene_id,
        min_ade=ade,
        min_fde=fde,
        horizon=horizon_ade_fde(truth, samples),
        incidence=incidence,
    )


def summarize(scenes) -> MetricReport:
    scenes = tuple(scenes)
    if not scenes:
        raise ContractError("cannot summarize an empty scene list")
    horizon = tuple(
        (
            float(np.mean([s.horizon[i][0] for s in scenes])),
            float(np.mean([s.horizon[i][1] for s in scenes])),
        )
        for i in range(len(scenes[0].horizon))
    )
    scored = [s.incidence for s in scenes if s.incidence is not None]
    incidence = tuple(float(np.mean([v[i] for v in scored])) for i in range(3)) if scored else None
    return MetricReport(
        scenes=scenes,
        min_ade=float(np.mean([s.min_ade for s in scenes])),
        min_fde=float(np.mean([s.min_fde for s in scenes])),
        horizon=horizon,
        incidence=incidence,
    )


def save_report(report: MetricReport, path) -> None:
    payload = {
        "min_ade": report.min_ade,
        "min_fde": report.min_fde,
        "horizon_fractions": list(HORIZON_FRACTIONS),
        "horizon": [list(h) for h in report.horizon],
        "incidence": list(report.incidence) if report.incidence else None,
        "scenes": [
            {
                "scene_id": s.scene_id,
                "min_ade": s.min_ade,
                "min_fde": s.min_fde,
                "horizon": [list(h) for h in s.horizon],
                "incidence": list(s.incidence) if s.incidence else None,
            }
            for s in report.scenes
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_report(path) -> MetricReport:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    scenes = tuple(
        SceneMetrics(
            scene_id=s["scene_id"],
            min_ade=s["min_ade"],
            min_fde=s["min_fde"],
            horizon=tuple(tuple(h) for h in s["horizon"]),
            incidence=tuple(s["incidence"]) if s["incidence"] else None,
        )
        for s in payload["scenes"]
    )
    return MetricReport(
        scenes=scenes,
        min_ade=payload["min_ade"],
        min_fde=payload["min_fde"],
        horizon=tuple(tuple(h) for h in payload["horizon"]),
        incidence=tuple(payload["incidence"]) if payload["incidence"] else None,
    )
