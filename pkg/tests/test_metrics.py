"""Tests for trajectory and incidence-recovery metrics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grouptraj.errors import ContractError
from grouptraj.metrics import (
    HORIZON_FRACTIONS,
    evaluate_scene,
    horizon_ade_fde,
    horizon_grid,
    incidence_score,
    load_report,
    min_ade_fde,
    save_report,
    summarize,
)


# --- min ADE / FDE ---


def test_exact_sample_scores_zero():
    truth = np.arange(12, dtype=np.float64).reshape(2, 3, 2)
    samples = np.stack([truth + 5.0, truth.copy()])
    assert min_ade_fde(truth, samples) == (0.0, 0.0)


def test_single_sample_equals_plain_ade_fde():
    rng = np.random.default_rng(0)
    truth = rng.normal(size=(3, 5, 2))
    sample = rng.normal(size=(1, 3, 5, 2))
    err = np.linalg.norm(sample[0] - truth, axis=-1)
    ade, fde = min_ade_fde(truth, sample)
    assert ade == pytest.approx(err.mean(), rel=1e-15)
    assert fde == pytest.approx(err[:, -1].mean(), rel=1e-15)


def test_two_sample_hand_oracle():
    # sample A is off by 1 at both steps (ADE 1, FDE 1); sample B is exact
    # then off by 3 (ADE 1.5, FDE 3); minima are taken independently
    truth = np.zeros((1, 2, 2))
    sample_a = np.asarray([[[1.0, 0.0], [1.0, 0.0]]])
    sample_b = np.asarray([[[0.0, 0.0], [3.0, 0.0]]])
    ade, fde = min_ade_fde(truth, np.stack([sample_a, sample_b]))
    assert ade == 1.0
    assert fde == 1.0


def test_min_ade_fde_rejects_bad_shapes():
    truth = np.zeros((2, 3, 2))
    with pytest.raises(ContractError):
        min_ade_fde(truth, np.zeros((4, 2, 3)))
    with pytest.raises(ContractError):
        min_ade_fde(np.zeros((2, 3)), np.zeros((1, 2, 3, 2)))


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_min_ade_fde_sample_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    truth = rng.normal(size=(2, 4, 2))
    samples = rng.normal(size=(5, 2, 4, 2))
    base = min_ade_fde(truth, samples)
    shuffled = min_ade_fde(truth, samples[rng.permutation(5)])
    assert base == shuffled


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=10_000), st.integers(min_value=1, max_value=6))
def test_min_ade_fde_monotone_in_samples(seed, k):
    rng = np.random.default_rng(seed)
    truth = rng.normal(size=(3, 4, 2))
    samples = rng.normal(size=(k + 1, 3, 4, 2))
    ade_k, fde_k = min_ade_fde(truth, samples[:k])
    ade_all, fde_all = min_ade_fde(truth, samples)
    assert ade_all <= ade_k
    assert fde_all <= fde_k


def test_horizon_grid_quarters():
    assert horizon_grid(12) == (3, 6, 9, 12)
    assert horizon_grid(1) == (1, 1, 1, 1)
    assert len(HORIZON_FRACTIONS) == 4


def test_horizon_metrics_on_growing_error():
    # error grows linearly with the step, so truncated ADE is the average of
    # 1..L = (L + 1) / 2 and truncated FDE is L
    truth = np.zeros((1, 12, 2))
    offsets = np.arange(1.0, 13.0)
    sample = np.zeros((1, 1, 12, 2))
    sample[0, 0, :, 0] = offsets
    values = horizon_ade_fde(truth, sample)
    assert [v[0] for v in values] == [2.0, 3.5, 5.0, 6.5]
    assert [v[1] for v in values] == [3.0, 6.0, 9.0, 12.0]


# --- incidence recovery ---


def test_identical_incidence_is_perfect():
    inc = np.asarray([[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]])
    assert incidence_score(inc, inc) == (1.0, 1.0, 1.0)


def test_row_permutation_is_perfect():
    inc = np.asarray([[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]])
    assert incidence_score(inc[::-1], inc) == (1.0, 1.0, 1.0)


def test_partial_overlap_hand_oracle():
    # truth {1,2,3} against prediction {1,2}: everything predicted is right
    # (precision 1), two of three members found (recall 2/3), F1 0.8
    i_true = np.asarray([[0.0, 1.0, 1.0, 1.0]])
    i_pred = np.asarray([[0.0, 1.0, 1.0, 0.0]])
    precision, recall, f1 = incidence_score(i_pred, i_true)
    assert precision == 1.0
    assert recall == 2 / 3
    assert f1 == pytest.approx(0.8, rel=1e-15)


def test_spurious_predicted_row_costs_precision():
    i_true = np.asarray([[1.0, 1.0, 0.0, 0.0]])
    i_pred = np.asarray([[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]])
    precision, recall, f1 = incidence_score(i_pred, i_true)
    assert (precision, recall) == (0.5, 1.0)
    assert f1 == pytest.approx(2 / 3, rel=1e-15)


def test_missing_predicted_row_costs_recall():
    i_true = np.asarray([[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]])
    i_pred = np.asarray([[1.0, 1.0, 0.0, 0.0]])
    precision, recall, f1 = incidence_score(i_pred, i_true)
    assert (precision, recall) == (1.0, 0.5)
    assert f1 == pytest.approx(2 / 3, rel=1e-15)


def test_threshold_selects_members():
    i_true = np.asarray([[1.0, 1.0, 0.0, 0.0]])
    soft = np.asarray([[0.6, 0.55, 0.4, 0.1]])
    assert incidence_score(soft, i_true) == (1.0, 1.0, 1.0)
    precision, recall, _ = incidence_score(soft, i_true, threshold=0.58)
    assert (precision, recall) == (1.0, 0.5)


def test_empty_prediction_scores_zero_recall():
    i_true = np.asarray([[1.0, 1.0]])
    i_pred = np.asarray([[0.1, 0.2]])
    assert incidence_score(i_pred, i_true) == (1.0, 0.0, 0.0)


def test_incidence_rejects_agent_mismatch():
    with pytest.raises(ContractError):
        incidence_score(np.ones((1, 3)), np.ones((1, 4)))


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_incidence_row_order_invariance(seed):
    rng = np.random.default_rng(seed)
    i_pred = rng.uniform(size=(3, 6))
    i_true = (rng.uniform(size=(2, 6)) > 0.5).astype(np.float64)
    base = incidence_score(i_pred, i_true)
    assert incidence_score(i_pred[rng.permutation(3)], i_true) == base
    assert incidence_score(i_pred, i_true[rng.permutation(2)]) == base


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_incidence_scores_stay_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    i_pred = rng.uniform(size=(rng.integers(1, 4), 5))
    i_true = (rng.uniform(size=(rng.integers(1, 4), 5)) > 0.4).astype(np.float64)
    for value in incidence_score(i_pred, i_true):
        assert 0.0 <= value <= 1.0


# --- report assembly ---


def test_summarize_averages_scene_metrics(tmp_path):
    rng = np.random.default_rng(3)
    scenes = []
    for i in range(3):
        truth = rng.normal(size=(2, 8, 2))
        samples = rng.normal(size=(4, 2, 8, 2))
        inc = incidence_score(rng.uniform(size=(2, 5)), np.eye(2, 5) + np.eye(2, 5, k=1))
        scenes.append(evaluate_scene(f"s{i}", truth, samples, incidence=inc))
    report = summarize(scenes)
    assert report.min_ade == pytest.approx(np.mean([s.min_ade for s in scenes]))
    assert report.min_fde == pytest.approx(np.mean([s.min_fde for s in scenes]))
    assert report.horizon[3][0] == pytest.approx(report.min_ade, rel=1e-12)
    assert report.incidence is not None

    path = tmp_path / "report.json"
    save_report(report, path)
    loaded = load_report(path)
    assert loaded == report


def test_summarize_without_incidence():
    truth = np.zeros((1, 4, 2))
    samples = np.zeros((2, 1, 4, 2))
    report = summarize([evaluate_scene("a", truth, samples)])
    assert report.incidence is None
    assert report.min_ade == 0.0


def test_summarize_rejects_empty():
    with pytest.raises(ContractError):
        summarize([])
