import numpy as np
import pytest

import grouptraj.model as model_mod
from grouptraj import tensor as T
from grouptraj.errors import ContractError, ValidationError
from grouptraj.gradcheck import check_gradients
from grouptraj.losses import LossConfig, loss_kl, loss_rec, loss_smooth, loss_sparse, loss_total
from grouptraj.model import (
    MODES,
    Model,
    ModelConfig,
    PredictionBundle,
    load_prediction,
    predict,
    run_windows,
    save_prediction,
)
from grouptraj.rng import RngStream


def small_config(**overrides):
    base = dict(
        t_h=4,
        t_f=6,
        tau_gap=2,
        width=8,
        hidden_width=8,
        n_hyperedges=2,
        temperature=0.5,
        variance=0.05,
        mode="DCG+DHG+SM+SP",
    )
    base.update(overrides)
    return ModelConfig(**base)


def small_model(seed=0, **overrides):
    return Model.create(small_config(**overrides), RngStream(seed=seed))


def scene(seed=0, b=2, n=3, t=10):
    return np.random.default_rng(seed).normal(size=(b, n, t, 2))


def jitter(model, seed=99, scale=0.05):
    rng = np.random.default_rng(seed)
    for p in model.parameters().values():
        p.data += rng.normal(size=p.shape) * scale


def test_config_rejects_unknown_mode():
    with pytest.raises(ContractError):
        small_config(mode="DCG")


def test_config_rejects_bad_temperature_and_horizon():
    with pytest.raises(ContractError):
        small_config(temperature=0.0)
    with pytest.raises(ContractError):
        small_config(tau_gap=7)


def test_mode_switch_table():
    # mode -> (graph, hypergraph, dynamic, smooth, sparse)
    want = {
        "SCG": (True, False, False, False, False),
        "SHG": (False, True, False, False, False),
        "SCG+SHG": (True, True, False, False, False),
        "DCG+DHG": (True, True, True, False, False),
        "DCG+DHG+SM": (True, True, True, True, False),
        "DCG+DHG+SM+SP": (True, True, True, True, True),
    }
    assert set(want) == set(MODES)
    for mode, flags in want.items():
        cfg = small_config(mode=mode)
        got = (cfg.use_graph, cfg.use_hypergraph, cfg.dynamic, cfg.use_smooth, cfg.use_sparse)
        assert got == flags, mode


def test_run_windows_shapes_and_betas():
    model = small_model()
    run = run_windows(model, scene(), rng=RngStream(seed=1))
    assert run.means.shape == (2, 3, 6, 2)
    assert [r.beta for r in run.records] == [0, 1, 2]
    for r in run.records:
        assert r.means.shape == (2, 3, 2, 2)
        assert r.rel.z_cg.shape == (2, 3, 3, 2)
        assert r.rel.z_hg.shape == (2, 2, 2)
        assert r.inc.i_hg.shape == (2, 2, 3)


def test_run_windows_clips_last_window():
    model = small_model(t_f=5)
    run = run_windows(model, scene(t=9), rng=RngStream(seed=1))
    assert run.means.shape == (2, 3, 5, 2)
    assert [r.means.shape[2] for r in run.records] == [2, 2, 1]


def test_run_windows_accepts_history_only_input():
    model = small_model()
    run = run_windows(model, scene(t=4), rng=RngStream(seed=2))
    assert run.means.shape == (2, 3, 6, 2)


def test_run_windows_input_validation():
    model = small_model()
    with pytest.raises(ContractError):
        run_windows(model, np.zeros((3, 10, 2)), rng=None)
    with pytest.raises(ContractError):
        run_windows(model, np.zeros((1, 3, 3, 2)), rng=None)
    with pytest.raises(ContractError):
        run_windows(model, np.zeros((1, 3, 4, 2)), rng=RngStream(seed=0), teacher_prob=0.5)


def test_static_mode_reuses_first_window_relations():
    model = small_model(mode="SCG+SHG")
    run = run_windows(model, scene(), rng=RngStream(seed=3))
    first = run.records[0]
    for r in run.records[1:]:
        assert r.rel is first.rel
        assert r.inc is first.inc


def test_dynamic_mode_relations_change_across_windows():
    model = small_model(mode="DCG+DHG")
    jitter(model)
    run = run_windows(model, scene(), rng=RngStream(seed=4))
    z0 = run.records[0].rel.z_cg.data
    z1 = run.records[1].rel.z_cg.data
    assert np.abs(z0 - z1).max() > 1e-8


def test_zero_evolver_first_window_matches_static():
    # residual evolver at zero parameters is the identity, so the dynamic
    # model's first window reproduces the static model bit for bit
    dyn = small_model(seed=7, mode="DCG+DHG")
    for p in dyn.evo.parameters().values():
        p.data[...] = 0.0
    static = small_model(seed=7, mode="SCG+SHG")
    for name, p in static.parameters().items():
        if name in dyn.parameters():
            p.data[...] = dyn.parameters()[name].data
    x = scene(seed=5)
    run_d = run_windows(dyn, x, rng=RngStream(seed=6))
    run_s = run_windows(static, x, rng=RngStream(seed=6))
    np.testing.assert_array_equal(run_d.records[0].rel.z_cg.data, run_s.records[0].rel.z_cg.data)
    np.testing.assert_array_equal(run_d.records[0].rel.z_hg.data, run_s.records[0].rel.z_hg.data)
    np.testing.assert_array_equal(run_d.records[0].means.data, run_s.records[0].means.data)


def test_run_windows_deterministic_given_seed():
    model = small_model()
    x = scene()
    a = run_windows(model, x, rng=RngStream(seed=11)).means.data
    b = run_windows(model, x, rng=RngStream(seed=11)).means.data
    c = run_windows(model, x, rng=RngStream(seed=12)).means.data
    np.testing.assert_array_equal(a, b)
    assert np.abs(a - c).max() > 0.0


def test_scg_mode_ignores_hypergraph_parameters():
    model = small_model(mode="SCG")
    x = scene()
    before = run_windows(model, x, rng=RngStream(seed=13)).means.data
    hg_names = model.hypergraph_parameter_names()
    assert hg_names
    params = model.parameters()
    for name in hg_names:
        params[name].data += 1.5
    after = run_windows(model, x, rng=RngStream(seed=13)).means.data
    np.testing.assert_array_equal(before, after)


def test_hypergraph_override_ignores_hypergraph_parameters():
    # warm-up stage: full mode with the hypergraph branch forced off
    model = small_model(mode="DCG+DHG+SM+SP")
    x = scene()
    before = run_windows(
        model, x, rng=RngStream(seed=14), use_hypergraph_override=False
    ).means.data
    params = model.parameters()
    for name in model.hypergraph_parameter_names():
        params[name].data += 1.5
    after = run_windows(
        model, x, rng=RngStream(seed=14), use_hypergraph_override=False
    ).means.data
    np.testing.assert_array_equal(before, after)


def test_shg_mode_ignores_edge_type_decoders():
    model = small_model(mode="SHG")
    x = scene()
    before = run_windows(model, x, rng=RngStream(seed=15)).means.data
    for i, block in enumerate(model.dec.edge_type_fns):
        for p in block.parameters(f"edge{i}").values():
            p.data += 1.5
    after = run_windows(model, x, rng=RngStream(seed=15)).means.data
    np.testing.assert_array_equal(before, after)
    # null one-hot rows on the diagonal-free grid
    run = run_windows(model, x, rng=RngStream(seed=15))
    np.testing.assert_array_equal(run.records[0].rel.z_cg.data[..., 0], 1.0)


def test_teacher_forcing_feeds_truth_windows(monkeypatch):
    model = small_model()
    x = scene(seed=21)
    seen = []
    real = model_mod.embed_history

    def spy(params, window):
        seen.append(window.data.copy())
        return real(params, window)

    monkeypatch.setattr(model_mod, "embed_history", spy)
    run_windows(model, x, rng=RngStream(seed=22), teacher_prob=1.0)
    assert len(seen) == 3
    np.testing.assert_array_equal(seen[0], x[:, :, 0:4, :])
    np.testing.assert_array_equal(seen[1], x[:, :, 2:6, :])
    np.testing.assert_array_equal(seen[2], x[:, :, 4:8, :])

    seen.clear()
    run_windows(model, x, rng=RngStream(seed=22), teacher_prob=0.0)
    # without forcing, later windows mix in the model's own predictions
    assert np.abs(seen[1] - x[:, :, 2:6, :]).max() > 1e-8
    np.testing.assert_array_equal(seen[1][:, :, :2, :], x[:, :, 2:4, :])


def test_predict_bundle_shape_and_determinism():
    model = small_model()
    history = scene(seed=31, b=1, n=3, t=4)[0]
    bundle = predict(model, history, k=4, rng=RngStream(seed=32))
    assert bundle.trajectories.shape == (4, 3, 6, 2)
    assert bundle.k == 4
    assert len(bundle.windows) == 3
    assert bundle.windows[0]["z_cg"].shape == (4, 3, 3, 2)
    assert bundle.windows[0]["i_hg"].shape == (4, 2, 3)
    again = predict(model, history, k=4, rng=RngStream(seed=32))
    np.testing.assert_array_equal(bundle.trajectories, again.trajectories)
    other = predict(model, history, k=4, rng=RngStream(seed=33))
    assert np.abs(bundle.trajectories - other.trajectories).max() > 0.0


def test_predict_samples_differ_and_hard_rows_one_hot():
    model = small_model()
    history = scene(seed=41, b=1, n=3, t=4)[0]
    bundle = predict(model, history, k=3, rng=RngStream(seed=42), hard=True)
    assert np.abs(bundle.trajectories[0] - bundle.trajectories[1]).max() > 1e-10
    z = bundle.windows[0]["z_cg"]
    assert set(np.unique(z)) <= {0.0, 1.0}


def test_predict_single_window_when_horizon_equals_gap():
    model = small_model(t_f=2, tau_gap=2)
    history = scene(seed=51, b=1, n=3, t=4)[0]
    bundle = predict(model, history, k=2, rng=RngStream(seed=52))
    assert len(bundle.windows) == 1
    assert bundle.trajectories.shape == (2, 3, 2, 2)


def test_predict_input_validation():
    model = small_model()
    with pytest.raises(ContractError):
        predict(model, np.zeros((3, 4, 2)), k=0, rng=None)
    with pytest.raises(ContractError):
        predict(model, np.zeros((3, 5, 2)), k=1, rng=None)


def test_prediction_dump_round_trip(tmp_path):
    model = small_model()
    history = scene(seed=61, b=1, n=3, t=4)[0]
    bundle = predict(model, history, k=2, rng=RngStream(seed=62))
    path = tmp_path / "scene_0.json"
    save_prediction(bundle, "scene_0", path)
    scene_id, loaded = load_prediction(path)
    assert scene_id == "scene_0"
    assert (loaded.t_h, loaded.t_f, loaded.tau_gap) == (4, 6, 2)
    np.testing.assert_array_equal(loaded.trajectories, bundle.trajectories)
    for got, want in zip(loaded.windows, bundle.windows):
        assert got["beta"] == want["beta"]
        for key in ("z_cg", "z_hg", "z_cg_raw", "z_hg_raw", "i_pim", "i_hg"):
            np.testing.assert_array_equal(got[key], want[key])


def test_model_save_load_round_trip(tmp_path):
    model = small_model(seed=71)
    jitter(model, seed=72)
    path = tmp_path / "model.ckpt"
    model.save(path, extra={"epoch": 9})
    loaded, extra = Model.load(path)
    assert extra["epoch"] == 9
    assert loaded.config == model.config
    for name, p in model.parameters().items():
        np.testing.assert_array_equal(loaded.parameters()[name].data, p.data)
    history = scene(seed=73, b=1, n=3, t=4)[0]
    a = predict(model, history, k=2, rng=RngStream(seed=74)).trajectories
    b = predict(loaded, history, k=2, rng=RngStream(seed=74)).trajectories
    np.testing.assert_array_equal(a, b)


def test_load_rejects_checkpoint_without_config(tmp_path):
    from grouptraj.nn import save_checkpoint

    model = small_model()
    path = tmp_path / "bare.ckpt"
    save_checkpoint(model.parameters(), path, extra={})
    with pytest.raises(ValidationError):
        Model.load(path)


def test_full_loop_gradients_match_fd():
    # end-to-end: encode/evolve/decode over two windows plus every loss term,
    # noise frozen (rng=None); params jittered off the zero-bias relu kinks
    cfg = ModelConfig(
        t_h=3, t_f=2, tau_gap=1, width=4, hidden_width=4, n_hyperedges=2, mode="DCG+DHG+SM+SP"
    )
    model = Model.create(cfg, RngStream(seed=81))
    jitter(model, seed=82)
    x = scene(seed=83, b=1, n=2, t=5)
    lcfg = LossConfig(0.3, 0.3, 0.2, 0.2, 0.1, 0.1)

    def scalar():
        run = run_windows(model, x, rng=None)
        truth = x[:, :, 3:, :]
        total = loss_rec(truth, run.means)
        prev = None
        for r in run.records:
            total = total + loss_kl(r.rel.z_cg, r.rel.z_hg, lcfg)
            total = total + loss_sparse(r.rel.z_cg, r.rel.z_hg, lcfg)
            cur = (r.rel.z_cg, r.rel.z_hg)
            if prev is not None:
                total = total + loss_smooth(prev, cur, lcfg)
            prev = cur
        return total

    fails = check_gradients(
        scalar,
        sorted(model.parameters().items()),
        rng=np.random.default_rng(84),
        coords_per_param=1,
        floor=1e-6,
    )
    assert fails == []
