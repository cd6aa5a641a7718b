"""The assembled predictor: configuration, parameter container, and the
sliding-window forward pass shared by training and sampling.

Ablation modes gate three orthogonal switches:

- graph branch: typed pairwise aggregation in the decoder,
- hypergraph branch: incidence inference and typed group aggregation,
- relation dynamics: static modes infer relations once on the observed
  history and reuse them for every window; dynamic modes re-infer each
  window and thread the type logits through the recurrent evolver.

Smoothness and sparsity are pure loss-side switches and change nothing here.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .data import HorizonSpec, WindowPlan, make_window_plan
from .decoder import DecoderParams, decode_window
from .encoder import (
    EncoderParams,
    IncidenceState,
    RelationDistributions,
    embed_history,
    hypergraph_rounds,
    infer_incidence,
    null_relations,
    pairwise_rounds,
    type_relations,
)
from .errors import ContractError, ValidationError
from .evolution import EvolverParams, evolve_relations, zero_state
from .nn import gumbel_perturb, load_checkpoint, restore_parameters, save_checkpoint
from .rng import RngStream
from .tensor import Tensor

MODES = ("SCG", "SHG", "SCG+SHG", "DCG+DHG", "DCG+DHG+SM", "DCG+DHG+SM+SP")


@dataclass(frozen=True)
class ModelConfig:
    t_h: int = 8
    t_f: int = 12
    tau_gap: int = 4
    width: int = 64
    hidden_width: int = 64
    n_hyperedges: int = 8
    n_edge_types: int = 2
    n_hyper_types: int = 2
    temperature: float = 0.5
    variance: float = 0.05
    mode: str = "DCG+DHG+SM+SP"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.temperature <= 0 or self.variance <= 0:
            raise ContractError("temperature and variance must be positive")
        HorizonSpec(self.t_h, self.t_f, self.tau_gap)  # validates horizon fields

    @property
    def horizon(self) -> HorizonSpec:
        return HorizonSpec(self.t_h, self.t_f, self.tau_gap)

    @property
    def use_graph(self) -> bool:
        return self.mode != "SHG"

    @property
    def use_hypergraph(self) -> bool:
        return self.mode != "SCG"

    @property
    def dynamic(self) -> bool:
        return self.mode.startswith("DCG")

    @property
    def use_smooth(self) -> bool:
        return "+SM" in self.mode

    @property
    def use_sparse(self) -> bool:
        return "+SP" in self.mode


@dataclass
class Model:
    config: ModelConfig
    enc: EncoderParams
    dec: DecoderParams
    evo: EvolverParams

    @classmethod
    def create(cls, config: ModelConfig, rng: RngStream) -> "Model":
        return cls(
            config=config,
            enc=EncoderParams.create(
                rng,
                config.t_h,
                config.width,
                config.n_hyperedges,
                config.n_edge_types,
                config.n_hyper_types,
            ),
            dec=DecoderParams.create(
                rng, config.width, config.tau_gap, config.n_edge_types, config.n_hyper_types
            ),
            evo=EvolverParams.create(
                rng, config.n_edge_types, config.n_hyper_types, config.hidden_width
            ),
        )

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        out.update(self.enc.parameters("enc"))
        out.update(self.dec.parameters("dec"))
        out.update(self.evo.parameters("evo"))
        return out

    def hypergraph_parameter_names(self) -> set[str]:
        out = self.enc.hypergraph_parameter_names("enc")
        out |= self.dec.hypergraph_parameter_names("dec")
        out |= self.evo.hypergraph_parameter_names("evo")
        return out

    def save(self, path, extra: dict | None = None) -> None:
        header = {"config": asdict(self.config)}
        if extra:
            header.update(extra)
        save_checkpoint(self.parameters(), path, extra=header)

    @classmethod
    def load(cls, path) -> tuple["Model", dict]:
        loaded, extra = load_checkpoint(path)
        if "config" not in extra:
            raise ValidationError(f"{path}: checkpoint missing model config")
        model = cls.create(ModelConfig(**extra["config"]), RngStream(seed=0))
        restore_parameters(model.parameters(), loaded)
        return model, extra


@dataclass
class WindowRecord:
    """Everything one window produced, kept on the graph for losses."""

    beta: int
    rel_raw: RelationDistributions
    rel: RelationDistributions
    inc: IncidenceState
    means: Tensor


@dataclass
class WindowRun:
    records: list[WindowRecord]
    means: Tensor  # (B, N, T_f, 2)
    plan: WindowPlan


def _null_graph_types(batch_shape, n: int, l_cg: int) -> tuple[Tensor, Tensor]:
    z = np.zeros((*batch_shape, n, n, l_cg))
    z[..., 0] = 1.0
    return Tensor(z), Tensor(np.zeros((*batch_shape, n, n, l_cg)))


def _time_slice(x: Tensor, sl: slice) -> Tensor:
    return x[:, :, sl, :]


def run_windows(
    model: Model,
    trajectories: np.ndarray,
    rng: RngStream | None,
    hard: bool = False,
    teacher_prob: float = 0.0,
    sample_feedback: bool = False,
    use_hypergraph_override: bool | None = None,
) -> WindowRun:
    """Slide the encode/evolve/decode loop over the future horizon.

    trajectories: (B, N, T, 2) with T = t_h for pure prediction or
    t_h + t_f when ground-truth futures exist (required for teacher
    forcing).  Windows that reach beyond observed steps consume the model's
    own fed-back predictions; with ``sample_feedback`` the feedback is a
    draw from the predictive Gaussian rather than its mean.
    """
    cfg = model.config
    trajectories = np.asarray(trajectories, dtype=np.float64)
    if trajectories.ndim != 4 or trajectories.shape[-1] != 2:
        raise ContractError(f"trajectories must be (B, N, T, 2), got {trajectories.shape}")
    b, n, t = trajectories.shape[:3]
    if t < cfg.t_h:
        raise ContractError(f"need at least t_h={cfg.t_h} observed steps, got {t}")
    if teacher_prob > 0 and t < cfg.t_h + cfg.t_f:
        raise ContractError("teacher forcing requires ground-truth futures")

    use_hg = cfg.use_hypergraph if use_hypergraph_override is None else use_hypergraph_override
    plan = make_window_plan(cfg.horizon)
    observed = Tensor(trajectories[:, :, : cfg.t_h, :])
    parts = [observed]
    mean_parts = []
    records = []
    static_rel = None
    static_inc = None
    state = zero_state(model.evo, (b,), n, cfg.n_hyperedges)

    for w in plan.windows:
        current = parts[0] if len(parts) == 1 else T.concat(parts, axis=2)
        enc_input = _time_slice(current, w.history_slice)
        v_self = embed_history(model.enc, enc_input)
        edges, nodes = pairwise_rounds(model.enc, v_self)

        need_relations = cfg.dynamic or w.beta == 0
        if need_relations:
            if use_hg:
                inc = infer_incidence(model.enc, nodes.v1_cg, cfg.temperature, rng, hard)
                hyper = hypergraph_rounds(model.enc, nodes.v1_cg, inc.i_hg)
                rel_raw = type_relations(
                    model.enc, edges.e2_cg, hyper.e2_hg, cfg.temperature, rng, hard
                )
            else:
                inc, z_hg_null, y_hg_null = null_relations(model.enc, (b,), n)
                y_cg = gumbel_perturb(model.enc.head_edge_type(edges.e2_cg), cfg.temperature, rng)
                z_cg = T.softmax(y_cg, axis=-1)
                if hard:
                    z_cg = T.straight_through_onehot(z_cg)
                rel_raw = RelationDistributions(z_cg=z_cg, z_hg=z_hg_null, y_cg=y_cg, y_hg=y_hg_null)
            if not cfg.use_graph:
                z_null, y_null = _null_graph_types((b,), n, cfg.n_edge_types)
                rel_raw = RelationDistributions(
                    z_cg=z_null, z_hg=rel_raw.z_hg, y_cg=y_null, y_hg=rel_raw.y_hg
                )
            if cfg.dynamic:
                rel, state = evolve_relations(model.evo, rel_raw, state, hard)
            else:
                rel = rel_raw
                static_rel, static_inc = rel_raw, inc
        else:
            rel_raw, rel, inc = static_rel, static_rel, static_inc

        start = enc_input[:, :, -1, :]
        roll = decode_window(
            model.dec, rel.z_cg, rel.z_hg, nodes.v1_cg, inc.i_hg, start, cfg.variance
        )
        means = roll.means if w.n_decode == cfg.tau_gap else roll.means[:, :, : w.n_decode, :]
        mean_parts.append(means)

        feedback = means
        if sample_feedback and rng is not None:
            noise = rng.normal(size=means.shape) * np.sqrt(cfg.variance)
            feedback = feedback + noise
        if teacher_prob > 0 and rng is not None:
            force = (rng.uniform(size=(b, 1, 1, 1)) < teacher_prob).astype(np.float64)
            truth = trajectories[:, :, w.decode_slice, :]
            feedback = feedback * (1.0 - force) + truth * force
        parts.append(feedback)
        records.append(WindowRecord(beta=w.beta, rel_raw=rel_raw, rel=rel, inc=inc, means=means))

    return WindowRun(records=records, means=T.concat(mean_parts, axis=2), plan=plan)


@dataclass
class PredictionBundle:
    """K sampled futures for one scene plus per-window relational readouts."""

    trajectories: np.ndarray  # (K, N, T_f, 2)
    windows: list[dict]
    t_h: int
    t_f: int
    tau_gap: int

    @property
    def k(self) -> int:
        return self.trajectories.shape[0]


def predict(model: Model, history: np.ndarray, k: int, rng: RngStream | None, hard: bool = True) -> PredictionBundle:
    """Draw K futures for one scene from its observed history (N, t_h, 2)."""
    if k < 1:
        raise ContractError(f"need k >= 1, got {k}")
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 3 or history.shape[1] != model.config.t_h:
        raise ContractError(
            f"history must be (N, t_h={model.config.t_h}, 2), got {history.shape}"
        )
    batch = np.repeat(history[None], k, axis=0)
    with T.no_grad():
        run = run_windows(model, batch, rng=rng, hard=hard, sample_feedback=True)
    windows = [
        {
            "beta": r.beta,
            "z_cg": r.rel.z_cg.data.copy(),
            "z_hg": r.rel.z_hg.data.copy(),
            "z_cg_raw": r.rel_raw.z_cg.data.copy(),
            "z_hg_raw": r.rel_raw.z_hg.data.copy(),
            "i_pim": r.inc.i_pim.data.copy(),
            "i_hg": r.inc.i_hg.data.copy(),
        }
        for r in run.records
    ]
    cfg = model.config
    return PredictionBundle(
        trajectories=run.means.data.copy(),
        windows=windows,
        t_h=cfg.t_h,
        t_f=cfg.t_f,
        tau_gap=cfg.tau_gap,
    )


def save_prediction(bundle: PredictionBundle, scene_id: str, path) -> None:
    """One scene's bundle as structured text for the metrics stage."""
    payload = {
        "scene_id": scene_id,
        "t_h": bundle.t_h,
        "t_f": bundle.t_f,
        "tau_gap": bundle.tau_gap,
        "trajectories": bundle.trajectories.tolist(),
        "windows": [
            {key: (val.tolist() if isinstance(val, np.ndarray) else val) for key, val in w.items()}
            for w in bundle.windows
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_prediction(path) -> tuple[str, PredictionBundle]:
    with open(path) as fh:
        payload = json.load(fh)
    windows = [
        {key: (val if key == "beta" else np.asarray(val)) for key, val in w.items()}
        for w in payload["windows"]
    ]
    bundle = PredictionBundle(
        trajectories=np.asarray(payload["trajectories"]),
        windows=windows,
        t_h=payload["t_h"],
        t_f=payload["t_f"],
        tau_gap=payload["tau_gap"],
    )
    return payload["scene_id"], bundle
