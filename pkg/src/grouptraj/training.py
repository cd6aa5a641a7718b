"""Two-stage optimization: warm-up on the pairwise branch, then end-to-end.

Stage 1 disables the hypergraph branch in the forward pass and freezes its
parameters; stage 2 unfreezes everything and anneals teacher forcing from
fully forced to fully rolled out.  SHG has no pairwise branch to warm up,
so it trains in a single stage.  Scene splits hash the scene id (stable
across platforms), so the same corpus always splits the same way.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .data import SceneRecord, normalize_scene
from .errors import ContractError, TrainingDivergedError
from .losses import LossConfig, loss_kl, loss_rec, loss_smooth, loss_sparse
from .model import MODES, Model, ModelConfig, run_windows
from .rng import RngStream
from .tensor import Tensor

SPLIT_FRACTIONS = (0.70, 0.15, 0.15)


@dataclass(frozen=True)
class TrainConfig:
    warmup_epochs: int = 50
    total_epochs: int = 250
    batch_size: int = 8
    learning_rate: float = 1e-3
    clip_norm: float = 5.0
    seed: int = 0
    mode: str = "DCG+DHG+SM+SP"
    loss: LossConfig = LossConfig()
    model: ModelConfig = ModelConfig()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.total_epochs < 1 or self.batch_size < 1:
            raise ContractError("total_epochs and batch_size must be positive")
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ContractError(
                f"need 0 <= warmup_epochs < total_epochs, got "
                f"{self.warmup_epochs}/{self.total_epochs}"
            )
        if self.learning_rate <= 0 or self.clip_norm <= 0:
            raise ContractError("learning_rate and clip_norm must be positive")
        object.__setattr__(self, "model", replace(self.model, mode=self.mode))
        if self.model.use_smooth and self.loss.alpha_sm_cg + self.loss.alpha_sm_hg == 0:
            raise ContractError("smoothness mode requires a positive smoothness coefficient")
        if self.model.use_sparse and self.loss.alpha_sp_cg + self.loss.alpha_sp_hg == 0:
            raise ContractError("sparsity mode requires a positive sparsity coefficient")

    @property
    def effective_loss(self) -> LossConfig:
        """Loss coefficients with terms the mode does not use forced to zero."""
        cfg = self.loss
        if not self.model.use_smooth:
            cfg = replace(cfg, alpha_sm_cg=0.0, alpha_sm_hg=0.0)
        if not self.model.use_sparse:
            cfg = replace(cfg, alpha_sp_cg=0.0, alpha_sp_hg=0.0)
        return cfg

    @property
    def effective_warmup(self) -> int:
        return 0 if self.mode == "SHG" else self.warmup_epochs


def hash_fraction(scene_id: str) -> float:
    digest = hashlib.md5(scene_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") / 2**64


def split_scenes(scene_ids) -> dict[str, list[str]]:
    """Deterministic 70/15/15 split keyed on the scene id alone."""
    out = {"train": [], "val": [], "test": []}
    lo, mid = SPLIT_FRACTIONS[0], SPLIT_FRACTIONS[0] + SPLIT_FRACTIONS[1]
    for sid in scene_ids:
        f = hash_fraction(sid)
        out["train" if f < lo else "val" if f < mid else "test"].append(sid)
    return out


def clip_gradients(grads: dict[str, np.ndarray], clip_norm: float) -> tuple[dict, float]:
    """Scale the whole gradient dict so its global norm is at most clip_norm."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total <= clip_norm or total == 0.0:
        return grads, total
    scale = clip_norm / total
    return {name: g * scale for name, g in grads.items()}, total


class Adam:
    """Adaptive-moment estimation over a named parameter dict."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def apply(self, params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            params[name].data -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


@dataclass
class EpochStats:
    epoch: int
    stage: int
    p_tf: float
    l_rec: float
    l_kl: float
    l_sm: float
    l_sp: float
    total: float
    val_loss: float


@dataclass
class TrainResult:
    model: Model
    log: list[EpochStats]
    best_epoch: int
    best_val_loss: float
    split: dict[str, list[str]]


def write_training_log(log: list[EpochStats], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "stage", "p_tf", "l_rec", "l_kl", "l_sm", "l_sp", "total", "val_loss"])
        for row in log:
            writer.writerow(
                [row.epoch, row.stage, f"{row.p_tf:.6f}"]
                + [f"{v:.17g}" for v in (row.l_rec, row.l_kl, row.l_sm, row.l_sp, row.total, row.val_loss)]
            )


def teacher_prob(cfg: TrainConfig, epoch: int) -> float:
    """1 throughout warm-up, then linear from 1 to 0 across stage 2."""
    warm = cfg.effective_warmup
    if epoch < warm:
        return 1.0
    span = cfg.total_epochs - warm - 1
    if span <= 0:
        return 0.0
    return max(0.0, 1.0 - (epoch - warm) / span)


def prepare_scene(record: SceneRecord, t_h: int, t_f: int) -> np.ndarray:
    """Normalized (N, t_h + t_f, 2) training matrix for one scene."""
    need = t_h + t_f
    if record.trajectories.n_steps < need:
        raise ContractError(
            f"scene {record.scene_id}: need at least {need} steps, "
            f"got {record.trajectories.n_steps}"
        )
    normalized, _ = normalize_scene(record.trajectories, t_h=t_h)
    return normalized.positions[:, :need, :]


def _batches(arrays: list[np.ndarray], batch_size: int, order) -> list[np.ndarray]:
    """Group same-agent-count scenes into stacked batches following order."""
    buckets: dict[int, list[int]] = {}
    for idx in order:
        buckets.setdefault(arrays[idx].shape[0], []).append(idx)
    out = []
    for _, idxs in sorted(buckets.items()):
        for i in range(0, len(idxs), batch_size):
            out.append(np.stack([arrays[j] for j in idxs[i : i + batch_size]]))
    return out


INCLUDE_MEMBERSHIP = True
HARD_TRAINING = False


def _forward_loss(model, batch, lcfg, rng, p_tf, use_hg):
    run = run_windows(
        model,
        batch,
        rng=rng,
        hard=HARD_TRAINING,
        teacher_prob=p_tf,
        use_hypergraph_override=use_hg,
    )
    b = batch.shape[0]
    truth = batch[:, :, model.config.t_h :, :]
    rec = loss_rec(truth, run.means) * (1.0 / b)
    kl = Tensor(np.asarray(0.0))
    sp = Tensor(np.asarray(0.0))
    sm = Tensor(np.asarray(0.0))
    prev = None
    for r in run.records:
        kl = kl + loss_kl(r.rel.z_cg, r.rel.z_hg, lcfg) * (1.0 / b)
        sp = sp + loss_sparse(r.rel.z_cg, r.rel.z_hg, lcfg, i_pim=r.inc.i_pim if INCLUDE_MEMBERSHIP else None) * (1.0 / b)
        cur = (r.rel.z_cg, r.rel.z_hg, r.inc.i_pim if INCLUDE_MEMBERSHIP else None)
        if prev is not None:
            sm = sm + loss_smooth(prev, cur, lcfg) * (1.0 / b)
        prev = cur
    return rec, kl, sm, sp


def _check_finite(parts: dict[str, float], where: str) -> None:
    for name, value in parts.items():
        if not math.isfinite(value):
            raise TrainingDivergedError(f"{name} became non-finite during {where}")


def validation_loss(model: Model, arrays: list[np.ndarray], lcfg: LossConfig, batch_size: int) -> float:
    """Noise-free mean per-scene loss; deterministic for a fixed model."""
    if not arrays:
        return float("nan")
    total = 0.0
    for batch in _batches(arrays, batch_size, range(len(arrays))):
        rec, kl, sm, sp = _forward_loss(model, batch, lcfg, rng=None, p_tf=0.0, use_hg=None)
        total += float((rec + kl + sm + sp).data) * batch.shape[0]
    return total / len(arrays)


def train(records: list[SceneRecord], cfg: TrainConfig, out_path=None, on_epoch=None) -> TrainResult:
    """Optimize a fresh model on records, returning it at its best-validation
    epoch along with the per-epoch log.

    ``on_epoch(stats, model)`` runs after every epoch, for progress
    reporting."""
    if not records:
        raise ContractError("no training scenes supplied")
    mcfg = cfg.model
    by_id = {r.scene_id: r for r in records}
    split = split_scenes(sorted(by_id))
    # tiny corpora can hash entirely into one bucket; fall back so training
    # still has data and a validation signal
    if not split["train"]:
        split["train"] = sorted(by_id)
    if not split["val"]:
        split["val"] = split["train"]
    train_arrays = [prepare_scene(by_id[s], mcfg.t_h, mcfg.t_f) for s in split["train"]]
    val_arrays = [prepare_scene(by_id[s], mcfg.t_h, mcfg.t_f) for s in split["val"]]

    stream = RngStream(seed=cfg.seed)
    model = Model.create(mcfg, stream.derive("init"))
    lcfg = cfg.effective_loss
    optimizer = Adam(lr=cfg.learning_rate)
    all_params = model.parameters()
    hyper_names = model.hypergraph_parameter_names()

    log: list[EpochStats] = []
    best_epoch, best_val = -1, math.inf
    best_state: dict[str, np.ndarray] = {}

    for epoch in range(cfg.total_epochs):
        warmup = epoch < cfg.effective_warmup
        stage = 1 if warmup else 2
        p_tf = teacher_prob(cfg, epoch)
        use_hg = False if warmup else None
        trainable = {
            name: p for name, p in all_params.items() if not (warmup and name in hyper_names)
        }
        order = stream.derive("order", epoch).permutation(len(train_arrays))
        sums = {"L_Rec": 0.0, "L_KL": 0.0, "L_SM": 0.0, "L_SP": 0.0}
        for i, batch in enumerate(_batches(train_arrays, cfg.batch_size, order)):
            for p in all_params.values():
                p.zero_grad()
            rec, kl, sm, sp = _forward_loss(
                model, batch, lcfg, stream.derive("batch", epoch, i), p_tf, use_hg
            )
            parts = {
                "L_Rec": float(rec.data),
                "L_KL": float(kl.data),
                "L_SM": float(sm.data),
                "L_SP": float(sp.data),
            }
            _check_finite(parts, f"epoch {epoch} batch {i}")
            (rec + kl + sm + sp).backward()
            w = batch.shape[0] / len(train_arrays)
            for name in sums:
                sums[name] += parts[name] * w
            grads = {
                name: p.grad for name, p in trainable.items() if p.grad is not None
            }
            grads, _ = clip_gradients(grads, cfg.clip_norm)
            optimizer.apply(trainable, grads)

        val = validation_loss(model, val_arrays, lcfg, cfg.batch_size)
        _check_finite({"validation loss": val}, f"epoch {epoch}")
        log.append(
            EpochStats(
                epoch=epoch,
                stage=stage,
                p_tf=p_tf,
                l_rec=sums["L_Rec"],
                l_kl=sums["L_KL"],
                l_sm=sums["L_SM"],
                l_sp=sums["L_SP"],
                total=sum(sums.values()),
                val_loss=val,
            )
        )
        if val < best_val:
            best_epoch, best_val = epoch, val
            best_state = {name: p.data.copy() for name, p in all_params.items()}
        if on_epoch is not None:
            on_epoch(log[-1], model)

    for name, p in all_params.items():
        p.data[...] = best_state[name]
    if out_path is not None:
        model.save(
            out_path,
            extra={
                "epoch": best_epoch,
                "val_loss": best_val,
                "train_config": asdict(cfg),
            },
        )
    return TrainResult(
        model=model, log=log, best_epoch=best_epoch, best_val_loss=best_val, split=split
    )
