"""Training objective: reconstruction plus three relational regularizers.

Categorical terms clamp probabilities at PROB_EPS before any logarithm, so
one-hot rows are safe.  Each regularizer carries separate coefficients for
the edge and hyperedge distributions; gating a branch off is done by zeroing
its coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .tensor import Tensor

PROB_EPS = 1e-12


@dataclass(frozen=True)
class LossConfig:
    alpha_kl_cg: float = 1.0
    alpha_kl_hg: float = 1.0
    alpha_sm_cg: float = 0.1
    alpha_sm_hg: float = 0.1
    alpha_sp_cg: float = 0.01
    alpha_sp_hg: float = 0.01

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not (math.isfinite(value) and value >= 0):
                raise ContractError(f"{name} must be finite and >= 0, got {value}")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def entropy_rows(q) -> Tensor:
    """Shannon entropy summed over all rows of a (..., L) simplex stack."""
    q = _as_tensor(q)
    safe = T.clamp(q, PROB_EPS, None)
    return -(q * T.log(safe)).sum()


def kl_to_uniform(q) -> Tensor:
    """KL(row || uniform over L) summed over all rows."""
    q = _as_tensor(q)
    l = q.shape[-1]
    n_rows = q.size // l
    safe = T.clamp(q, PROB_EPS, None)
    return (q * T.log(safe)).sum() + n_rows * math.log(l)


def kl_categorical(q, p) -> Tensor:
    """KL(q || p) summed over rows; both clamped before the log."""
    q, p = _as_tensor(q), _as_tensor(p)
    if q.shape != p.shape:
        raise DimensionError(f"shape mismatch {q.shape} vs {p.shape}")
    safe_q = T.clamp(q, PROB_EPS, None)
    safe_p = T.clamp(p, PROB_EPS, None)
    return (q * (T.log(safe_q) - T.log(safe_p))).sum()


def loss_rec(truth, means) -> Tensor:
    """Sum of squared prediction errors over agents, steps, and coordinates."""
    truth, means = _as_tensor(truth), _as_tensor(means)
    if truth.shape != means.shape:
        raise DimensionError(f"truth shape {truth.shape} != means shape {means.shape}")
    diff = truth - means
    return (diff * diff).sum()


def loss_kl(z_cg, z_hg, cfg: LossConfig) -> Tensor:
    """Pull relation rows toward the uniform prior."""
    return kl_to_uniform(z_cg) * cfg.alpha_kl_cg + kl_to_uniform(z_hg) * cfg.alpha_kl_hg


def membership_rows(i_pim) -> Tensor:
    """Per-entry binary distributions [non-member, member] of an incidence.

    The hypergraph's relational posterior is the hyperedge type rows plus
    these membership entries; regularizers that act on hypergraph topology
    take both.
    """
    p = _as_tensor(i_pim)
    return T.stack([1.0 - p, p], axis=-1)


def loss_smooth(prev, nxt, cfg: LossConfig) -> Tensor:
    """Penalize relational change between two consecutive windows.

    ``prev`` and ``nxt`` are (z_cg, z_hg, i_pim) triples from windows beta
    and beta + 1; pass ``None`` for i_pim to regularize types only.
    """
    out = (
        kl_categorical(prev[0], nxt[0]) * cfg.alpha_sm_cg
        + kl_categorical(prev[1], nxt[1]) * cfg.alpha_sm_hg
    )
    if len(prev) > 2 and prev[2] is not None:
        out = out + kl_categorical(membership_rows(prev[2]), membership_rows(nxt[2])) * cfg.alpha_sm_hg
    return out


def loss_sparse(z_cg, z_hg, cfg: LossConfig, i_pim=None) -> Tensor:
    """Entropy penalty pushing relation rows toward confident assignments."""
    out = entropy_rows(z_cg) * cfg.alpha_sp_cg + entropy_rows(z_hg) * cfg.alpha_sp_hg
    if i_pim is not None:
        out = out + entropy_rows(membership_rows(i_pim)) * cfg.alpha_sp_hg
    return out


def loss_total(rec: Tensor, kl: Tensor, smooth: Tensor, sparse: Tensor) -> Tensor:
    return rec + kl + smooth + sparse
