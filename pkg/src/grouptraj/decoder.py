"""Relation-conditioned trajectory prediction for one window.

Each relation type above the null type owns a small network; sampled type
mass mixes their outputs, so a relation that lands on type 0 contributes
exactly nothing.  The mixed edge and hyperedge features feed a node update,
and an output head emits all per-window displacement means in one shot,
accumulated from the start position into Gaussian means with a constant
isotropic variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .nn import MlpBlock
from .rng import RngStream
from .tensor import Tensor


@dataclass
class AggregatedAttributes:
    e_cg: Tensor
    e_hg: Tensor
    v_out: Tensor


@dataclass
class GaussianRollout:
    """Predicted means (..., N, T_p, 2) with shared isotropic variance."""

    means: Tensor
    variance: float
    start: np.ndarray


@dataclass
class DecoderParams:
    """Per-type mixing networks plus node update and output heads."""

    edge_type_fns: list[MlpBlock]
    hyper_type_fns: list[MlpBlock]
    f_node: MlpBlock
    f_out: MlpBlock
    t_p: int

    @classmethod
    def create(
        cls,
        rng: RngStream,
        width: int,
        t_p: int,
        n_edge_types: int = 2,
        n_hyper_types: int = 2,
    ) -> "DecoderParams":
        if t_p < 1:
            raise ContractError(f"need t_p >= 1, got {t_p}")
        if min(n_edge_types, n_hyper_types) < 2:
            raise ContractError("need at least a null type and one live type")
        d = width
        edge_type_fns = [MlpBlock.create(rng, [4 * d, d, d]) for _ in range(n_edge_types - 1)]
        hyper_type_fns = [MlpBlock.create(rng, [2 * d, d, d]) for _ in range(n_hyper_types - 1)]
        # the hyperedge mixers start as exact no-ops: stage two unfreezes them
        # into an already-trained predictor, and a random branch would wreck it
        # before it can learn (the optimizer then silences the branch for good)
        for fn in hyper_type_fns:
            fn.weights[-1].data[...] = 0.0
        return cls(
            edge_type_fns=edge_type_fns,
            hyper_type_fns=hyper_type_fns,
            f_node=MlpBlock.create(rng, [2 * d, d, d]),
            f_out=MlpBlock.create(rng, [d, d, 2 * t_p]),
            t_p=t_p,
        )

    def parameters(self, prefix: str = "dec") -> dict[str, Tensor]:
        out = {}
        for k, block in enumerate(self.edge_type_fns):
            out.update(block.parameters(f"{prefix}.edge_type{k + 1}"))
        for k, block in enumerate(self.hyper_type_fns):
            out.update(block.parameters(f"{prefix}.hyper_type{k + 1}"))
        out.update(self.f_node.parameters(f"{prefix}.f_node"))
        out.update(self.f_out.parameters(f"{prefix}.f_out"))
        return out

    def hypergraph_parameter_names(self, prefix: str = "dec") -> set[str]:
        out = set()
        for k, block in enumerate(self.hyper_type_fns):
            out.update(block.parameters(f"{prefix}.hyper_type{k + 1}").keys())
        return out


def aggregate(
    params: DecoderParams,
    z_cg: Tensor,
    z_hg: Tensor,
    v1_cg: Tensor,
    i_hg: Tensor,
) -> AggregatedAttributes:
    """Type-weighted mixing of relation features.

    z_cg: (..., N, N, L_CG), z_hg: (..., M, L_HG), v1_cg: (..., N, 2D),
    i_hg: (..., M, N).  Type 0 (null) is excluded from both mixtures, and
    the social sum skips the diagonal pair (i, i).
    """
    n = v1_cg.shape[-2]
    if z_cg.shape[-3] != n or z_cg.shape[-2] != n:
        raise DimensionError(f"z_cg shape {z_cg.shape} inconsistent with {n} agents")

    vi = T.stack([v1_cg] * n, axis=-2)
    vj = T.stack([v1_cg] * n, axis=-3)
    pair = T.concat([vi, vj], axis=-1)  # (..., N, N, 4D)
    e_cg = None
    for k, fn in enumerate(params.edge_type_fns):
        weighted = fn(pair) * z_cg[..., k + 1 : k + 2]
        e_cg = weighted if e_cg is None else e_cg + weighted

    group_sum = T.matmul(i_hg, v1_cg)  # (..., M, 2D)
    e_hg = None
    for k, fn in enumerate(params.hyper_type_fns):
        weighted = fn(group_sum) * z_hg[..., k + 1 : k + 2]
        e_hg = weighted if e_hg is None else e_hg + weighted

    mask = (1.0 - np.eye(n))[..., None]
    edge_part = (e_cg * mask).sum(axis=-2)  # (..., N, D)
    hyper_part = T.matmul(i_hg.swapaxes(-1, -2), e_hg)  # (..., N, D)
    v_out = params.f_node(T.concat([edge_part, hyper_part], axis=-1))
    return AggregatedAttributes(e_cg=e_cg, e_hg=e_hg, v_out=v_out)


def rollout(params: DecoderParams, v_out: Tensor, start, variance: float) -> GaussianRollout:
    """Emit T_p displacement means and accumulate them from the start position.

    v_out: (..., N, D), start: (..., N, 2) -> means (..., N, T_p, 2).
    ``start`` may be a graph tensor so gradients reach earlier windows when
    predictions are chained.
    """
    if variance <= 0:
        raise ContractError(f"variance must be positive, got {variance}")
    if not isinstance(start, Tensor):
        start = Tensor(np.asarray(start, dtype=np.float64))
    disp = params.f_out(v_out)
    disp = disp.reshape(*disp.shape[:-1], params.t_p, 2)
    means = T.cumsum(disp, axis=-2) + start.reshape(*start.shape[:-1], 1, 2)
    return GaussianRollout(means=means, variance=float(variance), start=start.data)


def log_likelihood(truth, roll: GaussianRollout) -> Tensor:
    """Sum of isotropic 2-D Gaussian log densities of truth under the rollout."""
    if roll.variance <= 0:
        raise ContractError(f"variance must be positive, got {roll.variance}")
    truth = truth if isinstance(truth, Tensor) else Tensor(np.asarray(truth, dtype=np.float64))
    if truth.shape != roll.means.shape:
        raise DimensionError(f"truth shape {truth.shape} != means shape {roll.means.shape}")
    diff = truth - roll.means
    sq = (diff * diff).sum()
    n_points = int(np.prod(truth.shape[:-1]))
    const = -n_points * math.log(2.0 * math.pi * roll.variance)
    return sq * (-0.5 / roll.variance) + const


def decode_window(
    params: DecoderParams,
    z_cg: Tensor,
    z_hg: Tensor,
    v1_cg: Tensor,
    i_hg: Tensor,
    start: np.ndarray,
    variance: float,
) -> GaussianRollout:
    """Aggregate then roll out; the one-call decoder surface used per window."""
    agg = aggregate(params, z_cg, z_hg, v1_cg, i_hg)
    return rollout(params, agg.v_out, start, variance)
