"""Group-aware relational reasoning over agent histories.

Two rounds of pairwise message passing produce per-agent and per-pair
attributes, a per-agent membership head proposes an incidence matrix tying
agents into hyperedges, hypergraph message passing summarizes each candidate
group, and categorical heads sample edge and hyperedge relation types through
a Gumbel-Softmax relaxation.  Type index 0 is the null type for both edges
and hyperedges: downstream aggregation drops its mass, so sampling type 0
blocks message passing through that relation.

All operations take a leading batch axis and are agent-permutation
equivariant (hyperedge slots are indexed by head channel, so only the agent
axis of the incidence matrix permutes).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError
from .nn import MlpBlock, gumbel_perturb
from .rng import RngStream
from .tensor import Tensor


@dataclass
class NodeAttributes:
    """Per-agent features: history embedding, social context, and their concat."""

    v_self: Tensor
    v_social: Tensor
    v1_cg: Tensor


@dataclass
class EdgeAttributes:
    """Per-pair features from both message-passing rounds; diagonal unused."""

    e1_cg: Tensor
    e2_cg: Tensor


@dataclass
class IncidenceState:
    """Hyperedge membership: probabilities and the (possibly relaxed) sample."""

    i_pim: Tensor
    i_hg: Tensor

    @property
    def n_hyperedges(self) -> int:
        return self.i_hg.shape[-2]


@dataclass
class HyperedgeAttributes:
    e1_hg: Tensor
    v1_hg: Tensor
    e2_hg: Tensor


@dataclass
class RelationDistributions:
    """Sampled relation types plus the perturbed logits that produced them.

    ``y_cg`` / ``y_hg`` are the temperature-scaled noisy logits whose softmax
    is the soft sample; the evolution module consumes them as its recurrent
    input so relation updates stay differentiable.
    """

    z_cg: Tensor
    z_hg: Tensor
    y_cg: Tensor
    y_hg: Tensor


@dataclass
class EncoderParams:
    """All learnable blocks of the relational encoder."""

    f_hist: MlpBlock
    f_edge1: MlpBlock
    f_node1: MlpBlock
    f_edge2: MlpBlock
    f_membership: MlpBlock
    f_hyper_edge1: MlpBlock
    f_hyper_node1: MlpBlock
    f_hyper_edge2: MlpBlock
    head_edge_type: MlpBlock
    head_hyper_type: MlpBlock
    n_hyperedges: int
    n_edge_types: int
    n_hyper_types: int

    @classmethod
    def create(
        cls,
        rng: RngStream,
        t_h: int,
        width: int,
        n_hyperedges: int,
        n_edge_types: int = 2,
        n_hyper_types: int = 2,
    ) -> "EncoderParams":
        if t_h < 2:
            raise ContractError(f"need t_h >= 2, got {t_h}")
        if min(width, n_hyperedges) < 1 or min(n_edge_types, n_hyper_types) < 2:
            raise ContractError("width and hyperedge count must be >= 1, type counts >= 2")
        d = width
        params = cls(
            f_hist=MlpBlock.create(rng, [2 * t_h, d, d]),
            f_edge1=MlpBlock.create(rng, [2 * d, d, d]),
            f_node1=MlpBlock.create(rng, [d, d, d]),
            f_edge2=MlpBlock.create(rng, [4 * d, d, d]),
            f_membership=MlpBlock.create(rng, [2 * d, d, 2 * n_hyperedges]),
            f_hyper_edge1=MlpBlock.create(rng, [2 * d, d, d]),
            f_hyper_node1=MlpBlock.create(rng, [d, d, d]),
            f_hyper_edge2=MlpBlock.create(rng, [d, d, d]),
            head_edge_type=MlpBlock.create(rng, [d, d, n_edge_types]),
            head_hyper_type=MlpBlock.create(rng, [d, d, n_hyper_types]),
            n_hyperedges=n_hyperedges,
            n_edge_types=n_edge_types,
            n_hyper_types=n_hyper_types,
        )
        # hyperedge types start exactly uniform: the type prior then exerts no
        # pressure at stage-two onset, which otherwise flattens the type head
        # by washing out the membership matrix it reads through
        params.head_hyper_type.weights[-1].data[...] = 0.0
        return params

    def parameters(self, prefix: str = "enc") -> dict[str, Tensor]:
        out = {}
        for name in (
            "f_hist",
            "f_edge1",
            "f_node1",
            "f_edge2",
            "f_membership",
            "f_hyper_edge1",
            "f_hyper_node1",
            "f_hyper_edge2",
            "head_edge_type",
            "head_hyper_type",
        ):
            out.update(getattr(self, name).parameters(f"{prefix}.{name}"))
        return out

    def hypergraph_parameter_names(self, prefix: str = "enc") -> set[str]:
        """Names of parameters used only by the hypergraph branch."""
        out = set()
        for name in ("f_membership", "f_hyper_edge1", "f_hyper_node1", "f_hyper_edge2", "head_hyper_type"):
            out.update(getattr(self, name).parameters(f"{prefix}.{name}").keys())
        return out


def _pair_concat(v: Tensor) -> Tensor:
    """(..., N, D) -> (..., N, N, 2D) rows [v_i, v_j] for every ordered pair."""
    n = v.shape[-2]
    vi = T.stack([v] * n, axis=-2)  # (..., N, N, D), index j broadcast of i
    vj = T.stack([v] * n, axis=-3)
    return T.concat([vi, vj], axis=-1)


def _offdiag_mask(n: int) -> np.ndarray:
    return (1.0 - np.eye(n))[..., None]


def embed_history(params: EncoderParams, window: Tensor) -> Tensor:
    """Flatten first-difference displacements plus the last absolute position.

    window: (..., N, T_h, 2) -> v_self: (..., N, D)
    """
    t_h = window.shape[-2]
    if t_h < 2:
        raise ContractError(f"need at least 2 history steps, got {t_h}")
    disp = window[..., 1:, :] - window[..., :-1, :]
    flat = disp.reshape(*window.shape[:-2], 2 * (t_h - 1))
    last = window[..., -1, :]
    return params.f_hist(T.concat([flat, last], axis=-1))


def pairwise_rounds(params: EncoderParams, v_self: Tensor) -> tuple[EdgeAttributes, NodeAttributes]:
    """Two rounds of pairwise passing; social context sums over j != i."""
    n = v_self.shape[-2]
    e1 = params.f_edge1(_pair_concat(v_self))
    v_social = params.f_node1((e1 * _offdiag_mask(n)).sum(axis=-2))
    v1 = T.concat([v_self, v_social], axis=-1)
    e2 = params.f_edge2(_pair_concat(v1))
    return EdgeAttributes(e1_cg=e1, e2_cg=e2), NodeAttributes(v_self=v_self, v_social=v_social, v1_cg=v1)


def infer_incidence(
    params: EncoderParams,
    v1_cg: Tensor,
    temperature: float,
    rng: RngStream | None,
    hard: bool,
) -> IncidenceState:
    """Per-agent membership head, sampled entrywise with binary Gumbel-Softmax.

    The head emits two logits (non-member, member) per hyperedge slot for
    every agent.  ``i_pim`` is the noiseless membership probability;
    ``i_hg`` is the sampled matrix, hard {0,1} via straight-through when
    ``hard`` else the relaxed member-class mass.
    """
    m = params.n_hyperedges
    logits = params.f_membership(v1_cg)  # (..., N, 2M)
    logits = logits.reshape(*logits.shape[:-1], m, 2).swapaxes(-3, -2)  # (..., M, N, 2)
    i_pim = T.softmax(logits, axis=-1)[..., 1]
    y = gumbel_perturb(logits, temperature, rng)
    soft = T.softmax(y, axis=-1)
    sample = T.straight_through_onehot(soft) if hard else soft
    return IncidenceState(i_pim=i_pim, i_hg=sample[..., 1])


def hypergraph_rounds(params: EncoderParams, v1_cg: Tensor, i_hg: Tensor) -> HyperedgeAttributes:
    """Membership-weighted sum passing: nodes -> hyperedges -> nodes -> hyperedges."""
    e1 = params.f_hyper_edge1(T.matmul(i_hg, v1_cg))
    v1 = params.f_hyper_node1(T.matmul(i_hg.swapaxes(-1, -2), e1))
    e2 = params.f_hyper_edge2(T.matmul(i_hg, v1))
    return HyperedgeAttributes(e1_hg=e1, v1_hg=v1, e2_hg=e2)


def type_relations(
    params: EncoderParams,
    e2_cg: Tensor,
    e2_hg: Tensor,
    temperature: float,
    rng: RngStream | None,
    hard: bool,
) -> RelationDistributions:
    """Sample relation types for every pair and hyperedge."""
    y_cg = gumbel_perturb(params.head_edge_type(e2_cg), temperature, rng)
    y_hg = gumbel_perturb(params.head_hyper_type(e2_hg), temperature, rng)
    z_cg = T.softmax(y_cg, axis=-1)
    z_hg = T.softmax(y_hg, axis=-1)
    if hard:
        z_cg = T.straight_through_onehot(z_cg)
        z_hg = T.straight_through_onehot(z_hg)
    return RelationDistributions(z_cg=z_cg, z_hg=z_hg, y_cg=y_cg, y_hg=y_hg)


def null_relations(params: EncoderParams, batch_shape, n: int) -> tuple[IncidenceState, Tensor, Tensor]:
    """Inactive hypergraph branch: zero incidence and all-null hyperedge types.

    Returns (incidence, one-hot-null z_hg, zero y_hg).  Used when the
    hypergraph pathway is disabled (ablations and the pairwise warm-up
    stage); shapes stay identical so the decoder needs no branching.
    """
    m, l_hg = params.n_hyperedges, params.n_hyper_types
    zeros_inc = Tensor(np.zeros((*batch_shape, m, n)))
    z_hg = np.zeros((*batch_shape, m, l_hg))
    z_hg[..., 0] = 1.0
    onehot_null = Tensor(z_hg)
    y_hg = Tensor(np.zeros((*batch_shape, m, l_hg)))
    inc = IncidenceState(i_pim=zeros_inc, i_hg=zeros_inc)
    return inc, onehot_null, y_hg


def encode(
    params: EncoderParams,
    window: Tensor,
    temperature: float,
    rng: RngStream | None,
    hard: bool = False,
    use_hypergraph: bool = True,
) -> tuple[NodeAttributes, IncidenceState, RelationDistributions]:
    """Full encoder pass over one history window.

    window: (..., N, T_h, 2).  With ``rng=None`` the Gumbel noise is frozen
    at zero and the pass is a pure function of window and parameters.
    """
    if not isinstance(window, Tensor):
        window = Tensor(np.asarray(window, dtype=np.float64))
    v_self = embed_history(params, window)
    edges, nodes = pairwise_rounds(params, v_self)
    if use_hypergraph:
        inc = infer_incidence(params, nodes.v1_cg, temperature, rng, hard)
        hyper = hypergraph_rounds(params, nodes.v1_cg, inc.i_hg)
        rel = type_relations(params, edges.e2_cg, hyper.e2_hg, temperature, rng, hard)
    else:
        batch_shape, n = window.shape[:-3], window.shape[-3]
        inc, z_hg_null, y_hg_null = null_relations(params, batch_shape, n)
        y_cg = gumbel_perturb(params.head_edge_type(edges.e2_cg), temperature, rng)
        z_cg = T.softmax(y_cg, axis=-1)
        if hard:
            z_cg = T.straight_through_onehot(z_cg)
        rel = RelationDistributions(z_cg=z_cg, z_hg=z_hg_null, y_cg=y_cg, y_hg=y_hg_null)
    return nodes, inc, rel
