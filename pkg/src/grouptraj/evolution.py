"""Recurrent evolution of relation-type distributions across windows.

One GRU cell is shared by all edges and another by all hyperedges.  Each
window's perturbed type logits enter the cell together with the running
hidden state, and a readout produces a residual correction:

    new_logits = logits + readout(hidden')

The residual form makes zeroed evolution parameters an exact identity on the
logits, so a dynamic model whose recurrence has not learned anything yet
behaves exactly like the static model on its first window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import RelationDistributions
from .nn import GruCell, MlpBlock, gru_step
from .rng import RngStream
from .tensor import Tensor


@dataclass
class EvolverParams:
    """Shared-weight recurrence for edge and hyperedge type distributions."""

    gru_cg: GruCell
    readout_cg: MlpBlock
    gru_hg: GruCell
    readout_hg: MlpBlock

    @classmethod
    def create(cls, rng: RngStream, n_edge_types: int, n_hyper_types: int, hidden_width: int) -> "EvolverParams":
        return cls(
            gru_cg=GruCell.create(rng, n_edge_types, hidden_width),
            readout_cg=MlpBlock.create(rng, [hidden_width, hidden_width, n_edge_types]),
            gru_hg=GruCell.create(rng, n_hyper_types, hidden_width),
            readout_hg=MlpBlock.create(rng, [hidden_width, hidden_width, n_hyper_types]),
        )

    @property
    def hidden_width(self) -> int:
        return self.gru_cg.hidden_width

    def parameters(self, prefix: str = "evo") -> dict[str, Tensor]:
        out = {}
        out.update(self.gru_cg.parameters(f"{prefix}.gru_cg"))
        out.update(self.readout_cg.parameters(f"{prefix}.readout_cg"))
        out.update(self.gru_hg.parameters(f"{prefix}.gru_hg"))
        out.update(self.readout_hg.parameters(f"{prefix}.readout_hg"))
        return out

    def hypergraph_parameter_names(self, prefix: str = "evo") -> set[str]:
        out = set(self.gru_hg.parameters(f"{prefix}.gru_hg").keys())
        out.update(self.readout_hg.parameters(f"{prefix}.readout_hg").keys())
        return out


@dataclass
class EvolutionState:
    """Per-edge and per-hyperedge hidden states plus the window index."""

    h_cg: Tensor
    h_hg: Tensor
    beta: int


def zero_state(params: EvolverParams, batch_shape, n_agents: int, n_hyperedges: int) -> EvolutionState:
    d_h = params.hidden_width
    return EvolutionState(
        h_cg=Tensor(np.zeros((*batch_shape, n_agents, n_agents, d_h))),
        h_hg=Tensor(np.zeros((*batch_shape, n_hyperedges, d_h))),
        beta=0,
    )


def evolve_relations(
    params: EvolverParams,
    rel: RelationDistributions,
    state: EvolutionState,
    hard: bool = False,
) -> tuple[RelationDistributions, EvolutionState]:
    """Advance hidden states on the window's logits and re-normalize types.

    The returned distributions carry the corrected logits in ``y_cg`` /
    ``y_hg``; softmax of those is the evolved soft sample, straight-through
    one-hot when ``hard``.
    """
    h_cg = gru_step(params.gru_cg, rel.y_cg, state.h_cg)
    h_hg = gru_step(params.gru_hg, rel.y_hg, state.h_hg)
    logits_cg = rel.y_cg + params.readout_cg(h_cg)
    logits_hg = rel.y_hg + params.readout_hg(h_hg)
    z_cg = T.softmax(logits_cg, axis=-1)
    z_hg = T.softmax(logits_hg, axis=-1)
    if hard:
        z_cg = T.straight_through_onehot(z_cg)
        z_hg = T.straight_through_onehot(z_hg)
    evolved = RelationDistributions(z_cg=z_cg, z_hg=z_hg, y_cg=logits_cg, y_hg=logits_hg)
    return evolved, EvolutionState(h_cg=h_cg, h_hg=h_hg, beta=state.beta + 1)
