"""Parameterized building blocks: MLPs, GRU cells, Gumbel-Softmax sampling,
and checkpoint serialization.

All blocks operate on tensors whose trailing axis is the feature axis; any
leading axes are treated as batch dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import json
import struct

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, ValidationError
from .rng import RngStream
from .tensor import Tensor

ACTIVATIONS = ("relu", "tanh", "none")

CHECKPOINT_MAGIC = b"GTCK"
CHECKPOINT_VERSION = 1


def glorot_uniform(rng: RngStream, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return (rng.uniform(shape) * 2.0 - 1.0) * bound


def _apply_activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return T.relu(x)
    if kind == "tanh":
        return T.tanh(x)
    if kind == "none":
        return x
    raise ContractError(f"unknown activation {kind!r}")


@dataclass
class MlpBlock:
    """A plain fully-connected stack with per-layer activations."""

    widths: list[int]
    weights: list[Tensor]
    biases: list[Tensor]
    activations: list[str]

    @classmethod
    def create(
        cls,
        rng: RngStream,
        widths: list[int],
        hidden_activation: str = "relu",
        out_activation: str = "none",
    ) -> "MlpBlock":
        if len(widths) < 2 or any(w <= 0 for w in widths):
            raise ContractError(f"invalid layer widths {widths}")
        n_layers = len(widths) - 1
        weights, biases, acts = [], [], []
        for k in range(n_layers):
            fan_in, fan_out = widths[k], widths[k + 1]
            weights.append(Tensor(glorot_uniform(rng, fan_in, fan_out, (fan_in, fan_out)), requires_grad=True))
            biases.append(Tensor(np.zeros(fan_out), requires_grad=True))
            acts.append(hidden_activation if k < n_layers - 1 else out_activation)
        for a in acts:
            if a not in ACTIVATIONS:
                raise ContractError(f"unknown activation {a!r}")
        return cls(widths=list(widths), weights=weights, biases=biases, activations=acts)

    @property
    def in_width(self) -> int:
        return self.widths[0]

    @property
    def out_width(self) -> int:
        return self.widths[-1]

    def __call__(self, x: Tensor) -> Tensor:
        return mlp_forward(self, x)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.w{k}"] = w
            out[f"{prefix}.b{k}"] = b
        return out


def mlp_forward(block: MlpBlock, x: Tensor) -> Tensor:
    for k, (w, b, act) in enumerate(zip(block.weights, block.biases, block.activations)):
        if x.shape[-1] != w.shape[0]:
            raise DimensionError(
                f"layer {k}: input width {x.shape[-1]} != expected {w.shape[0]}"
            )
        x = _apply_activation(T.matmul(x, w) + b, act)
    return x


@dataclass
class GruCell:
    """Single gated recurrent cell; gate matrices act on [input, hidden]."""

    in_width: int
    hidden_width: int
    w_update: Tensor
    b_update: Tensor
    w_reset: Tensor
    b_reset: Tensor
    w_cand: Tensor
    b_cand: Tensor

    @classmethod
    def create(cls, rng: RngStream, in_width: int, hidden_width: int) -> "GruCell":
        if in_width <= 0 or hidden_width <= 0:
            raise ContractError("GRU widths must be positive")
        both = in_width + hidden_width

        def w():
            return Tensor(glorot_uniform(rng, both, hidden_width, (both, hidden_width)), requires_grad=True)

        def b():
            return Tensor(np.zeros(hidden_width), requires_grad=True)

        return cls(in_width, hidden_width, w(), b(), w(), b(), w(), b())

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        return gru_step(self, x, h)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.w_update": self.w_update,
            f"{prefix}.b_update": self.b_update,
            f"{prefix}.w_reset": self.w_reset,
            f"{prefix}.b_reset": self.b_reset,
            f"{prefix}.w_cand": self.w_cand,
            f"{prefix}.b_cand": self.b_cand,
        }


def gru_step(cell: GruCell, x: Tensor, h: Tensor) -> Tensor:
    """One recurrence: h' = u*h + (1-u)*tanh(W_c [x, r*h])."""
    if x.shape[-1] != cell.in_width or h.shape[-1] != cell.hidden_width:
        raise DimensionError(
            f"gru_step widths ({x.shape[-1]}, {h.shape[-1]}) != "
            f"cell ({cell.in_width}, {cell.hidden_width})"
        )
    xh = T.concat([x, h], axis=-1)
    u = T.sigmoid(T.matmul(xh, cell.w_update) + cell.b_update)
    r = T.sigmoid(T.matmul(xh, cell.w_reset) + cell.b_reset)
    cand = T.tanh(T.matmul(T.concat([x, r * h], axis=-1), cell.w_cand) + cell.b_cand)
    return u * h + (1.0 - u) * cand


# -- Gumbel-Softmax ----------------------------------------------------------


def gumbel_perturb(logits: Tensor, temperature: float, rng: RngStream | None) -> Tensor:
    """(logits + g) / temperature with g ~ Gumbel(0,1); g = 0 when rng is None.

    The perturbed pre-softmax values are what downstream recurrent relation
    updates consume, so this is exposed separately from the softmax.
    """
    if temperature <= 0:
        raise ContractError(f"temperature must be positive, got {temperature}")
    if logits.shape[-1] < 2:
        raise ContractError("need at least 2 categories")
    if rng is not None:
        logits = logits + rng.gumbel(logits.shape)
    return logits * (1.0 / temperature)


def gumbel_softmax(
    logits: Tensor,
    temperature: float,
    rng: RngStream | None,
    hard: bool = False,
) -> Tensor:
    """Concrete-relaxation sample over the trailing axis.

    Soft samples are exact softmax((logits+g)/temperature); hard samples are
    one-hot with straight-through gradients equal to the soft sample's.
    """
    y = T.softmax(gumbel_perturb(logits, temperature, rng), axis=-1)
    if hard:
        y = T.straight_through_onehot(y, axis=-1)
    return y


# -- checkpoints ------------------------------------------------------------


def save_checkpoint(params: dict[str, Tensor], path, extra: dict | None = None) -> None:
    """Binary container: magic, u32 JSON-header length, JSON header, then the
    little-endian float64 payloads in header order."""
    names = sorted(params)
    header = {
        "version": CHECKPOINT_VERSION,
        "extra": extra or {},
        "params": [{"path": n, "shape": list(params[n].data.shape)} for n in names],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(params[n].data, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Returns (path -> array, extra-metadata)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValidationError(f"not a checkpoint file: bad magic {magic!r}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValidationError(f"unsupported checkpoint version {header.get('version')!r}")
        out = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            out[entry["path"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)
    return out, header.get("extra", {})


def restore_parameters(params: dict[str, Tensor], loaded: dict[str, np.ndarray]) -> None:
    """Copy loaded arrays into an existing parameter dict, validating shapes."""
    missing = set(params) - set(loaded)
    unexpected = set(loaded) - set(params)
    if missing or unexpected:
        raise ValidationError(
            f"checkpoint mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}"
        )
    for name, p in params.items():
        if loaded[name].shape != p.data.shape:
            raise ValidationError(
                f"{name}: checkpoint shape {loaded[name].shape} != model {p.data.shape}"
            )
        p.data = loaded[name].copy()
