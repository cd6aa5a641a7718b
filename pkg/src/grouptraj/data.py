"""Trajectory containers, sliding-window bookkeeping, and scene serialization.

Scenes hold fixed-cast trajectories (every agent present for the full
duration).  A window plan slices a history/future pair into overlapping
re-inference windows so relations can be refreshed every ``tau_gap`` steps
while each window decodes exactly ``t_p`` future steps.  Step indices in the
public containers are 1-based and inclusive, matching the convention that
step 1 is the first observed frame.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ParseError, ValidationError

UNITS = ("meters", "pixels")

# Scenes whose history spread falls below this are treated as degenerate and
# normalized with unit scale.
DEGENERATE_SPREAD = 1e-9


@dataclass(frozen=True)
class TrajectorySet:
    """Positions for ``n_agents`` agents over ``n_steps`` frames, (N, T, 2)."""

    positions: np.ndarray
    dt: float
    unit: str = "meters"

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 3 or pos.shape[2] != 2:
            raise ContractError(f"positions must be (N, T, 2), got {pos.shape}")
        if pos.shape[0] < 1 or pos.shape[1] < 2:
            raise ContractError(f"need N >= 1 and T >= 2, got {pos.shape[:2]}")
        if not np.isfinite(pos).all():
            raise ContractError("positions must be finite")
        if self.dt <= 0:
            raise ContractError(f"dt must be positive, got {self.dt}")
        if self.unit not in UNITS:
            raise ContractError(f"unit must be one of {UNITS}, got {self.unit!r}")
        pos = pos.copy()
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def n_agents(self) -> int:
        return self.positions.shape[0]

    @property
    def n_steps(self) -> int:
        return self.positions.shape[1]


@dataclass(frozen=True)
class HorizonSpec:
    """History/future horizon lengths and the re-inference gap.

    ``t_p`` is the number of steps decoded per window and always equals
    ``tau_gap``: each window predicts exactly up to the point where relations
    are re-inferred.
    """

    t_h: int
    t_f: int
    tau_gap: int

    def __post_init__(self):
        if self.t_h < 1:
            raise ContractError(f"t_h must be >= 1, got {self.t_h}")
        if self.t_f < 1:
            raise ContractError(f"t_f must be >= 1, got {self.t_f}")
        if not 1 <= self.tau_gap <= self.t_f:
            raise ContractError(f"need 1 <= tau_gap <= t_f, got tau_gap={self.tau_gap}, t_f={self.t_f}")

    @property
    def t_p(self) -> int:
        return self.tau_gap

    @property
    def total_steps(self) -> int:
        return self.t_h + self.t_f


@dataclass(frozen=True)
class Window:
    """One re-inference window; all step bounds are 1-based inclusive."""

    beta: int
    encode_start: int
    encode_stop: int
    decode_start: int
    decode_stop: int

    @property
    def history_slice(self) -> slice:
        """0-based slice of the encoder input steps."""
        return slice(self.encode_start - 1, self.encode_stop)

    @property
    def decode_slice(self) -> slice:
        """0-based slice of the steps this window predicts."""
        return slice(self.decode_start - 1, self.decode_stop)

    @property
    def n_decode(self) -> int:
        return self.decode_stop - self.decode_start + 1


@dataclass(frozen=True)
class WindowPlan:
    spec: HorizonSpec
    windows: tuple[Window, ...]


def make_window_plan(spec: HorizonSpec) -> WindowPlan:
    """Tile the future horizon with ceil(t_f / tau_gap) windows.

    Window beta encodes steps [1 + beta*tau, t_h + beta*tau] and decodes the
    following tau steps; the last decode range is clipped to the end of the
    future horizon.
    """
    tau = spec.tau_gap
    count = math.ceil(spec.t_f / tau)
    windows = []
    for beta in range(count):
        enc_lo = 1 + beta * tau
        enc_hi = spec.t_h + beta * tau
        dec_lo = enc_hi + 1
        dec_hi = min(enc_hi + tau, spec.total_steps)
        windows.append(Window(beta, enc_lo, enc_hi, dec_lo, dec_hi))
    return WindowPlan(spec=spec, windows=tuple(windows))


@dataclass(frozen=True)
class NormalizationRecord:
    """Affine map applied to a scene: normalized = (raw - translation) / scale."""

    translation: np.ndarray
    scale: float

    def apply(self, positions: np.ndarray) -> np.ndarray:
        return (np.asarray(positions, dtype=np.float64) - self.translation) / self.scale

    def invert(self, positions: np.ndarray) -> np.ndarray:
        return np.asarray(positions, dtype=np.float64) * self.scale + self.translation


def normalize_scene(ts: TrajectorySet, t_h: int | None = None) -> tuple[TrajectorySet, NormalizationRecord]:
    """Center on the mean history position and rescale by the RMS spread.

    Only the first ``t_h`` steps (default: all steps) define the frame, so
    the future stays unseen.  Degenerate scenes where every history position
    coincides keep unit scale.
    """
    if t_h is None:
        t_h = ts.n_steps
    if not 1 <= t_h <= ts.n_steps:
        raise ContractError(f"t_h out of range: {t_h} for {ts.n_steps} steps")
    hist = ts.positions[:, :t_h, :]
    translation = hist.reshape(-1, 2).mean(axis=0)
    spread = float(np.sqrt(((hist - translation) ** 2).sum(axis=-1).mean()))
    scale = spread if spread > DEGENERATE_SPREAD else 1.0
    record = NormalizationRecord(translation=translation, scale=scale)
    out = TrajectorySet(positions=record.apply(ts.positions), dt=ts.dt, unit=ts.unit)
    return out, record


@dataclass(frozen=True)
class TruthSegment:
    """Ground-truth grouping over a step range; bounds 1-based inclusive."""

    start_step: int
    stop_step: int
    incidence: np.ndarray

    def __post_init__(self):
        inc = np.asarray(self.incidence, dtype=np.float64)
        if inc.ndim != 2:
            raise ContractError(f"incidence must be 2-D, got shape {inc.shape}")
        if not np.isin(inc, (0.0, 1.0)).all():
            raise ContractError("incidence entries must be 0 or 1")
        if self.start_step > self.stop_step:
            raise ContractError(f"empty segment [{self.start_step}, {self.stop_step}]")
        inc = inc.copy()
        inc.setflags(write=False)
        object.__setattr__(self, "incidence", inc)


@dataclass(frozen=True)
class SceneTruth:
    segments: tuple[TruthSegment, ...]

    def segment_at(self, step: int) -> TruthSegment:
        for seg in self.segments:
            if seg.start_step <= step <= seg.stop_step:
                return seg
        raise ContractError(f"no truth segment covers step {step}")


@dataclass(frozen=True)
class SceneRecord:
    scene_id: str
    trajectories: TrajectorySet
    agent_ids: tuple[int, ...] = ()
    frame_indices: tuple[int, ...] = ()
    truth: SceneTruth | None = None

    def __post_init__(self):
        if not self.agent_ids:
            object.__setattr__(self, "agent_ids", tuple(range(self.trajectories.n_agents)))
        if not self.frame_indices:
            object.__setattr__(self, "frame_indices", tuple(range(self.trajectories.n_steps)))
        if len(self.agent_ids) != self.trajectories.n_agents:
            raise ContractError("agent_ids length mismatch")
        if len(self.frame_indices) != self.trajectories.n_steps:
            raise ContractError("frame_indices length mismatch")
        if self.truth is not None:
            t = self.trajectories.n_steps
            covered = []
            for seg in self.truth.segments:
                if seg.incidence.shape[1] != self.trajectories.n_agents:
                    raise ValidationError(
                        f"scene {self.scene_id}: truth incidence has {seg.incidence.shape[1]} "
                        f"columns for {self.trajectories.n_agents} agents"
                    )
                covered.extend(range(seg.start_step, seg.stop_step + 1))
            if sorted(covered) != list(range(1, t + 1)):
                raise ValidationError(f"scene {self.scene_id}: truth segments do not partition [1, {t}]")


TRAJECTORY_HEADER = ["scene_id", "frame_index", "agent_id", "x", "y"]


def save_scenes(scenes, path) -> None:
    """Write scenes as delimited text, one row per (scene, frame, agent).

    Floats use repr-style formatting so a save/load round-trip is exact.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_HEADER)
        for scene in scenes:
            pos = scene.trajectories.positions
            for t_idx, frame in enumerate(scene.frame_indices):
                for a_idx, agent in enumerate(scene.agent_ids):
                    x, y = pos[a_idx, t_idx]
                    writer.writerow([scene.scene_id, frame, agent, f"{x:.17g}", f"{y:.17g}"])


def load_scenes(path, dt: float = 0.4, unit: str = "meters") -> list[SceneRecord]:
    """Parse the delimited trajectory format back into scene records.

    Rows may arrive in any order; they are canonicalized by
    (scene_id, frame_index, agent_id).  Every frame of a scene must list the
    same agent set.  ``dt`` and ``unit`` are not stored in the file and are
    supplied by the caller.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{path}: empty file")
        if [h.strip() for h in header] != TRAJECTORY_HEADER:
            raise ParseError(f"{path}: line 1: expected header {','.join(TRAJECTORY_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ParseError(f"{path}: line {lineno}: expected 5 fields, got {len(row)}")
            try:
                rows.append((row[0], int(row[1]), int(row[2]), float(row[3]), float(row[4])))
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise ParseError(f"{path}: no data rows")

    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    scenes = []
    by_scene: dict[str, list] = {}
    order = []
    for row in rows:
        if row[0] not in by_scene:
            by_scene[row[0]] = []
            order.append(row[0])
        by_scene[row[0]].append(row)

    for scene_id in order:
        srows = by_scene[scene_id]
        frames = sorted({r[1] for r in srows})
        agents = sorted({r[2] for r in srows})
        index = {(f, a): None for f in frames for a in agents}
        for _, f, a, x, y in srows:
            if index[(f, a)] is not None:
                raise ValidationError(f"scene {scene_id}: duplicate row for frame {f}, agent {a}")
            index[(f, a)] = (x, y)
        missing = [(f, a) for (f, a), v in index.items() if v is None]
        if missing:
            f, a = missing[0]
            raise ValidationError(
                f"scene {scene_id}: agent {a} missing at frame {f}; full-duration presence required"
            )
        pos = np.empty((len(agents), len(frames), 2))
        for ti, f in enumerate(frames):
            for ai, a in enumerate(agents):
                pos[ai, ti] = index[(f, a)]
        scenes.append(
            SceneRecord(
                scene_id=scene_id,
                trajectories=TrajectorySet(positions=pos, dt=dt, unit=unit),
                agent_ids=tuple(agents),
                frame_indices=tuple(frames),
            )
        )
    return scenes


def hyperedges_to_incidence(hyperedges, agent_ids) -> np.ndarray:
    """Agent-id lists -> (M, N) binary incidence in agent_ids order."""
    lookup = {agent: i for i, agent in enumerate(agent_ids)}
    inc = np.zeros((len(hyperedges), len(agent_ids)))
    for m, edge in enumerate(hyperedges):
        for agent in edge:
            if agent not in lookup:
                raise ValidationError(f"hyperedge references unknown agent {agent}")
            inc[m, lookup[agent]] = 1.0
    return inc


def incidence_to_hyperedges(incidence, agent_ids) -> list[list[int]]:
    """Inverse of hyperedges_to_incidence; drops all-zero rows."""
    agent_ids = list(agent_ids)
    edges = []
    for row in np.asarray(incidence):
        members = [agent_ids[i] for i in np.flatnonzero(row > 0.5)]
        if members:
            edges.append(members)
    return edges


def save_truth(scenes, path) -> None:
    """Write ground-truth groupings for scenes that carry them."""
    payload = {}
    for scene in scenes:
        if scene.truth is None:
            continue
        payload[scene.scene_id] = [
            {
                "start_step": seg.start_step,
                "stop_step": seg.stop_step,
                "hyperedges": incidence_to_hyperedges(seg.incidence, scene.agent_ids),
            }
            for seg in scene.truth.segments
        ]
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def load_truth(path) -> dict:
    """Read the grouping file; returns scene_id -> segment dicts (raw ids)."""
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(payload, dict):
        raise ValidationError(f"{path}: expected an object keyed by scene id")
    return payload


def attach_truth(scenes, truth_payload) -> list[SceneRecord]:
    """Return scenes with truth segments resolved against their agent ids."""
    out = []
    for scene in scenes:
        entry = truth_payload.get(scene.scene_id)
        if entry is None:
            out.append(scene)
            continue
        segments = tuple(
            TruthSegment(
                start_step=seg["start_step"],
                stop_step=seg["stop_step"],
                incidence=hyperedges_to_incidence(seg["hyperedges"], scene.agent_ids),
            )
            for seg in entry
        )
        out.append(
            SceneRecord(
                scene_id=scene.scene_id,
                trajectories=scene.trajectories,
                agent_ids=scene.agent_ids,
                frame_indices=scene.frame_indices,
                truth=SceneTruth(segments=segments),
            )
        )
    return out


def stack_scenes(scenes) -> np.ndarray:
    """Stack same-shape scenes into a (B, N, T, 2) batch."""
    shapes = {s.trajectories.positions.shape for s in scenes}
    if len(shapes) != 1:
        raise ContractError(f"scenes disagree on (N, T): {sorted(shapes)}")
    return np.stack([s.trajectories.positions for s in scenes])
