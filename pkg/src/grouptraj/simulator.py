"""Group-based social-force crowd simulator with ground-truth grouping.

Unit-mass agents integrate four accelerations under forward Euler: goal
attraction with first-order speed relaxation, exponential pairwise
repulsion, linear cohesion toward the group centroid beyond a comfort
radius, and exponential repulsion from the nearest obstacle point.  Speeds
are capped at twice the desired speed and positions are projected out of
obstacles, so the recorded scenes stay physically sane.

Grouping is dynamic: whenever two members of a group are far apart with an
obstacle between them, the group splits into its maximal cohesive
subgroups, cohesion re-targets the new subgroups, and the scene truth gains
a new segment.  Splits only ever refine the partition; subgroups never
re-merge within a scene.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SceneRecord, SceneTruth, TrajectorySet, TruthSegment, hyperedges_to_incidence
from .errors import ContractError
from .rng import RngStream

POSITION_EPS = 1e-3  # clearance restored when a position update enters an obstacle
GOAL_EPS = 1e-9


@dataclass(frozen=True)
class Disc:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ContractError(f"disc radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class Wall:
    a: tuple[float, float]
    b: tuple[float, float]

    def __post_init__(self):
        if np.allclose(self.a, self.b):
            raise ContractError("wall endpoints coincide")


def _nearest_on_wall(wall: Wall, pos: np.ndarray) -> np.ndarray:
    a = np.asarray(wall.a, dtype=np.float64)
    b = np.asarray(wall.b, dtype=np.float64)
    ab = b - a
    t = np.clip(((pos - a) @ ab) / (ab @ ab), 0.0, 1.0)
    return a + t[..., None] * ab


def surface_distance(obstacle, pos: np.ndarray) -> np.ndarray:
    """Signed distance from positions (..., 2) to the obstacle surface;
    negative means inside."""
    pos = np.asarray(pos, dtype=np.float64)
    if isinstance(obstacle, Disc):
        return np.linalg.norm(pos - obstacle.center, axis=-1) - obstacle.radius
    return np.linalg.norm(pos - _nearest_on_wall(obstacle, pos), axis=-1)


def away_direction(obstacle, pos: np.ndarray) -> np.ndarray:
    """Unit vector from the nearest obstacle point toward each position."""
    pos = np.asarray(pos, dtype=np.float64)
    if isinstance(obstacle, Disc):
        delta = pos - obstacle.center
    else:
        delta = pos - _nearest_on_wall(obstacle, pos)
    norm = np.linalg.norm(delta, axis=-1, keepdims=True)
    return np.where(norm > GOAL_EPS, delta / np.maximum(norm, GOAL_EPS), 0.0)


def _segment_point_distance(p: np.ndarray, q: np.ndarray, point) -> float:
    pq = q - p
    denom = float(pq @ pq)
    if denom < GOAL_EPS:
        return float(np.linalg.norm(p - point))
    t = float(np.clip(((np.asarray(point) - p) @ pq) / denom, 0.0, 1.0))
    return float(np.linalg.norm(p + t * pq - point))


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def segment_crosses(obstacle, p: np.ndarray, q: np.ndarray) -> bool:
    """Whether the open segment p-q passes through the obstacle."""
    if isinstance(obstacle, Disc):
        return _segment_point_distance(p, q, obstacle.center) < obstacle.radius
    a = np.asarray(obstacle.a, dtype=np.float64)
    b = np.asarray(obstacle.b, dtype=np.float64)
    d1, d2 = _orient(a, b, p), _orient(a, b, q)
    d3, d4 = _orient(p, q, a), _orient(p, q, b)
    return d1 * d2 < 0 and d3 * d4 < 0


@dataclass(frozen=True)
class SimConfig:
    start_positions: np.ndarray  # (N, 2)
    goals: np.ndarray  # (N, 2)
    groups: tuple[tuple[int, ...], ...]
    obstacles: tuple = ()
    desired_speed: float = 1.2
    relaxation: float = 0.5
    repulsion_a: float = 2.0
    repulsion_b: float = 0.5
    cohesion_gain: float = 0.5
    comfort_radius: float = 1.0
    agent_radius: float = 0.3
    split_distance: float = 4.0
    dt: float = 0.1
    n_steps: int = 76
    record_every: int = 4
    noise_scale: float = 0.0
    seed: int = 0

    def __post_init__(self):
        start = np.asarray(self.start_positions, dtype=np.float64)
        goals = np.asarray(self.goals, dtype=np.float64)
        if start.ndim != 2 or start.shape[1] != 2 or goals.shape != start.shape:
            raise ContractError(
                f"start/goal shapes must match (N, 2), got {start.shape} and {goals.shape}"
            )
        object.__setattr__(self, "start_positions", start)
        object.__setattr__(self, "goals", goals)
        members = sorted(i for g in self.groups for i in g)
        if members != list(range(start.shape[0])):
            raise ContractError("groups must partition the agent indices exactly once")
        if self.dt <= 0 or self.relaxation <= 0 or self.desired_speed <= 0:
            raise ContractError("dt, relaxation, and desired_speed must be positive")
        for name in ("repulsion_a", "repulsion_b", "cohesion_gain", "noise_scale"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be nonnegative")
        if self.n_steps < 1 or self.record_every < 1:
            raise ContractError("n_steps and record_every must be positive")
        for obstacle in self.obstacles:
            inside = surface_distance(obstacle, start) <= 0.0
            if inside.any():
                raise ContractError(
                    f"agent {int(np.argmax(inside))} starts inside an obstacle"
                )

    @property
    def n_agents(self) -> int:
        return self.start_positions.shape[0]

    @property
    def n_recorded(self) -> int:
        return self.n_steps // self.record_every + 1

    @property
    def recorded_dt(self) -> float:
        return self.dt * self.record_every


def _accelerations(cfg: SimConfig, pos: np.ndarray, vel: np.ndarray, partition) -> np.ndarray:
    to_goal = cfg.goals - pos
    dist = np.linalg.norm(to_goal, axis=-1, keepdims=True)
    unit = np.where(dist > GOAL_EPS, to_goal / np.maximum(dist, GOAL_EPS), 0.0)
    acc = (cfg.desired_speed * unit - vel) / cfg.relaxation

    diff = pos[:, None, :] - pos[None, :, :]
    d = np.linalg.norm(diff, axis=-1)
    np.fill_diagonal(d, np.inf)
    mag = cfg.repulsion_a * np.exp((2.0 * cfg.agent_radius - d) / cfg.repulsion_b)
    acc += ((mag / d)[..., None] * diff).sum(axis=1)

    if cfg.cohesion_gain > 0:
        for part in partition:
            idx = list(part)
            delta = pos[idx].mean(axis=0) - pos[idx]
            far = np.linalg.norm(delta, axis=-1) > cfg.comfort_radius
            acc[idx] += cfg.cohesion_gain * delta * far[:, None]

    for obstacle in cfg.obstacles:
        d = surface_distance(obstacle, pos)
        mag = cfg.repulsion_a * np.exp((cfg.agent_radius - d) / cfg.repulsion_b)
        acc += mag[:, None] * away_direction(obstacle, pos)
    return acc


def _project_outside(cfg: SimConfig, pos: np.ndarray) -> np.ndarray:
    for obstacle in cfg.obstacles:
        d = surface_distance(obstacle, pos)
        stuck = d < POSITION_EPS
        if stuck.any():
            push = (POSITION_EPS - d[stuck])[:, None] * away_direction(obstacle, pos[stuck])
            pos[stuck] += push
    return pos


def _cohesive_components(cfg: SimConfig, part, pos: np.ndarray) -> list[tuple[int, ...]]:
    """Maximal subgroups whose members are still mutually reachable without
    a long obstacle-crossing gap."""
    members = list(part)
    adj = {i: set() for i in members}
    for a_idx, i in enumerate(members):
        for j in members[a_idx + 1 :]:
            gap = float(np.linalg.norm(pos[i] - pos[j]))
            split = gap > cfg.split_distance and any(
                segment_crosses(o, pos[i], pos[j]) for o in cfg.obstacles
            )
            if not split:
                adj[i].add(j)
                adj[j].add(i)
    out, seen = [], set()
    for i in members:
        if i in seen:
            continue
        stack, comp = [i], []
        while stack:
            k = stack.pop()
            if k in seen:
                continue
            seen.add(k)
            comp.append(k)
            stack.extend(adj[k] - seen)
        out.append(tuple(sorted(comp)))
    return out


def _refine(cfg: SimConfig, partition, pos: np.ndarray):
    new = []
    for part in partition:
        new.extend(_cohesive_components(cfg, part, pos))
    return sorted(new, key=min)


def simulate(cfg: SimConfig, scene_id: str = "scene_0") -> SceneRecord:
    """Integrate the scene and return trajectories plus truth segments."""
    rng = RngStream(seed=cfg.seed)
    pos = cfg.start_positions.copy()
    vel = np.zeros_like(pos)
    partition = sorted((tuple(sorted(g)) for g in cfg.groups), key=min)
    recorded = [pos.copy()]
    segments = []
    seg_start, seg_partition = 1, partition
    max_speed = 2.0 * cfg.desired_speed

    for step in range(cfg.n_steps):
        acc = _accelerations(cfg, pos, vel, partition)
        if cfg.noise_scale > 0:
            acc += cfg.noise_scale * rng.normal(size=pos.shape)
        vel = vel + cfg.dt * acc
        speed = np.linalg.norm(vel, axis=-1, keepdims=True)
        vel = np.where(speed > max_speed, vel * (max_speed / np.maximum(speed, GOAL_EPS)), vel)
        pos = _project_outside(cfg, pos + cfg.dt * vel)
        if (step + 1) % cfg.record_every == 0:
            recorded.append(pos.copy())
            r = len(recorded)  # 1-based recorded step just appended
            refined = _refine(cfg, partition, pos)
            if refined != partition:
                segments.append((seg_start, r - 1, seg_partition))
                seg_start, seg_partition = r, refined
                partition = refined

    segments.append((seg_start, len(recorded), seg_partition))
    truth = SceneTruth(
        segments=tuple(
            TruthSegment(
                start_step=start,
                stop_step=stop,
                incidence=hyperedges_to_incidence(parts, range(cfg.n_agents)),
            )
            for start, stop, parts in segments
        )
    )
    return SceneRecord(
        scene_id=scene_id,
        trajectories=TrajectorySet(
            positions=np.stack(recorded, axis=1), dt=cfg.recorded_dt, unit="meters"
        ),
        truth=truth,
    )


def split_scenario(n_agents: int, rng: RngStream) -> SimConfig:
    """One cohesive group walking into a disc that splits it in two."""
    if n_agents < 4:
        raise ContractError(f"split scenario needs at least 4 agents, got {n_agents}")
    n_up = n_agents // 2
    # rows start beyond the split distance but with no disc between them yet,
    # so the group stays whole until both streams advance past the disc's
    # leading edge; from then on every cross pair is far apart with the disc
    # in between, and the partition refines at one early recorded step
    ys = np.concatenate(
        [np.linspace(2.4, 3.1, n_up), np.linspace(-3.1, -2.4, n_agents - n_up)]
    )
    for _ in range(16):
        starts = np.stack(
            [np.full(n_agents, -4.0) + 0.15 * rng.normal(size=n_agents), ys + 0.1 * rng.normal(size=n_agents)],
            axis=1,
        )
        goals = np.stack(
            [np.full(n_agents, 9.0), np.sign(ys) * 3.4 + 0.2 * rng.normal(size=n_agents)],
            axis=1,
        )
        cfg = SimConfig(
            start_positions=starts,
            goals=goals,
            groups=(tuple(range(n_agents)),),
            obstacles=(Disc(center=(0.0, 0.0), radius=3.0),),
            n_steps=76,
            record_every=4,
            # the big comfort radius keeps cohesion from dragging the flanks
            # back toward the centre line before the split registers
            comfort_radius=3.5,
            seed=int(rng.integers(0, 2**31 - 1)),
        )
        if _splits_cleanly(cfg):
            return cfg
    raise ContractError("split scenario failed to produce a clean two-way split")


def _splits_cleanly(cfg: SimConfig) -> bool:
    record = simulate(cfg)
    segments = record.truth.segments
    if len(segments) != 2 or segments[0].stop_step > 12:
        return False
    final_y = record.trajectories.positions[:, -1, 1]
    sides = [np.sign(final_y[row > 0.5]) for row in segments[1].incidence]
    return all(len(np.unique(s)) == 1 for s in sides) and sides[0][0] != sides[1][0]
