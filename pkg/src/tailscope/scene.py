"""Agents, trajectories and scenes, plus CSV ingestion and backward-difference
kinematics.

Every type is immutable after construction and every function is pure, so
scenes can be fanned out across workers without coordination. Derivatives are
backward differences, ``x'(t) = (x(t) - x(t - dt)) / dt``, so each derived
series starts one frame later than its source; angle differences are wrapped
to (-pi, pi] before dividing by dt.
"""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError, ValidationError

AGENT_KINDS = ("vehicle", "pedestrian", "other")

CSV_COLUMNS = ("scene_id", "agent_id", "frame", "t", "x", "y", "vx", "vy", "heading", "kind")

#: Consecutive timestamp gaps may deviate from dt by at most this much (s).
DT_TOLERANCE = 1e-6

_TWO_PI = 2.0 * math.pi


def wrap_angle(x):
    """Wrap an angle or array of angles to (-pi, pi]."""
    w = np.mod(np.asarray(x, dtype=float) + np.pi, _TWO_PI)
    w = np.where(w == 0.0, _TWO_PI, w) - np.pi
    if np.ndim(x) == 0:
        return float(w)
    return w


def _id_key(agent_id: str):
    """Sort key ordering numeric ids numerically, everything else lexically."""
    try:
        return (0, int(agent_id), agent_id)
    except ValueError:
        return (1, 0, agent_id)


@dataclass(frozen=True)
class AgentState:
    """Kinematic state of one agent at a single timestamp."""

    t: float
    x: float
    y: float
    vx: float
    vy: float
    heading: float
    kind: str = "vehicle"

    def __post_init__(self):
        for name in ("t", "x", "y", "vx", "vy", "heading"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ValidationError(f"AgentState.{name} must be finite, got {value!r}")
            object.__setattr__(self, name, float(value))
        if not (-math.pi < self.heading <= math.pi):
            raise ValidationError(f"heading must lie in (-pi, pi], got {self.heading}")
        if self.kind not in AGENT_KINDS:
            raise ValidationError(f"unknown agent kind {self.kind!r}")


@dataclass(frozen=True)
class Trajectory:
    """Time-ordered states of one agent, sampled at a uniform interval dt."""

    agent_id: str
    states: tuple[AgentState, ...]
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        if len(self.states) < 2:
            raise ValidationError(
                f"trajectory {self.agent_id!r} needs at least 2 states, got {len(self.states)}"
            )
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValidationError(f"dt must be positive, got {self.dt}")
        kinds = {s.kind for s in self.states}
        if len(kinds) > 1:
            raise ValidationError(f"trajectory {self.agent_id!r} mixes agent kinds {sorted(kinds)}")
        prev = self.states[0].t
        for i, state in enumerate(self.states[1:], start=1):
            gap = state.t - prev
            if gap <= 0:
                raise ValidationError(
                    f"trajectory {self.agent_id!r}: timestamps must strictly increase at frame {i}"
                )
            if abs(gap - self.dt) > DT_TOLERANCE:
                raise ValidationError(
                    f"trajectory {self.agent_id!r}: gap {gap:.9g} s at frame {i} "
                    f"deviates from dt={self.dt:.9g} s"
                )
            prev = state.t

    def __len__(self) -> int:
        return len(self.states)

    @property
    def kind(self) -> str:
        return self.states[0].kind

    @cached_property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states], dtype=float)

    @cached_property
    def positions(self) -> np.ndarray:
        return np.array([(s.x, s.y) for s in self.states], dtype=float)

    @cached_property
    def velocities(self) -> np.ndarray:
        return np.array([(s.vx, s.vy) for s in self.states], dtype=float)

    @cached_property
    def headings(self) -> np.ndarray:
        return np.array([s.heading for s in self.states], dtype=float)


@dataclass(frozen=True)
class Scene:
    """All agent trajectories of one scene plus the designated target agent.

    ``neighbor_radius`` bounds the per-frame neighbor set used by the
    interaction metrics.
    """

    scene_id: str
    agents: dict[str, Trajectory]
    target_id: str
    neighbor_radius: float = 50.0

    def __post_init__(self):
        if not self.agents:
            raise ValidationError(f"scene {self.scene_id!r} has no agents")
        if self.target_id not in self.agents:
            raise ValidationError(
                f"scene {self.scene_id!r}: target {self.target_id!r} not among agents"
            )
        if not (self.neighbor_radius > 0 and math.isfinite(self.neighbor_radius)):
            raise ValidationError(f"neighbor_radius must be positive, got {self.neighbor_radius}")
        ref = self.agents[self.target_id]
        for agent_id, traj in self.agents.items():
            if traj.agent_id != agent_id:
                raise ValidationError(
                    f"scene {self.scene_id!r}: key {agent_id!r} holds trajectory "
                    f"{traj.agent_id!r}"
                )
            if abs(traj.dt - ref.dt) > DT_TOLERANCE:
                raise ValidationError(
                    f"scene {self.scene_id!r}: agent {agent_id!r} dt {traj.dt:.9g} "
                    f"differs from target dt {ref.dt:.9g}"
                )
            if (
                len(traj) != len(ref)
                or abs(traj.states[0].t - ref.states[0].t) > DT_TOLERANCE
                or abs(traj.states[-1].t - ref.states[-1].t) > DT_TOLERANCE
            ):
                raise ValidationError(
                    f"scene {self.scene_id!r}: agent {agent_id!r} does not cover the "
                    f"same time range as the target"
                )

    @property
    def dt(self) -> float:
        return self.agents[self.target_id].dt

    @property
    def n_frames(self) -> int:
        return len(self.agents[self.target_id])

    @property
    def target(self) -> Trajectory:
        return self.agents[self.target_id]

    def neighbor_ids(self) -> list[str]:
        """All non-target agent ids in deterministic order."""
        return sorted((a for a in self.agents if a != self.target_id), key=_id_key)


@dataclass(frozen=True)
class KinematicSeries:
    """Backward-difference derivatives of one trajectory.

    Arrays are aligned to the frames where the difference is defined:
    ``a[k]`` holds the acceleration at frame k+1, ``j[k]`` the jerk at frame
    k+2, and likewise for ``omega``/``alpha``/``phi_rate``. ``v``, ``speed``
    and ``phi`` cover every frame. With fewer than 3 states the second-order
    series are empty, which is declared behaviour rather than an error.
    """

    v: np.ndarray          # (T, 2) velocity as given
    speed: np.ndarray      # (T,)
    a: np.ndarray          # (T-1, 2)
    j: np.ndarray          # (T-2, 2)
    omega: np.ndarray      # (T-1,) heading rate
    alpha: np.ndarray      # (T-2,) heading-rate rate
    phi: np.ndarray        # (T,) movement direction arctan2(vy, vx)
    phi_rate: np.ndarray   # (T-1,)
    dt: float


def derive_kinematics(traj: Trajectory) -> KinematicSeries:
    """Derive acceleration, jerk and the angular-rate series of a trajectory.

    Velocities are trusted as given and never re-derived from positions.
    Heading and movement-direction differences are wrapped to (-pi, pi]
    before division by dt, so every rate sample lies in (-pi/dt, pi/dt].
    """
    v = traj.velocities
    dt = traj.dt
    a = np.diff(v, axis=0) / dt
    j = np.diff(a, axis=0) / dt
    omega = wrap_angle(np.diff(traj.headings)) / dt
    alpha = np.diff(omega) / dt
    phi = np.arctan2(v[:, 1], v[:, 0])
    phi_rate = wrap_angle(np.diff(phi)) / dt
    return KinematicSeries(
        v=v,
        speed=np.linalg.norm(v, axis=1),
        a=a,
        j=j,
        omega=omega,
        alpha=alpha,
        phi=phi,
        phi_rate=phi_rate,
        dt=dt,
    )


def _as_text_lines(source) -> Iterable[str]:
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8"))
    if isinstance(source, str):
        return io.StringIO(source)
    if isinstance(source, Path):
        return source.read_text(encoding="utf-8").splitlines(keepends=True)
    return source  # file-like


def _parse_float(raw: str, column: str, line: int) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise ParseError(f"column {column!r}: not a number: {raw!r}", line=line) from None
    if not math.isfinite(value):
        raise ParseError(f"column {column!r}: non-finite value {raw!r}", line=line)
    return value


def parse_scene_csv(source, neighbor_radius: float = 50.0) -> list[Scene]:
    """Parse a scene CSV stream into validated :class:`Scene` objects.

    Expected header: ``scene_id,agent_id,frame,t,x,y,vx,vy,heading,kind`` with
    an optional trailing ``target`` column carrying ``1`` on exactly one agent
    per scene. Without it the target is the lowest agent id. dt is inferred
    per scene from the modal gap between consecutive timestamps.

    ``source`` may be bytes, a str, a Path or a text file object. Scenes are
    returned sorted by scene id.
    """
    reader = csv.reader(_as_text_lines(source))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty input, expected a header row", line=1) from None
    header = [h.strip() for h in header]
    has_target_col = False
    if tuple(header) == CSV_COLUMNS + ("target",):
        has_target_col = True
    elif tuple(header) != CSV_COLUMNS:
        raise ParseError(
            f"bad header {header!r}, expected {','.join(CSV_COLUMNS)}[,target]", line=1
        )

    n_cols = len(CSV_COLUMNS) + (1 if has_target_col else 0)
    # rows[scene][agent] -> list of (frame, t, x, y, vx, vy, heading, kind, line)
    rows: dict[str, dict[str, list[tuple]]] = {}
    flagged: dict[str, set[str]] = {}
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != n_cols:
            raise ParseError(f"expected {n_cols} columns, got {len(row)}", line=line_no)
        scene_id, agent_id = row[0].strip(), row[1].strip()
        if not scene_id or not agent_id:
            raise ParseError("scene_id and agent_id must be non-empty", line=line_no)
        try:
            frame = int(row[2])
        except ValueError:
            raise ParseError(f"column 'frame': not an integer: {row[2]!r}", line=line_no) from None
        t = _parse_float(row[3], "t", line_no)
        x = _parse_float(row[4], "x", line_no)
        y = _parse_float(row[5], "y", line_no)
        vx = _parse_float(row[6], "vx", line_no)
        vy = _parse_float(row[7], "vy", line_no)
        heading = _parse_float(row[8], "heading", line_no)
        kind = row[9].strip()
        if kind not in AGENT_KINDS:
            raise ValidationError(
                f"line {line_no}: unknown kind {kind!r}, expected one of {'|'.join(AGENT_KINDS)}"
            )
        if has_target_col:
            flag = row[10].strip()
            if flag not in ("", "0", "1"):
                raise ParseError(f"column 'target': expected 0 or 1, got {flag!r}", line=line_no)
            if flag == "1":
                flagged.setdefault(scene_id, set()).add(agent_id)
        rows.setdefault(scene_id, {}).setdefault(agent_id, []).append(
            (frame, t, x, y, vx, vy, heading, kind, line_no)
        )

    scenes = []
    for scene_id in sorted(rows):
        agents_rows = rows[scene_id]
        gaps = []
        for agent_id, agent_rows in agents_rows.items():
            agent_rows.sort(key=lambda r: r[0])
            seen = set()
            for r in agent_rows:
                if r[0] in seen:
                    raise ValidationError(
                        f"scene {scene_id!r} agent {agent_id!r}: duplicate frame {r[0]}"
                    )
                seen.add(r[0])
            for prev, cur in zip(agent_rows, agent_rows[1:]):
                gaps.append(cur[1] - prev[1])
        if not gaps:
            raise ValidationError(f"scene {scene_id!r}: every agent has a single frame only")
        counts = Counter(round(g, 9) for g in gaps)
        top = max(counts.values())
        dt = min(g for g, c in counts.items() if c == top)
        for agent_id, agent_rows in agents_rows.items():
            for prev, cur in zip(agent_rows, agent_rows[1:]):
                if abs((cur[1] - prev[1]) - dt) > DT_TOLERANCE:
                    raise ValidationError(
                        f"scene {scene_id!r} agent {agent_id!r}: non-uniform time gap "
                        f"{cur[1] - prev[1]:.9g} s at frame {cur[0]} (expected dt={dt:.9g} s)"
                    )

        trajectories = {}
        for agent_id, agent_rows in agents_rows.items():
            states = []
            for r in agent_rows:
                try:
                    states.append(
                        AgentState(
                            t=r[1], x=r[2], y=r[3], vx=r[4], vy=r[5], heading=r[6], kind=r[7]
                        )
                    )
                except ValidationError as exc:
                    raise ValidationError(f"line {r[8]}: {exc}") from None
            trajectories[agent_id] = Trajectory(agent_id=agent_id, states=tuple(states), dt=dt)

        if has_target_col:
            marked = sorted(flagged.get(scene_id, ()))
            if len(marked) != 1:
                raise ValidationError(
                    f"scene {scene_id!r}: expected exactly one agent with target=1, "
                    f"got {marked or 'none'}"
                )
            target_id = marked[0]
        else:
            target_id = min(trajectories, key=_id_key)
        scenes.append(
            Scene(
                scene_id=scene_id,
                agents=trajectories,
                target_id=target_id,
                neighbor_radius=neighbor_radius,
            )
        )
    return scenes


def load_scenes(path, neighbor_radius: float = 50.0) -> list[Scene]:
    """Read scenes from a CSV file on disk."""
    return parse_scene_csv(Path(path), neighbor_radius=neighbor_radius)


def scenes_to_csv(scenes: Sequence[Scene]) -> str:
    """Serialize scenes to the CSV wire format, including the target column.

    Floats are written with ``repr`` so a parse/write round trip is exact and
    the output is byte-stable for identical inputs.
    """
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_COLUMNS + ("target",))
    for scene in sorted(scenes, key=lambda s: s.scene_id):
        for agent_id in sorted(scene.agents, key=_id_key):
            traj = scene.agents[agent_id]
            is_target = "1" if agent_id == scene.target_id else "0"
            for frame, s in enumerate(traj.states):
                writer.writerow(
                    (
                        scene.scene_id,
                        agent_id,
                        frame,
                        repr(s.t),
                        repr(s.x),
                        repr(s.y),
                        repr(s.vx),
                        repr(s.vy),
                        repr(s.heading),
                        s.kind,
                        is_target,
                    )
                )
    return out.getvalue()


def dump_scenes(scenes: Sequence[Scene], path) -> None:
    """Write scenes to a CSV file on disk."""
    Path(path).write_text(scenes_to_csv(scenes), encoding="utf-8")
