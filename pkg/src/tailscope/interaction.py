"""Multi-agent risk scores for a target agent within a scene.

Local scores (inverse TTC, longitudinal and lateral safe-distance risk) rate
the threat from the worst neighbor at each frame; global scores (multi-agent
conflict, agent density, neighborhood instability) rate the scene as a whole.
The neighbor set is re-evaluated every frame as the agents within
``scene.neighbor_radius`` of the target.

The safe-distance scores follow the Responsibility-Sensitive Safety minimum
separations: the longitudinal/lateral axes are the target's instantaneous
heading direction and its perpendicular, and the per-neighbor lateral axis is
oriented from the target toward the neighbor so that positive lateral
velocity means approaching.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigurationError, ValidationError
from .intrinsic import kinematic_dynamism
from .scene import Scene

#: Agent pairs closer than this (m) are skipped wherever a separation is a
#: denominator, instead of dividing by ~0.
EPS_DIST = 0.01

INTERACTIVE_FIELDS = ("r_ittc", "r_lon", "r_lat", "r_mac", "r_ad", "r_ni")


@dataclass(frozen=True)
class RssParams:
    """Reaction/acceleration bounds and risk-curve shapes for the safe-distance scores.

    The defaults follow common RSS practice; every value is configurable and
    must be strictly positive.
    """

    rho: float = 0.5          # target reaction time (s)
    rho_ped: float = 1.0      # pedestrian reaction time (s)
    a_max: float = 3.0        # max longitudinal acceleration (m/s^2)
    b_min: float = 4.0        # min reasonable braking (m/s^2)
    b_max: float = 8.0        # max braking (m/s^2)
    a_lat_max: float = 0.9    # max lateral acceleration (m/s^2)
    b_lat_min: float = 1.2    # min lateral deceleration (m/s^2)
    mu_lat: float = 0.5       # fixed lateral safety margin (m)
    alpha_lon: float = 1.0    # longitudinal risk-curve steepness
    beta_lon: float = 1.0     # longitudinal risk-curve scale
    alpha_lat: float = 1.0    # lateral risk-curve steepness
    beta_lat: float = 1.0     # lateral risk-curve scale

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ConfigurationError(f"RssParams.{f.name} must be > 0, got {value!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "RssParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown RssParams keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class InteractiveMetrics:
    """The six interactive scalars of one scene.

    r_ittc: worst-neighbor inverse time-to-collision, frame-averaged (1/s)
    r_lon: worst-neighbor longitudinal safe-distance risk, in [0, 1)
    r_lat: worst-neighbor lateral safe-distance risk, in [0, 1)
    r_mac: all-pairs inverse TTC, frame-averaged (1/s)
    r_ad: neighbor count over the neighborhood disc area (agents/m^2)
    r_ni: mean neighbor velocity volatility (m/s^2)
    """

    r_ittc: float
    r_lon: float
    r_lat: float
    r_mac: float
    r_ad: float
    r_ni: float
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        for name in INTERACTIVE_FIELDS:
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0.0):
                raise ValidationError(f"{name} must be finite and >= 0, got {value!r}")
        for name in ("r_lon", "r_lat"):
            if getattr(self, name) >= 1.0:
                raise ValidationError(f"{name} must be < 1, got {getattr(self, name)!r}")

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in INTERACTIVE_FIELDS}

    def as_vector(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in INTERACTIVE_FIELDS], dtype=float)


def _pair_ittc(p_i, v_i, p_j, v_j) -> float | None:
    """Clamped closing rate over squared separation; None if coincident."""
    dp = p_j - p_i
    dist = float(np.hypot(dp[0], dp[1]))
    if dist < EPS_DIST:
        return None
    closing = -float(np.dot(v_j - v_i, dp))
    if closing <= 0.0:
        return 0.0
    return closing / dist**2


def _frame_neighbors(scene: Scene, k: int) -> list[str]:
    target = scene.target
    p_i = target.positions[k]
    out = []
    for agent_id in scene.neighbor_ids():
        p_j = scene.agents[agent_id].positions[k]
        if float(np.hypot(p_j[0] - p_i[0], p_j[1] - p_i[1])) <= scene.neighbor_radius:
            out.append(agent_id)
    return out


def ittc_risk(scene: Scene) -> dict:
    """Worst-neighbor inverse time-to-collision, averaged over frames.

    Returns a dict with ``r_ittc``, the per-frame ``series`` and ``flags``.
    Frames with no neighbor in radius contribute 0; coincident pairs are
    skipped with a ``proximity_skip`` flag.
    """
    target = scene.target
    flags = set()
    series = np.zeros(scene.n_frames, dtype=float)
    for k in range(scene.n_frames):
        best = 0.0
        for agent_id in _frame_neighbors(scene, k):
            other = scene.agents[agent_id]
            value = _pair_ittc(
                target.positions[k], target.velocities[k], other.positions[k], other.velocities[k]
            )
            if value is None:
                flags.add("proximity_skip")
                continue
            best = max(best, value)
        series[k] = best
    return {"r_ittc": float(series.mean()), "series": series, "flags": tuple(sorted(flags))}


def min_longitudinal_separation(v_i_lon: float, v_j_lon: float, params: RssParams) -> float:
    """Minimum required longitudinal separation, clamped at 0.

    ``v_j_lon`` is the neighbor's longitudinal velocity and must already be
    zeroed by the caller for non-vehicle neighbors.
    """
    d = (
        v_i_lon * params.rho
        + 0.5 * params.a_max * params.rho**2
        + (v_i_lon + params.rho * params.a_max) ** 2 / (2.0 * params.b_min)
        - v_j_lon**2 / (2.0 * params.b_max)
    )
    return max(d, 0.0)


def min_lateral_separation(
    v_i_lat: float, v_j_lat: float, neighbor_kind: str, params: RssParams
) -> float:
    """Minimum required lateral separation including the fixed margin.

    Velocities are signed along the axis pointing from the target toward the
    neighbor. The neighbor's reaction time is ``rho_ped`` for pedestrians and
    ``rho`` otherwise; its braking allowance applies to vehicles only.
    """
    rho_eff = params.rho_ped if neighbor_kind == "pedestrian" else params.rho
    v_i_reacted = v_i_lat + params.a_lat_max * params.rho
    v_j_reacted = v_j_lat - params.a_lat_max * rho_eff
    term_i = (v_i_lat + v_i_reacted) / 2.0 * params.rho + v_i_reacted**2 / (
        2.0 * params.b_lat_min
    )
    v_j_braking = v_j_reacted if neighbor_kind == "vehicle" else 0.0
    term_j = (v_j_lat + v_j_reacted) / 2.0 * rho_eff - v_j_braking**2 / (2.0 * params.b_lat_min)
    return params.mu_lat + max(term_i - term_j, 0.0)


def _deficit_risk(required: float, actual: float, alpha: float, beta: float) -> float:
    """Map a safe-distance deficit to a risk value in [0, 1)."""
    if required <= 0.0:
        return 0.0
    deficit = max(required - actual, 0.0)
    return 1.0 - (1.0 + deficit / (beta * required)) ** (-alpha)


def rss_longitudinal(scene: Scene, params: RssParams | None = None) -> dict:
    """Worst-neighbor longitudinal safe-distance risk, averaged over frames."""
    params = params or RssParams()
    target = scene.target
    series = np.zeros(scene.n_frames, dtype=float)
    for k in range(scene.n_frames):
        heading = target.headings[k]
        u_lon = np.array([math.cos(heading), math.sin(heading)])
        v_i_lon = float(np.dot(target.velocities[k], u_lon))
        best = 0.0
        for agent_id in _frame_neighbors(scene, k):
            other = scene.agents[agent_id]
            v_j_lon = (
                float(np.dot(other.velocities[k], u_lon)) if other.kind == "vehicle" else 0.0
            )
            required = min_longitudinal_separation(v_i_lon, v_j_lon, params)
            gap = abs(float(np.dot(other.positions[k] - target.positions[k], u_lon)))
            best = max(best, _deficit_risk(required, gap, params.alpha_lon, params.beta_lon))
        series[k] = best
    return {"r_lon": float(series.mean()), "series": series, "flags": ()}


def rss_lateral(scene: Scene, params: RssParams | None = None) -> dict:
    """Worst-neighbor lateral safe-distance risk, averaged over frames."""
    params = params or RssParams()
    target = scene.target
    series = np.zeros(scene.n_frames, dtype=float)
    for k in range(scene.n_frames):
        heading = target.headings[k]
        u_lat = np.array([-math.sin(heading), math.cos(heading)])
        best = 0.0
        for agent_id in _frame_neighbors(scene, k):
            other = scene.agents[agent_id]
            lat_sep = float(np.dot(other.positions[k] - target.positions[k], u_lat))
            axis = u_lat if lat_sep >= 0 else -u_lat
            v_i_lat = float(np.dot(target.velocities[k], axis))
            v_j_lat = float(np.dot(other.velocities[k], axis))
            required = min_lateral_separation(v_i_lat, v_j_lat, other.kind, params)
            best = max(
                best, _deficit_risk(required, abs(lat_sep), params.alpha_lat, params.beta_lat)
            )
        series[k] = best
    return {"r_lat": float(series.mean()), "series": series, "flags": ()}


def global_scene_risk(scene: Scene, radius: float | None = None) -> dict:
    """Scene-level risk: all-pairs conflict, agent density, neighborhood instability.

    ``radius`` defaults to the scene's neighbor radius and bounds both the
    density disc and the instability neighbor set.
    """
    radius = scene.neighbor_radius if radius is None else radius
    if radius <= 0:
        raise ValidationError(f"radius must be positive, got {radius}")
    flags = set()
    ids = [scene.target_id] + scene.neighbor_ids()
    n = len(ids)
    target = scene.target

    mac_series = np.zeros(scene.n_frames, dtype=float)
    if n >= 2:
        n_pairs = n * (n - 1) / 2.0
        for k in range(scene.n_frames):
            total = 0.0
            for a in range(n):
                for b in range(a + 1, n):
                    ta, tb = scene.agents[ids[a]], scene.agents[ids[b]]
                    value = _pair_ittc(
                        ta.positions[k], ta.velocities[k], tb.positions[k], tb.velocities[k]
                    )
                    if value is None:
                        flags.add("proximity_skip")
                        continue
                    total += value
            mac_series[k] = total / n_pairs

    ad_series = np.zeros(scene.n_frames, dtype=float)
    ni_series = np.zeros(scene.n_frames, dtype=float)
    c_v_cache: dict[str, float] = {}
    disc_area = math.pi * radius**2
    for k in range(scene.n_frames):
        near = []
        p_i = target.positions[k]
        for agent_id in scene.neighbor_ids():
            p_j = scene.agents[agent_id].positions[k]
            if float(np.hypot(p_j[0] - p_i[0], p_j[1] - p_i[1])) <= radius:
                near.append(agent_id)
        ad_series[k] = len(near) / disc_area
        if near:
            for agent_id in near:
                if agent_id not in c_v_cache:
                    c_v_cache[agent_id] = kinematic_dynamism(scene.agents[agent_id])["c_v"]
            ni_series[k] = float(np.mean([c_v_cache[a] for a in near]))

    return {
        "r_mac": float(mac_series.mean()),
        "r_ad": float(ad_series.mean()),
        "r_ni": float(ni_series.mean()),
        "flags": tuple(sorted(flags)),
    }


def compute_interactive(
    scene: Scene, params: RssParams | None = None, radius: float | None = None
) -> InteractiveMetrics:
    """All six interactive scalars of one scene."""
    params = params or RssParams()
    ittc = ittc_risk(scene)
    lon = rss_longitudinal(scene, params)
    lat = rss_lateral(scene, params)
    gl = global_scene_risk(scene, radius)
    flags = sorted(set(ittc["flags"]) | set(lon["flags"]) | set(lat["flags"]) | set(gl["flags"]))
    return InteractiveMetrics(
        r_ittc=ittc["r_ittc"],
        r_lon=lon["r_lon"],
        r_lat=lat["r_lat"],
        r_mac=gl["r_mac"],
        r_ad=gl["r_ad"],
        r_ni=gl["r_ni"],
        flags=tuple(flags),
    )
