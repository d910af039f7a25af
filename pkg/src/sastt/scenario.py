"""Declarative world model: agents, obstacles, gains and timing.

A scenario is a plain mapping (usually loaded from YAML) that is parsed into
frozen dataclasses. Parsing rejects structurally broken documents; the
assumptions that make the tube guarantees hold are checked separately by
:func:`validate_scenario`, which never raises.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

DEFAULT_NU = 10.0
DEFAULT_SIF_DECAY = 0.5
DEFAULT_DT = 1e-3

PLANT_ORDERS = {"single_integrator": 1, "double_integrator": 2, "nonlinear_test": 2}
DISTURBANCE_KINDS = ("none", "sinusoid", "clipped_noise")


class ScenarioError(ValueError):
    """Raised when a scenario document does not match the schema."""


# --------------------------------------------------------------------------
# obstacle primitives
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class StaticMotion:
    center: np.ndarray

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(self.center, t.shape + self.center.shape).copy()


@dataclass(frozen=True)
class LinearMotion:
    start: np.ndarray
    velocity: np.ndarray

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.start + t[..., None] * self.velocity


@dataclass(frozen=True)
class CircularMotion:
    """Circle of ``radius`` around ``center`` in the coordinate plane ``plane``."""

    center: np.ndarray
    radius: float
    angular_rate: float
    phase: float = 0.0
    plane: tuple[int, int] = (0, 1)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.broadcast_to(self.center, t.shape + self.center.shape).copy()
        ang = self.angular_rate * t + self.phase
        i, j = self.plane
        out[..., i] += self.radius * np.cos(ang)
        out[..., j] += self.radius * np.sin(ang)
        return out


@dataclass(frozen=True)
class WaypointMotion:
    """Piecewise-linear path through ``points`` at ``times``; held at the ends."""

    times: np.ndarray
    points: np.ndarray

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        cols = [np.interp(t, self.times, self.points[:, i]) for i in range(self.points.shape[1])]
        return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class RadiusProfile:
    """Constant radius (single value) or piecewise-linear in time."""

    times: np.ndarray
    values: np.ndarray

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if len(self.values) == 1:
            return np.full(t.shape, float(self.values[0]))
        return np.interp(t, self.times, self.values)


@dataclass(frozen=True)
class ObstacleSpec:
    id: str
    motion: Any
    radius_profile: RadiusProfile

    def center(self, t):
        return self.motion(t)

    def radius(self, t):
        return self.radius_profile(t)


# --------------------------------------------------------------------------
# agents
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DisturbanceSpec:
    kind: str = "none"
    bound: float = 0.0
    frequency: float = 1.0
    phase: float = 0.0
    seed: int = 0
    hold: float = 0.01


@dataclass(frozen=True)
class PlantBinding:
    model: str
    n: int
    disturbance: DisturbanceSpec = field(default_factory=DisturbanceSpec)
    gain: float = 1.0
    g_lower_bound: float | None = None

    @property
    def order(self) -> int:
        return PLANT_ORDERS[self.model]


@dataclass(frozen=True)
class FunnelParams:
    """Per-stage performance bounds; arrays have shape (N-1, n), row 0 is stage 2."""

    p: np.ndarray
    q: np.ndarray
    mu: np.ndarray

    def bound(self, z: int, t):
        p, q, mu = self.p[..., z - 2, :], self.q[..., z - 2, :], self.mu[..., z - 2, :]
        return (p - q) * np.exp(-mu * t) + q


@dataclass(frozen=True)
class AgentSpec:
    id: str
    social_index: float
    start_point: np.ndarray
    start_radius: float
    target_point: np.ndarray
    target_radius: float
    completion_time: float
    rho_min: float
    rho_max: float
    goal_gain: float
    obstacle_gains: np.ndarray  # shape (n_obstacles, 2): columns h2, h3
    agent_gains: np.ndarray  # shape (n_agents, 2): columns h2_hat, h3_hat; own row unused
    sif_decay: float
    plant: PlantBinding
    funnels: FunnelParams | None
    controller_gains: np.ndarray  # kappa_1..kappa_N
    initial_output: np.ndarray | None = None


@dataclass(frozen=True)
class Scenario:
    n: int
    agents: tuple[AgentSpec, ...]
    obstacles: tuple[ObstacleSpec, ...]
    nu: float = DEFAULT_NU
    horizon: float = 10.0
    name: str = ""
    sim: Mapping[str, Any] = field(default_factory=dict)

    def agent_index(self, agent_id: str) -> int:
        for k, a in enumerate(self.agents):
            if a.id == agent_id:
                return k
        raise KeyError(agent_id)

    def obstacle_states(self, t):
        """Centers (n_o, n) and radii (n_o,) of every obstacle at time ``t``."""
        if not self.obstacles:
            return np.zeros((0, self.n)), np.zeros(0)
        centers = np.stack([o.center(t) for o in self.obstacles])
        radii = np.array([float(o.radius(t)) for o in self.obstacles])
        return centers, radii


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------

def _fail(path: str, msg: str):
    raise ScenarioError(f"{path}: {msg}")


def _real(doc: Mapping, key: str, path: str, default=None, positive=False, nonneg=False):
    if key not in doc or doc[key] is None:
        if default is None:
            _fail(f"{path}.{key}", "missing required field")
        return float(default)
    try:
        val = float(doc[key])
    except (TypeError, ValueError):
        _fail(f"{path}.{key}", f"expected a real number, got {doc[key]!r}")
    if not math.isfinite(val):
        _fail(f"{path}.{key}", "must be finite")
    if positive and val <= 0:
        _fail(f"{path}.{key}", f"{key} must be positive")
    if nonneg and val < 0:
        _fail(f"{path}.{key}", f"{key} must be nonnegative")
    return val


def _vector(value, n: int, path: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        _fail(path, f"expected a list of reals, got {value!r}")
    if arr.ndim == 0:
        _fail(path, f"expected a list of reals, got {value!r}")
    if arr.shape != (n,):
        _fail(path, f"dimension mismatch: expected {n} components, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        _fail(path, "components must be finite")
    return arr


def _per_stage(value, rows: int, n: int, path: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full((rows, n), float(arr))
    if arr.ndim == 1 and arr.shape[0] == rows and rows != n:
        return np.repeat(arr[:, None], n, axis=1)
    if arr.ndim == 1 and arr.shape[0] == n:
        return np.tile(arr, (rows, 1))
    if arr.shape == (rows, n):
        return arr
    _fail(path, f"expected a scalar, {rows} stage values or a {rows}x{n} table")


def _parse_motion(doc: Mapping, n: int, path: str):
    kind = doc.get("kind", "static")
    if kind == "static":
        return StaticMotion(_vector(doc.get("center"), n, f"{path}.center"))
    if kind == "linear":
        return LinearMotion(_vector(doc.get("start"), n, f"{path}.start"),
                            _vector(doc.get("velocity"), n, f"{path}.velocity"))
    if kind == "circular":
        plane = tuple(int(i) for i in doc.get("plane", (0, 1)))
        if len(plane) != 2 or max(plane) >= n or plane[0] == plane[1]:
            _fail(f"{path}.plane", "needs two distinct coordinate indices")
        return CircularMotion(_vector(doc.get("center"), n, f"{path}.center"),
                              _real(doc, "radius", path, nonneg=True),
                              _real(doc, "angular_rate", path, default=0.0),
                              _real(doc, "phase", path, default=0.0),
                              plane)
    if kind == "waypoints":
        times = np.asarray(doc.get("times", ()), dtype=float)
        pts = np.asarray(doc.get("points", ()), dtype=float)
        if times.ndim != 1 or len(times) < 1 or pts.shape != (len(times), n):
            _fail(f"{path}", "waypoints need matching times[] and points[] of dimension n")
        if np.any(np.diff(times) <= 0):
            _fail(f"{path}.times", "must be strictly increasing")
        return WaypointMotion(times, pts)
    _fail(f"{path}.kind", f"unknown motion kind {kind!r}")


def _parse_radius(value, path: str) -> RadiusProfile:
    if isinstance(value, Mapping):
        times = np.asarray(value.get("times", ()), dtype=float)
        vals = np.asarray(value.get("values", ()), dtype=float)
        if times.ndim != 1 or times.shape != vals.shape or len(times) == 0:
            _fail(path, "radius profile needs matching times[] and values[]")
        if np.any(np.diff(times) <= 0):
            _fail(f"{path}.times", "must be strictly increasing")
    else:
        try:
            vals = np.array([float(value)])
        except (TypeError, ValueError):
            _fail(path, f"expected a radius, got {value!r}")
        times = np.zeros(1)
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        _fail(path, "obstacle radius must be finite and nonnegative")
    return RadiusProfile(times, vals)


def _parse_obstacle(doc: Mapping, n: int, idx: int) -> ObstacleSpec:
    path = f"obstacles[{idx}]"
    if not isinstance(doc, Mapping):
        _fail(path, "expected a mapping")
    motion = _parse_motion(doc.get("motion", {}), n, f"{path}.motion")
    radius = doc.get("radius_profile", doc.get("radius"))
    if radius is None:
        _fail(f"{path}.radius_profile", "missing required field")
    return ObstacleSpec(str(doc.get("id", f"o{idx}")), motion, _parse_radius(radius, f"{path}.radius_profile"))


def _gain_table(value, ids: Sequence[str], path: str, default: float) -> np.ndarray:
    """Gains as a (len(ids), 2) array from {h2, h3, overrides: {id: {h2, h3}}}."""
    table = np.full((len(ids), 2), float(default))
    if value is None:
        return table
    if not isinstance(value, Mapping):
        _fail(path, "expected a mapping with h2/h3")
    for col, key in enumerate(("h2", "h3")):
        if key in value:
            v = value[key]
            if isinstance(v, (list, tuple)):
                if len(v) != len(ids):
                    _fail(f"{path}.{key}", f"expected {len(ids)} values")
                table[:, col] = [float(x) for x in v]
            else:
                table[:, col] = float(v)
    for other, sub in (value.get("overrides") or {}).items():
        if other not in ids:
            _fail(f"{path}.overrides", f"unknown id {other!r}")
        row = list(ids).index(other)
        for col, key in enumerate(("h2", "h3")):
            if key in sub:
                table[row, col] = float(sub[key])
    if np.any(table <= 0):
        _fail(path, "gains must be positive")
    return table


def _parse_plant(doc, n: int, path: str) -> PlantBinding:
    doc = doc or {}
    model = doc.get("model", "single_integrator")
    if model not in PLANT_ORDERS:
        _fail(f"{path}.model", f"unknown plant model {model!r}")
    dist = doc.get("disturbance") or {}
    kind = dist.get("kind", "none")
    if kind not in DISTURBANCE_KINDS:
        _fail(f"{path}.disturbance.kind", f"unknown disturbance kind {kind!r}")
    dpath = f"{path}.disturbance"
    disturbance = DisturbanceSpec(
        kind=kind,
        bound=_real(dist, "bound", dpath, default=0.0, nonneg=True),
        frequency=_real(dist, "frequency", dpath, default=1.0),
        phase=_real(dist, "phase", dpath, default=0.0),
        seed=int(dist.get("seed", 0)),
        hold=_real(dist, "hold", dpath, default=0.01, positive=True),
    )
    g_lb = doc.get("g_lower_bound")
    return PlantBinding(model=model, n=n, disturbance=disturbance,
                        gain=_real(doc, "gain", path, default=1.0, positive=True),
                        g_lower_bound=None if g_lb is None else float(g_lb))


def _parse_agent(doc: Mapping, n: int, idx: int, agent_ids, obstacle_ids, defaults) -> AgentSpec:
    path = f"agents[{idx}]"
    if not isinstance(doc, Mapping):
        _fail(path, "expected a mapping")
    doc = {**defaults, **doc}
    s_a = _real(doc, "social_index", path)
    if not 0.0 < s_a < 1.0:
        _fail(f"{path}.social_index", "social_index out of (0,1)")
    rho_max = _real(doc, "rho_max", path, positive=True)
    rho_min = _real(doc, "rho_min", path, positive=True)
    b = _real(doc, "sif_decay", path, default=DEFAULT_SIF_DECAY)
    if not 0.0 <= b <= 1.0:
        _fail(f"{path}.sif_decay", "sif_decay out of [0,1]")
    plant = _parse_plant(doc.get("plant"), n, f"{path}.plant")
    order = plant.order

    kappa = doc.get("controller_gains", 1.0)
    kappa = np.asarray(kappa, dtype=float)
    kappa = np.full(order, float(kappa)) if kappa.ndim == 0 else kappa
    if kappa.shape != (order,) or np.any(kappa <= 0):
        _fail(f"{path}.controller_gains", f"expected {order} positive gains")

    funnels = None
    if doc.get("funnels") is not None and order > 1:
        f = doc["funnels"]
        fp = f"{path}.funnels"
        p = _per_stage(f.get("p"), order - 1, n, f"{fp}.p")
        q = _per_stage(f.get("q"), order - 1, n, f"{fp}.q")
        mu = _per_stage(f.get("mu", 1.0), order - 1, n, f"{fp}.mu")
        if np.any(q <= 0) or np.any(p <= q) or np.any(mu < 0):
            _fail(fp, "funnel parameters need p > q > 0 and mu >= 0")
        funnels = FunnelParams(p, q, mu)

    init = doc.get("initial_output")
    return AgentSpec(
        id=str(doc.get("id", f"a{idx}")),
        social_index=s_a,
        start_point=_vector(doc.get("start_point"), n, f"{path}.start_point"),
        start_radius=_real(doc, "start_radius", path, default=rho_max, positive=True),
        target_point=_vector(doc.get("target_point"), n, f"{path}.target_point"),
        target_radius=_real(doc, "target_radius", path, default=rho_max, positive=True),
        completion_time=_real(doc, "completion_time", path, positive=True),
        rho_min=rho_min,
        rho_max=rho_max,
        goal_gain=_real(doc, "goal_gain", path, positive=True),
        obstacle_gains=_gain_table(doc.get("obstacle_gains"), obstacle_ids, f"{path}.obstacle_gains", 1.0),
        agent_gains=_gain_table(doc.get("agent_gains"), agent_ids, f"{path}.agent_gains", 1.0),
        sif_decay=b,
        plant=plant,
        funnels=funnels,
        controller_gains=kappa,
        initial_output=None if init is None else _vector(init, n, f"{path}.initial_output"),
    )


def parse_scenario(document) -> Scenario:
    """Build a :class:`Scenario` from a mapping or YAML/JSON text."""
    if isinstance(document, (str, bytes)):
        try:
            document = yaml.safe_load(document)
        except yaml.YAMLError as exc:
            raise ScenarioError(f"document: not valid YAML/JSON ({exc})") from exc
    if not isinstance(document, Mapping):
        raise ScenarioError("document: expected a mapping at top level")

    n = document.get("dimension")
    if not isinstance(n, int) or n < 1:
        _fail("dimension", "expected a positive integer")
    nu = _real(document, "nu", "scenario", default=DEFAULT_NU, positive=True)
    horizon = _real(document, "horizon", "scenario", positive=True)

    obs_docs = document.get("obstacles") or []
    agent_docs = document.get("agents") or []
    if not isinstance(obs_docs, list) or not isinstance(agent_docs, list):
        _fail("agents", "agents and obstacles must be lists")
    if not agent_docs:
        _fail("agents", "at least one agent is required")
    obstacles = tuple(_parse_obstacle(d, n, j) for j, d in enumerate(obs_docs))
    obstacle_ids = [o.id for o in obstacles]
    agent_ids = [str(d.get("id", f"a{k}")) if isinstance(d, Mapping) else f"a{k}"
                 for k, d in enumerate(agent_docs)]
    if len(set(agent_ids)) != len(agent_ids):
        _fail("agents", "agent ids must be unique")
    defaults = document.get("agent_defaults") or {}
    agents = tuple(_parse_agent(d, n, k, agent_ids, obstacle_ids, defaults)
                   for k, d in enumerate(agent_docs))
    sim = dict(document.get("sim") or {})
    return Scenario(n=n, agents=agents, obstacles=obstacles, nu=nu, horizon=horizon,
                    name=str(document.get("name", "")), sim=sim)


def load_scenario(path) -> Scenario:
    return parse_scenario(Path(path).read_text())


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ValidationEntry:
    check: str
    subject: str
    passed: bool
    margin: float
    hard: bool = True

    def line(self) -> str:
        status = "PASS" if self.passed else ("FAIL" if self.hard else "WARN")
        return f"{status:4s}  {self.check:<26s} {self.subject:<14s} margin={self.margin:+.6g}"


@dataclass(frozen=True)
class ValidationReport:
    entries: tuple[ValidationEntry, ...]

    @property
    def ok(self) -> bool:
        """True when every hard check passes (soft checks only warn)."""
        return all(e.passed for e in self.entries if e.hard)

    def failures(self):
        return [e for e in self.entries if not e.passed]

    def __str__(self):
        return "\n".join(e.line() for e in self.entries)


def validate_scenario(sc: Scenario, dt: float | None = None) -> ValidationReport:
    from .tube import initial_radii  # local import: tube depends on this module

    dt = dt or float(sc.sim.get("dt", DEFAULT_DT))
    entries: list[ValidationEntry] = []
    add = entries.append

    for a in sc.agents:
        add(ValidationEntry("social_index_range", a.id, 0.0 < a.social_index < 1.0,
                            min(a.social_index, 1.0 - a.social_index)))
        m = a.goal_gain - 1.0 / a.completion_time
        add(ValidationEntry("goal_gain_bound", a.id, m > 0, m, hard=False))
        cap = min(a.start_radius, a.target_radius)
        ok = a.rho_min < a.rho_max <= cap
        add(ValidationEntry("radius_ordering", a.id, ok, min(a.rho_max - a.rho_min, cap - a.rho_max)))

    for k in range(len(sc.agents)):
        for l in range(k + 1, len(sc.agents)):
            ak, al = sc.agents[k], sc.agents[l]
            need = ak.rho_max + al.rho_max
            pair = f"{ak.id}|{al.id}"
            m = float(np.linalg.norm(ak.start_point - al.start_point)) - need
            add(ValidationEntry("start_separation", pair, m > 0, m))
            m = float(np.linalg.norm(ak.target_point - al.target_point)) - need
            add(ValidationEntry("target_separation", pair, m > 0, m))

    for a in sc.agents:
        if sc.obstacles:
            centers, radii = sc.obstacle_states(0.0)
            m = float(np.min(np.linalg.norm(centers - a.start_point, axis=1) - radii)) - a.start_radius
        else:
            m = math.inf
        add(ValidationEntry("start_clear_of_obstacles", a.id, m > 0, m))

        if sc.obstacles:
            steps = max(int(math.ceil((sc.horizon - a.completion_time) / dt)), 0)
            ts = a.completion_time + dt * np.arange(steps + 1)
            m = math.inf
            for o in sc.obstacles:
                gap = np.linalg.norm(o.center(ts) - a.target_point, axis=-1) - o.radius(ts)
                m = min(m, float(np.min(gap)) - a.target_radius)
        else:
            m = math.inf
        add(ValidationEntry("target_clear_of_obstacles", a.id, m > 0, m))

    rho0 = initial_radii(sc)
    for k, a in enumerate(sc.agents):
        y0 = a.start_point if a.initial_output is None else a.initial_output
        m = float(rho0[k] - np.linalg.norm(y0 - a.start_point))
        add(ValidationEntry("initial_containment", a.id, m > 0, m))
    return ValidationReport(tuple(entries))
