"""Runtime checks of the reach-avoid-stay guarantees over recorded traces.

Every check reads a :class:`~sastt.engine.SimTrace` and returns a
:class:`CheckResult` with a signed worst-case margin (positive means the
property holds). Checks never modify the trace.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .tube import radius_lower_bound

STRICT_MARGIN = 1e-9  # strict inequalities must hold by more than this
EQUALITY_SLACK = 1e-12  # non-strict inequalities may fail by at most this
REFINE = 10
DEFAULT_SIGMA_RATE_CAP = 500.0
DEFAULT_RHO_RATE_CAP = 500.0

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass
class CheckResult:
    name: str
    status: str  # PASS | FAIL | SKIPPED
    margin: float
    t: float | None = None
    subjects: tuple = ()
    per_agent: dict = field(default_factory=dict)
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.status == "PASS"

    def line(self) -> str:
        where = ""
        if self.t is not None:
            where = f" at t={self.t:.6g} [{', '.join(self.subjects)}]"
        extra = f" ({self.detail})" if self.detail else ""
        return f"{self.status:7s} {self.name:<22s} margin={self.margin:+.6g}{where}{extra}"

    def to_dict(self):
        return {"name": self.name, "status": self.status, "margin": _json_float(self.margin),
                "t": self.t, "subjects": list(self.subjects),
                "per_agent": {k: _json_float(v) for k, v in self.per_agent.items()},
                "detail": self.detail}


def _json_float(x):
    x = float(x)
    return x if np.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")


def _verdict(name, margins, t, labels, strict, per_agent=None, detail=""):
    """Reduce a (T, ...) margin array to a CheckResult; ``labels(idx)`` names the worst subjects."""
    margins = np.asarray(margins, dtype=float)
    if margins.size == 0:
        return CheckResult(name, "PASS", float("inf"), detail="vacuous", per_agent=per_agent or {})
    flat = np.where(np.isnan(margins), -np.inf, margins)
    idx = np.unravel_index(int(np.argmin(flat)), flat.shape)
    worst = float(flat[idx])
    ok = worst > STRICT_MARGIN if strict else worst >= -EQUALITY_SLACK
    return CheckResult(name, "PASS" if ok else "FAIL", worst, float(t[idx[0]]), labels(idx[1:]),
                       per_agent or {}, detail)


def _per_agent_min(margins, axis_agents):
    """Minimum over all axes except ``axis_agents`` (index 1 by default)."""
    m = np.moveaxis(np.asarray(margins, dtype=float), axis_agents, 0)
    return m.reshape(len(m), -1).min(axis=1) if m.size else np.full(len(m), np.inf)


def _dist(a, b):
    return np.sqrt(np.sum(np.square(a - b), axis=-1))


# --------------------------------------------------------------------------
# Tube-level checks
# --------------------------------------------------------------------------

def check_target_stay(trace, sc=None) -> CheckResult:
    """From each agent's completion time on, tube and output stay inside the target ball."""
    sc = sc or trace.scenario
    ids = [a.id for a in sc.agents]
    y = trace.y
    per, worst = {}, None
    skipped = []
    for k, a in enumerate(sc.agents):
        rows = trace.t >= a.completion_time - 1e-9
        if not rows.any():
            skipped.append(a.id)
            continue
        tube = a.target_radius - _dist(trace.sigma[rows, k], a.target_point) - trace.rho[rows, k]
        out = a.target_radius - _dist(y[rows, k], a.target_point)
        m = np.minimum(tube, out)
        i = int(np.argmin(m))
        per[a.id] = float(m[i])
        if worst is None or m[i] < worst[0]:
            worst = (float(m[i]), float(trace.t[rows][i]), a.id)
    if worst is None:
        return CheckResult("target_stay", "SKIPPED", float("nan"), detail="insufficient horizon")
    status = "PASS" if worst[0] >= -EQUALITY_SLACK else "FAIL"
    detail = f"insufficient horizon for {', '.join(skipped)}" if skipped else ""
    res = CheckResult("target_stay", status, worst[0], worst[1], (worst[2],), per, detail)
    res.skipped = tuple(skipped)
    return res


def _refine_obstacles(trace, sc, row, k, j):
    """Worst tube and center margins of agent ``k`` against obstacle ``j`` between rows around ``row``."""
    lo, hi = max(row - 1, 0), min(row + 1, len(trace.t) - 1)
    if hi == lo:
        return None
    ts = np.linspace(trace.t[lo], trace.t[hi], REFINE * (hi - lo) + 1)
    sig = np.stack([np.interp(ts, trace.t[lo:hi + 1], trace.sigma[lo:hi + 1, k, i])
                    for i in range(sc.n)], axis=-1)
    rho = np.interp(ts, trace.t[lo:hi + 1], trace.rho[lo:hi + 1, k])
    ob = sc.obstacles[j]
    gap = _dist(sig, ob.center(ts)) - ob.radius(ts)
    return float(np.min(gap - rho)), float(np.min(gap - sc.agents[k].rho_min))


def check_obstacle_avoidance(trace, sc=None) -> CheckResult:
    """Tubes stay clear of every obstacle and centers keep ``rho_min`` beyond the obstacle surface."""
    sc = sc or trace.scenario
    ids = [a.id for a in sc.agents]
    oids = [o.id for o in sc.obstacles]
    if not sc.obstacles:
        return CheckResult("obstacle_avoidance", "PASS", float("inf"), detail="no obstacles")
    gap = _dist(trace.sigma[:, :, None, :], trace.obs_center[:, None, :, :]) - trace.obs_radius[:, None, :]
    rho_min = np.array([a.rho_min for a in sc.agents])
    tube = gap - trace.rho[:, :, None]
    center = gap - rho_min[None, :, None]
    margin = np.minimum(tube, center)
    row, k, j = np.unravel_index(int(np.argmin(margin)), margin.shape)
    refined = _refine_obstacles(trace, sc, row, k, j)
    res = _verdict("obstacle_avoidance", margin, trace.t, lambda ix: (ids[ix[0]], oids[ix[1]]), True,
                   dict(zip(ids, _per_agent_min(margin, 1).tolist())))
    if refined is not None and min(refined) < res.margin:
        res.margin = min(refined)
        res.detail = "refined between samples"
        res.per_agent[ids[k]] = min(res.per_agent[ids[k]], res.margin)
        if res.margin <= STRICT_MARGIN:
            res.status = "FAIL"
    return res


def check_output_avoidance(trace, sc=None) -> CheckResult:
    """Outputs stay outside every obstacle (the output-level avoid clause)."""
    sc = sc or trace.scenario
    ids = [a.id for a in sc.agents]
    oids = [o.id for o in sc.obstacles]
    if not sc.obstacles:
        return CheckResult("output_avoidance", "PASS", float("inf"), detail="no obstacles")
    gap = _dist(trace.y[:, :, None, :], trace.obs_center[:, None, :, :]) - trace.obs_radius[:, None, :]
    return _verdict("output_avoidance", gap, trace.t, lambda ix: (ids[ix[0]], oids[ix[1]]), True,
                    dict(zip(ids, _per_agent_min(gap, 1).tolist())))


def check_tube_disjointness(trace, sc=None) -> CheckResult:
    """Distinct agents' tubes never intersect and centers keep the summed ``rho_min`` apart."""
    sc = sc or trace.scenario
    ids = [a.id for a in sc.agents]
    A = len(ids)
    if A < 2:
        return CheckResult("tube_disjointness", "PASS", float("inf"), detail="single agent")
    k, l = np.triu_indices(A, 1)
    d = _dist(trace.sigma[:, k], trace.sigma[:, l])
    rho_min = np.array([a.rho_min for a in sc.agents])
    tube = d - trace.rho[:, k] - trace.rho[:, l]
    center = d - rho_min[k] - rho_min[l]
    margin = np.minimum(tube, center)
    per = {}
    for a in range(A):
        cols = (k == a) | (l == a)
        per[ids[a]] = float(margin[:, cols].min())
    return _verdict("tube_disjointness", margin, trace.t, lambda ix: (ids[k[ix[0]]], ids[l[ix[0]]]),
                    True, per)


def check_radius_positivity(trace, sc=None) -> CheckResult:
    """Radii stay above the positive lower bound implied by the radius law."""
    sc = sc or trace.scenario
    ids = [a.id for a in sc.agents]
    bound = np.array([radius_lower_bound(a.rho_max, a.rho_min, sc.nu) for a in sc.agents])
    margin = trace.rho - bound[None, :]
    res = _verdict("radius_positivity", margin, trace.t, lambda ix: (ids[ix[0]],), True,
                   dict(zip(ids, _per_agent_min(margin, 1).tolist())))
    if np.any(bound <= 0):
        res.status = "FAIL"
        res.detail = "lower bound not positive"
    return res


def check_output_containment(trace, sc=None) -> CheckResult:
    """Outputs stay inside their tubes and no containment clamp was ever applied."""
    sc = sc or trace.scenario
    ids = [a.id for a in sc.agents]
    margin = trace.rho - _dist(trace.y, trace.sigma)
    res = _verdict("output_containment", margin, trace.t, lambda ix: (ids[ix[0]],), False,
                   dict(zip(ids, _per_agent_min(margin, 1).tolist())))
    n_clamp = int(np.sum(trace.clamps))
    if n_clamp:
        res.status = "FAIL"
        res.detail = f"{n_clamp} clamp events"
        for a, c in zip(ids, trace.clamps.sum(axis=0)):
            if c:
                res.per_agent[a] = min(res.per_agent.get(a, 0.0), -float(c))
    return res


def check_boundedness(trace, sigma_rate_cap=DEFAULT_SIGMA_RATE_CAP,
                      rho_rate_cap=DEFAULT_RHO_RATE_CAP) -> CheckResult:
    """All centers and radii finite, with per-step rates below the caps."""
    ids = trace.agent_ids
    bad = ~(np.isfinite(trace.sigma).all(axis=-1) & np.isfinite(trace.rho))
    if bad.any():
        row, k = np.argwhere(bad)[0]
        return CheckResult("boundedness", "FAIL", float("-inf"), float(trace.t[row]), (ids[k],),
                           detail=f"non-finite value at row {row}")
    if len(trace.t) < 2:
        return CheckResult("boundedness", "PASS", float("inf"), detail="single row")
    h = np.diff(trace.t)[:, None]
    v_sigma = _dist(trace.sigma[1:], trace.sigma[:-1]) / h
    v_rho = np.abs(np.diff(trace.rho, axis=0)) / h
    margin = np.minimum(sigma_rate_cap - v_sigma, rho_rate_cap - v_rho)
    return _verdict("boundedness", margin, trace.t[1:], lambda ix: (ids[ix[0]],), False,
                    dict(zip(ids, _per_agent_min(margin, 1).tolist())))


# --------------------------------------------------------------------------
# social behavior
# --------------------------------------------------------------------------

def nominal_trace_centers(trace):
    from .engine import SimConfig, nominal_centers

    cfg = SimConfig(dt=trace.dt, integrator=trace.integrator, t_end=float(trace.t[-1]),
                    record_stride=trace.stride)
    return nominal_centers(trace.scenario, cfg)[:len(trace.t)]


def social_deviation_metric(trace, agent, nominal=None) -> float:
    """Time integral of the distance between the tube center and its goal-only counterpart."""
    k = trace.agent_ids.index(agent) if isinstance(agent, str) else int(agent)
    if nominal is None:
        nominal = nominal_trace_centers(trace)
    dev = _dist(trace.sigma[:, k], nominal[:, k])
    return float(_trapezoid(dev, trace.t))


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

TRAS_CHECKS = ("target_stay", "obstacle_avoidance", "tube_disjointness", "output_containment")


@dataclass
class MonitorReport:
    checks: list
    verdicts: dict  # agent id -> PASS | FAIL | INCONCLUSIVE

    def check(self, name) -> CheckResult:
        return next(c for c in self.checks if c.name == name)

    @property
    def tras_ok(self) -> bool:
        return all(v == "PASS" for v in self.verdicts.values())

    @property
    def all_passed(self) -> bool:
        return all(c.status == "PASS" for c in self.checks)

    def text(self) -> str:
        lines = [c.line() for c in self.checks]
        lines.append("")
        lines += [f"TRAS {agent}: {v}" for agent, v in self.verdicts.items()]
        return "\n".join(lines)

    def to_dict(self):
        return {"checks": [c.to_dict() for c in self.checks], "verdicts": dict(self.verdicts),
                "tras_ok": self.tras_ok}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def run_monitors(trace, sc=None, sigma_rate_cap=DEFAULT_SIGMA_RATE_CAP,
                 rho_rate_cap=DEFAULT_RHO_RATE_CAP) -> MonitorReport:
    sc = sc or trace.scenario
    checks = [
        check_target_stay(trace, sc),
        check_obstacle_avoidance(trace, sc),
        check_tube_disjointness(trace, sc),
        check_radius_positivity(trace, sc),
        check_output_containment(trace, sc),
        check_output_avoidance(trace, sc),
        check_boundedness(trace, sigma_rate_cap, rho_rate_cap),
    ]
    verdicts = {}
    for a in sc.agents:
        states = []
        for c in checks:
            if c.name not in TRAS_CHECKS:
                continue
            if c.status == "SKIPPED" or a.id in getattr(c, "skipped", ()):
                states.append("INCONCLUSIVE")
            elif a.id in c.per_agent:
                m = c.per_agent[a.id]
                strict = c.name != "target_stay" and c.name != "output_containment"
                ok = m > STRICT_MARGIN if strict else m >= -EQUALITY_SLACK
                states.append("PASS" if ok else "FAIL")
            else:
                states.append("PASS" if c.status == "PASS" else "FAIL")
        verdicts[a.id] = "FAIL" if "FAIL" in states else "INCONCLUSIVE" if "INCONCLUSIVE" in states else "PASS"
    return MonitorReport(checks, verdicts)
