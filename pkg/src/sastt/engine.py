"""Fixed-step co-simulation of tubes, controllers and plants.

Each step every agent reads the same frozen snapshot of all tube centers and
the obstacle states at the current grid time, advances its own tube center,
recomputes its radius, and its plant is driven by the control computed at
the start of the step (zero-order hold).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .controller import _chain, auto_funnels
from .plants import chain_derivative, disturbance, integrator_gain, model_functions
from .scenario import DEFAULT_DT, FunnelParams, Scenario, validate_scenario
from .tube import SNAP_TOL, TubeField

log = logging.getLogger(__name__)


class SimulationAborted(RuntimeError):
    def __init__(self, step: int, reason: str, trace=None):
        super().__init__(f"simulation aborted at step {step}: {reason}")
        self.step = step
        self.trace = trace


class ScenarioRejected(ValueError):
    def __init__(self, report):
        failed = ", ".join(f"{e.check}[{e.subject}]" for e in report.failures() if e.hard)
        super().__init__(f"scenario failed validation: {failed}")
        self.report = report


@dataclass(frozen=True)
class SimConfig:
    dt: float = DEFAULT_DT
    integrator: str = "rk4"
    t_end: float | None = None
    record_stride: int = 1
    seed: int = 0
    interactions: bool = True
    # tube centers take sub-steps so no center moves more than this fraction of
    # its clearance to a repulsion singularity per sub-step (0 disables)
    substep_fraction: float = 0.1
    max_substeps: int = 1000
    # in a step containing a completion time, tube sub-steps are at most this
    # fraction of the time left to it, so the center lands close enough to snap
    deadline_fraction: float = 0.5

    @classmethod
    def from_scenario(cls, sc: Scenario, **overrides):
        keys = {"dt", "integrator", "t_end", "record_stride", "seed", "substep_fraction", "max_substeps",
                "deadline_fraction"}
        base = {k: v for k, v in sc.sim.items() if k in keys}
        base.update({k: v for k, v in overrides.items() if v is not None})
        cfg = cls(**base)
        if cfg.t_end is None:
            cfg = replace(cfg, t_end=sc.horizon)
        return cfg

    def steps(self) -> int:
        return int(math.floor(self.t_end / self.dt + 1e-9))

    def check(self, sc: Scenario):
        if not 0 < self.dt <= 0.01:
            raise ValueError(f"dt must lie in (0, 0.01], got {self.dt}")
        if self.integrator not in ("rk4", "euler"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.substep_fraction < 0 or self.max_substeps < 1:
            raise ValueError("substep_fraction must be >= 0 and max_substeps >= 1")
        if not 0 <= self.deadline_fraction < 1:
            raise ValueError("deadline_fraction must lie in [0, 1)")
        if self.record_stride < 1:
            raise ValueError("record_stride must be a positive integer")
        t_c = max(a.completion_time for a in sc.agents)
        if self.t_end is None or self.t_end < t_c:
            raise ValueError(f"t_end must cover the latest completion time {t_c}")


@dataclass
class SimTrace:
    scenario: Scenario
    dt: float
    stride: int
    t: np.ndarray
    sigma: np.ndarray  # (T, A, n)
    rho: np.ndarray  # (T, A)
    d1: np.ndarray
    d2: np.ndarray
    x: list  # per agent (T, N_k, n)
    u: np.ndarray  # (T, A, n)
    e1: np.ndarray  # (T, A)
    funnel_peak: np.ndarray  # (T, A) max |e_z,i| over stages >= 2
    clamps: np.ndarray  # (T, A) clamp events at that step
    obs_center: np.ndarray  # (T, n_o, n)
    obs_radius: np.ndarray  # (T, n_o)
    alpha_active: np.ndarray | None = None  # (T, A, n_o)
    beta_active: np.ndarray | None = None  # (T, A, A)
    phi: np.ndarray | None = None  # (T, A, A)
    events: list = field(default_factory=list)
    status: str = "complete"
    integrator: str = "rk4"

    @property
    def y(self) -> np.ndarray:
        return np.stack([xk[:, 0, :] for xk in self.x], axis=1)

    @property
    def agent_ids(self):
        return [a.id for a in self.scenario.agents]

    def __len__(self):
        return len(self.t)

    def truncated(self, rows: int) -> "SimTrace":
        """Copy holding the first ``rows`` rows (used for partial traces)."""
        cut = lambda a: None if a is None else a[:rows]
        return SimTrace(self.scenario, self.dt, self.stride, self.t[:rows], self.sigma[:rows],
                        self.rho[:rows], self.d1[:rows], self.d2[:rows], [xk[:rows] for xk in self.x],
                        self.u[:rows], self.e1[:rows], self.funnel_peak[:rows], self.clamps[:rows],
                        self.obs_center[:rows], self.obs_radius[:rows], cut(self.alpha_active),
                        cut(self.beta_active), cut(self.phi), list(self.events), self.status,
                        self.integrator)


def rk4_step(rhs, state, t, dt, k1=None):
    """Classical fourth-order Runge-Kutta step; ``rhs(t, state)``."""
    if k1 is None:
        k1 = rhs(t, state)
    half = 0.5 * dt
    k2 = rhs(t + half, state + half * k1)
    k3 = rhs(t + half, state + half * k2)
    k4 = rhs(t + dt, state + dt * k3)
    out = state + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
    if not np.isfinite(out).all():
        raise FloatingPointError("non-finite value inside RK4 step")
    return out


def euler_step(rhs, state, t, dt, k1=None):
    if k1 is None:
        k1 = rhs(t, state)
    out = state + dt * k1
    if not np.isfinite(out).all():
        raise FloatingPointError("non-finite value in Euler step")
    return out


_STEPPERS = {"rk4": rk4_step, "euler": euler_step}


class _PlantGroup:
    """Agents sharing a plant model, gain and order, integrated as one array."""

    def __init__(self, sc, idx, sigma0, rho0, seed):
        self.idx = np.array(idx)
        contiguous = list(idx) == list(range(idx[0], idx[0] + len(idx)))
        self.sel = slice(idx[0], idx[0] + len(idx)) if contiguous else self.idx
        agents = [sc.agents[k] for k in idx]
        self.pb = agents[0].plant
        self.fns = model_functions(self.pb)
        self.lin_gain = integrator_gain(self.fns)
        self.N = self.pb.order
        n = sc.n
        x0 = np.zeros((len(idx), self.N, n))
        for row, a in enumerate(agents):
            x0[row, 0] = a.start_point if a.initial_output is None else a.initial_output
        self.x = x0
        self.kappa = np.stack([a.controller_gains for a in agents])
        if self.N > 1:
            ps, qs, mus = [], [], []
            for row, (k, a) in enumerate(zip(idx, agents)):
                fp = a.funnels or auto_funnels(x0[row], sigma0[k], rho0[k], a.controller_gains)
                ps.append(fp.p)
                qs.append(fp.q)
                mus.append(fp.mu)
            self.funnels = FunnelParams(np.stack(ps), np.stack(qs), np.stack(mus))
        else:
            self.funnels = None
        self.dist = [a.plant.disturbance for a in agents]
        self.salts = [(int(seed), int(k)) for k in idx]
        self.quiet = all(d.kind == "none" or d.bound == 0 for d in self.dist)
        self.n = n

    def w(self, t):
        if self.quiet:
            return None
        return np.stack([np.stack([disturbance(d, z, t, self.n, s) for z in range(1, self.N + 1)])
                         for d, s in zip(self.dist, self.salts)])


def _tube_step(field_, sigma, vel, tau, snapshot, obs_c, obs_r, cfg):
    """Tube sub-step size at time tau.

    Limited by the clearance to repulsion singularities and, when a completion
    time falls inside the current step, graded toward it.
    """
    h = cfg.dt
    if cfg.interactions and cfg.substep_fraction > 0:
        gap = field_.gaps(sigma, snapshot, obs_c, obs_r)
        if np.any(np.isfinite(gap)):
            speed = np.sqrt(np.sum(vel * vel, axis=1))
            with np.errstate(divide="ignore", invalid="ignore"):
                hs = np.where(speed > 0, cfg.substep_fraction * np.maximum(gap, 0.0) / speed, np.inf)
            h = min(h, float(np.min(hs)))
    if cfg.deadline_fraction > 0:
        ahead = field_.t_c - tau
        ahead = ahead[(ahead > 0) & (ahead <= cfg.dt * (1 + 1e-9))]
        if ahead.size:
            h = min(h, cfg.deadline_fraction * float(ahead.min()))
    return float(max(h, cfg.dt / cfg.max_substeps))


def _substep_tube(step, rhs, field_, sigma, vel, t, t1, h, snapshot, obs_c, obs_r, cfg):
    tau = t
    while True:
        remaining = t1 - tau
        if h >= remaining * (1.0 - 1e-9):
            return step(rhs, sigma, tau, remaining, k1=vel)
        sigma = step(rhs, sigma, tau, h, k1=vel)
        tau += h
        vel = rhs(tau, sigma)
        h = _tube_step(field_, sigma, vel, tau, snapshot, obs_c, obs_r, cfg)


def run_simulation(sc: Scenario, cfg: SimConfig | None = None, validate=True) -> SimTrace:
    cfg = cfg or SimConfig.from_scenario(sc)
    if cfg.t_end is None:
        cfg = replace(cfg, t_end=sc.horizon)
    cfg.check(sc)
    if validate:
        report = validate_scenario(sc, cfg.dt)
        if not report.ok:
            raise ScenarioRejected(report)

    field_ = TubeField(sc)
    step = _STEPPERS[cfg.integrator]
    A, n, n_o = len(sc.agents), sc.n, len(sc.obstacles)
    dt, K = cfg.dt, cfg.steps()
    T = K // cfg.record_stride + 1

    sigma = np.stack([a.start_point for a in sc.agents]).astype(float)
    obs_c, obs_r = sc.obstacle_states(0.0)
    rho, d1, d2 = field_.radii(sigma, 0.0, obs_c, obs_r)

    groups = {}
    for k, a in enumerate(sc.agents):
        groups.setdefault((a.plant.model, a.plant.gain), []).append(k)
    groups = [_PlantGroup(sc, idx, sigma, rho, cfg.seed) for idx in groups.values()]

    rec = SimTrace(
        scenario=sc, dt=dt, stride=cfg.record_stride, t=np.zeros(T),
        sigma=np.zeros((T, A, n)), rho=np.zeros((T, A)), d1=np.zeros((T, A)), d2=np.zeros((T, A)),
        x=[np.zeros((T, a.plant.order, n)) for a in sc.agents], u=np.zeros((T, A, n)),
        e1=np.zeros((T, A)), funnel_peak=np.zeros((T, A)), clamps=np.zeros((T, A), dtype=int),
        obs_center=np.zeros((T, n_o, n)), obs_radius=np.zeros((T, n_o)),
        alpha_active=np.zeros((T, A, n_o), dtype=bool), beta_active=np.zeros((T, A, A), dtype=bool),
        phi=np.zeros((T, A, A)), integrator=cfg.integrator,
    )
    ids = [a.id for a in sc.agents]
    t_c = field_.t_c
    eta = field_.eta
    u = np.zeros((A, n))
    e1 = np.zeros(A)
    peak = np.zeros(A)
    clamps = np.zeros(A, dtype=int)
    row = 0
    # steps whose interval (t_k, t_k+1] contains some completion time
    grid = np.arange(K)[:, None] * dt
    snap_steps = set(np.flatnonzero(np.any((grid < t_c) & (t_c <= grid + dt + 1e-12), axis=1)).tolist())
    span = A * n
    slices, plant_slices, pos = [], [], 0
    for g in groups:
        plant_slices.append(slice(pos, pos + g.x.size))
        slices.append(slice(span + pos, span + pos + g.x.size))
        pos += g.x.size

    for k in range(K + 1):
        t = k * dt
        for g in groups:
            frame = _chain(g.x, sigma[g.sel], rho[g.sel], t, g.kappa, g.funnels)
            u[g.sel] = frame.u
            e1[g.sel] = frame.e1
            peak[g.sel] = frame.funnel_peak
            clamps[g.sel] = frame.clamps
        for a in (np.flatnonzero(clamps) if clamps.any() else ()):
            rec.events.append({"step": k, "t": t, "agent": ids[a], "kind": "containment_clamp",
                               "count": int(clamps[a])})

        k1, near, alpha, beta = field_.rhs(sigma, t, sigma, obs_c, obs_r, cfg.interactions)
        if k % cfg.record_stride == 0:
            rec.t[row] = t
            rec.sigma[row], rec.rho[row], rec.d1[row], rec.d2[row] = sigma, rho, d1, d2
            for g in groups:
                for r, a in enumerate(g.idx.tolist()):
                    rec.x[a][row] = g.x[r]
            rec.u[row], rec.e1[row], rec.funnel_peak[row], rec.clamps[row] = u, e1, peak, clamps
            rec.obs_center[row], rec.obs_radius[row] = obs_c, obs_r
            if alpha is not None:
                rec.alpha_active[row] = alpha != 0
                rec.beta_active[row] = beta != 0
            rec.phi[row] = field_.phi(t)
            row += 1
        if k == K:
            break

        snapshot = sigma.copy()
        flags = near.copy()
        held = [u[g.sel].copy() for g in groups]
        w_cache = {}

        def tube_rhs(tau, s):
            vel, nr, _, _ = field_.rhs(s, tau, snapshot, obs_c, obs_r, cfg.interactions)
            flags[nr] = True
            return vel

        def plant_part(tau, Y, out, sls):
            for g, sl, u_g in zip(groups, sls, held):
                if g.quiet:
                    w = None
                else:
                    if (g, tau) not in w_cache:
                        w_cache[g, tau] = g.w(tau)
                    w = w_cache[g, tau]
                out[sl] = chain_derivative(g.fns, Y[sl].reshape(g.x.shape), u_g, w, g.lin_gain).ravel()
            return out

        def joint_rhs(tau, Y, tube_vel=None):
            out = np.empty_like(Y)
            if tube_vel is None:
                tube_vel = tube_rhs(tau, Y[:span].reshape(A, n))
            out[:span] = tube_vel.ravel()
            return plant_part(tau, Y, out, slices)

        t1 = (k + 1) * dt
        h_tube = _tube_step(field_, sigma, k1, t, snapshot, obs_c, obs_r, cfg)
        try:
            if h_tube >= dt:
                Y = np.concatenate([sigma.ravel()] + [g.x.ravel() for g in groups])
                Y = step(joint_rhs, Y, t, dt, k1=joint_rhs(t, Y, k1))
                sigma = Y[:span].reshape(A, n).copy()
                for g, sl in zip(groups, slices):
                    g.x = Y[sl].reshape(g.x.shape)
            else:
                Y = np.concatenate([g.x.ravel() for g in groups])
                Y = step(lambda tau, Z: plant_part(tau, Z, np.empty_like(Z), plant_slices), Y, t, dt)
                for g, sl in zip(groups, plant_slices):
                    g.x = Y[sl].reshape(g.x.shape)
                sigma = _substep_tube(step, tube_rhs, field_, sigma, k1, t, t1, h_tube, snapshot,
                                      obs_c, obs_r, cfg)
        except FloatingPointError as exc:
            rec.status = "aborted"
            raise SimulationAborted(k, str(exc), rec.truncated(row)) from exc

        if k in snap_steps:
            crossing = (t < t_c) & (t_c <= t1 + 1e-12)
            close = crossing & (np.linalg.norm(sigma - eta, axis=1) < SNAP_TOL)
            sigma[close] = eta[close]
        if flags.any():
            for a in np.flatnonzero(flags):
                rec.events.append({"step": k, "t": t, "agent": ids[a], "kind": "near_singularity"})

        if n_o:
            obs_c, obs_r = sc.obstacle_states(t1)
        rho, d1, d2 = field_.radii(sigma, t1, obs_c, obs_r)
        if not np.isfinite(rho).all():
            rec.status = "aborted"
            raise SimulationAborted(k + 1, "non-finite state", rec.truncated(row))

    log.debug("simulated %d steps, %d rows, %d events", K, row, len(rec.events))
    return rec


def nominal_centers(sc: Scenario, cfg: SimConfig) -> np.ndarray:
    """Tube centers on the recorded grid with only the goal term active, shape (T, A, n)."""
    field_ = TubeField(sc)
    step = _STEPPERS[cfg.integrator]
    dt, K = cfg.dt, cfg.steps()
    sigma = np.stack([a.start_point for a in sc.agents]).astype(float)
    out = np.zeros((K // cfg.record_stride + 1, len(sc.agents), sc.n))
    empty_c, empty_r = np.zeros((0, sc.n)), np.zeros(0)
    quiet = replace(cfg, interactions=False)

    def rhs(tau, s):
        return field_.rhs(s, tau, s, empty_c, empty_r, False)[0]

    row = 0
    for k in range(K + 1):
        t = k * dt
        if k % cfg.record_stride == 0:
            out[row] = sigma
            row += 1
        if k == K:
            break
        t1 = (k + 1) * dt
        vel = rhs(t, sigma)
        h = _tube_step(field_, sigma, vel, t, None, empty_c, empty_r, quiet)
        sigma = _substep_tube(step, rhs, field_, sigma, vel, t, t1, h, None, empty_c, empty_r, quiet)
        close = (t < field_.t_c) & (field_.t_c <= t1 + 1e-12) \
            & (np.linalg.norm(sigma - field_.eta, axis=1) < SNAP_TOL)
        sigma[close] = field_.eta[close]
    return out
