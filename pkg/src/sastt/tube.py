"""Online synthesis of spatiotemporal tubes.

Each agent's tube is a ball ``B(sigma, rho)``. The center follows a
goal-seeking vector field with switched repulsion from obstacles and from
neighboring tube centers (weighted by the social interaction function); the
radius is the smooth minimum of ``rho_max`` and the obstacle / neighbor
clearances.

The module exposes the individual terms as plain functions of their inputs
(these broadcast over leading axes) plus :class:`TubeField`, a vectorized
evaluator over all agents that the simulation engine uses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEN_FLOOR = 1e-6  # meters; floor on repulsion denominators
F_MAX = 1e6  # clamp on t_c / (t_c - t)
SNAP_TOL = 1e-4  # snap the center onto the target at t_c within this distance
_PARALLEL_TOL = 1e-9


@dataclass(frozen=True)
class TubeState:
    agent: str
    sigma: np.ndarray
    rho: float
    t: float


@dataclass(frozen=True)
class Neighbor:
    sigma: np.ndarray
    rho_min: float
    rho_max: float
    social_index: float
    completion_time: float


# NeighborSnapshot: mapping agent id -> Neighbor, every entry sampled at the same step
NeighborSnapshot = dict


def _norm(x):
    return np.sqrt(np.sum(x * x, axis=-1))


def _cross3(a, b):
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


# --------------------------------------------------------------------------
# social interaction
# --------------------------------------------------------------------------

def sif(s_a_k, s_a_l, t, t_c_k, b):
    """Social interaction weight of agent k towards agent l.

    Before the completion time it is the share ``s_k / (s_k + s_l)``; from
    ``t_c_k`` on it is the negated share damped by a Gaussian of width ``b``
    (``b == 0`` gives 0 on that branch).
    """
    s_a_k, s_a_l, t, t_c_k, b = np.broadcast_arrays(*(np.asarray(v, dtype=float)
                                                      for v in (s_a_k, s_a_l, t, t_c_k, b)))
    share = s_a_k / (s_a_k + s_a_l)
    with np.errstate(divide="ignore", invalid="ignore"):
        decay = np.where(b > 0, np.exp(-np.square(t - t_c_k) / np.where(b > 0, b * b, 1.0)), 0.0)
    out = np.where(t < t_c_k, share, -share * decay)
    return out[()] if out.ndim == 0 else out


# --------------------------------------------------------------------------
# center field terms
# --------------------------------------------------------------------------

def goal_attraction(sigma, eta, t, t_c, h1, f_max=F_MAX):
    sigma = np.asarray(sigma, dtype=float)
    t = np.asarray(t, dtype=float)
    t_c = np.asarray(t_c, dtype=float)
    active = t < t_c
    with np.errstate(divide="ignore"):
        factor = np.where(active, np.minimum(t_c / np.where(active, t_c - t, 1.0), f_max), 0.0)
    return (np.asarray(h1) * factor)[..., None] * (np.asarray(eta, dtype=float) - sigma)


def null_space_vector(m, goal):
    """A vector orthogonal to ``m`` with the same norm, biased towards ``goal``.

    In 2D this is ``m`` rotated by 90 degrees; in 3D it is the normalized
    cross product ``m x goal`` (falling back to the first coordinate axis not
    parallel to ``m``). The sign is flipped where needed so that
    ``v . goal >= 0``.
    """
    m = np.asarray(m, dtype=float)
    goal = np.broadcast_to(np.asarray(goal, dtype=float), m.shape)
    n = m.shape[-1]
    mn = _norm(m)
    if n == 1:
        return np.zeros_like(m)
    if n == 2:
        v = np.stack([-m[..., 1], m[..., 0]], axis=-1)
    elif n == 3:
        c = _cross3(m, goal)
        cn = _norm(c)
        bad = cn <= _PARALLEL_TOL * mn * _norm(goal)
        if np.any(bad):
            c = np.array(c, copy=True)
            mb = m[bad] if m.ndim > 1 else m[None]
            axes = np.zeros_like(mb)
            unit = mb / np.maximum(_norm(mb), 1e-300)[..., None]
            for row in range(len(mb)):
                for i in range(3):
                    if abs(unit[row, i]) < 1.0 - _PARALLEL_TOL:
                        axes[row, i] = 1.0
                        break
            repl = _cross3(mb, axes)
            if m.ndim > 1:
                c[bad] = repl
            else:
                c = repl[0]
            cn = _norm(c)
        with np.errstate(invalid="ignore", divide="ignore"):
            v = np.where((cn > 0)[..., None], c * (mn / np.where(cn > 0, cn, 1.0))[..., None], 0.0)
    else:
        # Gram-Schmidt of the goal direction against m; first free axis if degenerate
        unit = m / np.where(mn > 0, mn, 1.0)[..., None]
        v = goal - np.sum(goal * unit, axis=-1, keepdims=True) * unit
        vn = _norm(v)
        bad = vn <= _PARALLEL_TOL * np.maximum(_norm(goal), 1e-300)
        if np.any(bad):
            e = np.zeros(n)
            e[int(np.argmin(np.abs(unit[bad]).reshape(-1, n)[0]))] = 1.0
            alt = e - np.sum(e * unit, axis=-1, keepdims=True) * unit
            v = np.where(bad[..., None], alt, v)
            vn = _norm(v)
        v = v * (mn / np.where(vn > 0, vn, 1.0))[..., None]
    flip = np.sum(v * goal, axis=-1) < 0
    return np.where(flip[..., None], -v, v)


def obstacle_terms(sigma, o, rho_o, rho_max, rho_min, eta=None):
    """Switch value, repulsion vector and tangential vector for one obstacle.

    Returns ``(alpha, m, v, clamped)``; ``clamped`` flags that a denominator
    hit :data:`DEN_FLOOR`. ``eta`` orients the tangential vector (defaults to
    pushing along ``+m`` rotation with no goal bias).
    """
    sigma = np.asarray(sigma, dtype=float)
    diff = sigma - np.asarray(o, dtype=float)
    dist = _norm(diff)
    clear = dist - np.asarray(rho_o, dtype=float)
    safe_clear = np.maximum(clear, DEN_FLOOR)
    alpha = np.where(clear <= rho_max, 1.0 / safe_clear - 1.0 / np.asarray(rho_max, dtype=float), 0.0)
    gap = dist - (np.asarray(rho_o, dtype=float) + rho_min)
    m = diff / (np.maximum(gap, DEN_FLOOR) ** 3)[..., None]
    goal = np.zeros_like(sigma) if eta is None else np.asarray(eta, dtype=float) - sigma
    v = null_space_vector(m, goal)
    clamped = (gap < DEN_FLOOR) | (clear < DEN_FLOOR)
    return alpha, m, v, clamped


def agent_terms(sigma_k, sigma_l, rho_min_k, rho_min_l, rho_max_k, rho_max_l, eta_k=None):
    """Switch value and repulsion / tangential vectors between two tube centers."""
    sigma_k = np.asarray(sigma_k, dtype=float)
    diff = sigma_k - np.asarray(sigma_l, dtype=float)
    dist = _norm(diff)
    reach = np.asarray(rho_max_k, dtype=float) + rho_max_l
    beta = np.where(dist <= reach, 1.0 / np.maximum(dist, DEN_FLOOR) - 1.0 / reach, 0.0)
    gap = dist - (np.asarray(rho_min_k, dtype=float) + rho_min_l)
    m_hat = diff / (np.maximum(gap, DEN_FLOOR) ** 3)[..., None]
    goal = np.zeros_like(sigma_k) if eta_k is None else np.asarray(eta_k, dtype=float) - sigma_k
    v_hat = null_space_vector(m_hat, goal)
    return beta, m_hat, v_hat, (gap < DEN_FLOOR)


def center_rhs(agent, tube: TubeState, neighbors: NeighborSnapshot, obstacles, t, agent_ids=None,
               obstacle_ids=None, interactions=True):
    """Velocity of one agent's tube center.

    ``neighbors`` maps agent id to :class:`Neighbor`; ``obstacles`` is a pair
    ``(centers, radii)`` with one row per obstacle in scenario order.
    ``agent_ids`` gives the row order of ``agent.agent_gains``.
    Returns ``(velocity, near_singular)``.
    """
    sigma = np.asarray(tube.sigma, dtype=float)
    eta = agent.target_point
    vel = goal_attraction(sigma, eta, t, agent.completion_time, agent.goal_gain)
    near = False
    if not interactions:
        return vel, near
    centers, radii = obstacles
    for j in range(len(radii)):
        alpha, m, v, c = obstacle_terms(sigma, centers[j], radii[j], agent.rho_max, agent.rho_min, eta)
        h2, h3 = agent.obstacle_gains[j]
        vel = vel + (h2 * m + h3 * v) * alpha
        near |= bool(c)
    ids = list(agent_ids) if agent_ids is not None else list(neighbors)
    for other, nb in neighbors.items():
        beta, m_hat, v_hat, c = agent_terms(sigma, nb.sigma, agent.rho_min, nb.rho_min,
                                            agent.rho_max, nb.rho_max, eta)
        phi = sif(agent.social_index, nb.social_index, t, agent.completion_time, agent.sif_decay)
        hh2, hh3 = agent.agent_gains[ids.index(other)]
        vel = vel + (hh2 * m_hat + hh3 * v_hat) * beta * phi
        near |= bool(c)
    return vel, near


# --------------------------------------------------------------------------
# radius
# --------------------------------------------------------------------------

def d_prime_obstacle(sigma, o, rho_o):
    return _norm(np.asarray(sigma, dtype=float) - np.asarray(o, dtype=float)) - np.asarray(rho_o)


def d_prime_agent(sigma_k, sigma_l, rho_min_k, rho_min_l, phi):
    gap = _norm(np.asarray(sigma_k, dtype=float) - np.asarray(sigma_l, dtype=float)) - (rho_min_k + rho_min_l)
    return rho_min_k + gap * (1.0 - np.asarray(phi))


def smooth_min(values, nu, axis=-1):
    """``-(1/nu) log sum exp(-nu * values)`` with a max shift.

    An empty reduction returns ``+inf`` (no constraint).
    """
    x = -nu * np.asarray(values, dtype=float)
    if x.shape[axis] == 0:
        shape = list(x.shape)
        del shape[axis]
        out = np.full(shape, np.inf)
        return out[()] if out.ndim == 0 else out
    top = np.max(x, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    lse = np.log(np.sum(np.exp(x - top), axis=axis)) + np.squeeze(top, axis=axis)
    out = -lse / nu
    return out[()] if np.ndim(out) == 0 else out


def radius_closed_form(d1, d2, rho_max, nu):
    d1, d2 = np.asarray(d1, dtype=float), np.asarray(d2, dtype=float)
    ref = np.minimum(np.minimum(d1, d2), rho_max)  # finite because rho_max is
    total = np.exp(-nu * (rho_max - ref)) + np.exp(-nu * (d1 - ref)) + np.exp(-nu * (d2 - ref))
    out = ref - np.log(total) / nu
    return out[()] if np.ndim(out) == 0 else out


def radius_rate(d1, d2, d1_dot, d2_dot, rho_max, nu):
    """Time derivative of the radius given clearance rates (rate form of the radius law)."""
    d1, d2 = np.asarray(d1, dtype=float), np.asarray(d2, dtype=float)
    ref = np.minimum(np.minimum(d1, d2), rho_max)  # shift for overflow safety
    w0 = np.exp(-nu * (rho_max - ref))
    w1 = np.exp(-nu * (d1 - ref))
    w2 = np.exp(-nu * (d2 - ref))
    num = w1 * np.where(np.isfinite(d1), d1_dot, 0.0) + w2 * np.where(np.isfinite(d2), d2_dot, 0.0)
    return num / (w0 + w1 + w2)


def radius_lower_bound(rho_max, rho_min, nu):
    return -math.log(math.exp(-nu * rho_max) + 2.0 * math.exp(-nu * rho_min)) / nu


def tube_radius(agent, sigma, neighbors: NeighborSnapshot, obstacles, t, nu):
    """Radius of one agent's tube from the closed-form law; returns ``(rho, d1, d2)``."""
    centers, radii = obstacles
    d1 = smooth_min(np.array([d_prime_obstacle(sigma, centers[j], radii[j]) for j in range(len(radii))]), nu)
    dp = [d_prime_agent(sigma, nb.sigma, agent.rho_min, nb.rho_min,
                        sif(agent.social_index, nb.social_index, t, agent.completion_time, agent.sif_decay))
          for nb in neighbors.values()]
    d2 = smooth_min(np.array(dp), nu)
    return float(radius_closed_form(d1, d2, agent.rho_max, nu)), float(d1), float(d2)


# --------------------------------------------------------------------------
# vectorized evaluation over all agents
# --------------------------------------------------------------------------

class TubeField:
    """All agents' center field and radius law, evaluated with array ops.

    Agent ``k`` sees its own (possibly intermediate) center in ``sigma`` and
    every other agent through the frozen ``snapshot``.
    """

    def __init__(self, sc):
        A = len(sc.agents)
        self.nu = sc.nu
        self.n = sc.n
        self.s_a = np.array([a.social_index for a in sc.agents])
        self.t_c = np.array([a.completion_time for a in sc.agents])
        self.h1 = np.array([a.goal_gain for a in sc.agents])
        self.eta = np.stack([a.target_point for a in sc.agents])
        self.rho_min = np.array([a.rho_min for a in sc.agents])
        self.rho_max = np.array([a.rho_max for a in sc.agents])
        self.b = np.array([a.sif_decay for a in sc.agents])
        self.h_obs = np.stack([a.obstacle_gains for a in sc.agents]) if sc.obstacles \
            else np.zeros((A, 0, 2))
        self.h_agt = np.stack([a.agent_gains for a in sc.agents])
        self.share = self.s_a[:, None] / (self.s_a[:, None] + self.s_a[None, :])
        self.off = ~np.eye(A, dtype=bool)
        self._phi_cache = (None, None)
        self.reach = self.rho_max[:, None] + self.rho_max[None, :]
        self.min_sep = self.rho_min[:, None] + self.rho_min[None, :]
        self._h1_tc = self.h1 * self.t_c
        self._t_floor = self.t_c / F_MAX
        self._solo = A == 1
        self._no_near = np.zeros(A, dtype=bool)
        self._no_near.setflags(write=False)
        self._no_alpha = np.zeros((A, 0))
        self._no_beta = np.zeros((1, 1))
        self._unbounded = np.full(A, np.inf)
        self._free_rho = radius_closed_form(self._unbounded, self._unbounded, self.rho_max, self.nu)

    def phi(self, t):
        """Social interaction matrix ``phi[k, l]`` at time ``t`` (diagonal zero)."""
        if self._phi_cache[0] == t:
            return self._phi_cache[1]
        out = self._phi(t)
        self._phi_cache = (t, out)
        return out

    def _phi(self, t):
        if len(self.s_a) == 1:
            return np.zeros((1, 1))
        after = t >= self.t_c
        with np.errstate(divide="ignore", invalid="ignore"):
            decay = np.where(self.b > 0, np.exp(-((t - self.t_c) ** 2) / np.where(self.b > 0, self.b ** 2, 1.0)), 0.0)
        scale = np.where(after, -decay, 1.0)
        return self.share * scale[:, None] * self.off

    def rhs(self, sigma, t, snapshot, obs_c, obs_r, interactions=True):
        """Center velocities (A, n) and a per-agent near-singularity flag."""
        remaining = self.t_c - t
        gain = self._h1_tc / np.maximum(remaining, self._t_floor)
        if remaining.min() <= 0:
            gain = np.where(remaining > 0, gain, 0.0)
        vel = gain[:, None] * (self.eta - sigma)
        if not interactions:
            return vel, self._no_near, None, None
        if self._solo and not len(obs_r):
            return vel, self._no_near, self._no_alpha, self._no_beta
        A = len(sigma)
        near = np.zeros(A, dtype=bool)
        goal = self.eta - sigma
        alpha = np.zeros((A, len(obs_r)))
        if len(obs_r):
            diff = sigma[:, None, :] - obs_c[None]
            dist = _norm(diff)
            clear = dist - obs_r[None]
            kk, jj = np.nonzero(clear <= self.rho_max[:, None])
            if len(kk):
                c = clear[kk, jj]
                alpha[kk, jj] = 1.0 / np.maximum(c, DEN_FLOOR) - 1.0 / self.rho_max[kk]
                gap = dist[kk, jj] - (obs_r[jj] + self.rho_min[kk])
                m = diff[kk, jj] / (np.maximum(gap, DEN_FLOOR) ** 3)[:, None]
                v = null_space_vector(m, goal[kk])
                h = self.h_obs[kk, jj]
                np.add.at(vel, kk, (h[:, 0:1] * m + h[:, 1:2] * v) * alpha[kk, jj][:, None])
                near[kk[(gap < DEN_FLOOR) | (c < DEN_FLOOR)]] = True
        beta = np.zeros((A, A))
        if A > 1:
            diff = sigma[:, None, :] - snapshot[None, :, :]
            dist = _norm(diff)
            kk, ll = np.nonzero((dist <= self.reach) & self.off)
            if len(kk):
                d = dist[kk, ll]
                beta[kk, ll] = 1.0 / np.maximum(d, DEN_FLOOR) - 1.0 / self.reach[kk, ll]
                gap = d - self.min_sep[kk, ll]
                m_hat = diff[kk, ll] / (np.maximum(gap, DEN_FLOOR) ** 3)[:, None]
                v_hat = null_space_vector(m_hat, goal[kk])
                w = beta[kk, ll] * self.phi(t)[kk, ll]
                h = self.h_agt[kk, ll]
                np.add.at(vel, kk, (h[:, 0:1] * m_hat + h[:, 1:2] * v_hat) * w[:, None])
                near[kk[gap < DEN_FLOOR]] = True
        return vel, near, alpha, beta

    def gaps(self, sigma, snapshot, obs_c, obs_r):
        """Per-agent smallest clearance to a repulsion singularity among active switches.

        Agents: ``|sigma_k - sigma_l| - (rho_min_k + rho_min_l)``; obstacles:
        ``|sigma - o| - rho_o - rho_min``. ``inf`` when no switch is active.
        """
        A = len(sigma)
        out = np.full(A, np.inf)
        if len(obs_r):
            dist = _norm(sigma[:, None, :] - obs_c[None]) - obs_r[None]
            gap = dist - self.rho_min[:, None]
            gap = np.where(dist <= self.rho_max[:, None], gap, np.inf)
            out = np.minimum(out, gap.min(axis=1))
        if A > 1:
            dist = _norm(sigma[:, None, :] - snapshot[None, :, :])
            gap = dist - (self.rho_min[:, None] + self.rho_min[None, :])
            reach = self.rho_max[:, None] + self.rho_max[None, :]
            gap = np.where((dist <= reach) & self.off, gap, np.inf)
            out = np.minimum(out, gap.min(axis=1))
        return out

    def radii(self, sigma, t, obs_c, obs_r):
        """Radii (A,) and the smooth clearances ``d1``, ``d2`` from current centers."""
        A = len(sigma)
        if A == 1 and not len(obs_r):
            return self._free_rho.copy(), self._unbounded, self._unbounded
        if len(obs_r):
            dpo = d_prime_obstacle(sigma[:, None, :], obs_c[None], obs_r[None])
            d1 = smooth_min(dpo, self.nu, axis=1)
        else:
            d1 = self._unbounded
        if A > 1:
            dpa = d_prime_agent(sigma[:, None, :], sigma[None, :, :], self.rho_min[:, None],
                                self.rho_min[None, :], self.phi(t))
            dpa = dpa[self.off].reshape(A, A - 1)
            d2 = smooth_min(dpa, self.nu, axis=1)
        else:
            d2 = self._unbounded
        return radius_closed_form(d1, d2, self.rho_max, self.nu), d1, d2


def initial_radii(sc):
    field = TubeField(sc)
    sigma0 = np.stack([a.start_point for a in sc.agents])
    obs_c, obs_r = sc.obstacle_states(0.0)
    return field.radii(sigma0, 0.0, obs_c, obs_r)[0]
