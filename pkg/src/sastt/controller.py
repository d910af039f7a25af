"""Approximation-free tube-following control law.

Stage 1 turns the distance of the output from the tube center, normalized by
the tube radius, into a log-barrier error and commands a velocity reference
pointing inwards. Each later stage makes its state track the previous
reference inside an exponentially shrinking funnel; the last reference is the
actuator command.

The law needs no model: it reads states, the tube and its own gains only.
All functions broadcast over leading (agent) axes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scenario import FunnelParams
from .tube import TubeState

CLAMP_MARGIN = 1e-9


def transform(e):
    """Log barrier ``ln((1 + e) / (1 - e))`` on (-1, 1)."""
    e = np.asarray(e, dtype=float)
    return np.log1p(e) - np.log1p(-e)


def stage1(x1, sigma, rho, kappa1):
    """Returns ``(e1, eps1, r2, clamped)``."""
    diff = np.asarray(x1, dtype=float) - sigma
    e1 = np.sqrt(np.sum(diff * diff, axis=-1)) / rho
    clamped = e1 >= 1.0 - CLAMP_MARGIN
    e1 = np.minimum(e1, 1.0 - CLAMP_MARGIN)
    eps1 = transform(e1)
    r2 = -(np.asarray(kappa1) * eps1)[..., None] * diff
    return e1, eps1, r2, clamped


def funnel_bound(fp: FunnelParams, z: int, i, t):
    return fp.bound(z, t)[..., i]


def _stage(x_z, r_z, gamma, kappa):
    e = (np.asarray(x_z, dtype=float) - r_z) / gamma
    clamped = np.abs(e) >= 1.0 - CLAMP_MARGIN
    e = np.clip(e, -(1.0 - CLAMP_MARGIN), 1.0 - CLAMP_MARGIN)
    eps = transform(e)
    # diagonal xi applied componentwise to eps
    nxt = -np.asarray(kappa)[..., None] * 4.0 * eps / (gamma * (1.0 - e * e))
    return e, eps, nxt, clamped


def stage_z(x_z, r_z, fp: FunnelParams, z: int, t, kappa_z):
    """Returns ``(e_z, eps_z, next_reference, clamped_components)``."""
    gamma = fp.bound(z, t)
    return _stage(x_z, r_z, gamma, kappa_z)


@dataclass
class ControlFrame:
    t: float
    refs: list  # r_2 .. r_{N+1}; the last one is u
    e1: float
    eps1: float
    errors: list = field(default_factory=list)  # e_z for z = 2..N
    transformed: list = field(default_factory=list)
    u: np.ndarray = None
    clamps: int = 0

    @property
    def funnel_peak(self):
        """Largest |e_z,i| over stages 2..N (0 for first-order chains)."""
        if not self.errors:
            return np.zeros(np.shape(self.e1))
        return np.max(np.stack([np.max(np.abs(e), axis=-1) for e in self.errors]), axis=0)


@dataclass
class AgentRuntime:
    id: str
    x: np.ndarray  # (..., N, n) state stack
    kappa: np.ndarray  # (..., N)
    funnels: FunnelParams | None = None

    @property
    def order(self) -> int:
        return self.x.shape[-2]


def _chain(x, sigma, rho, t, kappa, funnels):
    kappa = np.asarray(kappa, dtype=float)
    N = x.shape[-2]
    e1, eps1, r, c1 = stage1(x[..., 0, :], sigma, rho, kappa[..., 0])
    refs = [r]
    clamps = c1.astype(int)
    errors, transformed = [], []
    for z in range(2, N + 1):
        e, eps, r, c = stage_z(x[..., z - 1, :], r, funnels, z, t, kappa[..., z - 1])
        refs.append(r)
        errors.append(e)
        transformed.append(eps)
        clamps = clamps + np.sum(c, axis=-1)
    return ControlFrame(t=t, refs=refs, e1=e1, eps1=eps1, errors=errors,
                        transformed=transformed, u=refs[-1], clamps=clamps)


def control_step(agent: AgentRuntime, tube: TubeState, t) -> ControlFrame:
    if agent.order > 1 and agent.funnels is None:
        raise ValueError(f"agent {agent.id}: funnels required for a chain of order {agent.order}")
    return _chain(agent.x, tube.sigma, tube.rho, t, agent.kappa, agent.funnels)


def auto_funnels(x, sigma, rho, kappa) -> FunnelParams | None:
    """Funnels containing the initial tracking errors with margin.

    ``p = 1.2 |x_z(0) - r_z(0)| + 0.1``, ``q = 0.1 p``, ``mu = 1`` per component.
    """
    x = np.asarray(x, dtype=float)
    N, n = x.shape[-2:]
    if N == 1:
        return None
    kappa = np.asarray(kappa, dtype=float)
    _, _, r, _ = stage1(x[..., 0, :], sigma, rho, kappa[..., 0])
    p = np.zeros(x.shape[:-2] + (N - 1, n))
    for z in range(2, N + 1):
        p[..., z - 2, :] = 1.2 * np.abs(x[..., z - 1, :] - r) + 0.1
        _, _, r, _ = _stage(x[..., z - 1, :], r, p[..., z - 2, :], kappa[..., z - 1])
    return FunnelParams(p=p, q=0.1 * p, mu=np.ones_like(p))
