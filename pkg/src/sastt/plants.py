"""Ground-truth agent dynamics used by the simulator.

Every model is a pure-feedback chain

    x_z' = f_z(x_1..x_z) + g_z(x_1..x_z) x_{z+1} + w_z,   z < N
    x_N' = f_N(x_1..x_N) + g_N(x_1..x_N) u + w_N

with diagonal, positive-definite ``g_z``. Nothing here is visible to the
controller, which only ever receives states.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .scenario import DisturbanceSpec, PlantBinding

_CHUNK = 1024


def _zero_f(xbar):
    return 0.0


def _const_g(gain):
    def g(xbar):
        return gain
    g.gain = gain
    return g


def _nl_f1(xbar):
    return 0.2 * np.sin(xbar[..., 0, :])


def _nl_f2(xbar):
    return 0.3 * np.sin(xbar[..., 0, :]) * np.cos(xbar[..., 1, :])


def _nl_g(gain, z):
    def g(xbar):
        return gain * (1.5 + 0.5 * np.sin(xbar[..., z - 1, :]))
    return g


def model_functions(pb: PlantBinding):
    """Lists ``(f_z, g_z)`` for ``z = 1..N``; ``g_z`` returns the diagonal of the gain matrix."""
    if pb.model == "single_integrator":
        return [(_zero_f, _const_g(pb.gain))]
    if pb.model == "double_integrator":
        return [(_zero_f, _const_g(pb.gain)), (_zero_f, _const_g(pb.gain))]
    if pb.model == "nonlinear_test":
        return [(_nl_f1, _nl_g(pb.gain, 1)), (_nl_f2, _nl_g(pb.gain, 2))]
    raise ValueError(f"unknown plant model {pb.model!r}")


def g_lower_bound(pb: PlantBinding) -> float:
    """Lower bound on the smallest eigenvalue of the symmetric part of every ``g_z``."""
    if pb.g_lower_bound is not None:
        return pb.g_lower_bound
    return pb.gain


def g_matrix(pb: PlantBinding, z: int, xbar) -> np.ndarray:
    _, g = model_functions(pb)[z - 1]
    return np.diag(g(np.asarray(xbar, dtype=float)[:z]))


@lru_cache(maxsize=4096)
def _noise_chunk(seed: tuple, z: int, chunk: int, n: int, bound: float) -> np.ndarray:
    rng = np.random.default_rng([*seed, z, chunk])
    out = np.clip(rng.normal(0.0, 0.5 * bound, size=(_CHUNK, n)), -bound, bound)
    out.setflags(write=False)
    return out


def disturbance(spec: DisturbanceSpec, z: int, t: float, n: int, salt: tuple = ()) -> np.ndarray:
    """Deterministic disturbance on stage ``z`` at time ``t``; each component lies in [-W, W].

    ``clipped_noise`` is piecewise constant over intervals of length
    ``spec.hold``, drawn from a normal with standard deviation W/2 and clipped.
    ``salt`` separates streams of agents sharing a seed.
    """
    if spec.kind == "none" or spec.bound == 0.0:
        return np.zeros(n)
    if spec.kind == "sinusoid":
        return np.full(n, spec.bound * math.sin(2.0 * math.pi * spec.frequency * t + spec.phase))
    if spec.kind == "clipped_noise":
        idx = int(math.floor(t / spec.hold + 1e-9))
        chunk, row = divmod(max(idx, 0), _CHUNK)
        return _noise_chunk((int(spec.seed), *salt), z, chunk, n, float(spec.bound))[row].copy()
    raise ValueError(f"unknown disturbance kind {spec.kind!r}")


def integrator_gain(fns):
    """The common gain when every stage is a pure scaled integrator, else None."""
    gains = {getattr(g, "gain", None) for f, g in fns}
    if all(f is _zero_f for f, _ in fns) and len(gains) == 1 and None not in gains:
        return gains.pop()
    return None


def chain_derivative(fns, x, u, w=None, gain=None):
    """Derivative of the chain for pre-resolved model functions; no checks.

    ``gain`` (see :func:`integrator_gain`) selects the pure integrator shortcut.
    """
    N = len(fns)
    out = np.empty(x.shape)
    if gain is not None:
        out[..., :-1, :] = x[..., 1:, :]
        out[..., -1, :] = u
        if gain != 1.0:
            out *= gain
        if w is not None:
            out += w
        return out
    for z, (f, g) in enumerate(fns, start=1):
        xbar = x[..., :z, :]
        drive = x[..., z, :] if z < N else u
        out[..., z - 1, :] = f(xbar) + g(xbar) * drive
    if w is not None:
        out += w
    return out


def plant_rhs(x, u, t, pb: PlantBinding, w=None, salt: tuple = ()):
    """State derivative of the chain. ``x`` is (..., N, n); ``u`` is (..., n).

    ``w`` overrides the disturbance with an explicit (..., N, n) array.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    fns = model_functions(pb)
    N = len(fns)
    if x.shape[-2:] != (N, pb.n) or u.shape[-1] != pb.n:
        raise ValueError(f"dimension mismatch: plant {pb.model} expects state (..., {N}, {pb.n}) "
                         f"and input (..., {pb.n}); got {x.shape} and {u.shape}")
    if w is None:
        w = np.stack([disturbance(pb.disturbance, z, t, pb.n, salt) for z in range(1, N + 1)])
    x = np.broadcast_to(x, np.broadcast_shapes(x.shape, u.shape[:-1] + (N, pb.n)))
    return chain_derivative(fns, x, u, w)
