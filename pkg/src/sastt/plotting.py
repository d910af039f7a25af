"""SVG figures of a trace: trajectory panels with tubes drawn at chosen
times, radius and tracking-error curves, and the social influence curves."""
from __future__ import annotations

from itertools import combinations
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .monitors import nominal_trace_centers, social_deviation_metric  # noqa: E402

# keep SVG output free of run-dependent ids and dates
plt.rcParams["svg.hashsalt"] = "sastt"
plt.rcParams["svg.fonttype"] = "none"
_SVG_META = {"Date": None}


def default_stamps(trace, count=4):
    return list(np.linspace(trace.t[0], trace.t[-1], count))


def _row(trace, t):
    return int(np.argmin(np.abs(trace.t - t)))


def _colors(A):
    cmap = plt.get_cmap("tab10" if A <= 10 else "tab20")
    return [cmap(k % cmap.N) for k in range(A)]


def _save(fig, path):
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return Path(path)


def _panel_2d(ax, trace, row, dims, colors, labels):
    sc = trace.scenario
    i, j = dims
    for k, a in enumerate(sc.agents):
        ax.plot(trace.sigma[:row + 1, k, i], trace.sigma[:row + 1, k, j], "--", color=colors[k], lw=0.8)
        ax.plot(trace.y[:row + 1, k, i], trace.y[:row + 1, k, j], "-", color=colors[k], lw=1.2,
                label=labels[k])
        c = trace.sigma[row, k]
        ax.add_patch(plt.Circle((c[i], c[j]), trace.rho[row, k], color=colors[k], alpha=0.25))
        ax.plot(*a.target_point[[i, j]], "x", color=colors[k], ms=5)
    for o in range(len(sc.obstacles)):
        c = trace.obs_center[row, o]
        ax.add_patch(plt.Circle((c[i], c[j]), trace.obs_radius[row, o], color="0.3", alpha=0.6))
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel(f"x{i + 1}")
    ax.set_ylabel(f"x{j + 1}")
    ax.set_title(f"t = {trace.t[row]:.2f}")


def _sphere(ax, c, r, color, alpha):
    u, v = np.meshgrid(np.linspace(0, 2 * np.pi, 12), np.linspace(0, np.pi, 7))
    ax.plot_wireframe(c[0] + r * np.cos(u) * np.sin(v), c[1] + r * np.sin(u) * np.sin(v),
                      c[2] + r * np.cos(v), color=color, alpha=alpha, lw=0.4)


def _panel_3d(ax, trace, row, colors, labels):
    sc = trace.scenario
    for k in range(len(sc.agents)):
        y = trace.y[:row + 1, k]
        ax.plot(y[:, 0], y[:, 1], y[:, 2], color=colors[k], lw=1.0, label=labels[k])
        _sphere(ax, trace.sigma[row, k], trace.rho[row, k], colors[k], 0.5)
    for o in range(len(sc.obstacles)):
        _sphere(ax, trace.obs_center[row, o], trace.obs_radius[row, o], "0.3", 0.7)
    ax.set_title(f"t = {trace.t[row]:.2f}")


def plot_trajectories(trace, path, stamps=None, deviations=None):
    """One panel per time stamp; 3D axes when n == 3, coordinate-pair
    projections (one row per stamp) when n > 3."""
    sc = trace.scenario
    stamps = default_stamps(trace) if stamps is None else list(stamps)
    rows = [_row(trace, s) for s in stamps]
    A = len(sc.agents)
    colors = _colors(A)
    labels = [a.id if deviations is None else f"{a.id} (s={a.social_index:g}, dev={deviations[k]:.3g})"
              for k, a in enumerate(sc.agents)]
    if sc.n == 3:
        fig = plt.figure(figsize=(4.5 * len(rows), 4.5))
        for p, row in enumerate(rows):
            ax = fig.add_subplot(1, len(rows), p + 1, projection="3d")
            _panel_3d(ax, trace, row, colors, labels)
    elif sc.n == 2 or sc.n > 3:
        pairs = [(0, 1)] if sc.n == 2 else list(combinations(range(sc.n), 2))
        fig, axes = plt.subplots(len(pairs), len(rows), figsize=(4 * len(rows), 4 * len(pairs)),
                                 squeeze=False)
        for p, row in enumerate(rows):
            for q, dims in enumerate(pairs):
                _panel_2d(axes[q, p], trace, row, dims, colors, labels)
        ax = axes[0, 0]
    else:
        fig, ax = plt.subplots(figsize=(8, 4))
        for k in range(A):
            ax.plot(trace.t, trace.y[:, k, 0], color=colors[k], label=labels[k])
            ax.fill_between(trace.t, trace.sigma[:, k, 0] - trace.rho[:, k],
                            trace.sigma[:, k, 0] + trace.rho[:, k], color=colors[k], alpha=0.2)
        for s in stamps:
            ax.axvline(s, color="0.6", lw=0.5)
        ax.set_xlabel("t")
    fig.axes[0].legend(fontsize=7, loc="best")
    fig.tight_layout()
    return _save(fig, path)


def plot_radii(trace, path):
    colors = _colors(len(trace.scenario.agents))
    fig, (a1, a2) = plt.subplots(2, 1, sharex=True, figsize=(8, 6))
    for k, a in enumerate(trace.scenario.agents):
        a1.plot(trace.t, trace.rho[:, k], color=colors[k], label=a.id)
        a2.plot(trace.t, trace.e1[:, k], color=colors[k], label=a.id)
    a1.set_ylabel("tube radius")
    a2.set_ylabel("normalized output error")
    a2.axhline(1.0, color="0.5", ls=":", lw=0.8)
    a2.set_xlabel("t")
    a1.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    return _save(fig, path)


def plot_sif(trace, path):
    sc = trace.scenario
    A = len(sc.agents)
    fig, ax = plt.subplots(figsize=(8, 4))
    if A < 2 or trace.phi is None:
        ax.text(0.5, 0.5, "no agent pairs", ha="center", va="center", transform=ax.transAxes)
    else:
        for k in range(A):
            for l in range(A):
                if k != l:
                    ax.plot(trace.t, trace.phi[:, k, l], lw=0.8,
                            label=f"{sc.agents[k].id} wrt {sc.agents[l].id}" if A <= 4 else None)
        if A <= 4:
            ax.legend(fontsize=7)
    ax.set_xlabel("t")
    ax.set_ylabel("social influence")
    fig.tight_layout()
    return _save(fig, path)


def plot_all(trace, out_dir, stamps=None):
    """Write every figure into ``out_dir`` and return the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    nominal = nominal_trace_centers(trace)
    dev = [social_deviation_metric(trace, a.id, nominal) for a in trace.scenario.agents]
    return [
        plot_trajectories(trace, out / "trajectories.svg", stamps, dev),
        plot_radii(trace, out / "radii.svg"),
        plot_sif(trace, out / "social_influence.svg"),
    ]
