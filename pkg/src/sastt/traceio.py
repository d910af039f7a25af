"""Trace files: a wide CSV of the sampled state, a JSON-lines event log and a
manifest describing how the run was produced.

Everything is written deterministically (fixed column order, ``%.17g``
floats, sorted JSON keys, no timestamps) so two runs with the same inputs
produce byte-identical files.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__
from .engine import SimTrace
from .scenario import ScenarioError, load_scenario

TRACE_FILE = "trace.csv"
EVENTS_FILE = "events.jsonl"
MANIFEST_FILE = "manifest.json"
SCENARIO_FILE = "scenario.yaml"
OUTPUT_FILES = (TRACE_FILE, EVENTS_FILE, MANIFEST_FILE, SCENARIO_FILE)


class TraceFormatError(ValueError):
    """Trace directory is missing, malformed or truncated."""


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def columns(sc) -> list[str]:
    n = sc.n
    cols = ["t"]
    ids = [a.id for a in sc.agents]
    for a in sc.agents:
        p = a.id
        cols += [f"{p}.sigma_{i}" for i in range(n)]
        cols += [f"{p}.rho", f"{p}.d1", f"{p}.d2"]
        cols += [f"{p}.x{z}_{i}" for z in range(1, a.plant.order + 1) for i in range(n)]
        cols += [f"{p}.u_{i}" for i in range(n)]
        cols += [f"{p}.e1", f"{p}.ezmax", f"{p}.clamps"]
        cols += [f"{p}.alpha.{o.id}" for o in sc.obstacles]
        cols += [f"{p}.beta.{q}" for q in ids if q != p]
        cols += [f"{p}.phi.{q}" for q in ids if q != p]
    for o in sc.obstacles:
        cols += [f"{o.id}.o_{i}" for i in range(n)] + [f"{o.id}.rho_o"]
    return cols


def trace_matrix(trace: SimTrace) -> np.ndarray:
    sc = trace.scenario
    A = len(sc.agents)
    T = len(trace.t)
    parts = [trace.t[:, None]]
    others = lambda k: [l for l in range(A) if l != k]
    for k, a in enumerate(sc.agents):
        parts += [trace.sigma[:, k], trace.rho[:, k, None], trace.d1[:, k, None], trace.d2[:, k, None],
                  trace.x[k].reshape(T, -1), trace.u[:, k],
                  trace.e1[:, k, None], trace.funnel_peak[:, k, None], trace.clamps[:, k, None]]
        alpha = trace.alpha_active if trace.alpha_active is not None else np.zeros((T, A, len(sc.obstacles)))
        beta = trace.beta_active if trace.beta_active is not None else np.zeros((T, A, A))
        phi = trace.phi if trace.phi is not None else np.zeros((T, A, A))
        parts += [alpha[:, k].astype(float), beta[:, k, others(k)].astype(float), phi[:, k, others(k)]]
    for j in range(len(sc.obstacles)):
        parts += [trace.obs_center[:, j], trace.obs_radius[:, j, None]]
    return np.hstack([np.asarray(p, dtype=float).reshape(T, -1) for p in parts])


def write_trace(trace: SimTrace, out_dir, scenario_source=None, config=None, seed=0,
                forced=False, expected_rows=None, overrides=None) -> Path:
    """Write trace, events, scenario copy and manifest into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sc = trace.scenario
    if scenario_source is not None:
        text = Path(scenario_source).read_bytes()
        (out / SCENARIO_FILE).write_bytes(text)

    cols = columns(sc)
    data = trace_matrix(trace)
    with open(out / TRACE_FILE, "w", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        np.savetxt(fh, data, fmt="%.17g", delimiter=",")

    with open(out / EVENTS_FILE, "w", newline="\n") as fh:
        for ev in trace.events:
            fh.write(json.dumps(ev, sort_keys=True) + "\n")

    manifest = {
        "tool": "sastt",
        "version": __version__,
        "scenario": str(scenario_source) if scenario_source is not None else None,
        "scenario_copy": SCENARIO_FILE,
        "scenario_sha256": sha256_file(out / SCENARIO_FILE) if (out / SCENARIO_FILE).exists() else None,
        "output_dir": str(out_dir),
        "seed": int(seed),
        "forced": bool(forced),
        "config": config or {"dt": trace.dt, "record_stride": trace.stride, "integrator": trace.integrator},
        "overrides": overrides or {},
        "columns": len(cols),
        "rows": int(len(trace.t)),
        "expected_rows": int(expected_rows if expected_rows is not None else len(trace.t)),
        "status": trace.status,
        "events": len(trace.events),
    }
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def read_manifest(out_dir) -> dict:
    path = Path(out_dir) / MANIFEST_FILE
    try:
        return json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise TraceFormatError(f"{path}: missing manifest") from exc
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"{path}: not valid JSON ({exc})") from exc


def read_trace(out_dir) -> SimTrace:
    """Rebuild a :class:`SimTrace` from a run directory.

    Raises :class:`TraceFormatError` when files are missing, the header does
    not match the scenario copy, or fewer rows than recorded are present.
    """
    out = Path(out_dir)
    if out.is_file():
        out = out.parent
    manifest = read_manifest(out)
    try:
        sc = load_scenario(out / manifest.get("scenario_copy", SCENARIO_FILE))
    except (OSError, ScenarioError) as exc:
        raise TraceFormatError(f"{out}: cannot load scenario copy ({exc})") from exc

    path = out / TRACE_FILE
    try:
        with open(path) as fh:
            header = fh.readline().rstrip("\n").split(",")
            body = fh.read()
    except OSError as exc:
        raise TraceFormatError(f"{path}: {exc}") from exc
    cols = columns(sc)
    if header != cols:
        raise TraceFormatError(f"{path}: header does not match the scenario copy")
    lines = [ln for ln in body.split("\n") if ln]
    if not body.endswith("\n") and lines:
        raise TraceFormatError(f"{path}: last row is incomplete")
    try:
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines]).reshape(len(lines), -1)
    except ValueError as exc:
        raise TraceFormatError(f"{path}: unparsable value ({exc})") from exc
    if data.shape[0] and data.shape[1] != len(cols):
        raise TraceFormatError(f"{path}: expected {len(cols)} columns, found {data.shape[1]}")
    if data.shape[0] != manifest.get("rows"):
        raise TraceFormatError(f"{path}: truncated, {data.shape[0]} of {manifest.get('rows')} rows")

    events = []
    ev_path = out / EVENTS_FILE
    if ev_path.exists():
        try:
            events = [json.loads(ln) for ln in ev_path.read_text().splitlines() if ln.strip()]
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"{ev_path}: {exc}") from exc
    return _from_matrix(sc, data, manifest, events)


def _from_matrix(sc, data, manifest, events) -> SimTrace:
    A, n, n_o = len(sc.agents), sc.n, len(sc.obstacles)
    T = data.shape[0]
    cfg = manifest.get("config", {})
    pos = 1

    def take(width):
        nonlocal pos
        block = data[:, pos:pos + width]
        pos += width
        return block

    sigma = np.zeros((T, A, n))
    rho, d1, d2, e1, peak = (np.zeros((T, A)) for _ in range(5))
    clamps = np.zeros((T, A), dtype=int)
    u = np.zeros((T, A, n))
    x = []
    alpha = np.zeros((T, A, n_o), dtype=bool)
    beta = np.zeros((T, A, A), dtype=bool)
    phi = np.zeros((T, A, A))
    for k, a in enumerate(sc.agents):
        others = [l for l in range(A) if l != k]
        sigma[:, k] = take(n)
        rho[:, k], d1[:, k], d2[:, k] = take(3).T
        x.append(take(a.plant.order * n).reshape(T, a.plant.order, n))
        u[:, k] = take(n)
        e1[:, k], peak[:, k], c = take(3).T
        clamps[:, k] = c.astype(int)
        alpha[:, k] = take(n_o) != 0
        beta[:, k, others] = take(A - 1) != 0
        phi[:, k, others] = take(A - 1)
    obs_c = np.zeros((T, n_o, n))
    obs_r = np.zeros((T, n_o))
    for j in range(n_o):
        obs_c[:, j] = take(n)
        obs_r[:, j] = take(1)[:, 0]
    return SimTrace(scenario=sc, dt=float(cfg.get("dt", data[1, 0] - data[0, 0] if T > 1 else 0.0)),
                    stride=int(cfg.get("record_stride", 1)), t=data[:, 0].copy(), sigma=sigma, rho=rho,
                    d1=d1, d2=d2, x=x, u=u, e1=e1, funnel_peak=peak, clamps=clamps, obs_center=obs_c,
                    obs_radius=obs_r, alpha_active=alpha, beta_active=beta, phi=phi, events=events,
                    status=manifest.get("status", "complete"),
                    integrator=cfg.get("integrator", "rk4"))
