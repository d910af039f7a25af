"""End-to-end acceptance runs, one test per criterion.

Each test records a one-line PASS/FAIL summary (shown in the terminal
summary) before asserting.
"""
import time

import numpy as np
import pytest
import yaml

from sastt.cli import main
from sastt.engine import SimConfig, run_simulation
from sastt.monitors import nominal_trace_centers, run_monitors, social_deviation_metric
from sastt.scenario import parse_scenario
from sastt.tube import (agent_terms, obstacle_terms, radius_closed_form, radius_lower_bound,
                        radius_rate, sif)

from conftest import shipped, shipped_doc, single_agent_doc

MONITORS = ("target_stay", "obstacle_avoidance", "tube_disjointness", "radius_positivity",
            "output_containment")


def _suite_ok(report):
    return all(report.check(name).passed for name in MONITORS)


def _inside_target_at_tc(trace):
    """Largest distance of any output from its target at that agent's own completion time,
    relative to the target radius (<= 1 means inside)."""
    worst = 0.0
    for k, a in enumerate(trace.scenario.agents):
        row = int(np.argmin(np.abs(trace.t - a.completion_time)))
        worst = max(worst, np.linalg.norm(trace.y[row, k] - a.target_point) / a.target_radius)
    return worst


def test_criterion_1_prescribed_time_reach(record_criterion):
    sc = parse_scenario(single_agent_doc())
    cfg = SimConfig(dt=1e-3, t_end=5.0)
    run_simulation(sc, cfg)  # warm caches so the timing reflects the step loop
    times = []
    for _ in range(3):
        t0 = time.perf_counter()
        trace = run_simulation(sc, cfg)
        times.append(time.perf_counter() - t0)
    a = sc.agents[0]
    h1, t_c = a.goal_gain, a.completion_time
    exact = a.target_point + (a.start_point - a.target_point) * ((t_c - trace.t) / t_c)[:, None] ** (h1 * t_c)
    err = float(np.max(np.linalg.norm(trace.sigma[:, 0] - exact, axis=1)))
    runtime = min(times)
    ok = err < 1e-4 and runtime < 1.0
    record_criterion(1, ok, f"max center error {err:.3g} (< 1e-4), runtime {runtime:.3f} s (< 1 s)")
    assert err < 1e-4
    assert runtime < 1.0


def test_criterion_2_crossing_2d(crossing_run, record_criterion):
    trace, runtime = crossing_run
    report = run_monitors(trace)
    reach = _inside_target_at_tc(trace)
    clamps = int(trace.clamps.sum())
    ok = _suite_ok(report) and reach <= 1.0 and runtime < 30.0 and clamps == 0
    margins = ", ".join(f"{n} {report.check(n).margin:+.3g}" for n in MONITORS)
    record_criterion(2, ok, f"{margins}; worst |y-eta|/d_T at t_c {reach:.3g}; "
                            f"clamps {clamps}; runtime {runtime:.1f} s (< 30 s)")
    assert len(trace.t) == 15001
    assert _suite_ok(report), report.text()
    assert clamps == 0
    assert reach <= 1.0
    assert runtime < 30.0


def test_criterion_3_uav_3d(uav_run, record_criterion):
    trace, runtime = uav_run
    report = run_monitors(trace)
    ok = _suite_ok(report) and runtime < 60.0
    margins = ", ".join(f"{n} {report.check(n).margin:+.3g}" for n in MONITORS)
    record_criterion(3, ok, f"{margins}; runtime {runtime:.1f} s (< 60 s)")
    assert _suite_ok(report), report.text()
    assert runtime < 60.0


def test_criterion_4_social_asymmetry(swap_traces, record_criterion):
    ratios = []
    for trace in swap_traces:
        nominal = nominal_trace_centers(trace)
        dev = {a.id: social_deviation_metric(trace, a.id, nominal) for a in trace.scenario.agents}
        altruist = max(trace.scenario.agents, key=lambda a: a.social_index).id
        egoist = min(trace.scenario.agents, key=lambda a: a.social_index).id
        ratios.append((altruist, dev[altruist] / dev[egoist]))
    ok = all(r >= 1.5 for _, r in ratios) and ratios[0][0] != ratios[1][0]
    record_criterion(4, ok, "; ".join(f"altruist {who}: ratio {r:.3g} (>= 1.5)" for who, r in ratios))
    assert ratios[0][0] == "blue" and ratios[1][0] == "yellow"
    for _, r in ratios:
        assert r >= 1.5


def test_criterion_5_radius_and_interaction_properties(record_criterion):
    rng = np.random.default_rng(2024)
    N = 100_000
    nu = rng.uniform(1.0, 30.0, N)
    rho_min = rng.uniform(0.05, 1.0, N)
    rho_max = rho_min + rng.uniform(1e-3, 1.0, N)
    d1 = rng.uniform(-1.0, 5.0, N)
    d2 = rng.uniform(-1.0, 5.0, N)
    rho = radius_closed_form(d1, d2, rho_max, nu)
    upper = float(np.max(rho - np.minimum(np.minimum(rho_max, d1), d2)))

    # lower bound region: d1 >= rho_min, d2 > rho_min
    d1b = rho_min + rng.uniform(0.0, 3.0, N)
    d2b = rho_min + rng.uniform(1e-9, 3.0, N)
    lb = -np.log(np.exp(-nu * rho_max) + 2 * np.exp(-nu * rho_min)) / nu
    lower = float(np.min(radius_closed_form(d1b, d2b, rho_max, nu) - lb))

    s_k, s_l = rng.uniform(1e-3, 1 - 1e-3, (2, N))
    t_c_k, t_c_l = rng.uniform(1.0, 50.0, (2, N))
    t = rng.uniform(0.0, 1.0, N) * np.minimum(t_c_k, t_c_l) * (1 - 1e-9)
    b = rng.uniform(0.1, 2.0, N)
    partition = float(np.max(np.abs(sif(s_k, s_l, t, t_c_k, b) + sif(s_l, s_k, t, t_c_l, b) - 1.0)))

    ortho = 0.0
    for n in (2, 3, 4):
        sig = rng.normal(0, 3, (N, n))
        other = rng.normal(0, 3, (N, n))
        eta = rng.normal(0, 3, (N, n))
        _, m, v, _ = obstacle_terms(sig, other, rng.uniform(0.1, 1, N), rho_max, rho_min, eta)
        _, mh, vh, _ = agent_terms(sig, other, rho_min, rho_min, rho_max, rho_max, eta)
        for a, c in ((m, v), (mh, vh)):
            scale = np.linalg.norm(a, axis=1) * np.linalg.norm(c, axis=1)
            cos = np.abs(np.sum(a * c, axis=1)) / np.where(scale > 0, scale, 1.0)
            ortho = max(ortho, float(np.max(cos)))
    ok = upper <= 1e-12 and lower > 0 and partition <= 1e-12 and ortho <= 1e-12
    record_criterion(5, ok, f"upper excess {upper:.3g} (<= 1e-12), lower margin {lower:.3g} (> 0), "
                            f"SIF partition {partition:.3g} (<= 1e-12), orthogonality {ortho:.3g} (<= 1e-12)")
    assert upper <= 1e-12
    assert lower > 0
    assert partition <= 1e-12
    assert ortho <= 1e-12


def test_criterion_6_rate_consistency(record_criterion):
    sc = shipped("one_obstacle")
    trace = run_simulation(sc)
    a = sc.agents[0]
    dt = trace.dt
    rho, d1, d2 = trace.rho[:, 0], trace.d1[:, 0], trace.d2[:, 0]

    def fd(x):
        return (x[2:] - x[:-2]) / (2 * dt)

    numeric = fd(rho)
    d2_dot = np.zeros_like(numeric) if not np.isfinite(d2).any() else fd(d2)
    assembled = radius_rate(d1[1:-1], d2[1:-1], fd(d1), d2_dot, a.rho_max, sc.nu)
    active = trace.alpha_active[:, 0, 0]
    switching = active[2:] != active[:-2]
    near_tc = np.abs(trace.t[1:-1] - a.completion_time) < 2 * dt
    keep = ~(switching | near_tc)
    rel = np.abs(numeric - assembled) / np.maximum(np.maximum(np.abs(numeric), np.abs(assembled)), 1e-8)
    frac = float(np.mean(rel[keep] <= 1e-4))
    ok = frac >= 0.99 and active.any()
    record_criterion(6, ok, f"{frac:.2%} of {keep.sum()} points within 1e-4 relative (>= 99%); "
                            f"obstacle switch active on {active.mean():.1%} of rows")
    assert active.any()
    assert frac >= 0.99


def test_criterion_7_noise_robustness(record_criterion):
    doc = shipped_doc("crossing_2d")
    doc["agent_defaults"]["plant"]["disturbance"] = {"kind": "clipped_noise", "bound": 0.1, "seed": 7}
    trace = run_simulation(parse_scenario(doc))
    report = run_monitors(trace)
    ok = report.all_passed and report.tras_ok
    record_criterion(7, ok, f"all monitors {'PASS' if report.all_passed else 'FAIL'} with W = 0.1; "
                            f"containment margin {report.check('output_containment').margin:+.3g}")
    assert report.all_passed, report.text()


def test_criterion_8_determinism(tmp_path, record_criterion):
    doc = shipped_doc("one_obstacle")
    doc["agents"][0]["plant"] = {"disturbance": {"kind": "clipped_noise", "bound": 0.05}}
    scen = tmp_path / "noisy.yaml"
    scen.write_text(yaml.safe_dump(doc))
    files = ("trace.csv", "events.jsonl")
    for name in ("a", "b", "c"):
        seed = "11" if name != "c" else "12"
        assert main(["run", str(scen), "--seed", seed, "--out", str(tmp_path / name)]) == 0
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)
    differs = (tmp_path / "a" / "trace.csv").read_bytes() != (tmp_path / "c" / "trace.csv").read_bytes()
    record_criterion(8, same, f"two runs with seed 11 byte-identical: {same}; seed 12 differs: {differs}")
    assert same
    assert differs
