import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sastt.scenario import parse_scenario
from sastt.tube import (DEN_FLOOR, Neighbor, TubeField, TubeState, agent_terms, center_rhs,
                        d_prime_agent, d_prime_obstacle, goal_attraction, null_space_vector,
                        obstacle_terms, radius_closed_form, radius_lower_bound, sif, smooth_min,
                        tube_radius)

finite = st.floats(-10, 10, allow_nan=False)
unit = st.floats(0.01, 0.99)


# social interaction weight

def test_sif_equal_indices_split_evenly():
    assert sif(0.5, 0.5, 1.0, 5.0, 0.5) == 0.5


def test_sif_share_before_completion():
    assert sif(0.7, 0.3, 1.0, 5.0, 0.5) == pytest.approx(0.7, abs=1e-15)


def test_sif_gaussian_branch_at_half_decay():
    b = 0.5
    assert sif(0.7, 0.3, 5.0 + b * math.sqrt(math.log(2)), 5.0, b) == pytest.approx(-0.35, abs=1e-12)


@given(unit, unit, st.floats(1.0, 50.0), st.floats(1.0, 50.0), st.floats(0.0, 0.999))
def test_sif_partition(s_k, s_l, tc_k, tc_l, frac):
    t = frac * min(tc_k, tc_l)
    assert abs(sif(s_k, s_l, t, tc_k, 0.5) + sif(s_l, s_k, t, tc_l, 0.5) - 1.0) <= 1e-12


@given(unit, unit, unit, st.floats(0.0, 0.999))
def test_sif_increases_with_own_index(a, b, s_l, frac):
    lo, hi = sorted((a, b))
    if hi - lo < 1e-6:
        return
    t = frac * 10.0
    assert sif(hi, s_l, t, 10.0, 0.5) > sif(lo, s_l, t, 10.0, 0.5)


# goal term

def test_goal_term_vanishes_after_completion():
    np.testing.assert_array_equal(goal_attraction([0.0, 0.0], [1.0, 2.0], 5.0, 5.0, 0.3), [0.0, 0.0])
    np.testing.assert_array_equal(goal_attraction([0.0, 0.0], [1.0, 2.0], 7.0, 5.0, 0.3), [0.0, 0.0])


def test_goal_term_zero_at_target():
    np.testing.assert_array_equal(goal_attraction([1.0, 2.0], [1.0, 2.0], 1.0, 5.0, 0.3), [0.0, 0.0])


def test_goal_term_hand_value():
    # 0.05 * (120 / 60) * 1
    np.testing.assert_allclose(goal_attraction([0.0, 0.0], [1.0, 0.0], 60.0, 120.0, 0.05), [0.1, 0.0],
                               atol=1e-15)


def test_goal_term_time_factor_is_capped():
    v = goal_attraction([0.0], [1.0], 5.0 - 1e-12, 5.0, 1.0)
    assert v[0] == pytest.approx(1e6)


# switches and repulsion

def test_obstacle_switch_zero_at_and_beyond_boundary():
    rho_max = 0.5
    on_edge, *_ = obstacle_terms([1.0 + rho_max, 0.0], [0.0, 0.0], 1.0, rho_max, 0.3)
    beyond, *_ = obstacle_terms([3.0, 0.0], [0.0, 0.0], 1.0, rho_max, 0.3)
    assert on_edge == pytest.approx(0.0, abs=1e-15)
    assert beyond == 0.0


def test_agent_switch_zero_at_and_beyond_boundary():
    reach = 0.9 + 0.9
    at, *_ = agent_terms([reach, 0.0], [0.0, 0.0], 0.6, 0.6, 0.9, 0.9)
    far, *_ = agent_terms([2 * reach, 0.0], [0.0, 0.0], 0.6, 0.6, 0.9, 0.9)
    assert at == pytest.approx(0.0, abs=1e-15)
    assert far == 0.0


@pytest.mark.parametrize("eps", [1e-6, 1e-9])
def test_switches_continuous_at_boundary(eps):
    inside, *_ = obstacle_terms([1.5 - eps, 0.0], [0.0, 0.0], 1.0, 0.5, 0.3)
    outside, *_ = obstacle_terms([1.5 + eps, 0.0], [0.0, 0.0], 1.0, 0.5, 0.3)
    assert 0 < inside < 10 * eps and outside == 0.0
    inside, *_ = agent_terms([1.8 - eps, 0.0], [0.0, 0.0], 0.6, 0.6, 0.9, 0.9)
    outside, *_ = agent_terms([1.8 + eps, 0.0], [0.0, 0.0], 0.6, 0.6, 0.9, 0.9)
    assert 0 < inside < 10 * eps and outside == 0.0


def test_center_rhs_continuous_across_agent_boundary():
    sc = parse_scenario(dict(dimension=2, horizon=10, agent_defaults=dict(
        rho_min=0.6, rho_max=0.9, start_radius=1.0, target_radius=1.0, completion_time=10,
        goal_gain=0.2, agent_gains=dict(h2=0.5, h3=0.5)), agents=[
        dict(id="p", social_index=0.5, start_point=[0, 0], target_point=[5, 0]),
        dict(id="q", social_index=0.5, start_point=[0, 3], target_point=[5, 3])]))
    p, q = sc.agents
    vals = []
    for d in np.linspace(1.8 - 1e-4, 1.8 + 1e-4, 21):
        nb = {"q": Neighbor(np.array([0.0, d]), q.rho_min, q.rho_max, q.social_index, q.completion_time)}
        v, _ = center_rhs(p, TubeState("p", np.zeros(2), 0.9, 1.0), nb, (np.zeros((0, 2)), np.zeros(0)), 1.0,
                          agent_ids=["p", "q"])
        vals.append(v)
    steps = np.linalg.norm(np.diff(vals, axis=0), axis=1)
    assert steps.max() < 1e-3


def test_null_space_vector_2d_rotation():
    v = null_space_vector(np.array([3.0, 4.0]), np.array([-4.0, 3.0]))
    np.testing.assert_allclose(v, [-4.0, 3.0])
    v = null_space_vector(np.array([3.0, 4.0]), np.array([4.0, -3.0]))
    np.testing.assert_allclose(v, [4.0, -3.0])


@settings(max_examples=200)
@given(st.integers(2, 6).flatmap(lambda n: st.tuples(arrays(float, n, elements=finite),
                                                     arrays(float, n, elements=finite))))
def test_null_space_vector_orthogonal_same_norm_goal_biased(pair):
    m, goal = pair
    if np.linalg.norm(m) < 1e-3:
        return
    v = null_space_vector(m, goal)
    assert abs(m @ v) <= 1e-12 * np.linalg.norm(m) * np.linalg.norm(v) + 1e-300
    assert np.linalg.norm(v) == pytest.approx(np.linalg.norm(m), rel=1e-12)
    assert v @ goal >= -1e-12 * np.linalg.norm(v) * np.linalg.norm(goal)


def test_null_space_vector_parallel_goal_3d():
    m = np.array([0.0, 0.0, 2.0])
    v = null_space_vector(m, np.array([0.0, 0.0, 5.0]))
    assert abs(m @ v) < 1e-12 and np.linalg.norm(v) == pytest.approx(2.0)


def test_repulsion_denominator_floor_flags_singularity():
    _, m, _, clamped = obstacle_terms([1.3, 0.0], [0.0, 0.0], 1.0, 0.5, 0.3)
    assert clamped and np.all(np.isfinite(m))
    assert np.linalg.norm(m) == pytest.approx(1.3 / DEN_FLOOR ** 3)


def test_center_rhs_alone_equals_goal_term():
    sc = parse_scenario(dict(dimension=2, horizon=5, agents=[dict(
        id="a", social_index=0.5, start_point=[0, 0], target_point=[4, 3], start_radius=1, target_radius=1,
        completion_time=5, rho_min=0.3, rho_max=0.5, goal_gain=0.3)]))
    a = sc.agents[0]
    sigma = np.array([1.0, 0.5])
    v, near = center_rhs(a, TubeState("a", sigma, 0.5, 2.0), {}, (np.zeros((0, 2)), np.zeros(0)), 2.0)
    np.testing.assert_array_equal(v, goal_attraction(sigma, a.target_point, 2.0, 5.0, 0.3))
    assert not near


def test_center_rhs_zero_after_completion_when_clear():
    sc = parse_scenario(dict(dimension=2, horizon=5, obstacles=[dict(
        id="o", motion=dict(kind="static", center=[20, 20]), radius=1.0)], agents=[dict(
        id="a", social_index=0.5, start_point=[0, 0], target_point=[4, 3], start_radius=1, target_radius=1,
        completion_time=5, rho_min=0.3, rho_max=0.5, goal_gain=0.3)]))
    v, _ = center_rhs(sc.agents[0], TubeState("a", np.array([4.0, 3.0]), 0.5, 6.0), {}, sc.obstacle_states(6.0), 6.0)
    np.testing.assert_array_equal(v, [0.0, 0.0])


# clearances and radius

def test_obstacle_clearance_values():
    assert d_prime_obstacle([3.0, 0.0], [0.0, 0.0], 1.0) == 2.0
    assert d_prime_obstacle([1.0, 0.0], [0.0, 0.0], 1.0) == 0.0
    assert d_prime_obstacle([0.5, 0.0], [0.0, 0.0], 1.0) < 0


def test_agent_clearance_weighting():
    sk, sl = np.array([0.0, 0.0]), np.array([2.0, 0.0])
    assert d_prime_agent(sk, sl, 0.3, 0.4, 0.0) == pytest.approx(0.3 + (2.0 - 0.7))
    assert d_prime_agent(sk, sl, 0.3, 0.4, 1.0) == pytest.approx(0.3)
    assert d_prime_agent(sk, np.array([0.7, 0.0]), 0.3, 0.4, 0.37) == pytest.approx(0.3)


def test_smooth_min_values():
    assert smooth_min([0.7], 10.0) == pytest.approx(0.7, abs=1e-15)
    assert smooth_min([0.4, 0.4], 10.0) == pytest.approx(0.4 - math.log(2) / 10, abs=1e-15)
    assert smooth_min([1.0, 100.0], 10.0) == pytest.approx(1.0, abs=1e-9)
    assert smooth_min(np.zeros(0), 10.0) == math.inf


def test_radius_equal_entries():
    assert radius_closed_form(0.5, 0.5, 0.5, 10.0) == pytest.approx(0.5 - math.log(3) / 10, abs=1e-15)


def test_radius_far_from_everything_is_rho_max():
    assert abs(radius_closed_form(0.5 + 1.0, 0.5 + 1.0, 0.5, 10.0) - 0.5) < 1e-4
    assert radius_closed_form(math.inf, math.inf, 0.5, 10.0) == 0.5


def test_radius_lower_bound_frozen_value():
    # -(1/10) ln(e^-9 + 2 e^-6)
    assert radius_lower_bound(0.9, 0.6, 10.0) == pytest.approx(0.528226, abs=1e-6)


@given(st.floats(-2, 5), st.floats(-2, 5), st.floats(0.01, 3), st.floats(0.5, 50))
def test_radius_never_exceeds_any_entry(d1, d2, rho_max, nu):
    assert radius_closed_form(d1, d2, rho_max, nu) <= min(rho_max, d1, d2) + 1e-12


@given(st.floats(0.01, 2), st.floats(1e-3, 2), st.floats(0, 3), st.floats(1e-9, 3), st.floats(0.5, 50))
def test_radius_above_lower_bound(rho_min, extra, a, b, nu):
    rho_max = rho_min + extra
    rho = radius_closed_form(rho_min + a, rho_min + b, rho_max, nu)
    assert rho > radius_lower_bound(rho_max, rho_min, nu)


@given(st.floats(0.01, 2), st.floats(1e-3, 2), st.floats(0.5, 50))
def test_lower_bound_positive_when_ordered(rho_min, extra, nu):
    # positive as long as 2 e^{-nu rho_min} + e^{-nu rho_max} < 1
    bound = radius_lower_bound(rho_min + extra, rho_min, nu)
    assert (bound > 0) == (2 * math.exp(-nu * rho_min) + math.exp(-nu * (rho_min + extra)) < 1)


def test_tube_radius_matches_field():
    sc = parse_scenario(dict(dimension=2, horizon=10, obstacles=[dict(
        id="o", motion=dict(kind="static", center=[1.0, 1.2]), radius=0.3)], agent_defaults=dict(
        rho_min=0.3, rho_max=0.5, start_radius=0.6, target_radius=0.6, completion_time=10, goal_gain=0.2),
        agents=[dict(id="p", social_index=0.3, start_point=[0, 0], target_point=[5, 0]),
                dict(id="q", social_index=0.8, start_point=[0, 1.3], target_point=[5, 1.3])]))
    field_ = TubeField(sc)
    sigma = np.array([[0.2, 0.1], [0.4, 1.5]])
    rho, d1, d2 = field_.radii(sigma, 1.0, *sc.obstacle_states(1.0))
    for k, a in enumerate(sc.agents):
        nb = {b.id: Neighbor(sigma[l], b.rho_min, b.rho_max, b.social_index, b.completion_time)
              for l, b in enumerate(sc.agents) if l != k}
        r, e1, e2 = tube_radius(a, sigma[k], nb, sc.obstacle_states(1.0), 1.0, sc.nu)
        assert (r, e1, e2) == pytest.approx((rho[k], d1[k], d2[k]), abs=1e-12)


@pytest.mark.parametrize("n", [2, 3])
def test_batched_field_agrees_with_per_agent_rhs(n):
    rng = np.random.default_rng(n)
    A = 4
    agents = [dict(id=f"a{k}", social_index=float(rng.uniform(0.1, 0.9)),
                   start_point=(3 * k * np.eye(n)[0]).tolist(), target_point=(3 * k * np.eye(n)[0] + 9).tolist(),
                   completion_time=float(5 + k)) for k in range(A)]
    sc = parse_scenario(dict(dimension=n, horizon=10, obstacles=[dict(
        id="o", motion=dict(kind="static", center=[2.0] * n), radius=0.5)], agent_defaults=dict(
        rho_min=0.3, rho_max=0.5, start_radius=0.6, target_radius=0.6, goal_gain=0.3,
        agent_gains=dict(h2=0.2, h3=0.1), obstacle_gains=dict(h2=0.3, h3=0.2)), agents=agents))
    field_ = TubeField(sc)
    ids = [a.id for a in sc.agents]
    for _ in range(30):
        snap = rng.uniform(0, 3, (A, n))
        sigma = snap + rng.normal(0, 0.05, (A, n))
        t = float(rng.uniform(0, 8))
        obs = sc.obstacle_states(t)
        vel, *_ = field_.rhs(sigma, t, snap, *obs)
        for k, a in enumerate(sc.agents):
            nb = {b.id: Neighbor(snap[l], b.rho_min, b.rho_max, b.social_index, b.completion_time)
                  for l, b in enumerate(sc.agents) if l != k}
            v, _ = center_rhs(a, TubeState(a.id, sigma[k], 0.5, t), nb, obs, t, agent_ids=ids)
            np.testing.assert_allclose(vel[k], v, rtol=1e-10, atol=1e-10)
