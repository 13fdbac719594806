import math

import numpy as np
import pytest

from cvcert.bounds import ProtocolParams, acceptance_probability, p_null_gaussian, soundness_joint_bound
from cvcert.graph import NoiseModel, new_weighted_graph, path_graph
from cvcert.oracles import povm_integral_oracle
from cvcert.planner import plan_parameters, scaled_plan
from cvcert.protocol import (
    DisplacedIID,
    Honest,
    Mixture,
    PermutedBlock,
    estimate_conditional_pass,
    estimate_joint_failure,
    register_pass_probability,
    run_protocol,
    simulate_runs,
    source_to_json,
)

SMALL = ProtocolParams(n=2, N_test=20, mu_ratio=4, f=0.1, epsilon=1.0, nu_serfling=0.1)


def test_pass_probability_at_origin():
    eps, delta, n = 0.8, 0.3, 3
    value = register_pass_probability(np.zeros(n), math.inf, eps, np.full(n, delta))
    assert value == pytest.approx((eps / math.hypot(eps, delta)) ** n, rel=1e-14)


def test_pass_probability_far_shift():
    assert register_pass_probability([1e3], 10.0, 1.0, [0.1]) == 0.0


def test_pass_probability_quadrature_oracle():
    # displaced near-ideal register, width 1/sigma, integrated numerically
    value = register_pass_probability([1.0], 1e4, 1.0, [0.0])
    assert value == pytest.approx(povm_integral_oracle(1e-4, 1.0, 1.0), abs=1e-6)
    assert value == pytest.approx(0.3678794430108395, abs=1e-6)


@pytest.mark.parametrize("s, sigma, eps, delta", [(0.5, 2.0, 1.0, 0.3), (-2.0, 0.7, 3.0, 1.0), (0.0, 5.0, 0.2, 0.0)])
def test_pass_probability_matches_quadrature(s, sigma, eps, delta):
    width = math.sqrt(delta**2 + 1 / sigma**2)
    assert register_pass_probability([s], sigma, eps, [delta]) == pytest.approx(povm_integral_oracle(width, eps, s), abs=1e-10)


def test_run_outcome_invariants():
    out = run_protocol(SMALL, NoiseModel(0.1, 0.1), Honest(3.0), k=2, seed=5, record=True)
    assert out.N_pass <= SMALL.n_measured
    assert out.accepted == (out.N_pass >= math.ceil(0.9 * 40))
    assert len(out.kept_registers) == 2
    m = out.measurements
    assert len(m["g"]) == 40 and set(m["nullifier"]) == {1, 2}
    kept = {r for r, _ in out.kept_registers}
    assert kept.isdisjoint(set(m["register"]))
    assert len(set(m["register"])) == 40


def test_same_seed_same_outcome():
    src = Mixture(3.0, 0.3, 2.0)
    a = run_protocol(SMALL, NoiseModel(0.1, 0.0), src, 1, seed=[7, 1], record=True)
    b = run_protocol(SMALL, NoiseModel(0.1, 0.0), src, 1, seed=[7, 1], record=True)
    assert a.to_json() == b.to_json()


def test_insufficient_registers():
    p = ProtocolParams(n=1, N_test=10, mu_ratio=1.05, f=0.0)
    with pytest.raises(ValueError, match="insufficient"):
        run_protocol(p, NoiseModel(), Honest(1.0), 2, 0)


def test_graph_size_mismatch():
    with pytest.raises(ValueError):
        run_protocol(SMALL, NoiseModel(), Honest(1.0), 1, 0, graph=path_graph(3))


def test_source_validation():
    with pytest.raises(ValueError):
        Mixture(1.0, 1.5, 1.0)
    with pytest.raises(ValueError):
        Honest(math.inf)
    with pytest.raises(ValueError):
        run_protocol(SMALL, NoiseModel(), PermutedBlock(1.0, 10**6, 1.0), 1, 0)
    with pytest.raises(ValueError):
        run_protocol(SMALL, NoiseModel(), DisplacedIID(1.0, (1.0, 2.0, 3.0)), 1, 0)


def test_source_json():
    assert source_to_json(DisplacedIID(2.0, np.array([1.0, 2.0]))) == {"variant": "DisplacedIID", "sigma": 2.0, "shift": [1.0, 2.0]}


def test_honest_acceptance_rate_matches_binomial_tail():
    delta = 0.1
    plan = scaled_plan(plan_parameters(1, 0.1, 0.9), 100)
    params = plan.protocol_params(delta)
    rows = simulate_runs(params, NoiseModel(p_width=delta), Honest(1 / delta), 1, 200, seed=2)
    rate = np.mean([r[1] for r in rows])
    expected = acceptance_probability(p_null_gaussian(1 / delta, delta, params.epsilon), 1, params.N_test, params.f).value
    assert abs(rate - expected) <= 3 * math.sqrt(expected * (1 - expected) / 200)


def test_all_bad_source_rejected():
    rows = simulate_runs(SMALL, NoiseModel(), Mixture(5.0, 1.0, 1e3), 1, 200, seed=1)
    assert sum(r[1] for r in rows) <= 1


def test_trials_must_be_positive():
    with pytest.raises(ValueError):
        estimate_joint_failure(SMALL, NoiseModel(), Honest(2.0), 1, 0, 0)


def test_honest_joint_failure_below_table_bound():
    delta = 0.1
    plan = plan_parameters(1, 0.1, 0.9)
    params = plan.protocol_params(delta)
    est = estimate_joint_failure(params, NoiseModel(p_width=delta), Honest(1 / delta), 1, 20, seed=0)
    assert est.bound.value <= 0.1
    assert not est.violated
    assert est.estimate <= 0.1


@pytest.mark.parametrize("q", [0.1, 0.3, 0.5, 0.7, 0.9])
def test_mixture_grid_not_violated(q):
    p = ProtocolParams(n=1, N_test=461, mu_ratio=2, f=0.1, epsilon=1.0, nu_serfling=0.1)
    est = estimate_joint_failure(p, NoiseModel(), Mixture(10.0, q, 10.0), 1, 200, seed=11)
    assert not est.violated
    assert est.bound.value == pytest.approx(soundness_joint_bound(p).value)


def test_conditional_honest_matches_independence():
    sigma, eps = 1e3, 1.0
    p = ProtocolParams(n=2, N_test=50, mu_ratio=4, f=0.1, epsilon=eps, nu_serfling=0.1)
    est = estimate_conditional_pass(p, NoiseModel(), Honest(sigma), 2, 100, seed=3)
    expected = p_null_gaussian(sigma, 0.0, eps) ** 4
    assert abs(est.estimate - expected) <= 3 * est.stderr + 1e-9


def test_conditional_insufficient():
    est = estimate_conditional_pass(SMALL, NoiseModel(), Mixture(5.0, 1.0, 1e3), 1, 20, seed=1)
    assert est.insufficient and est.estimate is None and not est.violated


def test_conditional_permuted_block_not_violated():
    p = ProtocolParams(n=1, N_test=400, mu_ratio=2, f=0.1, epsilon=1.0, nu_serfling=0.1)
    block = PermutedBlock(10.0, math.ceil(0.05 * p.N_total), 5.0)
    est = estimate_conditional_pass(p, NoiseModel(), block, 1, 500, seed=8)
    assert not est.violated


def test_rao_blackwell_consistency():
    p = ProtocolParams(n=2, N_test=20, mu_ratio=4, f=0.15, epsilon=1.0, nu_serfling=0.1)
    noise = NoiseModel(0.2, 0.1)
    src = Mixture(3.0, 0.2, 1.0)
    analytic = estimate_joint_failure(p, noise, src, 1, 10_000, seed=4)
    sampled = estimate_joint_failure(p, noise, src, 1, 10_000, seed=4, second_layer="sampled")
    se = math.hypot(analytic.stderr, sampled.stderr)
    assert abs(analytic.estimate - sampled.estimate) <= 3 * se


def test_permutation_invariance_of_register_order():
    # relabelling vertices permutes the nullifiers; acceptance statistics must not change
    p = ProtocolParams(n=3, N_test=30, mu_ratio=6, f=0.1, epsilon=1.0, nu_serfling=0.05)
    g = new_weighted_graph(3, [(1, 2, 1.0), (2, 3, 0.5)])
    h = g.relabel({1: 3, 2: 1, 3: 2})
    noise = NoiseModel(0.1, 0.2)
    src = Mixture(4.0, 0.05, 1.0)
    a = np.mean([r[1] for r in simulate_runs(p, noise, src, 1, 2000, 1, graph=g)])
    b = np.mean([r[1] for r in simulate_runs(p, noise, src, 1, 2000, 2, graph=h)])
    se = math.sqrt(a * (1 - a) / 2000 + b * (1 - b) / 2000)
    assert abs(a - b) <= 3 * se + 1e-12


def test_results_independent_of_workers():
    args = (SMALL, NoiseModel(0.1, 0.1), Mixture(3.0, 0.2, 1.5), 1, 12, 99)
    assert simulate_runs(*args, workers=1) == simulate_runs(*args, workers=3)
