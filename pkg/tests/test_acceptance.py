"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line."""

import contextlib
import io
import itertools
import json
import math
import time

import numpy as np
from scipy import stats

from cvcert.applications import (
    Gate,
    mbqc_run_program,
    mbqc_initial_state,
    mbqc_sample_program,
    optimize_fisher,
    simulate_teleportation,
)
from cvcert.bounds import (
    ProtocolParams,
    concentration_exact,
    concentration_noisy,
    nullifier_sum_tail,
    p_null_gaussian,
)
from cvcert.cli import main
from cvcert.graph import NoiseModel
from cvcert.oracles import (
    check_concentration_bounds,
    check_lnn_inequalities,
    check_serfling_sampling,
    fisher_grid_oracle,
    povm_integral_oracle,
)
from cvcert.planner import (
    COUNT_REL_TOL,
    P_STAB_TOL,
    PUBLISHED_TABLE,
    RATIO_TOL,
    n_test_for_lambda,
    plan_parameters,
    scaled_plan,
    table1_rows,
)
from cvcert.protocol import Honest, Mixture, PermutedBlock, estimate_joint_failure, simulate_runs


def _ks_width(samples, width):
    return stats.kstest(samples, stats.norm(scale=width / math.sqrt(2.0)).cdf).pvalue


def test_criterion_1_table(acceptance_record):
    start = time.perf_counter()
    rows = table1_rows()
    checks = {}
    for r in rows:
        n, plan, pub = r["n"], r["plan"], r["published"]
        checks[f"n={n} lambda"] = plan["lam"] == (4 * n + 1) / 0.1
        checks[f"n={n} N_test"] = r["N_test_rel_dev"] <= COUNT_REL_TOL
        checks[f"n={n} N_total"] = r["N_total_rel_dev"] <= COUNT_REL_TOL
        checks[f"n={n} P_stab"] = abs(plan["P_stab"] - pub["P_stab"]) <= P_STAB_TOL
        checks[f"n={n} eps/delta"] = abs(plan["eps_over_delta"] - pub["eps_over_delta"]) <= RATIO_TOL
    n100 = " ".join(rows[-1]["discrepancies"])
    checks["n=100 discrepancy reported"] = "eps/delta at the published P_stab" in n100 and "4020" in n100
    elapsed = time.perf_counter() - start
    checks["runtime < 10 s"] = elapsed < 10
    failed = [k for k, ok in checks.items() if not ok]
    devs = {r["n"]: round(100 * max(r["N_test_rel_dev"], r["N_total_rel_dev"]), 2) for r in rows}
    acceptance_record(
        1, not failed, f"{len(checks) - len(failed)}/{len(checks)} sub-checks; failed={failed}; count dev %={devs}"
    )
    assert set(PUBLISHED_TABLE) == {1, 2, 5, 10, 100}
    assert not failed, f"table sub-checks failed: {failed}"


def test_criterion_2_povm_oracle(acceptance_record):
    start = time.perf_counter()
    worst = 0.0
    for sigma, delta, eps in itertools.product(
        np.geomspace(0.3, 1e3, 5), np.linspace(0.0, 2.0, 5), np.geomspace(0.05, 20.0, 5)
    ):
        width = math.sqrt(delta**2 + 1.0 / sigma**2)
        worst = max(worst, abs(p_null_gaussian(sigma, delta, eps) - povm_integral_oracle(width, eps)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed < 5
    acceptance_record(2, ok, f"125 points, max |diff|={worst:.2e}, {elapsed:.2f}s")
    assert ok


def test_criterion_3_completeness(acceptance_record):
    start = time.perf_counter()
    delta, runs = 0.1, 200
    details, ok = [], True
    for n in (1, 2):
        plan = scaled_plan(plan_parameters(n, 0.1, 0.9), 100)
        params = plan.protocol_params(delta)
        rows = simulate_runs(params, NoiseModel(p_width=delta), Honest(1.0 / delta), 1, runs, seed=300 + n)
        rate = float(np.mean([r[1] for r in rows]))
        se = math.sqrt(rate * (1.0 - rate) / runs)
        passed = rate >= plan.P_acc_target - 3.0 * se
        ok &= passed
        details.append(f"n={n} N_test={plan.N_test} rate={rate:.3f}+-{se:.3f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 300
    acceptance_record(3, ok, f"{'; '.join(details)}; {elapsed:.1f}s")
    assert ok


def _soundness_parameter_sets():
    return [
        ProtocolParams(n=1, N_test=461, mu_ratio=2, f=0.1, epsilon=1.0, nu_serfling=0.1),
        ProtocolParams(n=2, N_test=n_test_for_lambda(2, 20), mu_ratio=4, f=0.05, epsilon=1.0, nu_serfling=0.05),
        ProtocolParams(n=1, N_test=400, mu_ratio=3, f=0.05, epsilon=1.0, nu_serfling=0.1),
    ]


def test_criterion_4_soundness(acceptance_record):
    start = time.perf_counter()
    sigma, trials = 10.0, 1000
    cells, violations, worst_gap = 0, [], -math.inf
    for i, params in enumerate(_soundness_parameter_sets()):
        eps = params.epsilon
        sources = [Mixture(sigma, q, s * eps) for q in (0.1, 0.3, 0.5, 0.9) for s in (2, 5, 10)]
        sources += [PermutedBlock(sigma, math.ceil(frac * params.N_total), 5 * eps) for frac in (0.05, 0.2)]
        for j, source in enumerate(sources):
            est = estimate_joint_failure(params, NoiseModel(), source, 1, trials, seed=4000 + 100 * i + j)
            cells += 1
            worst_gap = max(worst_gap, est.estimate - 3 * est.stderr - est.bound.value)
            if est.violated:
                violations.append((i, source))
    elapsed = time.perf_counter() - start
    ok = not violations and cells >= 36 and elapsed < 600
    acceptance_record(
        4, ok, f"{cells} cells, violations={len(violations)}, max(est-3se-bound)={worst_gap:.3f}, {elapsed:.1f}s"
    )
    assert ok, violations


def test_criterion_5_lemma_suites(acceptance_record):
    start = time.perf_counter()
    lnn = check_lnn_inequalities(n_max=12, trials=10_000, seed=5)
    serf = check_serfling_sampling(200, 100, 20_000, 0.1, seed=5)
    shapes = len(serf.worst_case["shapes"])
    elapsed = time.perf_counter() - start
    ok = lnn.passed(1e-12) and serf.passed(0.0) and shapes == 6 and elapsed < 120
    acceptance_record(
        5,
        ok,
        f"L_N^n max violation={lnn.max_violation:.1e} over {lnn.cases_tested} cases; "
        f"sampling max(freq-bound-3se)={serf.max_violation:.3f} over {shapes} shapes; {elapsed:.1f}s",
    )
    assert ok


def _concentration_bounds(x, Delta, eta, mu):
    out = {"sum2": nullifier_sum_tail(2, x, Delta, eta).raw}
    if mu == 0:
        out["exact"] = concentration_exact(x, Delta, eta).raw
    else:
        noisy = concentration_noisy(x, Delta, eta, mu)
        out.update({k: getattr(noisy, k).raw for k in ("v1", "v2", "v3") if getattr(noisy, k) is not None})
    return out


def test_criterion_6_concentration(acceptance_record):
    start = time.perf_counter()
    grid = list(itertools.product([0.5, 1.0, 2.0, 4.0], [0.5, 1.0, 2.0], [0.01, 0.1, 0.3], [0.0, 0.3, 1.0]))
    report = check_concentration_bounds(_concentration_bounds, grid, samples=50_000, seed=6)
    elapsed = time.perf_counter() - start
    ok = len(grid) >= 100 and report.passed(0.0) and elapsed < 300
    acceptance_record(
        6,
        ok,
        f"{len(grid)} grid points, {report.cases_tested} (distribution, bound) cases, "
        f"max(bound-freq-3se)={report.max_violation:.2e}, {elapsed:.1f}s",
    )
    assert ok, report.worst_case


def _random_program(rng):
    depth = int(rng.integers(1, 11))
    return [Gate("xshift") if rng.random() < 0.4 else Gate("shear", float(rng.uniform(-2, 2))) for _ in range(depth)]


def test_criterion_7_teleport_mbqc(acceptance_record):
    start = time.perf_counter()
    tele = simulate_teleportation(4.0, NoiseModel(x_width=0.2), (0.5, -0.5), 100_000, seed=7)
    p_tele = min(_ks_width(tele.x_samples, tele.predicted_width), _ks_width(tele.p_samples, tele.predicted_width))
    rng = np.random.default_rng(2026)
    p_mbqc = []
    for _ in range(20):
        program = _random_program(rng)
        mw, gw, x0, p0 = rng.uniform(0.05, 0.5, 4)
        state = mbqc_run_program(program, mw, gw, initial=mbqc_initial_state(x0, p0))
        x, p = mbqc_sample_program(program, mw, gw, rng, 20_000, x0, p0)
        wx, wp = state.widths()
        p_mbqc.append(min(_ks_width(x, wx), _ks_width(p, wp)))
    elapsed = time.perf_counter() - start
    low = sum(p < 0.01 for p in p_mbqc)
    ok = p_tele > 0.01 and low == 0 and elapsed < 300
    acceptance_record(
        7, ok, f"teleport min KS p={p_tele:.3f}; MBQC 20 programs min KS p={min(p_mbqc):.3f}, {elapsed:.1f}s"
    )
    assert ok


def test_criterion_8_metrology(acceptance_record):
    start = time.perf_counter()
    worst_rel, worst_hom = 0.0, 0.0
    for eta, mu, Delta in itertools.product((0.0, 0.1, 0.3), (0.05, 0.1, 0.5), (0.05, 0.1, 0.5)):
        _, q = optimize_fisher(eta, mu, Delta)
        _, q_grid = fisher_grid_oracle(eta, mu, Delta)
        worst_rel = max(worst_rel, abs(q - q_grid) / q_grid)
        for c in (0.01, 2.5, 40.0):
            worst_hom = max(worst_hom, abs(optimize_fisher(eta, c * mu, c * Delta)[1] * c * c - q) / q)
    elapsed = time.perf_counter() - start
    ok = worst_rel <= 1e-6 and worst_hom <= 1e-9 and elapsed < 60
    acceptance_record(
        8, ok, f"27 points, max rel vs grid={worst_rel:.1e}, homogeneity max rel={worst_hom:.1e}, {elapsed:.2f}s"
    )
    assert ok


def _simulate_json(argv):
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = main(argv)
    return code, json.loads(buf.getvalue())


def test_criterion_9_determinism(acceptance_record):
    configs = [
        ["--n", "1", "--ntest", "40", "--source", "honest"],
        ["--n", "2", "--ntest", "25", "--source", "mixture", "--q", "0.2", "--shift", "3", "--conditional"],
        ["--n", "3", "--ntest", "20", "--source", "block", "--bad-count", "10", "--shift", "1,2,3", "--mux", "0.1",
         "--f", "0.05"],
    ]
    mismatches = 0
    for cfg in configs:
        outputs = [
            _simulate_json(["simulate", *cfg, "--trials", "13", "--seed", "12345", "--workers", w])
            for w in ("1", "2", "4")
        ]
        mismatches += sum(o != outputs[0] for o in outputs[1:])
    ok = mismatches == 0
    acceptance_record(9, ok, f"{len(configs)} configs x workers 1/2/4, mismatches={mismatches}")
    assert ok
