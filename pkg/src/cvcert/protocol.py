"""Monte Carlo simulation of the certification protocol.

One run: request ``N_total`` registers from a source, shuffle them, measure
nullifier ``i`` on ``N_test`` of them for every ``i``, accept each outcome
``g`` with probability ``exp(-g**2/eps**2)``, accept the batch when enough
tests passed, and keep ``k`` of the unmeasured registers.

Kept registers are scored analytically: every implemented source emits
displaced graph states, on which the per-register pass operator is diagonal
with a closed-form eigenvalue (see :func:`register_pass_probability`).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bounds import Bound, ProtocolParams, soundness_conditional_bound, soundness_joint_bound
from .gaussian import NullifierSampler, graph_state_covariance
from .graph import NoiseModel, WeightedGraph, combined_measurement_noise, nullifier_coefficients, path_graph

# ---------------------------------------------------------------------- sources


def _shift_vector(shift, n: int) -> np.ndarray:
    s = np.asarray(shift, dtype=float)
    if s.ndim == 0:
        return np.full(n, float(s))
    if s.shape != (n,):
        raise ValueError(f"shift must be a scalar or have length {n}, got shape {s.shape}")
    return s


def _check_sigma(sigma: float) -> None:
    if not (sigma > 0 and math.isfinite(sigma)):
        raise ValueError(f"source squeezing must be positive and finite, got {sigma}")


def _freeze_shift(source) -> None:
    s = np.asarray(source.shift, dtype=float)
    object.__setattr__(source, "shift", float(s) if s.ndim == 0 else tuple(float(v) for v in s))


@dataclass(frozen=True)
class Honest:
    """Every register is the finitely squeezed graph state."""

    sigma: float

    def __post_init__(self):
        _check_sigma(self.sigma)

    def register_shifts(self, rng: np.random.Generator, N_total: int, n: int) -> np.ndarray:
        return np.zeros((N_total, n))


@dataclass(frozen=True)
class DisplacedIID:
    """Every register displaced by the same nullifier shift ``s``."""

    sigma: float
    shift: tuple | float

    def __post_init__(self):
        _check_sigma(self.sigma)
        _freeze_shift(self)

    def register_shifts(self, rng, N_total, n):
        return np.tile(_shift_vector(self.shift, n), (N_total, 1))


@dataclass(frozen=True)
class Mixture:
    """Each register independently displaced by ``shift`` with probability ``q``."""

    sigma: float
    q: float
    shift: tuple | float

    def __post_init__(self):
        _check_sigma(self.sigma)
        _freeze_shift(self)
        if not 0.0 <= self.q <= 1.0:
            raise ValueError(f"q={self.q} must lie in [0, 1]")

    def register_shifts(self, rng, N_total, n):
        bad = rng.random(N_total) < self.q
        return np.outer(bad, _shift_vector(self.shift, n))


@dataclass(frozen=True)
class PermutedBlock:
    """Exactly ``bad_count`` displaced registers, in uniformly random positions."""

    sigma: float
    bad_count: int
    shift: tuple | float

    def __post_init__(self):
        _check_sigma(self.sigma)
        _freeze_shift(self)
        if self.bad_count < 0:
            raise ValueError("bad_count must be non-negative")

    def register_shifts(self, rng, N_total, n):
        if self.bad_count > N_total:
            raise ValueError(f"bad_count={self.bad_count} exceeds N_total={N_total}")
        bad = np.zeros(N_total, dtype=bool)
        bad[: self.bad_count] = True
        rng.shuffle(bad)
        return np.outer(bad, _shift_vector(self.shift, n))


SourceModel = Honest | DisplacedIID | Mixture | PermutedBlock


def source_to_json(source) -> dict:
    out = {"variant": type(source).__name__}
    for key, value in source.__dict__.items():
        out[key] = list(value) if isinstance(value, tuple) else value
    return out


# --------------------------------------------------------------- pass operator


def register_pass_probability(shift, sigma: float, epsilon: float, delta_vec) -> float:
    """Probability that a displaced graph-state register passes all its nullifier tests.

    ``prod_j eps/sqrt(eps**2 + d_j) * exp(-s_j**2/(eps**2 + d_j))`` with
    ``d_j = delta_j**2 + 1/sigma**2``; ``sigma = inf`` is the ideal state.
    """
    s = np.atleast_1d(np.asarray(shift, dtype=float))
    d = np.broadcast_to(np.asarray(delta_vec, dtype=float), s.shape)
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    spread = epsilon**2 + d**2 + (0.0 if math.isinf(sigma) else 1.0 / sigma**2)
    return float(np.prod(epsilon / np.sqrt(spread) * np.exp(-(s**2) / spread)))


# --------------------------------------------------------------------- one run


@dataclass
class RunOutcome:
    """Result of one protocol execution.

    ``measurements`` is filled only when recording is requested and then holds
    parallel arrays ``register``, ``nullifier``, ``g`` and ``passed``.
    """

    accepted: bool
    N_pass: int
    threshold: int
    kept_registers: list
    seed: object
    measurements: dict | None = None
    kept_pass_sampled: list | None = None

    def to_json(self) -> dict:
        out = {
            "accepted": self.accepted,
            "N_pass": self.N_pass,
            "threshold": self.threshold,
            "kept_registers": [{"register": int(r), "shift": s.tolist()} for r, s in self.kept_registers],
            "seed": self.seed,
        }
        if self.measurements is not None:
            out["measurements"] = {k: v.tolist() for k, v in self.measurements.items()}
        return out


class ProtocolSimulator:
    """Reusable simulator; builds the honest nullifier samplers once."""

    def __init__(self, params: ProtocolParams, noise: NoiseModel, source, k: int, graph: WeightedGraph | None = None):
        graph = path_graph(params.n) if graph is None else graph
        if graph.n != params.n:
            raise ValueError(f"graph has {graph.n} vertices but params.n={params.n}")
        if k < 0:
            raise ValueError("k must be non-negative")
        if params.N_total < params.n_measured + k:
            raise ValueError(
                f"insufficient registers: N_total={params.N_total} < n N_test + k = {params.n_measured + k}"
            )
        self.params, self.noise, self.source, self.k, self.graph = params, noise, source, k, graph
        state = graph_state_covariance(graph, source.sigma)
        self._samplers = [
            NullifierSampler(state, nullifier_coefficients(graph, i), noise) for i in range(1, params.n + 1)
        ]
        self.delta_vec = np.array([combined_measurement_noise(graph, i, noise) for i in range(1, params.n + 1)])

    def run(self, seed, record: bool = False, sample_kept: bool = False) -> RunOutcome:
        p = self.params
        rng = np.random.default_rng(seed)
        shifts = self.source.register_shifts(rng, p.N_total, p.n)
        order = rng.permutation(p.N_total)
        tested = order[: p.n_measured].reshape(p.n, p.N_test)
        kept = order[p.n_measured : p.n_measured + self.k]
        eps2 = p.epsilon**2
        n_pass = 0
        log = [] if record else None
        for i, sampler in enumerate(self._samplers):
            regs = tested[i]
            g = sampler.sample(rng, p.N_test) + shifts[regs, i]
            passed = rng.random(p.N_test) < np.exp(-(g * g) / eps2)
            n_pass += int(passed.sum())
            if record:
                log.append((regs, np.full(p.N_test, i + 1), g, passed))
        measurements = None
        if record:
            measurements = {
                name: np.concatenate([entry[j] for entry in log])
                for j, name in enumerate(("register", "nullifier", "g", "passed"))
            }
        kept_pass = None
        if sample_kept:
            kept_pass = [self._sample_register_pass(rng, shifts[r]) for r in kept]
        return RunOutcome(
            accepted=n_pass >= p.pass_threshold,
            N_pass=n_pass,
            threshold=p.pass_threshold,
            kept_registers=[(int(r), shifts[r].copy()) for r in kept],
            seed=_seed_repr(seed),
            measurements=measurements,
            kept_pass_sampled=kept_pass,
        )

    def _sample_register_pass(self, rng, shift) -> bool:
        eps2 = self.params.epsilon**2
        for i, sampler in enumerate(self._samplers):
            g = sampler.sample(rng, 1)[0] + shift[i]
            if not rng.random() < math.exp(-g * g / eps2):
                return False
        return True

    def kept_pass_probability(self, outcome: RunOutcome) -> float:
        """Analytic probability that every kept register passes."""
        prob = 1.0
        for _, shift in outcome.kept_registers:
            prob *= register_pass_probability(shift, self.source.sigma, self.params.epsilon, self.delta_vec)
        return prob


def _seed_repr(seed):
    if isinstance(seed, (list, tuple)):
        return [int(s) for s in seed]
    return None if seed is None else int(seed)


def run_protocol(
    params: ProtocolParams,
    noise: NoiseModel,
    source,
    k: int,
    seed,
    graph: WeightedGraph | None = None,
    record: bool = False,
) -> RunOutcome:
    """Execute the protocol once. ``graph`` defaults to the path on ``params.n`` vertices."""
    return ProtocolSimulator(params, noise, source, k, graph).run(seed, record=record)


# ------------------------------------------------------------------ estimators


@dataclass
class JointEstimate:
    """Monte Carlo estimate compared with a closed-form bound.

    ``stderr`` is ``sqrt(e (1 - e)/trials)``; for the analytic ``[0, 1]``
    scores this upper-bounds the true standard error. For an upper bound the
    estimate violates it when ``estimate - 3 stderr > bound``; for a lower
    bound when ``estimate + 3 stderr < bound``.
    """

    estimate: float | None
    stderr: float | None
    trials: int
    bound: Bound | None
    violated: bool
    accepted_runs: int
    insufficient: bool = False
    runs: list = field(default_factory=list, repr=False)

    @property
    def acceptance_rate(self) -> float:
        return self.accepted_runs / self.trials

    def to_json(self, include_runs: bool = False) -> dict:
        out = {
            "estimate": self.estimate,
            "stderr": self.stderr,
            "trials": self.trials,
            "bound": None if self.bound is None else self.bound.to_json(),
            "violated": self.violated,
            "accepted_runs": self.accepted_runs,
            "acceptance_rate": self.acceptance_rate,
            "insufficient": self.insufficient,
        }
        if include_runs:
            out["runs"] = [list(r) for r in self.runs]
        return out


def _run_chunk(args):
    params, noise, source, k, graph, seed, indices, second_layer = args
    sim = ProtocolSimulator(params, noise, source, k, graph)
    rows = []
    for t in indices:
        out = sim.run([seed, t], sample_kept=second_layer == "sampled")
        if second_layer == "sampled":
            kept_pass = float(all(out.kept_pass_sampled))
        else:
            kept_pass = sim.kept_pass_probability(out)
        rows.append((t, out.accepted, out.N_pass, kept_pass))
    return rows


def simulate_runs(params, noise, source, k, trials, seed, graph=None, workers=1, second_layer="analytic"):
    """Per-run ``(trial, accepted, N_pass, kept_pass)`` rows in trial order.

    Trial ``t`` always uses the generator seeded with ``[seed, t]``, so the
    rows do not depend on ``workers``.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if second_layer not in ("analytic", "sampled"):
        raise ValueError(f"unknown second_layer {second_layer!r}")
    ProtocolSimulator(params, noise, source, k, graph)  # validate eagerly
    if workers <= 1:
        return _run_chunk((params, noise, source, k, graph, seed, range(trials), second_layer))
    chunks = [range(w, trials, workers) for w in range(workers)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(_run_chunk, [(params, noise, source, k, graph, seed, c, second_layer) for c in chunks])
        rows = [row for part in parts for row in part]
    return sorted(rows, key=lambda r: r[0])


def _stderr(e: float, trials: int) -> float:
    return math.sqrt(max(e * (1.0 - e), 0.0) / trials)


def estimate_joint_failure(
    params, noise, source, k, trials, seed, graph=None, workers=1, second_layer="analytic", bound: Bound | None = None
) -> JointEstimate:
    """Estimate ``P(accept and a kept register fails)`` and compare with the joint bound.

    ``bound`` overrides the closed-form bound (used to exercise the violation path).
    """
    rows = simulate_runs(params, noise, source, k, trials, seed, graph, workers, second_layer)
    scores = [float(acc) * (1.0 - kp) for _, acc, _, kp in rows]
    est = math.fsum(scores) / trials
    se = _stderr(est, trials)
    bound = soundness_joint_bound(params, k) if bound is None else bound
    accepted = sum(1 for r in rows if r[1])
    return JointEstimate(est, se, trials, bound, est - 3.0 * se > bound.value, accepted, runs=rows)


def estimate_conditional_pass(
    params, noise, source, k, trials, seed, graph=None, workers=1, second_layer="analytic"
) -> JointEstimate:
    """Estimate ``P(all kept registers pass | accept)`` against the conditional bound.

    The empirical acceptance rate serves as the prior in the bound. Without a
    single accepting run the estimate is flagged insufficient.
    """
    rows = simulate_runs(params, noise, source, k, trials, seed, graph, workers, second_layer)
    accepted_scores = [kp for _, acc, _, kp in rows if acc]
    n_acc = len(accepted_scores)
    if n_acc == 0:
        return JointEstimate(None, None, trials, None, False, 0, insufficient=True, runs=rows)
    est = math.fsum(accepted_scores) / n_acc
    se = _stderr(est, n_acc)
    bound = soundness_conditional_bound(params, k, n_acc / trials)
    return JointEstimate(est, se, trials, bound, est + 3.0 * se < bound.value, n_acc, runs=rows)
