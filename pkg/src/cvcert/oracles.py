"""Independent reference computations used to validate the main modules.

Nothing here imports the formulas under test: the POVM pass probability is a
quadrature, the lemma checks enumerate outcomes, and the tail oracles sum
probability mass functions term by term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.stats import hypergeom

MAX_ENUMERATION_MODES = 24


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


@dataclass(frozen=True)
class LemmaCheckReport:
    """Outcome of a randomized or exhaustive lemma check.

    ``max_violation`` is ``max(lhs - rhs)`` over all cases; a value <= 0 means
    the inequality held everywhere.
    """

    lemma: str
    cases_tested: int
    max_violation: float
    worst_case: dict = field(default_factory=dict)

    def passed(self, tolerance: float = 0.0) -> bool:
        return self.max_violation <= tolerance

    def to_json(self) -> dict:
        return {
            "lemma": self.lemma,
            "cases_tested": self.cases_tested,
            "max_violation": self.max_violation,
            "worst_case": self.worst_case,
        }


# ---------------------------------------------------------- L_N^n enumeration


def _outcome_table(lambdas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities and success counts of all ``2**n`` Bernoulli outcomes."""
    probs = np.ones(1)
    counts = np.zeros(1, dtype=np.int8)
    for lam in lambdas:
        probs = np.concatenate([probs * (1.0 - lam), probs * lam])
        counts = np.concatenate([counts, counts + 1])
    return probs, counts


def l_N_n(lambdas, N: int) -> float:
    """``L_N^n``: probability of at least ``N`` successes among independent Bernoullis.

    Computed by summing all ``2**n`` outcomes.
    """
    lam = np.asarray(lambdas, dtype=float).ravel()
    if lam.size > MAX_ENUMERATION_MODES:
        raise ValueError(f"n={lam.size} too large for exhaustive enumeration (max {MAX_ENUMERATION_MODES})")
    if np.any((lam < 0) | (lam > 1)):
        raise ValueError("every lambda must lie in [0, 1]")
    probs, counts = _outcome_table(lam)
    return float(math.fsum(probs[counts >= N]))


def _subset_sums(lambdas: np.ndarray) -> np.ndarray:
    """``e_k`` for every ``k``: sums of products over all ``k``-subsets."""
    n = lambdas.size
    masks = np.arange(2**n)
    bits = (masks[:, None] >> np.arange(n)) & 1
    products = np.prod(np.where(bits == 1, lambdas, 1.0), axis=1)
    sizes = bits.sum(axis=1)
    return np.array([math.fsum(products[sizes == k]) for k in range(n + 1)])


def _random_lambdas(rng: np.random.Generator, n: int) -> np.ndarray:
    style = rng.integers(4)
    if style == 0:
        lam = rng.uniform(size=n)
    elif style == 1:
        lam = rng.beta(0.3, 0.3, size=n)  # mass near the endpoints
    elif style == 2:
        lam = rng.choice([0.0, 1.0, 0.5], size=n)
    else:
        lam = np.clip(1.0 - rng.exponential(0.02, size=n), 0.0, 1.0)
    return lam


def check_lnn_inequalities(n_max: int = 12, trials: int = 10_000, seed: int = 0) -> LemmaCheckReport:
    """Check ``binom(N, k) L_N^n <= e_k`` over random lambda vectors.

    Every ``0 <= k <= N <= n`` is tested for each vector; ``k = 1`` is the
    ``N L_N^n <= sum(lambda)`` lemma and ``k = 0`` reads ``L_N^n <= 1``.
    """
    if not 1 <= n_max <= 12:
        raise ValueError("n_max must lie in [1, 12]")
    rng = np.random.default_rng(seed)
    worst = -math.inf
    worst_case: dict = {}
    cases = 0
    for _ in range(trials):
        n = int(rng.integers(1, n_max + 1))
        lam = _random_lambdas(rng, n)
        probs, counts = _outcome_table(lam)
        tails = [math.fsum(probs[counts >= N]) for N in range(n + 1)]
        e = _subset_sums(lam)
        for N in range(n + 1):
            for k in range(N + 1):
                gap = math.comb(N, k) * tails[N] - e[k]
                cases += 1
                if gap > worst:
                    worst = gap
                    worst_case = {"lambdas": lam.tolist(), "N": N, "k": k}
    return LemmaCheckReport("binom(N,k) L_N^n <= e_k", cases, float(worst), worst_case)


# ----------------------------------------------------- sampling without replacement

POPULATION_SHAPES = {
    "all_zeros": 0.0,
    "sparse": 0.02,
    "skewed": 0.2,
    "balanced": 0.5,
    "clustered": 0.8,
    "all_ones": 1.0,
}


def serfling_sampling_bound(n_rest: int, k: int, nu: float) -> float:
    """``exp(-2 nu**2 n k**2 / ((n + k)(k + 1)))`` for sample size ``k``, remainder ``n``."""
    return math.exp(-2.0 * nu * nu * n_rest * k * k / ((n_rest + k) * (k + 1)))


def _deviation_event(ones_total: int, ones_sample, n_rest: int, k: int, nu: float):
    # (K - X)/n >= X/k + nu, cross-multiplied; tiny slack counts ties as events
    lhs = k * (ones_total - np.asarray(ones_sample))
    return lhs >= n_rest * np.asarray(ones_sample) + nu * n_rest * k - 1e-9


def _batches(total: int, size: int):
    while total > 0:
        yield min(size, total)
        total -= size


def check_serfling_sampling(
    N_pop: int, n_sample: int, trials: int, nu: float, seed: int = 0, shapes: dict | None = None
) -> LemmaCheckReport:
    """Monte Carlo check of the sampling-without-replacement tail lemma.

    For each binary population the sample is drawn by an explicit random
    permutation; the violation reported is
    ``frequency - (bound + 3 * stderr)`` maximized over shapes. The exact
    hypergeometric probability is echoed alongside.
    """
    if not 0 < n_sample < N_pop:
        raise ValueError("need 0 < n_sample < N_pop")
    shapes = POPULATION_SHAPES if shapes is None else shapes
    rng = np.random.default_rng(seed)
    n_rest = N_pop - n_sample
    bound = serfling_sampling_bound(n_rest, n_sample, nu)
    worst = -math.inf
    details = {}
    for name, fraction in shapes.items():
        ones = int(round(fraction * N_pop))
        population = np.zeros(N_pop, dtype=np.int64)
        population[:ones] = 1
        sample_ones = np.concatenate([
            population[np.argpartition(rng.random((m, N_pop)), n_sample - 1, axis=1)[:, :n_sample]].sum(axis=1)
            for m in _batches(trials, max(1, 2_000_000 // N_pop))
        ])
        freq = float(np.mean(_deviation_event(ones, sample_ones, n_rest, n_sample, nu)))
        stderr = math.sqrt(freq * (1.0 - freq) / trials)
        support = np.arange(max(0, ones - n_rest), min(ones, n_sample) + 1)
        hits = support[_deviation_event(ones, support, n_rest, n_sample, nu)]
        exact = float(hypergeom(N_pop, ones, n_sample).pmf(hits).sum())
        gap = freq - (bound + 3.0 * stderr)
        details[name] = {"ones": ones, "frequency": freq, "stderr": stderr, "exact": exact, "bound": bound}
        if gap > worst:
            worst = gap
    worst_shape = max(details, key=lambda s: details[s]["frequency"] - details[s]["bound"])
    report_case = {"N_pop": N_pop, "n_sample": n_sample, "nu": nu, "worst_shape": worst_shape, "shapes": details}
    return LemmaCheckReport("sampling without replacement tail", len(shapes) * trials, float(worst), report_case)


# --------------------------------------------------------------- POVM integral


def povm_integral_oracle(width: float, epsilon: float, shift: float = 0.0) -> float:
    """Acceptance probability ``int exp(-g**2/eps**2) p(g) dg`` by adaptive quadrature.

    ``p`` is the Gaussian density of width ``width`` centred at ``shift``;
    ``width == 0`` is the point mass, handled analytically.
    """
    if width < 0 or not epsilon > 0:
        raise ValueError("width must be >= 0 and epsilon > 0")
    if width == 0:
        return math.exp(-(shift / epsilon) ** 2)
    # integrate in the variable of whichever factor is narrower
    if width <= epsilon:
        def integrand(u):
            g = shift + width * u
            return math.exp(-(g / epsilon) ** 2 - u * u) / math.sqrt(math.pi)
        peak = -shift * width / (epsilon**2 + width**2)
    else:
        def integrand(v):
            g = epsilon * v
            return epsilon / (width * math.sqrt(math.pi)) * math.exp(-v * v - ((g - shift) / width) ** 2)
        peak = shift * epsilon / (epsilon**2 + width**2)
    lo, hi = min(-40.0, peak - 40.0), max(40.0, peak + 40.0)
    points = sorted({max(lo, min(hi, peak + d)) for d in (-5.0, -1.0, 0.0, 1.0, 5.0)})
    value, abserr = integrate.quad(integrand, lo, hi, points=points, epsabs=1e-14, epsrel=1e-13, limit=400)
    if abserr > 1e-12:
        raise QuadratureError(f"quadrature error estimate {abserr:.2e} exceeds 1e-12")
    return float(value)


# ------------------------------------------------------------ tail references


def binomial_tail_oracle(total: int, p: float, threshold: int) -> float:
    """``P(X >= threshold)`` by summing log-space binomial pmf terms."""
    if threshold <= 0:
        return 1.0
    if threshold > total:
        return 0.0
    if p == 0.0:
        return 0.0
    if p == 1.0:
        return 1.0
    lp, lq = math.log(p), math.log1p(-p)
    lg = math.lgamma(total + 1)
    terms = [
        math.exp(lg - math.lgamma(j + 1) - math.lgamma(total - j + 1) + j * lp + (total - j) * lq)
        for j in range(threshold, total + 1)
    ]
    return min(1.0, math.fsum(terms))


def soundness_product_oracle(
    n: int, N_test: int, mu: float, f: float, nu: float, k: int, p_acc: float = 1.0
) -> float:
    """Direct re-expression of the kept-register soundness product.

    Returns ``(1 - binomial ratio term) * (1 - serfling / p_acc)``; with
    ``p_acc = 1`` its complement is the joint-failure bound.
    """
    remaining = mu * N_test - n * N_test
    ratio_term = (k * n * N_test * mu * (f + nu)) / (remaining - (k - 1))
    serfling = n * math.exp(-(nu**2) * N_test * (mu - n) / (mu - n + 1))
    return (1 - ratio_term) * (1 - serfling / p_acc)


# ---------------------------------------------- admissible adversarial noise


@dataclass(frozen=True)
class AdmissibleDistribution:
    """A nullifier distribution with ``E[exp(-g**2/Delta**2)] >= 1 - eta``.

    ``overlap`` is that expectation computed in closed form for the family,
    so admissibility is checked analytically rather than by sampling.
    """

    name: str
    Delta: float
    eta: float
    overlap: float
    params: dict

    @property
    def admissible(self) -> bool:
        return self.overlap >= 1.0 - self.eta - 1e-12

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        kind = self.name
        if kind == "point_masses":
            s0, w = self.params["s0"], self.params["weight"]
            far = rng.random(size) < w
            return np.where(far, s0 * rng.choice([-1.0, 1.0], size=size), 0.0)
        if kind == "wide_gaussian":
            return rng.normal(0.0, self.params["width"] / math.sqrt(2.0), size)
        if kind == "cauchy_tail":
            far = rng.random(size) < self.params["weight"]
            return np.where(far, self.params["scale"] * rng.standard_cauchy(size), 0.0)
        raise ValueError(kind)


def point_mass_distribution(Delta: float, eta: float, s0: float) -> AdmissibleDistribution:
    """Mass at 0 plus weight ``w`` split over ``+-s0``, with ``w`` saturating the overlap.

    Taking ``s0`` just above a threshold ``x`` puts as much mass outside
    ``[-x, x]`` as the overlap constraint allows. Large ``s0`` also makes the
    variance arbitrarily large.
    """
    miss = 1.0 - math.exp(-((s0 / Delta) ** 2))
    weight = min(1.0, eta / miss) if miss > 0 else 0.0
    overlap = 1.0 - weight * miss
    return AdmissibleDistribution("point_masses", Delta, eta, overlap, {"s0": s0, "weight": weight})


def wide_gaussian_distribution(Delta: float, eta: float) -> AdmissibleDistribution:
    """Centred Gaussian whose width ``a`` gives overlap ``Delta/sqrt(Delta**2 + a**2) = 1 - eta``."""
    width = Delta * math.sqrt(1.0 / (1.0 - eta) ** 2 - 1.0) if eta < 1 else math.inf
    overlap = Delta / math.sqrt(Delta**2 + width**2)
    return AdmissibleDistribution("wide_gaussian", Delta, eta, overlap, {"width": width})


def cauchy_tail_distribution(Delta: float, eta: float, scale: float) -> AdmissibleDistribution:
    """Point mass at 0 with weight ``1 - eta`` plus an ``eta`` Cauchy component (infinite variance)."""
    return AdmissibleDistribution("cauchy_tail", Delta, eta, 1.0 - eta, {"weight": eta, "scale": scale})


def unbounded_variance_distribution(Delta: float, eta: float, target_variance: float) -> AdmissibleDistribution:
    """Admissible distribution whose variance is at least ``target_variance``."""
    if not 0 < eta <= 1:
        raise ValueError("a positive eta is needed to move any mass away from zero")
    s0 = Delta
    while True:
        dist = point_mass_distribution(Delta, eta, s0)
        if dist.params["weight"] * s0 * s0 >= target_variance:
            return dist
        s0 *= 2.0


def fisher_grid_oracle(eta: float, mu_noise: float, Delta: float, points: int = 100_000) -> tuple[float, float]:
    """Grid maximum of the Fisher lower bound over ``theta`` in ``(1e-9, 1 - eta - 1e-9)``."""
    theta = np.linspace(1e-9, 1.0 - eta - 1e-9, points)
    values = (1.0 - eta - theta) / ((mu_noise + Delta) ** 2 * np.log(2.0 / theta))
    i = int(np.argmax(values))
    return float(theta[i]), float(values[i])


def adversarial_family(Delta: float, eta: float, x: float) -> list[AdmissibleDistribution]:
    """Admissible distributions aimed at a threshold ``x``.

    Point masses sit just outside ``x`` and far away (huge variance); the
    wide Gaussian and Cauchy members cover smooth and heavy tails.
    """
    return [
        point_mass_distribution(Delta, eta, 1.0001 * x),
        point_mass_distribution(Delta, eta, 1e3 * max(x, Delta)),
        wide_gaussian_distribution(Delta, eta),
        cauchy_tail_distribution(Delta, eta, x),
    ]


def check_concentration_bounds(bounds_fn, grid, samples: int = 20_000, seed: int = 0) -> LemmaCheckReport:
    """Monte Carlo check of concentration lower bounds against adversarial noise.

    Args:
        bounds_fn: ``bounds_fn(x, Delta, eta, mu) -> {name: lower bound}`` on
            ``P(|g + e| <= x)`` for admissible ``g`` and Gaussian ``e`` of
            width ``mu``. Names starting with ``sum`` bound ``P(|g + g| <= x)``
            for two fully correlated copies, which the bound must also cover.
        grid: iterable of ``(x, Delta, eta, mu)``.
        samples: draws per distribution and grid point.
        seed: base seed.

    The violation is ``bound - (frequency + 3 stderr)``; it must stay <= 0.
    """
    worst = {"violation": -math.inf}
    cases = 0
    for i, (x, Delta, eta, mu) in enumerate(grid):
        rng = np.random.default_rng([seed, i])
        bounds = bounds_fn(x, Delta, eta, mu)
        for dist in adversarial_family(Delta, eta, x):
            g = dist.sample(rng, samples)
            e = (mu / math.sqrt(2.0)) * rng.standard_normal(samples)
            for name, bound in bounds.items():
                total = 2.0 * g if name.startswith("sum") else g + e
                freq = float(np.mean(np.abs(total) <= x))
                se = math.sqrt(freq * (1.0 - freq) / samples)
                violation = bound - (freq + 3.0 * se)
                cases += 1
                if violation > worst["violation"]:
                    worst = {
                        "violation": violation,
                        "x": x,
                        "Delta": Delta,
                        "eta": eta,
                        "mu": mu,
                        "bound": name,
                        "distribution": dist.name,
                        "frequency": freq,
                        "value": bound,
                    }
    return LemmaCheckReport("concentration", cases, worst["violation"], worst)
