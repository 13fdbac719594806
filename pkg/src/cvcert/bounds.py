"""Closed-form completeness, soundness, overlap and concentration bounds.

Every evaluator is a pure function. Probability-valued results come back as
:class:`Bound`, which keeps the pre-clamp value next to the clamped one and
flags bounds that carry no information.

Symbol note: ``mu_ratio`` is the register ratio ``N_total / N_test`` while
``mu_x_noise`` / ``mu_noise`` are Gaussian noise widths. They are unrelated.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from scipy.special import betainc
from scipy.stats import norm

#: Above this many trials the binomial tail switches to a normal approximation.
EXACT_TAIL_LIMIT = 10**6

UPPER = "upper"
LOWER = "lower"


class InfeasibleParametersError(ValueError):
    """Protocol parameters violate a constraint a bound depends on."""


@dataclass(frozen=True)
class Bound:
    """A probability bound clamped to ``[0, 1]``.

    Attributes:
        value: clamped value.
        raw: value of the formula before clamping.
        kind: ``"upper"`` or ``"lower"`` -- the side the bound constrains.
        vacuous: True when the bound says nothing (an upper bound >= 1 or a
            lower bound <= 0, or a factor of a product bound went negative).
    """

    value: float
    raw: float
    kind: str
    vacuous: bool

    def __float__(self) -> float:
        return self.value

    @classmethod
    def upper(cls, raw: float, vacuous: bool = False) -> "Bound":
        raw = float(raw)
        return cls(_clamp(raw), raw, UPPER, bool(vacuous or raw >= 1.0))

    @classmethod
    def lower(cls, raw: float, vacuous: bool = False) -> "Bound":
        raw = float(raw)
        value = 0.0 if vacuous else _clamp(raw)
        return cls(value, raw, LOWER, bool(vacuous or raw <= 0.0))

    def to_json(self) -> dict:
        return asdict(self)


def _clamp(x: float) -> float:
    return min(1.0, max(0.0, x))


def _ceil(x: float) -> int:
    # guards against (1 - 1/3) * 3 landing a hair above an integer
    return math.ceil(x - 1e-9 * max(1.0, abs(x)))


@dataclass(frozen=True)
class ProtocolParams:
    """Knobs of the certification protocol.

    Attributes:
        n: modes per register (= number of nullifiers).
        N_test: measurements per nullifier.
        mu_ratio: ``N_total / N_test``; must exceed ``n``.
        f: tolerated failure fraction in ``[0, 1]``.
        epsilon: width of the acceptance window ``exp(-g**2/epsilon**2)``.
        nu_serfling: slack of the sampling concentration bound.
        delta: worst-case nullifier measurement-noise width.
    """

    n: int
    N_test: int
    mu_ratio: float
    f: float
    epsilon: float = 1.0
    nu_serfling: float = 0.0
    delta: float = 0.0

    def __post_init__(self):
        if self.n < 1 or self.N_test < 1:
            raise ValueError("n and N_test must be positive integers")
        if not self.mu_ratio > self.n:
            raise ValueError(f"mu_ratio={self.mu_ratio} must exceed n={self.n}")
        if not 0.0 <= self.f <= 1.0:
            raise ValueError(f"f={self.f} must lie in [0, 1]")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.nu_serfling < 0 or self.delta < 0:
            raise ValueError("nu_serfling and delta must be non-negative")

    @property
    def N_total(self) -> int:
        return _ceil(self.mu_ratio * self.N_test)

    @property
    def n_measured(self) -> int:
        return self.n * self.N_test

    @property
    def pass_threshold(self) -> int:
        """Minimum number of accepted measurements for the protocol to accept."""
        return max(0, _ceil((1.0 - self.f) * self.n_measured))

    @property
    def n_remaining(self) -> float:
        """``(mu - n) * N_test``: registers left unmeasured."""
        return (self.mu_ratio - self.n) * self.N_test

    def constraint_slack(self) -> float:
        """``mu/n - (1 + mu f + mu nu)``; negative means infeasible."""
        mu = self.mu_ratio
        return mu / self.n - (1.0 + mu * self.f + mu * self.nu_serfling)

    @property
    def feasible(self) -> bool:
        return self.constraint_slack() >= -1e-12

    def require_feasible(self) -> None:
        if not self.feasible:
            mu = self.mu_ratio
            raise InfeasibleParametersError(
                f"constraint mu/n >= 1 + mu*f + mu*nu violated: "
                f"{mu / self.n:.6g} < {1.0 + mu * self.f + mu * self.nu_serfling:.6g}"
            )

    def to_json(self) -> dict:
        out = asdict(self)
        out.update(N_total=self.N_total, feasible=self.feasible)
        return out


# ---------------------------------------------------------------- completeness


def p_null_gaussian(sigma: float, delta: float, epsilon: float) -> float:
    """Probability that the finitely squeezed graph state passes one test.

    ``(1 + (delta**2 + 1/sigma**2) / epsilon**2) ** -0.5``; ``sigma`` may be
    ``inf``.
    """
    if not sigma > 0 or not epsilon > 0:
        raise ValueError("sigma and epsilon must be positive")
    if delta < 0:
        raise ValueError("delta must be non-negative")
    return (1.0 + (delta * delta + 1.0 / (sigma * sigma)) / (epsilon * epsilon)) ** -0.5


@dataclass(frozen=True)
class BinomialTail:
    value: float
    method: str
    total: int
    threshold: int

    def __float__(self) -> float:
        return self.value


def binomial_tail(total: int, p: float, threshold: int) -> BinomialTail:
    """``P(X >= threshold)`` for ``X ~ Binomial(total, p)``.

    Uses the regularized incomplete beta function up to
    :data:`EXACT_TAIL_LIMIT` trials and a continuity-corrected normal
    approximation beyond.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p={p} outside [0, 1]")
    if threshold <= 0:
        return BinomialTail(1.0, "exact", total, threshold)
    if threshold > total:
        return BinomialTail(0.0, "exact", total, threshold)
    if total <= EXACT_TAIL_LIMIT:
        value = float(betainc(threshold, total - threshold + 1, p))
        return BinomialTail(value, "exact", total, threshold)
    if p in (0.0, 1.0):
        return BinomialTail(float(p == 1.0), "normal", total, threshold)
    z = (threshold - 0.5 - total * p) / math.sqrt(total * p * (1.0 - p))
    return BinomialTail(float(norm.sf(z)), "normal", total, threshold)


def acceptance_probability(p_null: float, n: int, N_test: int, f: float) -> BinomialTail:
    """Probability that at least ``(1 - f) n N_test`` tests pass."""
    total = n * N_test
    if total < 1:
        raise ValueError("n * N_test must be at least 1")
    return binomial_tail(total, p_null, max(0, _ceil((1.0 - f) * total)))


def p_null_lower_from_overlap(
    Delta: float,
    eta: float,
    delta: float,
    mu_x_noise: float,
    epsilon: float,
    variant: str = "appendix",
) -> Bound:
    """Lower bound on the single-test pass probability of a state with overlap >= 1 - eta.

    ``variant="appendix"`` evaluates the form reached by the derivation,
    ``exp(-(delta+Delta)/eps) * (1 - eta - 2 exp(-eps (delta+Delta)/(mu+Delta)**2))``;
    ``variant="statement"`` uses ``2 exp(-eps/(mu+Delta))`` for the last term.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if min(Delta, delta, mu_x_noise) < 0 or not 0.0 <= eta <= 1.0:
        raise ValueError("widths must be non-negative and eta in [0, 1]")
    spread = mu_x_noise + Delta
    if variant == "appendix":
        tail = 0.0 if spread == 0 else math.exp(-epsilon * (delta + Delta) / spread**2)
    elif variant == "statement":
        tail = 0.0 if spread == 0 else math.exp(-epsilon / spread)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    raw = math.exp(-(delta + Delta) / epsilon) * (1.0 - eta - 2.0 * tail)
    return Bound.lower(raw)


# ------------------------------------------------------------------- soundness


@dataclass(frozen=True)
class SerflingResult:
    bound: Bound
    n_good: float  # good registers certified among the unmeasured ones


def _serfling_term(params: ProtocolParams, variant: str) -> float:
    nu2N = params.nu_serfling**2 * params.N_test
    if variant == "statement":
        exponent = nu2N / (1.0 + 1.0 / (params.mu_ratio - params.n))
    elif variant == "proof":
        exponent = nu2N / 2.0
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return params.n * math.exp(-exponent)


def serfling_bound(params: ProtocolParams, variant: str = "statement") -> SerflingResult:
    """Bound on accepting while fewer than ``N`` unmeasured registers are good.

    ``variant="statement"`` uses the exponent denominator ``1 + 1/(mu - n)``;
    ``variant="proof"`` the weaker constant 2.
    """
    params.require_feasible()
    mu = params.mu_ratio
    n_good = params.n_measured * (mu / params.n - 1.0 - mu * params.f - mu * params.nu_serfling)
    return SerflingResult(Bound.upper(_serfling_term(params, variant)), n_good)


def _binomial_ratio_factor(params: ProtocolParams, k: int) -> float:
    mu = params.mu_ratio
    num = k * params.n * params.N_test * mu * (params.f + params.nu_serfling)
    return 1.0 - num / (params.n_remaining - k + 1)


def _check_k(params: ProtocolParams, k: int) -> None:
    if not (isinstance(k, int) and 1 <= k <= params.n_remaining):
        raise ValueError(f"k={k!r} must be an integer in [1, (mu - n) N_test = {params.n_remaining:g}]")


def soundness_joint_bound(params: ProtocolParams, k: int = 1, variant: str = "statement") -> Bound:
    """Upper bound on P(accept and some of the ``k`` kept registers fail)."""
    _check_k(params, k)
    params.require_feasible()
    factor = _binomial_ratio_factor(params, k)
    serf = _serfling_term(params, variant)
    raw = 1.0 - factor * (1.0 - serf)
    return Bound.upper(raw, vacuous=factor <= 0.0)


def soundness_conditional_bound(
    params: ProtocolParams, k: int, p_acc_prior: float, variant: str = "statement"
) -> Bound:
    """Lower bound on P(all ``k`` kept registers pass | accepted)."""
    if not 0.0 < p_acc_prior <= 1.0:
        raise ValueError(f"p_acc_prior={p_acc_prior} must lie in (0, 1]")
    _check_k(params, k)
    params.require_feasible()
    factor = _binomial_ratio_factor(params, k)
    second = 1.0 - _serfling_term(params, variant) / p_acc_prior
    return Bound.lower(factor * second, vacuous=factor <= 0.0 or second <= 0.0)


def overlap_lower_bound(
    params: ProtocolParams, k: int, p_acc_prior: float, variant: str = "statement"
) -> tuple[float, Bound]:
    """Certified overlap width ``sqrt(eps**2 + delta**2)`` and its lower bound."""
    width = math.hypot(params.epsilon, params.delta)
    return width, soundness_conditional_bound(params, k, p_acc_prior, variant)


def single_register_overlap_bound(params: ProtocolParams, p_acc_prior: float) -> Bound:
    """One kept register: ``(1 - n mu (f+nu)/(mu-n)) (1 - serfling/p_acc)``."""
    params.require_feasible()
    mu, n = params.mu_ratio, params.n
    first = 1.0 - n * mu * (params.f + params.nu_serfling) / (mu - n)
    second = 1.0 - _serfling_term(params, "statement") / p_acc_prior
    return Bound.lower(first * second, vacuous=first <= 0.0 or second <= 0.0)


def simplified_bound_lambda(n: int, lam: float, k: int = 1) -> float:
    """Joint-failure bound under ``mu=2n, nu=f=1/lam`` and the matching ``N_test``.

    ``k == 1`` gives ``(4n + 1)/lam``.
    """
    if not lam > 4 * n:
        raise InfeasibleParametersError(f"lambda={lam} must exceed 4n={4 * n}")
    if k == 1:
        return (4 * n + 1) / lam
    if not k < lam**2:
        raise ValueError("k must be smaller than lambda**2")
    return 1.0 - (1.0 - (4 * n / lam) * k / (1.0 - k / lam**2)) * (1.0 - 1.0 / lam)


# --------------------------------------------------------------- concentration


def concentration_exact(x: float, Delta: float, eta: float) -> Bound:
    """``P(|g| <= x) >= 1 - eta - exp(-x**2/Delta**2)`` for overlap >= 1 - eta."""
    if not (x > 0 and Delta > 0):
        raise ValueError("x and Delta must be positive")
    return Bound.lower(1.0 - eta - math.exp(-(x / Delta) ** 2))


@dataclass(frozen=True)
class NoisyConcentration:
    v1: Bound | None  # None when mu_noise >= Delta
    v2: Bound
    v3: Bound
    best: Bound

    def to_json(self) -> dict:
        return {k: None if v is None else v.to_json() for k, v in self.__dict__.items()}


def concentration_noisy(x: float, Delta: float, eta: float, mu_noise: float) -> NoisyConcentration:
    """Three lower bounds on ``P(|g + noise| <= x)`` with Gaussian noise of width ``mu_noise``."""
    if not (x > 0 and Delta > 0) or mu_noise < 0:
        raise ValueError("x, Delta must be positive and mu_noise non-negative")
    v1 = None
    if mu_noise < Delta:
        gap = Delta**2 - mu_noise**2
        v1 = Bound.lower((1.0 - eta) * math.sqrt(1.0 - (mu_noise / Delta) ** 2) - math.exp(-(x * x) / gap))
    noise_term = 0.0 if mu_noise == 0 else (2.0 * mu_noise / x) * math.exp(-(x * x) / (4.0 * mu_noise**2))
    v2 = Bound.lower(1.0 - eta - math.exp(-(x * x) / (4.0 * Delta**2)) - noise_term)
    spread = mu_noise + Delta
    v3 = Bound.lower(1.0 - eta - (1.0 + spread / x) * math.exp(-((x / spread) ** 2)))
    best = max((b for b in (v1, v2, v3) if b is not None), key=lambda b: b.raw)
    return NoisyConcentration(v1, v2, v3, best)


def nullifier_sum_tail(m: int, t: float, Delta: float, eta: float) -> Bound:
    """``P(|g_1 + ... + g_m| <= t)`` lower bound by a union bound over ``|g_i| > t/m``.

    The summands may be arbitrarily correlated; each only has to satisfy the
    overlap condition with parameters ``(Delta, eta)``.
    """
    if m < 1 or not t > 0 or not Delta > 0:
        raise ValueError("m >= 1, t > 0 and Delta > 0 required")
    return Bound.lower(1.0 - m * eta - m * math.exp(-((t / (m * Delta)) ** 2)))


# --------------------------------------------------------------------- reports

PROVENANCE = {
    "p_null": "completeness for finitely squeezed graph states: single nullifier test pass probability",
    "p_acc": "completeness: binomial tail of the number of accepted nullifier tests",
    "serfling": "sampling-without-replacement bound on accepting with too few good registers",
    "soundness_joint_k": "soundness: joint probability of acceptance and a failing kept register",
    "overlap_lower_k": "overlap certified for k kept registers, conditioned on acceptance",
}


@dataclass(frozen=True)
class BoundReport:
    p_null: float
    p_acc: BinomialTail
    serfling: Bound | None
    soundness_joint_k: Bound | None
    overlap_lower_k: Bound | None
    overlap_width: float
    k: int
    feasible: bool
    provenance: dict = field(default_factory=lambda: dict(PROVENANCE))

    def to_json(self) -> dict:
        def enc(v):
            if v is None:
                return None
            return v.to_json() if hasattr(v, "to_json") else (asdict(v) if hasattr(v, "__dataclass_fields__") else v)

        return {
            "p_null": self.p_null,
            "p_acc": enc(self.p_acc),
            "serfling": enc(self.serfling),
            "soundness_joint_k": enc(self.soundness_joint_k),
            "overlap_lower_k": enc(self.overlap_lower_k),
            "overlap_width": self.overlap_width,
            "k": self.k,
            "feasible": self.feasible,
            "provenance": dict(self.provenance),
        }


def bound_report(params: ProtocolParams, sigma: float, k: int = 1, p_acc_prior: float | None = None) -> BoundReport:
    """Evaluate every bound for one parameter set.

    Soundness fields are ``None`` when the parameters are infeasible.
    ``p_acc_prior`` defaults to the honest acceptance probability.
    """
    p_null = p_null_gaussian(sigma, params.delta, params.epsilon)
    p_acc = acceptance_probability(p_null, params.n, params.N_test, params.f)
    serf = joint = overlap = None
    if params.feasible:
        serf = serfling_bound(params).bound
        joint = soundness_joint_bound(params, k)
        prior = p_acc.value if p_acc_prior is None else p_acc_prior
        if prior > 0:
            overlap = soundness_conditional_bound(params, k, prior)
    return BoundReport(
        p_null=p_null,
        p_acc=p_acc,
        serfling=serf,
        soundness_joint_k=joint,
        overlap_lower_k=overlap,
        overlap_width=math.hypot(params.epsilon, params.delta),
        k=k,
        feasible=params.feasible,
    )
