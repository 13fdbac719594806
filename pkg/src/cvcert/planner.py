"""Parameter planning from a target joint-failure probability.

With ``mu = 2n`` and ``nu = f = 1/lambda`` the joint-failure bound for one
kept register collapses to ``(4n + 1)/lambda``; the planner inverts that for
``lambda``, sets ``N_test = ceil((2 ln n + 2 ln lambda) lambda**2)`` and then
finds the single-test pass probability ``P_stab`` needed to reach a target
acceptance probability.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from .bounds import InfeasibleParametersError, ProtocolParams, binomial_tail


@dataclass(frozen=True)
class ProtocolPlan:
    """A full parameter plan.

    Attributes:
        n: modes per register.
        J: target joint-failure probability.
        lam: tightness parameter ``(4n + 1)/J``.
        N_test: measurements per nullifier.
        N_total: requested registers, ``2 n N_test``.
        f: tolerated failure fraction ``1/lam`` (also the sampling slack).
        P_acc_target: requested honest acceptance probability.
        P_stab: single-test pass probability reaching ``P_acc_target``.
        eps_over_delta: acceptance width in units of the noise width, at ``sigma = 1/delta``.
        tail_method: ``"exact"`` or ``"normal"`` evaluation of the binomial tail.
    """

    n: int
    J: float
    lam: float
    N_test: int
    N_total: int
    f: float
    P_acc_target: float
    P_stab: float
    eps_over_delta: float
    tail_method: str

    @property
    def mu_ratio(self) -> float:
        return 2.0 * self.n

    @property
    def nu(self) -> float:
        return self.f

    def protocol_params(self, delta: float, epsilon: float | None = None) -> ProtocolParams:
        """Protocol parameters for noise width ``delta`` (``epsilon`` defaults to the plan's ratio)."""
        if epsilon is None:
            if not delta > 0:
                raise ValueError("delta must be positive when epsilon is derived from it")
            epsilon = self.eps_over_delta * delta
        return ProtocolParams(
            n=self.n,
            N_test=self.N_test,
            mu_ratio=self.mu_ratio,
            f=self.f,
            epsilon=epsilon,
            nu_serfling=self.nu,
            delta=delta,
        )

    def to_json(self) -> dict:
        out = asdict(self)
        out.update(mu_ratio=self.mu_ratio, nu=self.nu)
        return out


def n_test_for_lambda(n: int, lam: float) -> int:
    return math.ceil((2.0 * math.log(n) + 2.0 * math.log(lam)) * lam * lam)


def solve_p_stab(total_measurements: int, threshold: int, P_acc_target: float, tol: float = 1e-6) -> float:
    """Smallest ``p`` with ``P(Binomial(total, p) >= threshold) >= P_acc_target``.

    Bisection on ``[0, 1]`` (at most 60 halvings) stopping once the bracket is
    narrower than ``tol`` and its upper end has left 1; the returned upper
    end always meets the target.
    """
    if threshold > total_measurements:
        raise ValueError("threshold exceeds the number of measurements")
    if not 0.0 < P_acc_target < 1.0:
        raise ValueError("P_acc_target must lie in (0, 1)")
    if threshold <= 0:
        return 0.0
    lo, hi = 0.0, 1.0
    for _ in range(60):
        if hi - lo < tol and hi < 1.0:
            break
        mid = 0.5 * (lo + hi)
        if binomial_tail(total_measurements, mid, threshold).value >= P_acc_target:
            hi = mid
        else:
            lo = mid
    return hi


def epsilon_over_delta(p_stab: float) -> float:
    """``sqrt(2) P / sqrt(1 - P**2)``: the ratio that makes ``sigma = 1/delta`` pass with ``P``."""
    if not 0.0 < p_stab < 1.0:
        raise ValueError("p_stab must lie strictly between 0 and 1")
    return math.sqrt(2.0) * p_stab / math.sqrt(1.0 - p_stab * p_stab)


def epsilon_for_pass_probability(p_stab: float, sigma: float, delta: float) -> float:
    """General squeezing: ``eps**2 = P**2/(1 - P**2) (1/sigma**2 + delta**2)``."""
    if not 0.0 < p_stab < 1.0:
        raise ValueError("p_stab must lie strictly between 0 and 1")
    if not sigma > 0 or delta < 0:
        raise ValueError("sigma must be positive and delta non-negative")
    return math.sqrt(p_stab**2 / (1.0 - p_stab**2) * (1.0 / sigma**2 + delta**2))


def _threshold(n: int, N_test: int, f: float) -> int:
    x = (1.0 - f) * n * N_test
    return max(0, math.ceil(x - 1e-9 * max(1.0, x)))


def _finish_plan(n, J, lam, N_test, P_acc_target) -> ProtocolPlan:
    f = 1.0 / lam
    total = n * N_test
    threshold = _threshold(n, N_test, f)
    p_stab = solve_p_stab(total, threshold, P_acc_target)
    method = binomial_tail(total, p_stab, threshold).method
    return ProtocolPlan(
        n=n,
        J=J,
        lam=lam,
        N_test=N_test,
        N_total=2 * n * N_test,
        f=f,
        P_acc_target=P_acc_target,
        P_stab=p_stab,
        eps_over_delta=epsilon_over_delta(p_stab),
        tail_method=method,
    )


def plan_parameters(n: int, J: float, P_acc_target: float) -> ProtocolPlan:
    """Build the plan for ``n`` modes, joint-failure target ``J`` and acceptance target."""
    if not (isinstance(n, int) and n >= 1):
        raise ValueError("n must be a positive integer")
    if not 0.0 < J < 1.0:
        raise ValueError("J must lie in (0, 1)")
    if not 0.0 < P_acc_target < 1.0:
        raise ValueError("P_acc_target must lie in (0, 1)")
    lam = (4 * n + 1) / J
    if not lam > 4 * n:
        raise InfeasibleParametersError(f"lambda={lam} must exceed 4n={4 * n}")
    return _finish_plan(n, J, lam, n_test_for_lambda(n, lam), P_acc_target)


def scaled_plan(plan: ProtocolPlan, factor: float) -> ProtocolPlan:
    """Shrink ``N_test`` by ``factor`` and recompute ``P_stab`` for the smaller counts.

    The soundness guarantee of the original plan does not carry over; the
    scaled plan is meant for completeness simulations, which only depend on
    the binomial relation between ``P_stab`` and the acceptance target.
    """
    if not factor >= 1:
        raise ValueError("factor must be >= 1")
    N_test = max(1, math.ceil(plan.N_test / factor))
    return _finish_plan(plan.n, plan.J, plan.lam, N_test, plan.P_acc_target)


# ------------------------------------------------------------------ the table

#: Published values for J = 0.1 and P_acc = 0.9, as printed (rounded).
PUBLISHED_TABLE = {
    1: {"lam": 50, "N_test": 20_000, "N_total": 40_000, "P_stab": 0.981, "eps_over_delta": 7},
    2: {"lam": 90, "N_test": 84_000, "N_total": 340_000, "P_stab": 0.989, "eps_over_delta": 10},
    5: {"lam": 210, "N_test": 620_000, "N_total": 6_200_000, "P_stab": 0.995, "eps_over_delta": 15},
    10: {"lam": 410, "N_test": 3e6, "N_total": 6e7, "P_stab": 0.998, "eps_over_delta": 20},
    100: {"lam": 4020, "N_test": 4e8, "N_total": 8e10, "P_stab": 0.9998, "eps_over_delta": 63},
}

TABLE_J = 0.1
TABLE_P_ACC = 0.9
COUNT_REL_TOL = 0.05
P_STAB_TOL = 1e-3
RATIO_TOL = 1.0


def table1_rows() -> list[dict]:
    """Recompute every row of the published table and compare.

    Each row holds the exact plan, the published numbers, relative deviations
    and a list of discrepancy notes. ``eps_over_delta_from_published_p`` is
    the ratio evaluated at the published (rounded) ``P_stab``.
    """
    rows = []
    for n, pub in PUBLISHED_TABLE.items():
        plan = plan_parameters(n, TABLE_J, TABLE_P_ACC)
        ratio_pub_p = epsilon_over_delta(pub["P_stab"])
        rel = {key: abs(getattr(plan, key) - pub[key]) / pub[key] for key in ("N_test", "N_total")}
        notes = []
        if plan.lam != pub["lam"]:
            notes.append(f"lambda: (4n+1)/J = {plan.lam:g}, published {pub['lam']}")
        for key, dev in rel.items():
            if dev > COUNT_REL_TOL:
                notes.append(f"{key}: computed {getattr(plan, key)} is {100 * dev:.1f}% from published {pub[key]:g}")
        if abs(plan.P_stab - pub["P_stab"]) > P_STAB_TOL:
            notes.append(f"P_stab: computed {plan.P_stab:.6f}, published {pub['P_stab']}")
        if abs(plan.eps_over_delta - pub["eps_over_delta"]) > RATIO_TOL:
            notes.append(f"eps/delta: computed {plan.eps_over_delta:.4g}, published {pub['eps_over_delta']}")
        if abs(ratio_pub_p - pub["eps_over_delta"]) > RATIO_TOL:
            notes.append(
                f"eps/delta at the published P_stab={pub['P_stab']} is {ratio_pub_p:.4g}, "
                f"published {pub['eps_over_delta']}"
            )
        rows.append(
            {
                "n": n,
                "plan": plan.to_json(),
                "published": dict(pub),
                "N_test_rel_dev": rel["N_test"],
                "N_total_rel_dev": rel["N_total"],
                "eps_over_delta_from_published_p": ratio_pub_p,
                "discrepancies": notes,
            }
        )
    return rows
