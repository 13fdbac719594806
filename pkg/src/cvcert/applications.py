"""What a certified state buys downstream: teleportation, MBQC noise, metrology.

MBQC noise is tracked exactly as a linear combination of independent noise
sources (one measurement noise and one graph noise per gate). Widths of the
accumulated noise therefore account for the correlations that build up when
the same source feeds both quadratures. :func:`mbqc_independent_widths`
evaluates the simpler recurrence that treats every summand as independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import erf

from .bounds import Bound, concentration_noisy
from .gaussian import _psd_factor, graph_state_covariance, width_to_std
from .graph import NoiseModel, new_weighted_graph

# ---------------------------------------------------------------- teleportation


@dataclass(frozen=True)
class TeleportationStats:
    """Deviation statistics of ``x' - x_in`` and ``p' - p_in``.

    ``sweep`` rows hold ``t``, the empirical fraction of x deviations within
    ``t``, its standard error and the noisy concentration lower bound.
    """

    x_mean: float
    x_width: float
    p_mean: float
    p_width: float
    predicted_width: float
    trials: int
    Delta: float
    eta: float
    sweep: list
    x_samples: np.ndarray = field(repr=False, compare=False)
    p_samples: np.ndarray = field(repr=False, compare=False)

    def to_json(self) -> dict:
        return {
            "x_mean": self.x_mean,
            "x_width": self.x_width,
            "p_mean": self.p_mean,
            "p_width": self.p_width,
            "predicted_width": self.predicted_width,
            "trials": self.trials,
            "Delta": self.Delta,
            "eta": self.eta,
            "sweep": self.sweep,
        }


def honest_overlap_eta(sigma: float, Delta: float, n: int = 2) -> float:
    """``1 - O`` for the finitely squeezed ``n``-mode state under envelope width ``Delta``."""
    return 1.0 - (1.0 + 1.0 / (sigma * Delta) ** 2) ** (-n / 2.0)


def simulate_teleportation(
    sigma: float,
    noise: NoiseModel,
    input_mean=(0.0, 0.0),
    trials: int = 100_000,
    seed=0,
    thresholds=None,
    Delta: float | None = None,
) -> TeleportationStats:
    """Teleport through the two-mode graph state and record output deviations.

    The output is ``x' = x_in - g_1 + d_b`` and ``p' = p_in + g_2 + d_a``,
    where ``(g_1, g_2)`` are drawn jointly from the state and ``d_a, d_b``
    are classical noises of width ``noise.x_width``. The input is a point at
    ``input_mean``. ``Delta`` (default ``2/sigma``) is the overlap envelope
    width fed to the concentration bound, with ``eta`` from the exact
    Gaussian overlap.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = np.random.default_rng(seed)
    state = graph_state_covariance(new_weighted_graph(2, [(1, 2, 1.0)]), sigma)
    z = rng.standard_normal((trials, 4)) @ _psd_factor(state.covariance).T
    x1, x2, p1, p2 = z.T
    g1, g2 = p1 - x2, p2 - x1
    classical = width_to_std(noise.x_width) * rng.standard_normal((trials, 2))
    x_in, p_in = map(float, input_mean)
    dx = (x_in - g1 + classical[:, 1]) - x_in
    dp = (p_in + g2 + classical[:, 0]) - p_in
    predicted = math.hypot(1.0 / sigma, noise.x_width)
    Delta = 2.0 / sigma if Delta is None else Delta
    eta = honest_overlap_eta(sigma, Delta)
    if thresholds is None:
        thresholds = predicted * np.array([0.25, 0.5, 1.0, 1.5, 2.0, 3.0])
    sweep = []
    for t in np.asarray(thresholds, dtype=float):
        frac = float(np.mean(np.abs(dx) <= t))
        se = math.sqrt(frac * (1.0 - frac) / trials)
        bound = concentration_noisy(float(t), Delta, eta, noise.x_width).v3
        sweep.append({"t": float(t), "fraction": frac, "stderr": se, "bound": bound.value})
    return TeleportationStats(
        x_mean=float(dx.mean()),
        x_width=float(math.sqrt(2.0 * dx.var())),
        p_mean=float(dp.mean()),
        p_width=float(math.sqrt(2.0 * dp.var())),
        predicted_width=predicted,
        trials=trials,
        Delta=Delta,
        eta=eta,
        sweep=sweep,
        x_samples=dx,
        p_samples=dp,
    )


# ------------------------------------------------------------------------- MBQC

GRAPH = "graph"
MEASUREMENT = "measurement"
INITIAL = "initial"


@dataclass(frozen=True)
class Gate:
    """``kind`` is ``"xshift"``, ``"shear"`` or ``"cubic"``; ``s`` its strength."""

    kind: str
    s: float = 0.0

    def __post_init__(self):
        if self.kind not in ("xshift", "shear", "cubic"):
            raise ValueError(f"unknown gate kind {self.kind!r}")
        if not math.isfinite(self.s):
            raise ValueError("gate parameter must be finite")

    @classmethod
    def from_json(cls, obj: dict) -> "Gate":
        return cls(str(obj["kind"]).lower(), float(obj.get("s", 0.0)))


@dataclass(frozen=True)
class NoisePropagationState:
    """Accumulated quadrature noise after a sequence of gates.

    On the Gaussian track ``x`` and ``p`` map source names to coefficients
    and ``sources`` maps names to ``(kind, width)``. After a cubic gate the
    noise lives in ``cloud`` as an ``(M, 2)`` array of ``(x, p)`` samples.
    """

    x: dict
    p: dict
    sources: dict
    gates_applied: int = 0
    gaussian_track: bool = True
    cloud: np.ndarray | None = field(default=None, repr=False, compare=False)
    flags: tuple = ()

    def widths(self) -> tuple[float, float]:
        if not self.gaussian_track:
            return tuple(float(math.sqrt(2.0 * v)) for v in self.cloud.var(axis=0))
        return self._width(self.x), self._width(self.p)

    def _width(self, coefs: dict) -> float:
        return math.sqrt(sum((c * self.sources[name][1]) ** 2 for name, c in coefs.items()))

    def covariance(self) -> np.ndarray:
        """2x2 covariance of the ``(x, p)`` noise on the Gaussian track."""
        names = list(self.sources)
        a = np.array([[self.x.get(n, 0.0) for n in names], [self.p.get(n, 0.0) for n in names]])
        var = np.array([width_to_std(self.sources[n][1]) ** 2 for n in names])
        return (a * var) @ a.T

    def to_json(self) -> dict:
        wx, wp = self.widths()
        return {
            "x_width": wx,
            "p_width": wp,
            "gates_applied": self.gates_applied,
            "gaussian_track": self.gaussian_track,
            "flags": list(self.flags),
        }


def mbqc_initial_state(x_width: float = 0.0, p_width: float = 0.0) -> NoisePropagationState:
    """Noise state before any gate; optional Gaussian input noise."""
    sources = {"x0": (INITIAL, float(x_width)), "p0": (INITIAL, float(p_width))}
    return NoisePropagationState({"x0": 1.0}, {"p0": 1.0}, sources)


def _combine(*terms: tuple[float, dict]) -> dict:
    out: dict = {}
    for scale, coefs in terms:
        for name, c in coefs.items():
            out[name] = out.get(name, 0.0) + scale * c
    return {k: v for k, v in out.items() if v != 0.0}


def _sample_sources(state: NoisePropagationState, rng, size: int) -> np.ndarray:
    names = list(state.sources)
    draws = rng.standard_normal((size, len(names))) * width_to_std(np.array([state.sources[n][1] for n in names]))
    a = np.array([[state.x.get(n, 0.0) for n in names], [state.p.get(n, 0.0) for n in names]])
    return draws @ a.T


def mbqc_apply_gate(
    state: NoisePropagationState,
    gate: Gate,
    measurement_width: float,
    squeezing_width: float,
    rng: np.random.Generator | None = None,
    signal_width: float | None = None,
    cloud_size: int = 100_000,
) -> NoisePropagationState:
    """Propagate the noise through one teleported gate.

    x shift: ``x' = p + m``, ``p' = x + g``. Shear: ``x' = p + m + s x``,
    ``p' = x + g``. Cubic: ``x' = p + m + s x**2 + 2 s x1 x`` where the signal
    ``x1`` has Gaussian width ``signal_width`` (no default); the state then
    switches to a sample cloud, drawn with ``rng``.
    """
    if measurement_width < 0 or squeezing_width < 0:
        raise ValueError("widths must be non-negative")
    step = state.gates_applied + 1
    m_name, g_name = f"m{step}", f"g{step}"
    sources = dict(state.sources)
    sources[m_name] = (MEASUREMENT, float(measurement_width))
    sources[g_name] = (GRAPH, float(squeezing_width))

    if gate.kind == "cubic" or not state.gaussian_track:
        if rng is None:
            raise ValueError("a random generator is required once the noise is a sample cloud")
        if gate.kind == "cubic" and (signal_width is None or signal_width < 0):
            raise ValueError("the cubic gate needs an explicit non-negative signal_width")
        cloud = state.cloud if state.cloud is not None else _sample_sources(state, rng, cloud_size)
        x, p = cloud[:, 0], cloud[:, 1]
        m = width_to_std(measurement_width) * rng.standard_normal(len(x))
        g = width_to_std(squeezing_width) * rng.standard_normal(len(x))
        if gate.kind == "cubic":
            x1 = width_to_std(signal_width) * rng.standard_normal(len(x))
            new_x = p + m + gate.s * x * x + 2.0 * gate.s * x1 * x
        else:
            new_x = p + m + (gate.s * x if gate.kind == "shear" else 0.0)
        flags = state.flags if "unbounded-noise regime" in state.flags else state.flags + ("unbounded-noise regime",)
        return NoisePropagationState(
            {}, {}, sources, step, gaussian_track=False, cloud=np.column_stack([new_x, x + g]), flags=flags
        )

    s = gate.s if gate.kind == "shear" else 0.0
    new_x = _combine((1.0, state.p), (1.0, {m_name: 1.0}), (s, state.x))
    new_p = _combine((1.0, state.x), (1.0, {g_name: 1.0}))
    return replace(state, x=new_x, p=new_p, sources=sources, gates_applied=step)


def mbqc_run_program(
    program, measurement_width: float, squeezing_width: float, initial: NoisePropagationState | None = None, **kwargs
) -> NoisePropagationState:
    state = mbqc_initial_state() if initial is None else initial
    for gate in program:
        gate = gate if isinstance(gate, Gate) else Gate.from_json(gate)
        state = mbqc_apply_gate(state, gate, measurement_width, squeezing_width, **kwargs)
    return state


def mbqc_independent_widths(program, measurement_width, squeezing_width, x_width=0.0, p_width=0.0):
    """Widths from the summand-wise recurrence that ignores cross-correlations."""
    wx, wp = x_width, p_width
    for gate in program:
        gate = gate if isinstance(gate, Gate) else Gate.from_json(gate)
        if gate.kind == "cubic":
            raise ValueError("the cubic gate has no Gaussian width recurrence")
        s = gate.s if gate.kind == "shear" else 0.0
        wx, wp = math.sqrt(wp**2 + measurement_width**2 + s**2 * wx**2), math.sqrt(wx**2 + squeezing_width**2)
    return wx, wp


def mbqc_sample_program(program, measurement_width, squeezing_width, rng, size, x_width=0.0, p_width=0.0):
    """Monte Carlo through the gate recurrences with every noise drawn explicitly."""
    x = width_to_std(x_width) * rng.standard_normal(size)
    p = width_to_std(p_width) * rng.standard_normal(size)
    for gate in program:
        gate = gate if isinstance(gate, Gate) else Gate.from_json(gate)
        if gate.kind == "cubic":
            raise ValueError("use mbqc_apply_gate for cubic gates")
        m = width_to_std(measurement_width) * rng.standard_normal(size)
        g = width_to_std(squeezing_width) * rng.standard_normal(size)
        s = gate.s if gate.kind == "shear" else 0.0
        x, p = p + m + s * x, x + g
    return x, p


@dataclass(frozen=True)
class TailBound:
    x: Bound
    p: Bound
    joint: Bound
    method: str

    def to_json(self) -> dict:
        return {"x": self.x.to_json(), "p": self.p.to_json(), "joint": self.joint.to_json(), "method": self.method}


def _composed_tail(coefs: dict, sources: dict, t: float, eta: float, Delta: float) -> Bound:
    graph = [abs(c) for n, c in coefs.items() if sources[n][0] == GRAPH and sources[n][1] > 0]
    gauss_w = math.sqrt(sum((c * sources[n][1]) ** 2 for n, c in coefs.items() if sources[n][0] != GRAPH))
    m, total = len(graph), sum(graph)

    def graph_part(y):
        if m == 0:
            return 1.0
        return 1.0 - m * eta - m * math.exp(-((y / (total * Delta)) ** 2)) if y > 0 else 1.0 - m * eta - m

    def gauss_part(r):
        if gauss_w == 0:
            return 1.0 if r >= 0 else 0.0
        return float(erf(r / gauss_w)) if r > 0 else 0.0

    if m == 0:
        return Bound.lower(gauss_part(t))
    if gauss_w == 0:
        return Bound.lower(graph_part(t))
    res = minimize_scalar(
        lambda y: -(graph_part(y) + gauss_part(t - y) - 1.0), bounds=(0.0, t), method="bounded", options={"xatol": 1e-10 * t}
    )
    return Bound.lower(-res.fun)


def _wilson_lower(successes: int, n: int, z: float = 3.0) -> float:
    phat = successes / n
    denom = 1.0 + z * z / n
    centre = phat + z * z / (2 * n)
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n))
    return max(0.0, (centre - half) / denom)


def mbqc_tail_bound(state: NoisePropagationState, t: float, eta: float, Delta: float) -> TailBound:
    """Lower bounds on ``P(|noise_x| <= t)``, ``P(|noise_p| <= t)`` and both at once.

    Graph-noise summands are only assumed to satisfy the overlap condition
    ``(Delta, eta)``, so they are combined by a union bound (splitting ``t``
    in proportion to the coefficients). Gaussian measurement and input noise
    enters through ``erf``; the two parts are combined by a union bound at the
    best split point. On a sample cloud the Wilson lower limit (z=3) of the
    empirical fraction is returned.
    """
    if not t > 0 or not Delta > 0:
        raise ValueError("t and Delta must be positive")
    if state.gaussian_track:
        bx = _composed_tail(state.x, state.sources, t, eta, Delta)
        bp = _composed_tail(state.p, state.sources, t, eta, Delta)
        method = "composed"
    else:
        n = len(state.cloud)
        if n < 10_000:
            raise ValueError(f"sample cloud has {n} < 10000 samples")
        inside = np.abs(state.cloud) <= t
        bx = Bound.lower(_wilson_lower(int(inside[:, 0].sum()), n))
        bp = Bound.lower(_wilson_lower(int(inside[:, 1].sum()), n))
        method = "wilson"
    joint = Bound.lower(bx.value + bp.value - 1.0)
    return TailBound(bx, bp, joint, method)


# -------------------------------------------------------------------- metrology


@dataclass(frozen=True)
class MetrologyBound:
    """Fisher-information lower bound at one ``theta``.

    ``unbounded`` marks the noiseless ideal limit ``mu + Delta = 0``, where
    no finite number is returned.
    """

    theta: float
    p_star: float | None
    fisher_lower: float | None
    raw: float | None = None
    unbounded: bool = False

    def to_json(self) -> dict:
        return dict(self.__dict__)


def fisher_lower_bound(eta: float, mu_noise: float, Delta: float, theta: float) -> MetrologyBound:
    """``Q >= (1 - eta - theta)/((mu + Delta)**2 ln(2/theta))``, cut off at 0."""
    if not 0.0 < theta < 2.0:
        raise ValueError(f"theta={theta} must lie in (0, 2)")
    if mu_noise < 0 or Delta < 0:
        raise ValueError("mu_noise and Delta must be non-negative")
    spread = mu_noise + Delta
    if spread == 0:
        return MetrologyBound(theta, None, None, None, unbounded=True)
    log_term = math.log(2.0 / theta)
    raw = (1.0 - eta - theta) / (spread**2 * log_term)
    return MetrologyBound(theta, spread * math.sqrt(log_term), max(0.0, raw), raw)


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def optimize_fisher(eta: float, mu_noise: float, Delta: float, rel_tol: float = 1e-8) -> tuple[float, float]:
    """Maximize the Fisher bound over ``theta`` by golden-section search."""
    if not eta < 1.0:
        raise ValueError("eta must be below 1")
    spread = mu_noise + Delta
    if not spread > 0:
        raise ValueError("mu_noise + Delta must be positive")

    def q(theta):
        return (1.0 - eta - theta) / (spread**2 * math.log(2.0 / theta))

    a, b = 1e-9, 1.0 - eta - 1e-9
    c, d = b - _GOLDEN * (b - a), a + _GOLDEN * (b - a)
    qc, qd = q(c), q(d)
    for _ in range(500):
        if b - a <= rel_tol * max(abs(c), 1e-300):
            break
        if qc >= qd:
            b, d, qd = d, c, qc
            c = b - _GOLDEN * (b - a)
            qc = q(c)
        else:
            a, c, qc = c, d, qd
            d = a + _GOLDEN * (b - a)
            qd = q(d)
    theta = c if qc >= qd else d
    return theta, q(theta)
