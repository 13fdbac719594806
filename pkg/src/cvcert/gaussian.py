"""Gaussian model of finitely squeezed CV graph states.

Conventions used throughout the package:

* quadrature vectors are ordered ``(x_1, ..., x_n, p_1, ..., p_n)`` with
  ``[x, p] = i`` (so the vacuum covariance is ``I / 2``);
* a *width* ``w`` parametrizes a density proportional to ``exp(-t**2/w**2)``,
  i.e. standard deviation ``w / sqrt(2)`` and variance ``w**2 / 2``.

With these two conventions the single-test pass probability of the
finitely squeezed graph state is ``(1 + (delta**2 + 1/sigma**2)/eps**2)**-0.5``
and independent noise widths add in quadrature. Nothing else reproduces
both facts at once, which is why the width convention is fixed here and not
configurable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import NoiseModel, NullifierSpec, WeightedGraph

#: Eigenvalues of a marginal covariance in ``[-PSD_TOLERANCE, 0)`` are clamped to 0.
PSD_TOLERANCE = 1e-9


def width_to_variance(width):
    return np.square(width) / 2.0


def variance_to_width(variance):
    return np.sqrt(2.0 * np.asarray(variance, dtype=float))


def width_to_std(width):
    return np.asarray(width, dtype=float) / math.sqrt(2.0)


class NumericalError(ArithmeticError):
    """A covariance that should be positive semidefinite is not."""


def symplectic_form(n: int) -> np.ndarray:
    """Standard symplectic form for ``(x..., p...)`` ordering."""
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return np.block([[zero, eye], [-eye, zero]])


@dataclass(frozen=True, eq=False)
class GaussianState:
    """First and second moments of an ``n``-mode Gaussian state.

    ``factor`` optionally holds ``F`` with ``covariance == F @ F.T`` computed
    without forming the product. Strongly squeezed states need it: their
    nullifier variance ``1/(2 sigma**2)`` is far below the rounding error of
    the ``sigma**2/2`` entries of the covariance itself.
    """

    n: int
    mean: np.ndarray
    covariance: np.ndarray
    factor: np.ndarray | None = None

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(2 * self.n)
        cov = np.asarray(self.covariance, dtype=float).reshape(2 * self.n, 2 * self.n)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        if self.factor is not None:
            factor = np.array(self.factor, dtype=float).reshape(2 * self.n, 2 * self.n)
            factor.setflags(write=False)
            object.__setattr__(self, "factor", factor)
        scale = max(1.0, float(np.max(np.abs(cov))))
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * scale):
            raise ValueError("covariance matrix is not symmetric")

    def satisfies_uncertainty(self, tol: float = PSD_TOLERANCE) -> bool:
        """Check ``cov + (i/2) Omega >= 0`` through its real 4n x 4n embedding."""
        a = self.covariance
        b = symplectic_form(self.n) / 2.0
        embedding = np.block([[a, -b], [b, a]])
        return bool(np.min(np.linalg.eigvalsh(embedding)) >= -tol)

    def nullifier_vector(self, spec: NullifierSpec) -> np.ndarray:
        """Coefficient vector of ``spec`` in quadrature ordering."""
        c = np.zeros(2 * self.n)
        c[self.n + spec.vertex - 1] = spec.p_coefficient
        for j, coef in spec.x_coefficients.items():
            c[j - 1] = coef
        return c

    def to_json(self) -> dict:
        return {"n": self.n, "mean": self.mean.tolist(), "covariance": self.covariance.tolist()}


def cz_symplectic(g: WeightedGraph) -> np.ndarray:
    """Symplectic matrix of the product of CZ gates of ``g``.

    Positions are untouched; ``p_i -> p_i + sum_j w_ij x_j``.
    """
    n = g.n
    s = np.eye(2 * n)
    s[n:, :n] = g.adjacency_matrix()
    return s


def graph_state_covariance(g: WeightedGraph, squeezing: float) -> GaussianState:
    """Moments of the finitely squeezed graph state with squeezing ``sigma``.

    Before entangling, each mode has ``Var x = sigma**2/2`` and
    ``Var p = 1/(2 sigma**2)``.
    """
    if not squeezing > 0 or not math.isfinite(squeezing):
        raise ValueError(f"squeezing must be a positive finite number, got {squeezing}")
    n = g.n
    sigma2 = squeezing**2
    base = np.diag(np.concatenate([np.full(n, sigma2 / 2.0), np.full(n, 1.0 / (2.0 * sigma2))]))
    s = cz_symplectic(g)
    cov = s @ base @ s.T
    cov = (cov + cov.T) / 2.0
    return GaussianState(n, np.zeros(2 * n), cov, factor=s * np.sqrt(np.diag(base)))


def nullifier_statistics(state: GaussianState, spec: NullifierSpec) -> tuple[float, float]:
    """Mean and width of the nullifier outcome distribution (noise-free)."""
    c = state.nullifier_vector(spec)
    mean = float(c @ state.mean)
    if state.factor is not None:
        var = float(np.sum((state.factor.T @ c) ** 2))
    else:
        var = float(c @ state.covariance @ c)
    return mean, float(variance_to_width(max(var, 0.0)))


def displace(state: GaussianState, shift) -> GaussianState:
    """Apply the momentum displacement that shifts nullifier ``i`` by ``shift[i]``."""
    shift = np.asarray(shift, dtype=float)
    if shift.shape != (state.n,):
        raise ValueError(f"shift must have length {state.n}, got shape {shift.shape}")
    mean = state.mean.copy()
    mean[state.n:] += shift
    return GaussianState(state.n, mean, state.covariance, state.factor)


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    """Matrix ``L`` with ``L @ L.T == cov``, clamping tiny negative eigenvalues."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    vals, vecs = np.linalg.eigh(cov)
    scale = max(1.0, float(np.max(np.abs(vals))))
    if np.min(vals) < -PSD_TOLERANCE * scale:
        raise NumericalError(f"marginal covariance has eigenvalue {np.min(vals):.3e} < 0")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


class NullifierSampler:
    """Repeated local measurements of one nullifier on one state.

    Draws the joint marginal of ``p_i`` and the neighbor positions, adds the
    local quadrature noise and combines the outcomes into ``g_i``. The
    marginal factor comes from the state's exact factor when present and from
    a Cholesky decomposition of the marginal covariance otherwise. ``sample``
    applies the nullifier coefficients to the factor before drawing, which
    is the same linear map but avoids cancelling large position terms.
    """

    def __init__(self, state: GaussianState, spec: NullifierSpec, noise: NoiseModel):
        n = state.n
        self.spec = spec
        idx = [n + spec.vertex - 1] + [j - 1 for j in spec.x_coefficients]
        self._idx = np.array(idx)
        self._coef = np.array([spec.p_coefficient] + list(spec.x_coefficients.values()))
        self._mean = state.mean[self._idx]
        if state.factor is not None:
            self._factor = state.factor[self._idx]
        else:
            self._factor = _psd_factor(state.covariance[np.ix_(self._idx, self._idx)])
        noise_widths = [noise.p_width] + [noise.x_width] * len(spec.x_coefficients)
        self._noise_std = width_to_std(np.array(noise_widths))
        self._g_mean = float(self._coef @ self._mean)
        self._g_factor = self._factor.T @ self._coef
        self._g_noise = self._noise_std * self._coef

    def sample_quadratures(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Noisy ``(p_i, x_j...)`` outcomes, shape ``(size, 1 + degree)``."""
        z = rng.standard_normal((size, self._factor.shape[1]))
        eps = rng.standard_normal((size, len(self._idx)))
        return self._mean + z @ self._factor.T + eps * self._noise_std

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Noisy nullifier outcomes; same random stream as :meth:`sample_quadratures`."""
        z = rng.standard_normal((size, self._factor.shape[1]))
        eps = rng.standard_normal((size, len(self._idx)))
        return self._g_mean + z @ self._g_factor + eps @ self._g_noise


def sample_nullifier_measurement(
    state: GaussianState,
    spec: NullifierSpec,
    noise: NoiseModel,
    rng: np.random.Generator,
    size: int | None = None,
):
    """Sample noisy local measurements of ``g_i``.

    Returns a float when ``size`` is None, else an array of ``size`` outcomes.
    """
    if not 1 <= spec.vertex <= state.n:
        raise IndexError(f"nullifier vertex {spec.vertex} outside a {state.n}-mode state")
    out = NullifierSampler(state, spec, noise).sample(rng, 1 if size is None else size)
    return float(out[0]) if size is None else out
