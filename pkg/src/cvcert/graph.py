"""Weighted graphs, nullifier coefficients and measurement-noise bookkeeping.

Vertices are 1-based everywhere a user can see them (constructor arguments,
JSON files, ``NullifierSpec.vertex``).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping


class GraphValidationError(ValueError):
    """Raised when a graph description violates the weighted-graph rules."""


@dataclass(frozen=True)
class NoiseModel:
    """Gaussian quadrature measurement noise.

    Both widths follow the package-wide width convention: a width ``w``
    parametrizes a density proportional to ``exp(-t**2 / w**2)``.

    Attributes:
        p_width: noise width on momentum outcomes (nu).
        x_width: noise width on position outcomes (mu_x).
    """

    p_width: float = 0.0
    x_width: float = 0.0

    def __post_init__(self):
        for name in ("p_width", "x_width"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be a finite non-negative number, got {value}")


@dataclass(frozen=True)
class NullifierSpec:
    """Coefficients of ``g_i = p_i - sum_j w_ij x_j``.

    ``x_coefficients`` maps each neighbor ``j`` (1-based) to ``-w_ij``.
    """

    vertex: int
    x_coefficients: Mapping[int, float]
    p_coefficient: float = 1.0

    def evaluate(self, p: Mapping[int, float] | float, x: Mapping[int, float]) -> float:
        """Evaluate the nullifier on classical outcomes.

        Args:
            p: momentum outcome of ``vertex`` (or a mapping containing it).
            x: position outcomes keyed by vertex; must cover every neighbor.
        """
        p_i = p[self.vertex] if isinstance(p, Mapping) else p
        return self.p_coefficient * p_i + sum(c * x[j] for j, c in self.x_coefficients.items())


@dataclass(frozen=True)
class WeightedGraph:
    """Simple undirected graph with real edge weights.

    Edges are stored as canonical ``(i, j, weight)`` triples with ``i < j``.
    Use :func:`new_weighted_graph` to build one from user input.
    """

    n: int
    edges: tuple[tuple[int, int, float], ...]
    _adjacency: Mapping[int, Mapping[int, float]] = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        if self._adjacency is None:
            adjacency: dict[int, dict[int, float]] = {v: {} for v in range(1, self.n + 1)}
            for i, j, w in self.edges:
                adjacency[i][j] = w
                adjacency[j][i] = w
            object.__setattr__(self, "_adjacency", adjacency)

    def neighbors(self, i: int) -> Mapping[int, float]:
        """Return ``{j: weight}`` for the neighbors of vertex ``i``."""
        self._check_vertex(i)
        return self._adjacency[i]

    def weight(self, i: int, j: int) -> float:
        """Edge weight between ``i`` and ``j`` (0.0 when not adjacent)."""
        return self.neighbors(i).get(j, 0.0)

    def adjacency_matrix(self):
        """Dense symmetric weight matrix (0-based indexing)."""
        import numpy as np

        mat = np.zeros((self.n, self.n))
        for i, j, w in self.edges:
            mat[i - 1, j - 1] = w
            mat[j - 1, i - 1] = w
        return mat

    def relabel(self, perm: Mapping[int, int]) -> "WeightedGraph":
        """Return the graph with vertex ``v`` renamed to ``perm[v]``."""
        return new_weighted_graph(self.n, [(perm[i], perm[j], w) for i, j, w in self.edges])

    def to_json(self) -> dict:
        return {"n": self.n, "edges": [[i, j, w] for i, j, w in self.edges]}

    def _check_vertex(self, i: int) -> None:
        if not (isinstance(i, int) and 1 <= i <= self.n):
            raise IndexError(f"vertex {i!r} out of range 1..{self.n}")


def new_weighted_graph(n: int, edges: Iterable[Iterable] = ()) -> WeightedGraph:
    """Validate and build a :class:`WeightedGraph`.

    Args:
        n: number of vertices (>= 1).
        edges: iterable of ``(i, j, weight)`` with 1-based vertex indices.

    Raises:
        GraphValidationError: on self-loops, duplicate pairs, out-of-range
            indices or non-finite weights. The message names the edge.
    """
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise GraphValidationError(f"vertex count must be a positive integer, got {n!r}")
    canonical: dict[tuple[int, int], float] = {}
    for edge in edges:
        edge = tuple(edge)
        if len(edge) != 3:
            raise GraphValidationError(f"edge {edge!r} must be (i, j, weight)")
        i, j, w = edge
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in (i, j)):
            raise GraphValidationError(f"edge {edge!r}: vertex indices must be integers")
        if not (1 <= i <= n and 1 <= j <= n):
            raise GraphValidationError(f"edge {edge!r}: vertex index out of range 1..{n}")
        if i == j:
            raise GraphValidationError(f"edge {edge!r}: self-loop")
        w = float(w)
        if not math.isfinite(w):
            raise GraphValidationError(f"edge {edge!r}: weight must be finite")
        key = (min(i, j), max(i, j))
        if key in canonical:
            raise GraphValidationError(f"edge {edge!r}: duplicate of pair {key}")
        if w == 0.0:
            warnings.warn(f"edge {edge!r} has zero weight and does not entangle", stacklevel=2)
        canonical[key] = w
    return WeightedGraph(n, tuple((i, j, w) for (i, j), w in sorted(canonical.items())))


def path_graph(n: int, weight: float = 1.0) -> WeightedGraph:
    """Linear chain 1-2-...-n with uniform weights."""
    return new_weighted_graph(n, [(i, i + 1, weight) for i in range(1, n)])


def load_graph(path: str | Path) -> WeightedGraph:
    """Read a graph from ``{"n": int, "edges": [[i, j, w], ...]}`` JSON."""
    with open(path) as fh:
        data = json.load(fh)
    try:
        return new_weighted_graph(data["n"], data.get("edges", []))
    except (KeyError, TypeError) as exc:
        raise GraphValidationError(f"malformed graph file {path}: {exc}") from exc


def nullifier_coefficients(g: WeightedGraph, i: int) -> NullifierSpec:
    """Nullifier of vertex ``i``: ``p_i`` minus the weighted neighbor positions."""
    return NullifierSpec(vertex=i, x_coefficients={j: -w for j, w in sorted(g.neighbors(i).items())})


def combined_measurement_noise(g: WeightedGraph, i: int, noise: NoiseModel) -> float:
    """Width of the noise on a locally measured nullifier ``g_i``.

    ``delta_i**2 = nu**2 + mu_x**2 * sum_j w_ij**2`` -- widths add in
    quadrature because the local noises are independent Gaussians.
    """
    weights_sq = sum(w * w for w in g.neighbors(i).values())
    return math.sqrt(noise.p_width**2 + noise.x_width**2 * weights_sq)


def max_measurement_noise(g: WeightedGraph, noise: NoiseModel) -> float:
    """Worst-case nullifier noise width over all vertices."""
    return max(combined_measurement_noise(g, i, noise) for i in range(1, g.n + 1))
