"""Quadrature on the unit sphere of directions and velocity-moment operators.

The velocity measure is the normalized uniform measure on S^(d-1), for which
the second moment is <v (x) v> = I/d. All transport averages <.>, <v .>, and
<v (x) v .> reduce to weighted sums over an antipodally symmetric node set,
so forward and direction-reversed problems share one quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss


def diffusion_constant(d: int) -> float:
    """C_d = 1/d, the second angular moment of the uniform direction measure."""
    if d not in (2, 3):
        raise ValueError("dimension must be 2 or 3")
    return 1.0 / d


@dataclass(frozen=True)
class AngularQuadrature:
    """Nodes and normalized weights on S^(d-1); immutable and shareable."""

    dim: int
    nodes: np.ndarray  # (n, d), unit vectors
    weights: np.ndarray  # (n,), sum to 1
    n_polar: int
    n_azimuth: int

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    def _values(self, field) -> np.ndarray:
        vals = field(self.nodes) if callable(field) else np.asarray(field, dtype=float)
        if vals.shape[0] != self.n_nodes:
            raise ValueError("field values must align with quadrature nodes")
        return vals

    def average(self, field):
        """<field> = sum_i w_i field(v_i); field is a callable or node values."""
        vals = self._values(field)
        return np.tensordot(self.weights, vals, axes=(0, 0))

    def first_moment(self, field) -> np.ndarray:
        """<v field>, a vector in R^d."""
        vals = self._values(field)
        return np.tensordot(self.weights * vals, self.nodes, axes=(0, 0))

    def second_moment(self, field) -> np.ndarray:
        """<v (x) v field>, a d-by-d matrix."""
        vals = self._values(field)
        weighted = (self.weights * vals)[:, None] * self.nodes
        return weighted.T @ self.nodes


def build_quadrature(d: int, n_polar: int = 16, n_azimuth: int = 32) -> AngularQuadrature:
    """Direction quadrature: Gauss-Legendre in cos(theta) x uniform azimuth
    for d=3, uniform angles for d=2. The node set is antipodally symmetric,
    which requires an even azimuth count.
    """
    if d == 3:
        if n_polar < 2:
            raise ValueError("n_polar must be at least 2")
        if n_azimuth < 4:
            raise ValueError("n_azimuth must be at least 4")
        if n_azimuth % 2:
            raise ValueError("n_azimuth must be even (antipodal symmetry)")
        mu, w_mu = leggauss(n_polar)
        phi = 2.0 * np.pi * (np.arange(n_azimuth) + 0.5) / n_azimuth
        sin_theta = np.sqrt(1.0 - mu**2)
        nodes = np.empty((n_polar * n_azimuth, 3))
        nodes[:, 0] = np.outer(sin_theta, np.cos(phi)).ravel()
        nodes[:, 1] = np.outer(sin_theta, np.sin(phi)).ravel()
        nodes[:, 2] = np.outer(mu, np.ones(n_azimuth)).ravel()
        weights = np.outer(w_mu / 2.0, np.full(n_azimuth, 1.0 / n_azimuth)).ravel()
        return AngularQuadrature(dim=3, nodes=nodes, weights=weights,
                                 n_polar=n_polar, n_azimuth=n_azimuth)
    if d == 2:
        if n_azimuth < 4:
            raise ValueError("n_azimuth must be at least 4")
        if n_azimuth % 2:
            raise ValueError("n_azimuth must be even (antipodal symmetry)")
        theta = 2.0 * np.pi * (np.arange(n_azimuth) + 0.5) / n_azimuth
        nodes = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        weights = np.full(n_azimuth, 1.0 / n_azimuth)
        return AngularQuadrature(dim=2, nodes=nodes, weights=weights,
                                 n_polar=1, n_azimuth=n_azimuth)
    raise ValueError("dimension must be 2 or 3")


def velocity_average(field, q: AngularQuadrature):
    """Angular average of a direction-dependent quantity under q."""
    return q.average(field)
