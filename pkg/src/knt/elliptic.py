"""Radial-spectral elliptic solvers on the ball.

All diffusion-side boundary value problems here have radial absorption, so
they decouple over real spherical harmonics into radial ODEs

    -C_d (rho'' + (d-1)/r rho' - lambda_l / r^2 rho) + sigma_a(r) rho = s(r)

with C_d = 1/d and lambda_l = l (l + d - 2). Each mode is solved in the
regularized variable phi = rho / r^l, which is an even smooth function of r:
the transformation removes both singular coefficients, turns regularity at
the origin into a plain Neumann condition, and makes every harmonic mode
(sigma_a = 0) exactly constant in phi, so harmonic extensions and their
Dirichlet-to-Neumann values are reproduced at machine precision instead of
at discretization accuracy.

Restriction, by design: only radial absorption fields are accepted here.
That is what decouples the modes and keeps every solve a tridiagonal system
with an ODE shooting oracle. The transport solver does not share this
restriction; only the diffusion-expansion comparison does.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded
from scipy.special import lpmv

from knt.angular import diffusion_constant
from knt.geometry import AbsorptionField
from knt.layer_constants import W1_OVER_W2


class UnsupportedConfigurationError(ValueError):
    """Raised when a request falls outside the radial-absorption design."""


def laplace_beltrami_eigenvalue(l: int, dim: int = 3) -> int:
    """Eigenvalue l (l + d - 2) of -Delta on the unit sphere S^{d-1}."""
    if l < 0:
        raise ValueError("mode degree must be nonnegative")
    return l * (l + dim - 2)


def real_sphere_harmonic(l: int, m: int, directions: np.ndarray) -> np.ndarray:
    """Real spherical harmonic on S^2, mean-normalized: (1/4pi) int Y^2 = 1.

    m > 0 pairs with cos(m phi), m < 0 with sin(|m| phi). The constant mode
    (0, 0) is identically 1, so a boundary datum f == 1 is exactly that mode
    with coefficient 1.
    """
    if not 0 <= abs(m) <= l:
        raise ValueError("need |m| <= l")
    pts = np.atleast_2d(np.asarray(directions, dtype=float))
    if pts.shape[-1] != 3:
        raise ValueError("directions must be 3-vectors")
    cos_theta = np.clip(pts[:, 2], -1.0, 1.0)
    phi = np.arctan2(pts[:, 1], pts[:, 0])
    ma = abs(m)
    norm = math.sqrt((2 * l + 1) * math.factorial(l - ma) / math.factorial(l + ma))
    leg = lpmv(ma, l, cos_theta)
    if m == 0:
        vals = norm * leg
    elif m > 0:
        vals = math.sqrt(2.0) * norm * leg * np.cos(ma * phi)
    else:
        vals = math.sqrt(2.0) * norm * leg * np.sin(ma * phi)
    return vals if np.asarray(directions).ndim > 1 else float(vals[0])


@dataclass(frozen=True)
class BoundaryData:
    """Finite real-harmonic expansion of an isotropic boundary datum on S^2.

    `sobolev_exponent` is optional context: the smoothness order the datum
    is meant to be measured in (the norm itself takes any s).
    """

    modes: tuple
    coefficients: np.ndarray
    sobolev_exponent: float | None = None

    def __post_init__(self):
        coeffs = np.asarray(self.coefficients, dtype=float)
        modes = tuple((int(l), int(m)) for l, m in self.modes)
        if coeffs.ndim != 1 or len(modes) != coeffs.size:
            raise ValueError("one coefficient per mode required")
        if len(set(modes)) != len(modes):
            raise ValueError("duplicate modes")
        for l, m in modes:
            if l < 0 or abs(m) > l:
                raise ValueError(f"invalid mode ({l}, {m})")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "coefficients", coeffs)

    @classmethod
    def single(cls, l: int, m: int = 0, amplitude: float = 1.0) -> "BoundaryData":
        return cls(modes=((l, m),), coefficients=np.array([amplitude]))

    @property
    def max_degree(self) -> int:
        return max((l for l, _ in self.modes), default=0)

    def sobolev_norm(self, s: float, dim: int = 3) -> float:
        """Boundary H^s norm: sum over modes of (1+lambda_l)^s |f_lm|^2."""
        lam = np.array([laplace_beltrami_eigenvalue(l, dim) for l, _ in self.modes], dtype=float)
        return float(np.sqrt(np.sum((1.0 + lam) ** s * self.coefficients**2)))

    def evaluate(self, directions: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(directions, dtype=float))
        out = np.zeros(pts.shape[0])
        for (l, m), c in zip(self.modes, self.coefficients):
            out += c * real_sphere_harmonic(l, m, pts)
        return out if np.asarray(directions).ndim > 1 else float(out[0])


def graded_radial_nodes(n: int = 512, radius: float = 1.0, kn: float | None = None,
                        boundary_power: float = 2.0) -> np.ndarray:
    """Radial nodes 0 = r_0 < ... < r_n = radius, refined toward the boundary
    (r = R(1 - s^p)), where the transport boundary layer lives. With `kn`
    given, n grows as needed so at least 8 shells fall within one mean free
    path of the boundary and the cells there are no wider than kn/2.
    """
    if kn is not None:
        if kn <= 0.0:
            raise ValueError("kn must be positive")
        frac = (kn / radius) ** (1.0 / boundary_power)
        n = max(n, math.ceil(8.0 / frac), math.ceil(2.0 * boundary_power * radius * frac / kn))
    s = np.linspace(1.0, 0.0, n + 1)
    nodes = radius * (1.0 - s**boundary_power)
    nodes[0] = 0.0
    nodes[-1] = radius
    if kn is not None:
        in_layer = nodes >= radius - kn
        assert in_layer.sum() >= 4
        assert np.max(np.diff(nodes[in_layer])) <= 0.5 * kn + 1e-15
    return nodes


def fornberg_weights(x0: float, nodes: np.ndarray, order: int) -> np.ndarray:
    """Finite-difference weights for the `order`-th derivative at x0 on the
    given nodes (classic recursive construction, arbitrary spacing)."""
    nodes = np.asarray(nodes, dtype=float)
    n = nodes.size
    if order >= n:
        raise ValueError("need more nodes than the derivative order")
    c = np.zeros((n, order + 1))
    c[0, 0] = 1.0
    c1 = 1.0
    c4 = nodes[0] - x0
    for i in range(1, n):
        mn = min(i, order)
        c2 = 1.0
        c5 = c4
        c4 = nodes[i] - x0
        for j in range(i):
            c3 = nodes[i] - nodes[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, order]


def _radial_absorption(sigma_a) -> AbsorptionField:
    if sigma_a is None:
        return AbsorptionField.zero()
    if isinstance(sigma_a, AbsorptionField):
        return sigma_a
    raise UnsupportedConfigurationError(
        "elliptic solves support radial absorption fields only")


@dataclass
class RadialModeSolution:
    """One radial mode rho_l(r) with its derivative and boundary data."""

    l: int
    radii: np.ndarray
    phi_values: np.ndarray  # rho / r^l, even and smooth through r = 0
    values: np.ndarray  # rho_l(r)
    derivative: np.ndarray  # rho_l'(r)
    boundary_value: float
    boundary_derivative: float
    dim: int = 3

    def __post_init__(self):
        self._phi_spline = CubicSpline(self.radii, self.phi_values)

    def rho_at(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return r**self.l * self._phi_spline(r)

    def drho_at(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        phi = self._phi_spline(r)
        dphi = self._phi_spline(r, 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            lead = np.where(self.l > 0, self.l * r ** max(self.l - 1, 0) * phi, 0.0)
        return lead + r**self.l * dphi


def _mode_system(l: int, radii: np.ndarray, sig_vals: np.ndarray, dim: int):
    """Tridiagonal rows of the phi-space operator on the given radial nodes."""
    n = radii.size - 1
    c_d = diffusion_constant(dim)
    beta = 2 * l + dim - 1
    lower = np.zeros(n + 1)
    diag = np.zeros(n + 1)
    upper = np.zeros(n + 1)
    # center row: phi'' + beta phi'/r -> (beta + 1) phi''(0), even extension
    h1 = radii[1] - radii[0]
    diag[0] = c_d * (beta + 1) * 2.0 / h1**2 + sig_vals[0]
    upper[0] = -c_d * (beta + 1) * 2.0 / h1**2
    hm = np.diff(radii)[:-1]  # r_i - r_{i-1}, i = 1..n-1
    hp = np.diff(radii)[1:]  # r_{i+1} - r_i
    r = radii[1:-1]
    a2 = 2.0 / (hm * (hp + hm))
    b2 = -2.0 / (hp * hm)
    c2 = 2.0 / (hp * (hp + hm))
    a1 = -hp / (hm * (hp + hm))
    b1 = (hp - hm) / (hp * hm)
    c1 = hm / (hp * (hp + hm))
    lower[1:-1] = -c_d * (a2 + beta / r * a1)
    diag[1:-1] = -c_d * (b2 + beta / r * b1) + sig_vals[1:-1]
    upper[1:-1] = -c_d * (c2 + beta / r * c1)
    diag[n] = 1.0
    return lower, diag, upper


def solve_mode(l: int, sigma_a, boundary_value: float, source=None, *,
               radii: np.ndarray | None = None, dim: int = 3,
               reduced_source=None) -> RadialModeSolution:
    """Solve one radial mode of -C_d Delta + sigma_a on the ball.

    `source` is the physical radial source s_l(r); internally the solve runs
    on phi = rho / r^l, whose source is s_l / r^l (extrapolated to r = 0 for
    l > 0). Callers that already know the reduced source, like the corrector
    chain, pass `reduced_source` instead and skip the division entirely.
    """
    if l < 0:
        raise ValueError("mode degree must be nonnegative")
    field = _radial_absorption(sigma_a)
    if radii is None:
        radii = graded_radial_nodes()
    radii = np.asarray(radii, dtype=float)
    radius = radii[-1]
    sig_vals = field.eval_radial(radii)
    if reduced_source is not None and source is not None:
        raise ValueError("pass source or reduced_source, not both")
    if reduced_source is not None:
        red = np.asarray(reduced_source(radii) if callable(reduced_source)
                         else reduced_source, dtype=float)
    elif source is not None:
        s_vals = np.asarray(source(radii) if callable(source) else source, dtype=float)
        red = np.empty_like(s_vals)
        if l == 0:
            red[:] = s_vals
        else:
            red[1:] = s_vals[1:] / radii[1:] ** l
            # quadratic extrapolation to the center through the first nodes
            red[0] = fornberg_weights(0.0, radii[1:4], 0) @ red[1:4]
    else:
        red = np.zeros_like(radii)
    if red.shape != radii.shape:
        raise ValueError("source values must align with the radial grid")

    lower, diag, upper = _mode_system(l, radii, sig_vals, dim)
    rhs = red.copy()
    rhs[-1] = boundary_value / radius**l
    # equilibrate rows: the 1/h^2 spread between fine boundary cells and the
    # unit Dirichlet row otherwise costs a few digits
    scale = np.abs(diag)
    lower, diag, upper, rhs = lower / scale, diag / scale, upper / scale, rhs / scale
    ab = np.zeros((3, radii.size))
    ab[0, 1:] = upper[:-1]
    ab[1, :] = diag
    ab[2, :-1] = lower[1:]
    phi = solve_banded((1, 1), ab, rhs)

    values = radii**l * phi
    derivative = _rho_derivative(l, radii, phi)
    w = fornberg_weights(radius, radii[-5:], 1)
    dphi_b = float(w @ phi[-5:])
    boundary_derivative = l * radius ** max(l - 1, 0) * phi[-1] + radius**l * dphi_b
    if abs(values[-1] - boundary_value) > 1e-10 * max(1.0, abs(boundary_value)):
        raise ArithmeticError("boundary value not met by the banded solve")
    return RadialModeSolution(l=l, radii=radii, phi_values=phi, values=values,
                              derivative=derivative, boundary_value=boundary_value,
                              boundary_derivative=boundary_derivative, dim=dim)


def _rho_derivative(l: int, radii: np.ndarray, phi: np.ndarray) -> np.ndarray:
    dphi = np.gradient(phi, radii, edge_order=2)
    dphi[-1] = fornberg_weights(radii[-1], radii[-5:], 1) @ phi[-5:]
    dphi[0] = 0.0  # phi is even
    if l == 0:
        return dphi
    lead = np.zeros_like(radii)
    lead[1:] = l * radii[1:] ** (l - 1) * phi[1:]
    lead[0] = phi[0] if l == 1 else 0.0
    return lead + radii**l * dphi


def dtn_mode(l: int, sigma_a, *, radii: np.ndarray | None = None, dim: int = 3) -> float:
    """Per-mode Dirichlet-to-Neumann value of -C_d Delta + sigma_a: the
    outward normal derivative at the boundary for unit boundary datum,
    evaluated by a one-sided 4th-order stencil."""
    sol = solve_mode(l, sigma_a, 1.0, radii=radii, dim=dim)
    return sol.boundary_derivative


@dataclass
class ModeField:
    """A scalar field on the ball given by per-mode radial profiles."""

    modes: tuple
    radii: np.ndarray
    profiles: dict  # (l, m) -> RadialModeSolution

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        r = np.linalg.norm(pts, axis=1)
        safe = np.where(r > 0.0, r, 1.0)
        dirs = np.where(r[:, None] > 0.0, pts / safe[:, None], [0.0, 0.0, 1.0])
        out = np.zeros(pts.shape[0])
        for (l, m), sol in self.profiles.items():
            radial = sol.rho_at(r)
            out += radial * real_sphere_harmonic(l, m, dirs)
        return out if np.asarray(points).ndim > 1 else float(out[0])

    def gradient(self, points: np.ndarray, step: float = 1e-5) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros_like(pts)
        for axis in range(3):
            shift = np.zeros(3)
            shift[axis] = step
            out[:, axis] = (self.evaluate(pts + shift) - self.evaluate(pts - shift)) / (2 * step)
        return out if np.asarray(points).ndim > 1 else out[0]

    def boundary_coefficients(self) -> BoundaryData:
        coeffs = [sol.boundary_value for sol in self.profiles.values()]
        return BoundaryData(modes=tuple(self.profiles.keys()), coefficients=np.array(coeffs))

    def normal_derivative_coefficients(self) -> BoundaryData:
        coeffs = [sol.boundary_derivative for sol in self.profiles.values()]
        return BoundaryData(modes=tuple(self.profiles.keys()), coefficients=np.array(coeffs))


@dataclass
class ExpansionFields:
    """The diffusion-expansion field bundle for one boundary datum.

    rho00: harmonic leading profile (zero absorption);
    rho_a0: absorbing leading profile; psi0 = rho_a0 - rho00;
    c0, c: the two boundary-layer correctors; c_a = c + c0.
    """

    boundary: BoundaryData
    sigma_a: AbsorptionField
    ratio: float
    rho00: ModeField
    rho_a0: ModeField
    psi0: ModeField
    c0: ModeField
    c: ModeField
    c_a: ModeField

    def grad_psi0(self, points: np.ndarray) -> np.ndarray:
        return self.psi0.gradient(points)

    def grad_rho00(self, points: np.ndarray) -> np.ndarray:
        return self.rho00.gradient(points)


def expansion_fields(f: BoundaryData, sigma_a, *, radii: np.ndarray | None = None,
                     ratio: float | None = None, dim: int = 3) -> ExpansionFields:
    """Solve the whole corrector chain for the boundary datum f.

    The chain per mode (l, m) with coefficient f_lm:
      rho00: no absorption, boundary f_lm;
      rho_a0: absorption, boundary f_lm; psi0 = rho_a0 - rho00;
      c0: no absorption, boundary = ratio * dn(rho00);
      c: absorption, source -sigma_a c0, boundary = ratio * dn(psi0);
      c_a = c + c0 (same object as solving the c_a problem directly).
    """
    field = _radial_absorption(sigma_a)
    if radii is None:
        radii = graded_radial_nodes()
    radii = np.asarray(radii, dtype=float)
    rat = W1_OVER_W2 if ratio is None else float(ratio)

    sols = {name: {} for name in ("rho00", "rho_a0", "psi0", "c0", "c", "c_a")}
    for (l, m), coeff in zip(f.modes, f.coefficients):
        harm = solve_mode(l, None, coeff, radii=radii, dim=dim)
        absorbing = solve_mode(l, field, coeff, radii=radii, dim=dim)
        psi0 = _combine(absorbing, harm, 1.0, -1.0)
        c0 = solve_mode(l, None, rat * harm.boundary_derivative, radii=radii, dim=dim)
        red_source = -field.eval_radial(radii) * c0.phi_values
        c = solve_mode(l, field, rat * psi0.boundary_derivative,
                       reduced_source=red_source, radii=radii, dim=dim)
        c_a = _combine(c, c0, 1.0, 1.0)
        for name, sol in (("rho00", harm), ("rho_a0", absorbing), ("psi0", psi0),
                          ("c0", c0), ("c", c), ("c_a", c_a)):
            sols[name][(l, m)] = sol

    fields = {name: ModeField(modes=f.modes, radii=radii, profiles=profs)
              for name, profs in sols.items()}
    return ExpansionFields(boundary=f, sigma_a=field, ratio=rat, **fields)


def _combine(a: RadialModeSolution, b: RadialModeSolution,
             wa: float, wb: float) -> RadialModeSolution:
    assert a.l == b.l
    assert a.radii is b.radii or np.array_equal(a.radii, b.radii)
    return RadialModeSolution(
        l=a.l, radii=a.radii,
        phi_values=wa * a.phi_values + wb * b.phi_values,
        values=wa * a.values + wb * b.values,
        derivative=wa * a.derivative + wb * b.derivative,
        boundary_value=wa * a.boundary_value + wb * b.boundary_value,
        boundary_derivative=wa * a.boundary_derivative + wb * b.boundary_derivative,
        dim=a.dim)


_SOBOLEV_STENCIL = 9


def interior_sobolev_norm(field: ModeField, r_support: float, order: int) -> float:
    """H^order norm of the field on the concentric ball of radius r_support,
    through the mode decomposition: for u = sum R_lm Y_lm,

      ||u||^2 = c_d * sum_lm sum_{j<=order} (1+lambda_l)^(order-j)
                 * int_0^{r_support} (R_lm^(j))^2 r^(d-1) dr,

    an equivalent norm built from radial derivatives (sliding Fornberg
    stencils) and angular eigenvalues. Integer orders 0..6 only.
    """
    if not isinstance(order, (int, np.integer)) or not 0 <= order <= 6:
        raise ValueError("order must be an integer in [0, 6]")
    radii = field.radii
    if r_support <= radii[0] or r_support >= radii[-1]:
        raise ValueError("support radius must lie strictly inside the solved ball")
    # keep one stencil of nodes past the support so derivative splines
    # interpolate (never extrapolate) at r_support
    hi = min(int(np.searchsorted(radii, r_support)) + 1 + _SOBOLEV_STENCIL, radii.size)
    r_sub = radii[:hi]
    if r_sub.size < _SOBOLEV_STENCIL + 1:
        raise ValueError("too few radial nodes inside the support ball")
    xg, wg = np.polynomial.legendre.leggauss(64)
    xg = 0.5 * (xg + 1.0) * r_support
    wg = 0.5 * r_support * wg
    total = 0.0
    sphere_area = 4.0 * np.pi  # mean-normalized Y integrate to |S^2|
    for (l, m), sol in field.profiles.items():
        lam = laplace_beltrami_eigenvalue(l, sol.dim)
        vals = sol.values[:hi]
        for j in range(order + 1):
            arr = vals if j == 0 else _sliding_derivative(r_sub, vals, j)
            gvals = CubicSpline(r_sub, arr)(xg)
            total += (1.0 + lam) ** (order - j) * float(
                np.sum(wg * gvals**2 * xg ** (sol.dim - 1)))
    return float(np.sqrt(sphere_area * total))


def _sliding_derivative(x: np.ndarray, y: np.ndarray, order: int) -> np.ndarray:
    half = _SOBOLEV_STENCIL // 2
    out = np.empty_like(y)
    n = x.size
    for i in range(n):
        lo = max(0, min(i - half, n - _SOBOLEV_STENCIL))
        w = fornberg_weights(x[i], x[lo:lo + _SOBOLEV_STENCIL], order)
        out[i] = w @ y[lo:lo + _SOBOLEV_STENCIL]
    return out
