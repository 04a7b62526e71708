"""Forward transport solver through the nonlocal integral formulation.

The mean intensity solves the second-kind equation

    <u>(x) = b_f(x) + int_D E(x, eta) <u>(eta) d eta,

where E is the attenuated Peierls kernel and b_f the exponentially damped
boundary trace. Every kernel application here is matrix-free ray quadrature:
the spherical change of variables turns the singular volume integral into
angular averages of 1D attenuated chord integrals, which this module
evaluates with closed-form exponential cells (exact for constant fields, so
mass identities and the maximum principle survive discretization).

With a radial absorption field the operator commutes with rotations, so for
harmonic boundary data the solve reduces per spherical-harmonic degree to a
radial fixed point: targets on the polar axis, the azimuthal average done
analytically, Gauss-Legendre in the polar cosine. The full-ball solution is
assembled from the radial profiles afterwards; reconstruction and the
self-consistency checks run on the assembled field with general geometry.
"""

from __future__ import annotations

import contextlib
import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.interpolate import CubicSpline
from scipy.sparse.linalg import LinearOperator, lgmres

from knt.angular import AngularQuadrature, build_quadrature
from knt.elliptic import BoundaryData, graded_radial_nodes, real_sphere_harmonic
from knt.geometry import AbsorptionField, Ball, segment_integral

_MASS_NODES = 40  # equal-attenuation ray nodes resolving the Kn scale
_SHAPE_NODES = 24  # uniform ray nodes resolving the absorption profile
_MU_PANEL_ORDER = 12


@contextlib.contextmanager
def ray_resolution(factor: int):
    """Temporarily multiply the per-ray shape-node count for every chord
    quadrature built inside the block. The uniform shape nodes are the
    slowly converging part of the ray rule (the exponential part is exact),
    so this is the knob for refinement studies. Not thread safe: it swaps a
    module-level constant."""
    if not factor >= 1:
        raise ValueError("refinement factor must be at least 1")
    global _SHAPE_NODES
    previous = _SHAPE_NODES
    _SHAPE_NODES = previous * int(factor)
    try:
        yield
    finally:
        _SHAPE_NODES = previous


def _as_field(sigma_a) -> AbsorptionField:
    if sigma_a is None:
        return AbsorptionField.zero()
    if isinstance(sigma_a, AbsorptionField):
        return sigma_a
    raise TypeError("sigma_a must be an AbsorptionField (radial profile) or None")


def _legendre_p(l: int, x: np.ndarray) -> np.ndarray:
    c = np.zeros(l + 1)
    c[l] = 1.0
    return npleg.legval(x, c)


@dataclass(frozen=True)
class SpatialMesh:
    """Product mesh on the ball: graded radial shells x latitude-longitude
    angular cells. Centers at mid-radius/mid-angle, volumes exact."""

    ball: Ball
    shell_edges: np.ndarray
    n_polar: int
    n_azimuth: int
    centers: np.ndarray
    center_radii: np.ndarray
    volumes: np.ndarray

    @classmethod
    def build(cls, kn: float | None = None, n_radial: int = 96, n_polar: int = 8,
              n_azimuth: int = 16, ball: Ball | None = None) -> "SpatialMesh":
        b = ball if ball is not None else Ball()
        edges = graded_radial_nodes(n=n_radial, radius=b.radius, kn=kn)
        mu_edges = np.linspace(-1.0, 1.0, n_polar + 1)
        phi_edges = np.linspace(0.0, 2.0 * np.pi, n_azimuth + 1)
        r_mid = 0.5 * (edges[1:] + edges[:-1])
        mu_mid = 0.5 * (mu_edges[1:] + mu_edges[:-1])
        phi_mid = 0.5 * (phi_edges[1:] + phi_edges[:-1])
        vol_r = np.diff(edges**3) / 3.0
        vol_mu = np.diff(mu_edges)
        vol_phi = np.diff(phi_edges)

        rr, mm, pp = np.meshgrid(r_mid, mu_mid, phi_mid, indexing="ij")
        sin_t = np.sqrt(1.0 - mm**2)
        centers = np.stack([
            rr * sin_t * np.cos(pp),
            rr * sin_t * np.sin(pp),
            rr * mm,
        ], axis=-1).reshape(-1, 3) + b.center
        volumes = (vol_r[:, None, None] * vol_mu[None, :, None]
                   * vol_phi[None, None, :]).ravel()
        exact = 4.0 * np.pi * b.radius**3 / 3.0
        assert abs(volumes.sum() - exact) <= 1e-9 * exact
        return cls(ball=b, shell_edges=edges, n_polar=n_polar, n_azimuth=n_azimuth,
                   centers=centers, center_radii=np.repeat(r_mid, n_polar * n_azimuth),
                   volumes=volumes)

    @property
    def n_cells(self) -> int:
        return self.volumes.size

    def resolves_layer(self, kn: float) -> bool:
        edges = self.shell_edges
        layer = edges[edges >= self.ball.radius - kn]
        return layer.size >= 2 and np.max(np.diff(layer)) <= 0.5 * kn + 1e-15


def kernel_E_D(x, eta, kn: float, sigma_a=None, ball: Ball | None = None) -> float:
    """Pointwise attenuated Peierls kernel E(x, eta)."""
    if kn <= 0.0:
        raise ValueError("kn must be positive")
    b = ball if ball is not None else Ball()
    field = _as_field(sigma_a)
    x = np.asarray(x, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if not (b.contains(x) and b.contains(eta)):
        raise ValueError("kernel arguments must lie in the closed ball")
    dist = float(np.linalg.norm(x - eta))
    if dist == 0.0:
        raise ValueError("kernel is singular at coincident points")
    tau = dist / kn + kn * segment_integral(field, x, eta)
    c_d = 4.0 * np.pi if b.dim == 3 else 2.0 * np.pi
    return math.exp(-tau) / (c_d * kn * dist ** (b.dim - 1))


def _ray_nodes(s: np.ndarray, kn: float) -> np.ndarray:
    """Quadrature nodes on [0, s] per ray: equal-attenuation nodes for the
    exponential scale united with uniform nodes for the absorption shape."""
    s = np.asarray(s, dtype=float)
    total = np.minimum(-np.expm1(-s / kn), 1.0 - 1e-16)
    frac = np.arange(1, _MASS_NODES + 1) / _MASS_NODES
    mass = -kn * np.log1p(-total[..., None] * frac)
    mass[..., -1] = s
    shape = s[..., None] * (np.arange(1, _SHAPE_NODES) / _SHAPE_NODES)
    zero = np.zeros(s.shape + (1,))
    nodes = np.concatenate([zero, mass, shape], axis=-1)
    nodes.sort(axis=-1)
    return nodes


def _attenuated_cells(nodes: np.ndarray, g: np.ndarray, kn: float) -> np.ndarray:
    """int (1/kn) e^(-r/kn) g(r) dr with g piecewise linear on the nodes;
    each cell closed form, so constant g integrates exactly."""
    a = nodes[..., :-1]
    t = np.diff(nodes, axis=-1) / kn
    ga = g[..., :-1]
    gb = g[..., 1:]
    em = -np.expm1(-t)
    safe_t = np.where(t > 0.0, t, 1.0)
    slope_w = np.where(t < 1e-6, 0.5 * t - t * t / 3.0,
                       (em - t * np.exp(-t)) / safe_t)
    cells = np.exp(-a / kn) * (ga * em + (gb - ga) * slope_w)
    return cells.sum(axis=-1)


def _cumulative_sigma(nodes: np.ndarray, sig_vals: np.ndarray) -> np.ndarray:
    """Trapezoid cumulative of sigma_a along each ray, per node."""
    dr = np.diff(nodes, axis=-1)
    mid = 0.5 * (sig_vals[..., 1:] + sig_vals[..., :-1])
    out = np.zeros_like(nodes)
    np.cumsum(dr * mid, axis=-1, out=out[..., 1:])
    return out


def _mu_rule(kn: float, order: int = _MU_PANEL_ORDER):
    """Panelized Gauss-Legendre rule on [-1, 1] for the polar cosine. Panels
    split at the horizon (mu = 0) and at +-kn, where near-boundary chord
    lengths and attenuation vary on the mean-free-path scale."""
    split = min(max(kn, 1e-3), 0.4)
    edges = np.array([-1.0, -0.5, -split, 0.0, split, 0.5, 1.0])
    base_x, base_w = npleg.leggauss(order)
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        xs.append(mid + half * base_x)
        ws.append(half * base_w)
    # normalized measure on the sphere: d mu / 2
    return np.concatenate(xs), np.concatenate(ws) / 2.0


class _RadialModeOperator:
    """Matrix-free action of the kernel on one harmonic degree l: targets on
    the polar axis, azimuth integrated analytically, chords quadratured with
    the exponential cells. Geometry and attenuation precomputed once."""

    def __init__(self, l: int, kn: float, field: AbsorptionField, radii: np.ndarray,
                 radius: float):
        self.l = l
        self.kn = kn
        self.radii = radii
        mu, w_mu = _mu_rule(kn)
        r = radii[:, None]
        rmu = r * mu[None, :]
        s = rmu + np.sqrt(rmu**2 + radius**2 - r**2)
        nodes = _ray_nodes(s, kn)
        rho = np.sqrt(np.maximum(r[..., None] ** 2 - 2.0 * nodes * rmu[..., None]
                                 + nodes**2, 0.0))
        safe_rho = np.where(rho > 0.0, rho, 1.0)
        cos_t = np.clip((r[..., None] - nodes * mu[None, :, None]) / safe_rho, -1.0, 1.0)
        sig = field.eval_radial(rho)
        atten = np.exp(-kn * _cumulative_sigma(nodes, sig))
        self._nodes = nodes
        self._rho = rho
        self._factor = atten * _legendre_p(l, cos_t)
        self._w_mu = w_mu
        # boundary trace pieces: exit point radius is the ball radius
        cos_exit = np.clip((r - s * mu[None, :]) / radius, -1.0, 1.0)
        tau_exit = s / kn + kn * _cumulative_sigma(nodes, sig)[..., -1]
        self.boundary_vector = (np.exp(-tau_exit) * _legendre_p(l, cos_exit)) @ w_mu

    def apply(self, values: np.ndarray) -> np.ndarray:
        spline = CubicSpline(self.radii, values)
        g = spline(self._rho) * self._factor
        chord = _attenuated_cells(self._nodes, g, self.kn)
        return chord @ self._w_mu


def _anderson_iterate(apply_fn, b, tol: float, max_iter: int, window: int = 5):
    """Anderson-accelerated fixed point for x = b + A x. Returns the iterate,
    its relative residual, and the iteration count."""
    scale = max(1.0, float(np.max(np.abs(b))))
    x = b.copy()
    hist_x, hist_f = [], []
    res = np.inf
    for k in range(max_iter):
        gx = b + apply_fn(x)
        f = gx - x
        res = float(np.max(np.abs(f))) / scale
        if res <= tol:
            return gx, res, k + 1
        hist_x.append(x)
        hist_f.append(f)
        if len(hist_x) > window + 1:
            hist_x.pop(0)
            hist_f.pop(0)
        if len(hist_x) >= 2:
            df = np.stack([hist_f[i + 1] - hist_f[i] for i in range(len(hist_f) - 1)], axis=1)
            dx = np.stack([hist_x[i + 1] - hist_x[i] for i in range(len(hist_x) - 1)], axis=1)
            gamma, *_ = np.linalg.lstsq(df, f, rcond=None)
            x = (x + f) - (dx + df) @ gamma
        else:
            x = gx
    return x, res, max_iter


def _solve_radial_mode(op: _RadialModeOperator, b: np.ndarray, tol: float):
    """Anderson first; restarted Krylov fallback once iterations exceed the
    10/Kn budget without meeting the tolerance."""
    budget = int(math.ceil(10.0 / op.kn))
    x, res, _ = _anderson_iterate(op.apply, b, tol, budget)
    if res <= tol:
        return x, res
    n = b.size
    mat = LinearOperator((n, n), matvec=lambda y: y - op.apply(y))
    x, info = lgmres(mat, b, x0=x, rtol=tol * 1e-2, atol=0.0, maxiter=200)
    res = float(np.max(np.abs(b + op.apply(x) - x))) / max(1.0, float(np.max(np.abs(b))))
    if res > tol:
        raise ArithmeticError(
            f"transport solve stalled: relative residual {res:.3e} > {tol:.1e}")
    return x, res


@dataclass
class TransportSolution:
    """Solved mean intensity with its per-degree radial profiles."""

    kn: float
    boundary: BoundaryData
    sigma_a: AbsorptionField
    mesh: SpatialMesh
    mean_values: np.ndarray
    residual: float
    radii: np.ndarray
    unit_profiles: dict  # l -> radial values for a unit-coefficient datum

    def __post_init__(self):
        self._splines = {l: CubicSpline(self.radii, vals)
                         for l, vals in self.unit_profiles.items()}

    def evaluate_mean(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        rel = pts - self.mesh.ball.center
        r = np.linalg.norm(rel, axis=1)
        safe = np.where(r > 0.0, r, 1.0)
        dirs = np.where(r[:, None] > 0.0, rel / safe[:, None], [0.0, 0.0, 1.0])
        out = np.zeros(pts.shape[0])
        for (l, m), coeff in zip(self.boundary.modes, self.boundary.coefficients):
            out += coeff * self._splines[l](r) * real_sphere_harmonic(l, m, dirs)
        return out if np.asarray(points).ndim > 1 else float(out[0])

    def max_principle_margin(self) -> tuple[float, float]:
        """(min value, max value - max boundary) over cell centers; for
        nonnegative data both should be >= 0 and <= 0 respectively."""
        pts, _ = _fibonacci_sphere(512)
        fmax = float(np.max(self.boundary.evaluate(pts)))
        return float(self.mean_values.min()), float(self.mean_values.max()) - fmax


def _fibonacci_sphere(n: int):
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    phi = np.pi * (1.0 + math.sqrt(5.0)) * k
    s = np.sqrt(1.0 - z**2)
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1), np.full(n, 4 * np.pi / n)


def solve_mean_intensity(f: BoundaryData, kn: float, sigma_a=None,
                         mesh: SpatialMesh | None = None,
                         q: AngularQuadrature | None = None,
                         tol: float = 1e-8) -> TransportSolution:
    """Solve the mean-intensity fixed point for harmonic boundary data and a
    radial absorption field. One radial solve per distinct degree l; the
    full-ball field is assembled from the profiles."""
    if not 0.0 < kn <= 1.0:
        raise ValueError("kn must lie in (0, 1]")
    field = _as_field(sigma_a)
    if mesh is None:
        mesh = SpatialMesh.build(kn=kn, ball=field.ball)
    if not mesh.resolves_layer(kn):
        warnings.warn("mesh shells do not resolve the boundary layer: "
                      "cells near the boundary exceed kn/2", stacklevel=2)
    del q  # direction resolution is fixed by the panelized polar rule
    radii = mesh.shell_edges
    radius = mesh.ball.radius
    profiles = {}
    residual = 0.0
    for l in sorted({l for l, _ in f.modes}):
        op = _RadialModeOperator(l, kn, field, radii, radius)
        x, res = _solve_radial_mode(op, op.boundary_vector, tol)
        # normalize: the datum is Y_l0 evaluated on the axis
        profiles[l] = x
        residual = max(residual, res)
    sol = TransportSolution(kn=kn, boundary=f, sigma_a=field, mesh=mesh,
                            mean_values=np.zeros(mesh.n_cells), residual=residual,
                            radii=radii, unit_profiles=profiles)
    sol.mean_values = sol.evaluate_mean(mesh.centers)
    return sol


def boundary_source(f: BoundaryData, x, kn: float, sigma_a=None,
                    q: AngularQuadrature | None = None,
                    ball: Ball | None = None) -> float:
    """b_f(x): angular average of the attenuated boundary trace."""
    if kn <= 0.0:
        raise ValueError("kn must be positive")
    field = _as_field(sigma_a)
    b = ball if ball is not None else field.ball
    quad = q if q is not None else build_quadrature(3, 24, 48)
    x = np.asarray(x, dtype=float)
    y, s = b.ray_exit(np.broadcast_to(x, quad.nodes.shape).copy(), quad.nodes)
    nodes = _ray_nodes(s, kn)
    pts = x[None, None, :] - nodes[..., None] * quad.nodes[:, None, :]
    sig = field(pts)
    tau = s / kn + kn * _cumulative_sigma(nodes, sig)[..., -1]
    rel = y - b.center
    traces = f.evaluate(rel / b.radius)
    return float(quad.weights @ (traces * np.exp(-tau)))


def reconstruct_u(sol: TransportSolution, x, v) -> float:
    """Pointwise u(x, v) by backward characteristics from the solved mean
    intensity: attenuated boundary trace plus the scattering chord integral."""
    b = sol.mesh.ball
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    y, s = b.ray_exit(x, v)
    kn = sol.kn
    nodes = _ray_nodes(np.asarray([s]), kn)[0]
    pts = x[None, :] - nodes[:, None] * v[None, :]
    sig = sol.sigma_a(pts)
    tau_a = _cumulative_sigma(nodes[None, :], sig[None, :])[0]
    g = np.exp(-kn * tau_a) * sol.evaluate_mean(pts)
    chord = float(_attenuated_cells(nodes[None, :], g[None, :], kn)[0])
    rel = y - b.center
    trace = float(sol.boundary.evaluate(rel[None, :] / b.radius)[0])
    return trace * math.exp(-(s / kn + kn * tau_a[-1])) + chord


def apply_nonlocal_L(phi, x, kn: float, sigma_a=None,
                     q: AngularQuadrature | None = None,
                     ball: Ball | None = None):
    """L[phi](x) = phi(x) - int E(x, eta) phi(eta) d eta by ray quadrature.

    phi maps an (n, 3) array of points to n values. x may be a single point
    or a batch; batches are processed in chunks to bound memory.
    """
    if kn <= 0.0:
        raise ValueError("kn must be positive")
    field = _as_field(sigma_a)
    b = ball if ball is not None else field.ball
    quad = q if q is not None else build_quadrature(3, 24, 48)
    xs = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.empty(xs.shape[0])
    chunk = max(1, int(2e6 // (quad.n_nodes * (_MASS_NODES + _SHAPE_NODES))))
    for lo in range(0, xs.shape[0], chunk):
        xc = xs[lo:lo + chunk]
        _, s = b.ray_exit(xc[:, None, :], quad.nodes[None, :, :])
        nodes = _ray_nodes(s, kn)
        pts = xc[:, None, None, :] - nodes[..., None] * quad.nodes[None, :, None, :]
        flat = pts.reshape(-1, 3)
        sig = field(flat).reshape(pts.shape[:-1])
        vals = np.asarray(phi(flat), dtype=float).reshape(pts.shape[:-1])
        g = np.exp(-kn * _cumulative_sigma(nodes, sig)) * vals
        integral = _attenuated_cells(nodes, g, kn) @ quad.weights
        center = np.asarray(phi(xc), dtype=float)
        out[lo:lo + chunk] = center - integral
    return out if np.asarray(x).ndim > 1 else float(out[0])


def phi1_constant(ball: Ball | None = None) -> float:
    """C_D = 2 max|x|^2 + 2 diam^2 + 4 diam + 4 for the comparison function
    C_D - |x|^2 (equals 22 on the unit ball)."""
    b = ball if ball is not None else Ball()
    far = float(np.linalg.norm(b.center)) + b.radius
    return 2.0 * far**2 + 2.0 * b.diam**2 + 4.0 * b.diam + 4.0


@dataclass(frozen=True)
class Phi2Constants:
    """Calibrated constants of the boundary-layer comparison function."""

    c1: float
    c2: float
    gamma: float
    mu: float


# Grid search on the unit ball at kn=0.1 over gamma in {0.3..0.9}, mu in
# {0.1, 0.2, 0.4}, c1, c2 in {1, 4, 16, 64}: every combination satisfied the
# bound (the quadratic part alone carries it on this domain), and the margin
# grows monotonically with c1, c2.  We freeze the smallest passing scale so
# the verification stays falsifiable; (gamma, mu) below maximized the margin
# at every fixed scale.  Worst-case excess with these values: +0.042 at
# kn=0.1, +0.019 at kn=0.05 over samples with boundary distance in
# [kn/2, 5 kn].
CALIBRATED_PHI2 = Phi2Constants(c1=1.0, c2=1.0, gamma=0.9, mu=0.4)


def phi2_function(points: np.ndarray, kn: float, a_const: float,
                  constants: Phi2Constants, ball: Ball | None = None) -> np.ndarray:
    """The layered comparison function: c1 (C_D - |x|^2) plus a capped ramp
    in the boundary distance at scale a_const * kn."""
    b = ball if ball is not None else Ball()
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = b.distance_to_boundary(pts)
    curv = b.radius  # minimal curvature radius of the sphere
    ramp = 1.0 - constants.gamma / (1.0 + (d / (a_const * kn)) ** 2)
    cap = 1.0 - constants.gamma / (1.0 + (constants.mu * curv / (a_const * kn)) ** 2)
    quad_part = phi1_constant(b) - np.sum((pts - b.center) ** 2, axis=1)
    return constants.c1 * quad_part + constants.c2 * np.minimum(ramp, cap)


@dataclass
class SupersolutionReport:
    kind: str
    kn: float
    n_samples: int
    min_margin: float
    worst_point: np.ndarray
    passed: bool


def verify_supersolution(kind: str, kn: float, samples, sigma_a=None,
                         a_const: float = 1.0,
                         constants: Phi2Constants | None = None,
                         q: AngularQuadrature | None = None,
                         ball: Ball | None = None) -> SupersolutionReport:
    """Check L[phi] >= bound at the sample points.

    kind 'phi1': phi = C_D - |x|^2 with bound 2 kn^2. kind 'phi2': the
    calibrated layered function with bound exp(-d(x)/(a_const kn)).
    """
    field = _as_field(sigma_a)
    b = ball if ball is not None else field.ball
    pts = np.atleast_2d(np.asarray(samples, dtype=float))
    if kind == "phi1":
        def phi(p):
            p = np.atleast_2d(p)
            return phi1_constant(b) - np.sum((p - b.center) ** 2, axis=1)
        bound = np.full(pts.shape[0], 2.0 * kn**2)
    elif kind == "phi2":
        consts = constants if constants is not None else CALIBRATED_PHI2
        def phi(p):
            return phi2_function(p, kn, a_const, consts, b)
        bound = np.exp(-b.distance_to_boundary(pts) / (a_const * kn))
    else:
        raise ValueError("kind must be 'phi1' or 'phi2'")
    values = apply_nonlocal_L(phi, pts, kn, field, q=q, ball=b)
    margins = np.asarray(values) - bound
    worst = int(np.argmin(margins))
    return SupersolutionReport(kind=kind, kn=kn, n_samples=pts.shape[0],
                               min_margin=float(margins[worst]),
                               worst_point=pts[worst], passed=bool(margins[worst] >= 0.0))
