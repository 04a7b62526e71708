"""Albedo operator tests.

Oracles, in order of trust: exact structure (zero data, linearity,
rotational invariance of a radial medium), the elliptic
Dirichlet-to-Neumann solver as the small-kn limit, and the divergence
identity tying the boundary pairing to volume integrals of the same
solution. Matrix-level checks use small bases so each column is an
independent transport solve.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from knt.albedo import (
    AlbedoMatrix,
    DTN_NORMALIZATION,
    adjoint_check,
    albedo_apriori_sweep,
    assemble_albedo,
    boundary_flux_moment,
    default_modes,
    operator_norm,
    weak_form_check,
)
from knt.elliptic import BoundaryData, dtn_mode
from knt.geometry import AbsorptionField
from knt.transport import solve_mean_intensity

BUMP = AbsorptionField.bump(amplitude=1.5, r_support=0.5)


@pytest.fixture(scope="module")
def zero_matrix():
    return assemble_albedo(None, kn=0.1, n_b=9)


@pytest.fixture(scope="module")
def bump_matrix():
    return assemble_albedo(BUMP, kn=0.1, n_b=9)


def test_default_modes_order():
    modes = default_modes(9)
    assert modes[:4] == ((0, 0), (1, -1), (1, 0), (1, 1))
    assert len(default_modes(16)) == 16
    with pytest.raises(ValueError):
        default_modes(17)
    with pytest.raises(ValueError):
        default_modes(0)


def test_constant_column_vanishes_without_absorption(zero_matrix):
    # no absorption: constant data produce no net boundary flux; the whole
    # first column sits at the quadrature floor (measured 9.4e-8)
    assert np.abs(zero_matrix.entries[:, 0]).max() <= 1e-5


def test_entries_real_and_finite(bump_matrix):
    assert bump_matrix.entries.dtype == np.float64
    assert np.all(np.isfinite(bump_matrix.entries))


def test_radial_medium_gives_diagonal_matrix(zero_matrix, bump_matrix):
    # a radial medium commutes with rotations: off-diagonal entries are
    # exactly zero up to roundoff, and the diagonal is constant within each
    # degree block (measured spreads ~1e-15)
    for mat in (zero_matrix, bump_matrix):
        off = mat.entries - np.diag(np.diag(mat.entries))
        assert np.abs(off).max() <= 1e-12
        d = np.diag(mat.entries)
        assert np.ptp(d[1:4]) <= 1e-12
        assert np.ptp(d[4:9]) <= 1e-12


def test_matrix_symmetry(bump_matrix):
    gap = np.linalg.norm(bump_matrix.entries - bump_matrix.entries.T)
    assert gap / np.linalg.norm(bump_matrix.entries) <= 5e-3


def test_flux_moment_linearity():
    # the whole pipeline (per-degree solve, reconstruction, chord rule) is
    # linear in the boundary datum
    kn = 0.2
    f_a = BoundaryData.single(1, 0, 1.0)
    f_b = BoundaryData.single(2, -1, 1.0)
    f_ab = BoundaryData(modes=((1, 0), (2, -1)), coefficients=np.array([0.7, 0.3]))
    rng = np.random.default_rng(7)
    ys = rng.normal(size=(5, 3))
    ys /= np.linalg.norm(ys, axis=1, keepdims=True)
    m_a = boundary_flux_moment(solve_mean_intensity(f_a, kn, sigma_a=BUMP), ys)
    m_b = boundary_flux_moment(solve_mean_intensity(f_b, kn, sigma_a=BUMP), ys)
    m_ab = boundary_flux_moment(solve_mean_intensity(f_ab, kn, sigma_a=BUMP), ys)
    assert_allclose(m_ab, 0.7 * m_a + 0.3 * m_b, atol=1e-12)


def test_apply_to_multiplies_coefficients(bump_matrix):
    f = BoundaryData(modes=((0, 0), (1, 1)), coefficients=np.array([2.0, -1.0]))
    out = bump_matrix.apply_to(f)
    expected = bump_matrix.entries @ np.array([2.0, 0.0, 0.0, -1.0, 0, 0, 0, 0, 0])
    assert out.modes == bump_matrix.modes
    assert_allclose(out.coefficients, expected, rtol=1e-15)
    with pytest.raises(ValueError, match="outside"):
        bump_matrix.apply_to(BoundaryData.single(5, 0, 1.0))


def test_difference_requires_shared_basis(zero_matrix, bump_matrix):
    diff = bump_matrix - zero_matrix
    assert_allclose(diff.entries, bump_matrix.entries - zero_matrix.entries,
                    rtol=1e-15)
    other = assemble_albedo(None, kn=0.2, n_b=9)
    with pytest.raises(ValueError, match="kn"):
        bump_matrix - other
    small = assemble_albedo(None, kn=0.1, n_b=4)
    with pytest.raises(ValueError, match="basis"):
        bump_matrix - small


def test_basis_truncation_stability():
    # columns are independent solves on a fixed boundary rule, so a larger
    # basis reproduces the smaller one's block
    big = assemble_albedo(BUMP, kn=0.2, n_b=16)
    small = assemble_albedo(BUMP, kn=0.2, n_b=9)
    gap = np.abs(big.entries[:9, :9] - small.entries).max()
    assert gap <= 1e-4


def test_dtn_limit_rate():
    # small-kn limit: the scaled degree-1 entry of the albedo difference
    # converges to the Dirichlet-to-Neumann difference of the diffusion
    # operator; measured errors 2.52e-3, 9.92e-4, 4.21e-4 and rate 1.29
    target = dtn_mode(1, BUMP) - dtn_mode(1, None)
    kns = [0.2, 0.1, 0.05]
    errs = []
    for kn in kns:
        diff = assemble_albedo(BUMP, kn, n_b=4) - assemble_albedo(None, kn, n_b=4)
        scaled = diff.entries[2, 2] / DTN_NORMALIZATION
        errs.append(abs(scaled - target))
    assert errs[0] > errs[1] > errs[2]
    rate = np.polyfit(np.log(kns), np.log(errs), 1)[0]
    assert rate >= 0.8


def test_operator_norm_closed_forms(zero_matrix):
    zeros = AlbedoMatrix(kn=0.1, sigma_a_label="zero", modes=zero_matrix.modes,
                         lambdas=zero_matrix.lambdas,
                         entries=np.zeros((9, 9)))
    assert operator_norm(zeros, 1.3) == 0.0
    ident = AlbedoMatrix(kn=0.1, sigma_a_label="id", modes=zero_matrix.modes,
                         lambdas=zero_matrix.lambdas, entries=np.eye(9))
    assert_allclose(operator_norm(ident, 0.0), 1.0, rtol=1e-15)
    d = np.array([0.5, -2.0, 1.0, 0.25, 3.0, -1.0, 0.1, 0.0, 2.0])
    diag = AlbedoMatrix(kn=0.1, sigma_a_label="diag", modes=zero_matrix.modes,
                        lambdas=zero_matrix.lambdas, entries=np.diag(d))
    s = 0.5
    expected = np.max(np.abs(d) * (1.0 + zero_matrix.lambdas) ** (-s))
    assert_allclose(operator_norm(diag, s), expected, rtol=1e-13)
    with pytest.raises(ValueError):
        operator_norm(diag, -1.0)


def test_weak_form_trivial_datum():
    # constant datum, no absorption: both routes vanish identically
    one = BoundaryData.single(0, 0, 1.0)
    report = weak_form_check(None, 0.2, one, one)
    assert abs(report.lhs) <= 1e-5
    assert report.rhs == 0.0
    assert report.residual <= 1e-4


def test_weak_form_identity_and_refinement():
    # boundary pairing vs volume integrals of the same solution; the
    # residual at resolution 1 is 1.52e-4 and halves at resolution 2
    f = BoundaryData.single(1, 0, 1.0)
    coarse = weak_form_check(BUMP, 0.2, f, f, resolution=1)
    assert coarse.residual <= 5e-3
    fine = weak_form_check(BUMP, 0.2, f, f, resolution=2)
    assert fine.residual <= 0.8 * coarse.residual


def test_adjoint_orthogonal_data():
    # datum and test function in orthogonal harmonics: both pairings vanish
    one = BoundaryData.single(0, 0, 1.0)
    f1 = BoundaryData.single(1, 0, 1.0)
    report = adjoint_check(BUMP, 0.1, one, f1)
    assert abs(report.lhs) <= 1e-8
    assert abs(report.rhs) <= 1e-8


def test_adjoint_pairing_agreement():
    f = BoundaryData.single(1, 0, 1.0)
    report = adjoint_check(BUMP, 0.1, f, f)
    assert report.residual <= 5e-3
    assert report.lhs < 0.0  # absorbing medium drains the mode


def test_apriori_sweep_constant_bounded():
    # absorption supported inside the compact set; the implied constant
    # C(kn) = lhs / (|rho|_{H^4(K)} + kn |f|_{H^5.5}) stays within a factor
    # 2 over kn in {0.2, 0.1, 0.05} (measured max/min 1.63)
    wide = AbsorptionField.bump(amplitude=1.0, r_support=0.9)
    f = BoundaryData.single(1, 0, 1.0)
    rows = albedo_apriori_sweep(wide, f, [0.2, 0.1, 0.05], r_compact=0.92)
    cs = [row.c_value for row in rows]
    assert all(c > 0.0 for c in cs)
    assert max(cs) / min(cs) <= 2.0
    # the norms in the denominator match their closed forms
    assert_allclose(rows[0].f_norm, 3.0 ** 2.75, rtol=1e-12)
    assert_allclose(rows[0].rho_norm, 14.907723, rtol=1e-5)


def test_apriori_sweep_zero_absorption():
    f = BoundaryData.single(1, 0, 1.0)
    rows = albedo_apriori_sweep(None, f, [0.2, 0.1])
    assert all(row.lhs <= 1e-12 for row in rows)


def test_apriori_sweep_rejects_uncovered_support():
    wide = AbsorptionField.bump(amplitude=1.0, r_support=0.9)
    f = BoundaryData.single(1, 0, 1.0)
    with pytest.raises(ValueError, match="support"):
        albedo_apriori_sweep(wide, f, [0.1], r_compact=0.5)


def test_assemble_validates_inputs():
    with pytest.raises(ValueError):
        assemble_albedo(None, kn=0.0)
    with pytest.raises(ValueError):
        assemble_albedo(None, kn=1.5)
    with pytest.raises(TypeError):
        assemble_albedo("bump", kn=0.1)
