"""Frozen plateau constants of the canonical half-line layer profiles.

W2 = 2 exactly: the constant 2 solves the second layer equation in closed
form, since applying the half-line operator to a constant c leaves
c * int_y^inf E = c * E2(y)/2, which for c = 2 reproduces the source S2.

W1 comes from solve_standard_layers on graded grids (N = 2000 and N = 4000,
Y_max = 40) combined by second-order Richardson extrapolation; an N = 8000,
Y_max = 60 check run agrees to 2e-7 with the expected quadratic trend, and
the extrapolated ratio matches the classical extrapolation-length constant
of the conservative half-space problem (0.7104460896) to nine digits.
Estimated uncertainty: +-5e-9 on W1 and on the ratio.

Regenerate with `knt layer-constants` and compare before editing by hand.
"""

W1 = 1.4208921785
W2 = 2.0
W1_OVER_W2 = 0.7104460892
