"""The lattice Green's function and its far field.

Builds tables of two sizes, prints a few exact values next to their closed
forms, and measures the additive constant in
``Phi0(x) = -(1/2 pi) ln|x| - C + O(1/|x|)``. The measured constant is compared
with the classical value and with the alternative quoted for it.

Run with ``python3 demos/greens_function.py``; tables are cached, so a second
run is instant.
"""
import math

from kwlattice.greens import (CLASSICAL_CONSTANT, HALF_GAMMA0, asymptotic_fit, eval_phi0, fourier_oracle,
                              load_or_build)

table = load_or_build(128)

print("Exact values near the origin")
for point, closed in [((1, 0), -0.25), ((1, 1), -1 / math.pi), ((2, 0), -1 + 2 / math.pi),
                      ((2, 2), -4 / (3 * math.pi))]:
    value = float(eval_phi0(table, *point))
    print(f"  Phi0{point} = {value:+.15f}   closed form {closed:+.15f}   "
          f"2-D quadrature {fourier_oracle(*point):+.15f}")

print("\nAdditive constant fitted on the annulus R/2 <= |x| <= R")
for radius in (64, 128, 256):
    const, res_r = asymptotic_fit(load_or_build(radius))
    print(f"  R_g = {radius:4d}: C = {const:.10f}, sup |residual| * |x| = {res_r:.2e}")
print(f"  classical value (2 gamma + 3 ln 2) / 4 pi = {CLASSICAL_CONSTANT:.10f}")
print(f"  alternative gamma0 / 2                   = {HALF_GAMMA0:.10f}")

print("\nBeyond the table the asymptotic law takes over:")
for r in (200, 10_000, 10 ** 6):
    print(f"  Phi0({r}, 0) = {float(eval_phi0(table, r, 0)):+.8f}")
