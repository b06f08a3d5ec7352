"""The smallness threshold h0(sigma) and the admissible kappa.

The existence argument for the source case needs kappa * h0(sigma) <= 1, where
h0 depends on three constants c0, c1 and C2 that the theory only asserts to
exist. Here they are measured from a Green's table, h0 is scanned over
sigma in (2, 20], and the best exponent a0 with its kappa* = 1 / min h0 is
reported. h0 is astronomically large, so everything is shown as a logarithm.
"""
from kwlattice.analysis import admissible_region_scan, measure_constants
from kwlattice.greens import load_or_build

constants = measure_constants(load_or_build(128))
print(f"measured constants: {constants.to_json()}")

scan = admissible_region_scan(constants)
print(f"a0 = {scan.a0:.5f}, ln kappa* = {scan.log_kappa_star:.4f}")
print(f"ln h0 at sigma = {scan.sigma[0]:.3f}: {scan.log_h0[0]:.4g}; at sigma = 20: {scan.log_h0[-1]:.4g}")
for eps, lk in scan.log_kappa_bar.items():
    print(f"  eps = {eps}: ln kappa_bar = {lk:.4g} ({scan.ordering_flags[eps]})")

for sigma in (2.5, 3.0, scan.a0, 6.0, 10.0):
    i = abs(scan.sigma - sigma).argmin()
    print(f"  sigma = {scan.sigma[i]:7.4f}: ln h0 = {scan.log_h0[i]:10.4f}")
