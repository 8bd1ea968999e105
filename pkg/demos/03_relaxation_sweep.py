"""
Relaxation parameter sweep
==========================

The damped iteration ``p <- (1 - beta) p + beta (Pi S p + f)`` contracts at
least as fast as ``sqrt(1 - alpha^2 beta (1 - beta))``.  The bound is
smallest at ``beta = 1/2``; the measured iteration counts follow it.
"""
import numpy as np

from mtf_osm.fem import CoefficientField
from mtf_osm.mesh import generate_partitioned_disk
from mtf_osm.skeleton_solver import SkeletonSystem, estimate_coercivity, gmres, richardson

mesh = generate_partitioned_disk(3, 1.0, 2.0, 0.1)
coeffs = CoefficientField.piecewise_constant(
    mu=[1.0, 2.0, 1.0, 2.0], kappa=[3.0, 4.0, 5.0, 2.5], kappa0=3.0,
    source=lambda xy: np.exp(-np.sum((xy - [0.3, 0.2]) ** 2, axis=1) / 0.04),
)
system = SkeletonSystem(mesh, coeffs)
alpha = estimate_coercivity(system, "dense")
alpha_lz = estimate_coercivity(system, "lanczos")
print(f"alpha (dense) = {alpha:.5f}, alpha (Lanczos) = {alpha_lz:.5f}")

p_ref, _ = gmres(system, tol=1e-13)
print(f"{'beta':>5} {'iters':>6} {'observed':>9} {'bound':>9}")
for beta in np.arange(0.1, 0.95, 0.1):
    _, rep = richardson(system, beta, tol=1e-8, maxit=20000, reference=p_ref, alpha=alpha)
    bound = np.sqrt(1 - alpha**2 * beta * (1 - beta))
    print(f"{beta:5.1f} {rep.iterations:6d} {rep.max_contraction:9.5f} {bound:9.5f}")
