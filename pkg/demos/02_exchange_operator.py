"""
The exchange operator as a reflection
=====================================

The exchange operator fixes single-trace Neumann data and flips the sign of
``T`` applied to continuous Dirichlet data.  It is an isometric involution in
the weighted trace norm.  Corrupting a single entry of the restriction map
still gives an isometric involution, but it reflects about the wrong
subspace, so the single-trace checks below fail.
"""
import numpy as np

from mtf_osm.fem import CoefficientField
from mtf_osm.mesh import generate_partitioned_disk
from mtf_osm.potentials import skeleton_green_traces
from mtf_osm.skeleton_solver import SkeletonSystem
from mtf_osm.traces import corrupted_single_trace_map, polarity_residual

mesh = generate_partitioned_disk(3, 1.0, 2.0, 0.15)
coeffs = CoefficientField.piecewise_constant(mu=[1.0] * 4, kappa=[3.0] * 4, kappa0=3.0)
rng = np.random.default_rng(0)


def report(system, label):
    ex = system.exchange
    p = rng.standard_normal(system.size) + 1j * rng.standard_normal(system.size)
    print(f"--- {label}")
    print(f"  |Pi Pi p - p| / |p|       = {np.linalg.norm(ex.apply(ex.apply(p)) - p) / np.linalg.norm(p):.2e}")
    print(f"  | |Pi p| - |p| | / |p|    = {abs(system.norm(ex.apply(p)) - system.norm(p)) / system.norm(p):.2e}")

    # Traces of a Green function centred outside the mesh: built from geometry
    # alone, so they do not depend on the restriction map under test.
    d, n = skeleton_green_traces(mesh, system.skeleton, system.gamma, [4.0, 0.3])
    print(f"  polarity residual         = {polarity_residual(d, n, system.stm) / np.abs(n).max():.2e}")
    print(f"  |Pi n - n| / |n|          = {system.norm(ex.apply(n) - n) / system.norm(n):.2e}")
    td = system.dtn.apply(d)
    print(f"  |Pi Td + Td| / |Td|       = {system.norm(ex.apply(td) + td) / system.norm(td):.2e}")


report(SkeletonSystem(mesh, coeffs), "correct restriction map")
bad = corrupted_single_trace_map(SkeletonSystem(mesh, coeffs).skeleton, seed=3)
report(SkeletonSystem(mesh, coeffs, stm=bad), "one corrupted entry")
