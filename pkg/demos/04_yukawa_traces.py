"""
Yukawa DtN spectrum and Green representation
============================================

On a disk of radius ``R`` the Yukawa DtN map has the circular harmonics as
eigenfunctions, with eigenvalues ``I_n'(R/gamma) / (gamma I_n(R/gamma))``.
The discrete Schur complement reproduces them, and the traces of a Green
function rebuild the function inside the disk through layer potentials.
"""
import numpy as np
import scipy.linalg as sla

from mtf_osm.fem import local_mesh, segment_mass
from mtf_osm.mesh import boundary_segments, extract_skeleton, generate_partitioned_disk
from mtf_osm.potentials import verify_representation
from mtf_osm.specfun import bessel_i_ratio_derivative
from mtf_osm.traces import build_dtn

gamma = 0.7
for h in (1 / 20, 1 / 40, 1 / 80):
    m = generate_partitioned_disk(1, 1.0, 1.3, h)
    sk = extract_skeleton(m)
    t = build_dtn(local_mesh(m, sk, 1), gamma)  # subdomain 1 is the inner disk
    mb = segment_mass(m.vertices[sk.boundary_vertices[1]], boundary_segments(sk, 1)).toarray()
    eigs = sla.eigh(t, mb, eigvals_only=True)
    exact = np.array([bessel_i_ratio_derivative(n, 1 / gamma) / gamma for n in (0, 1, 1, 2, 2)])
    print(f"h = 1/{round(1 / h)}: max rel. eigenvalue error (modes 0-2) "
          f"{np.max(np.abs(eigs[:5] - exact) / exact):.2e}")

inside = np.array([[0.0, 0.0], [0.3, 0.2], [-0.5, 0.1]])
outside = np.array([[1.6, 0.4]])
for h in (1 / 10, 1 / 20, 1 / 40):
    m = generate_partitioned_disk(1, 1.0, 1.2, h)
    res = verify_representation(local_mesh(m, extract_skeleton(m), 1), 0.5, [2.0, 0.5], inside, outside)
    print(f"h = 1/{round(1 / h)}: interior error {res['interior']:.2e}, exterior leakage {res['exterior']:.2e}")
