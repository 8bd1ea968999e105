import numpy as np
import pytest

from mtf_osm.fem import CoefficientField, l2_error, local_mesh
from mtf_osm.local_solver import (
    CauchyPair,
    LocalRobinSolver,
    ScatteringOperator,
    energy_flux,
    offset_traces,
    robin_minus,
    robin_plus,
    scattering_apply,
    solve_robin,
)
from mtf_osm.mesh import extract_skeleton, generate_partitioned_disk
from mtf_osm.traces import build_dtn, hm12_inner

from conftest import disk_coefficients, gaussian, random_complex

OMEGA = 3.0


@pytest.fixture(scope="module")
def solvers(disk_system):
    return disk_system.solvers


def test_zero_data_gives_zero(solvers):
    for s in solvers:
        np.testing.assert_array_equal(s.solve(), 0)
        np.testing.assert_array_equal(s.scatter(np.zeros(s.n_boundary)), 0)


def test_robin_datum_reproduced(solvers, rng):
    for s in solvers:
        h = random_complex(rng, s.n_boundary)
        load = random_complex(rng, s.mesh.n_dofs)
        u = s.solve(h=h, load=load)
        d, n = s.traces(u, load)
        assert np.abs(robin_minus(d, n, s.t, s.omega) - h).max() <= 1e-11 * np.abs(h).max()


def test_manufactured_recovery(solvers, rng):
    for s in solvers:
        u_star = random_complex(rng, s.mesh.n_dofs)
        # g := residual of u* with zero Neumann datum, h := tau_-(u*)
        g = s.system.matrix @ u_star
        g[s.mesh.boundary_dofs] = 0.0
        d, n = s.traces(u_star, g)
        h = robin_minus(d, n, s.t, s.omega)
        u = solve_robin(s, g, h)
        assert np.abs(u - u_star).max() <= 1e-10 * np.abs(u_star).max()


def test_manufactured_plane_wave_order():
    kappa, angle = 3.0, 0.3
    dvec = np.array([np.cos(angle), np.sin(angle)])

    def exact(xy):
        return np.exp(1j * kappa * (np.asarray(xy) @ dvec))

    errs = []
    for h in (0.2, 0.1, 0.05):
        m = generate_partitioned_disk(3, 1.0, 2.0, h)
        sk = extract_skeleton(m)
        lm = local_mesh(m, sk, 1)
        t = build_dtn(lm, 1 / kappa)
        coef = CoefficientField.piecewise_constant([1] * 4, [kappa] * 4, kappa)
        s = LocalRobinSolver(lm, coef, t, OMEGA)
        # exact Robin datum: dual Neumann trace via edge integrals, minus i w T u_B
        from mtf_osm.fem import _edge_load
        from mtf_osm.mesh import boundary_segments

        segs = boundary_segments(sk, 1)
        pts = lm.vertices[lm.boundary_dofs]
        neu = _edge_load(pts, segs, lambda xy, nrm: 1j * kappa * (nrm @ dvec) * exact(xy), len(pts))
        h_dat = robin_minus(exact(pts), neu, t, OMEGA)
        u = s.solve(h=h_dat)
        errs.append(l2_error(lm, u, exact))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.8), orders


def test_robin_trace_identities(solvers, rng):
    s = solvers[2]
    d, n = random_complex(rng, s.n_boundary), random_complex(rng, s.n_boundary)
    np.testing.assert_allclose(robin_minus(np.zeros_like(d), n, s.t, OMEGA), n)
    np.testing.assert_allclose(robin_plus(np.zeros_like(d), n, s.t, OMEGA), n)
    np.testing.assert_allclose(robin_plus(d, 0 * n, s.t, OMEGA), -robin_minus(d, 0 * n, s.t, OMEGA))
    for alpha in (OMEGA, -OMEGA):
        # ||v_n + i a T v_d||^2 = ||v_n||^2 + a^2 ||v_d||^2 + i a [[v, conj v]] ... expressed via flux
        tp = robin_plus(d, n, s.t, alpha)
        lhs = hm12_inner(tp, tp, s.t).real
        rhs = hm12_inner(n, n, s.t).real + alpha**2 * np.vdot(d, s.t @ d).real + alpha * energy_flux(d, n)
        assert lhs == pytest.approx(rhs, rel=1e-10)
    tp, tm = robin_plus(d, n, s.t, OMEGA), robin_minus(d, n, s.t, OMEGA)
    diff = hm12_inner(tp, tp, s.t).real - hm12_inner(tm, tm, s.t).real
    assert diff == pytest.approx(2 * OMEGA * energy_flux(d, n), rel=1e-10)


def test_energy_flux_non_positive(solvers, rng):
    for _ in range(10):
        for s in solvers:
            u = s.solve(h=random_complex(rng, s.n_boundary))
            d, n = s.traces(u)
            assert energy_flux(d, n) <= 1e-9 * np.vdot(n, n).real


def test_energy_flux_real_pair_is_zero(rng):
    d, n = rng.standard_normal(5), rng.standard_normal(5)
    assert energy_flux(d, n) == 0.0


def test_scattering_contractive(solvers, rng):
    for s in solvers:
        for _ in range(25):
            p = random_complex(rng, s.n_boundary)
            sp_ = scattering_apply(s, p)
            assert hm12_inner(sp_, sp_, s.t).real <= hm12_inner(p, p, s.t).real * (1 + 1e-9)


def test_scattering_isometric_on_lossless_interior(solvers, rng):
    for s in solvers[1:]:
        p = random_complex(rng, s.n_boundary)
        sp_ = s.scatter(p)
        assert np.sqrt(hm12_inner(sp_, sp_, s.t).real / hm12_inner(p, p, s.t).real) == pytest.approx(1, abs=1e-9)
        d, n = s.traces(s.solve(h=p))
        assert abs(energy_flux(d, n)) <= 1e-9 * np.vdot(n, n).real


def test_absorbing_medium_is_strictly_contractive(disk_mesh, disk_skeleton):
    lm = local_mesh(disk_mesh, disk_skeleton, 2)
    coef = CoefficientField.piecewise_constant([1] * 4, [3, 3, 4 + 0.5j, 3], 3.0)
    t = build_dtn(lm, 1 / 3)
    s = LocalRobinSolver(lm, coef, t, OMEGA)
    p = np.ones(s.n_boundary, dtype=complex)
    sp_ = s.scatter(p)
    assert hm12_inner(sp_, sp_, t).real < 0.999 * hm12_inner(p, p, t).real


def test_scattering_block_diagonal(disk_system, rng):
    sk = disk_system.skeleton
    sop = disk_system.scattering
    p = random_complex(rng, sk.n_trace_dofs)
    base = sop.apply(p)
    q = p.copy()
    off = sk.offsets
    q[off[2]:off[3]] += random_complex(rng, off[3] - off[2])
    changed = sop.apply(q) - base
    for j in range(4):
        blk = changed[off[j]:off[j + 1]]
        if j == 2:
            assert np.abs(blk).max() > 0
        else:
            np.testing.assert_array_equal(blk, 0)


def test_scattering_dense_and_adjoint(disk_system, rng):
    sop = disk_system.scattering
    dense = sop.dense()
    p = random_complex(rng, dense.shape[0])
    np.testing.assert_allclose(dense @ p, sop.apply(p), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(dense.conj().T @ p, sop.adjoint(p), rtol=1e-10, atol=1e-10)


def test_offset_traces(disk_mesh, disk_skeleton):
    sys_solvers = []
    lms = [local_mesh(disk_mesh, disk_skeleton, j) for j in range(4)]
    # source supported inside sector 1 only (centre at angle pi/3)
    c = 0.5 * np.array([np.cos(np.pi / 3), np.sin(np.pi / 3)])
    src = gaussian(c, 0.05)
    coef = CoefficientField.piecewise_constant([1, 2, 1, 2], [3, 4, 5, 2.5], 3.0, source=lambda xy: src(xy) * (np.linalg.norm(np.asarray(xy) - c, axis=1) < 0.25))
    for lm in lms:
        sys_solvers.append(LocalRobinSolver(lm, coef, build_dtn(lm, 1 / 3), OMEGA))
    traces, fields = offset_traces(sys_solvers)
    blocks = disk_skeleton.split(traces)
    owner = [j for j in range(4) if np.abs(fields[j]).max() > 0]
    assert len(owner) == 1
    for j, (s, f) in enumerate(zip(sys_solvers, fields)):
        d, n = s.traces(f, s.system.load)
        assert np.abs(robin_minus(d, n, s.t, OMEGA)).max() <= 1e-12 * max(np.abs(n).max(), 1)
        np.testing.assert_allclose(robin_plus(d, n, s.t, OMEGA), blocks[j], atol=1e-12)


def test_offset_zero_source(disk_mesh, disk_skeleton):
    lms = [local_mesh(disk_mesh, disk_skeleton, j) for j in range(4)]
    coef = disk_coefficients(source=False)
    solvers = [LocalRobinSolver(lm, coef, build_dtn(lm, 1 / 3), OMEGA) for lm in lms]
    traces, _ = offset_traces(solvers)
    np.testing.assert_array_equal(traces, 0)


def test_cauchy_pair(rng):
    pair = CauchyPair([random_complex(rng, 3), random_complex(rng, 4)], [random_complex(rng, 3), random_complex(rng, 4)])
    d, n = pair.flat()
    assert len(d) == len(n) == 7
    assert len(pair.energy_flux()) == 2
    with pytest.raises(ValueError):
        CauchyPair([np.zeros(3)], [np.zeros(4)])


def test_bad_omega(disk_mesh, disk_skeleton):
    lm = local_mesh(disk_mesh, disk_skeleton, 1)
    with pytest.raises(ValueError):
        LocalRobinSolver(lm, disk_coefficients(), np.eye(len(lm.boundary_dofs)), 0.0)
