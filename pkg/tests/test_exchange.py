import numpy as np
import pytest
import scipy.sparse as sp

from mtf_osm.exchange import (
    RankDeficiencyError,
    apply_pi,
    build_exchange,
    orthogonal_decompose,
    transmission_residual,
)
from mtf_osm.fem import local_mesh
from mtf_osm.traces import SingleTraceMap, assemble_single_trace_map, build_dtn_operator, multitrace_norm

from conftest import random_complex

GAMMA = 1 / 3


@pytest.fixture(scope="module")
def setup(disk_mesh, disk_skeleton):
    lms = [local_mesh(disk_mesh, disk_skeleton, j) for j in range(4)]
    dtn = build_dtn_operator(disk_skeleton, lms, GAMMA)
    stm = assemble_single_trace_map(disk_skeleton)
    return dtn, stm, build_exchange(dtn, stm)


def oracle_projector(t, r):
    """T^-1-orthogonal projector onto range(T R) via an eigendecomposition.

    With T = V diag(s) V^T, the whitening W = T^{-1/2} maps H_N isometrically;
    range(T R) becomes range(T^{1/2} R), whose orthonormal basis Q comes from
    an SVD.  The projector is T^{1/2} Q Q^T T^{-1/2}.
    """
    s, v = np.linalg.eigh(t)
    half = (v * np.sqrt(s)) @ v.T
    inv_half = (v / np.sqrt(s)) @ v.T
    u, sv, _ = np.linalg.svd(half @ r, full_matrices=False)
    q = u[:, sv > 1e-12 * sv[0]]
    return half @ q @ q.T @ inv_half


def test_projector_matches_oracle(setup):
    dtn, stm, ex = setup
    p_oracle = oracle_projector(dtn.dense(), stm.stacked.toarray())
    p_ours = ex.dense()
    n = ex.size
    p_ours = 0.5 * (np.eye(n) - p_ours)  # P = (I - Pi) / 2
    assert np.abs(p_ours - p_oracle).max() <= 1e-10 * np.abs(p_oracle).max()


def test_involution_and_isometry(setup, rng):
    dtn, _, ex = setup
    for _ in range(20):
        p = random_complex(rng, ex.size)
        pp = apply_pi(ex, p)
        assert np.linalg.norm(apply_pi(ex, pp) - p) <= 1e-12 * np.linalg.norm(p)
        assert abs(multitrace_norm(pp, dtn) - multitrace_norm(p, dtn)) <= 1e-10 * multitrace_norm(p, dtn)
    np.testing.assert_array_equal(apply_pi(ex, np.zeros(ex.size)), 0)


def test_projector_idempotent(setup, rng):
    _, _, ex = setup
    p = random_complex(rng, ex.size)
    q = ex.project(p)
    np.testing.assert_allclose(ex.project(q), q, rtol=0, atol=1e-12 * np.abs(q).max())


def test_range_is_negated(setup, rng):
    dtn, stm, ex = setup
    phi = random_complex(rng, stm.stacked.shape[1])
    p = dtn.apply(stm.restrict(phi))
    np.testing.assert_allclose(ex.project(p), p, atol=1e-10 * np.abs(p).max())
    assert multitrace_norm(apply_pi(ex, p) + p, dtn) <= 1e-10 * multitrace_norm(p, dtn)


def test_kernel_is_fixed(setup, rng):
    dtn, stm, ex = setup
    r = stm.stacked.toarray()
    p = random_complex(rng, ex.size)
    p = p - r @ np.linalg.solve(r.T @ r, r.T @ p)
    assert np.abs(ex.project(p)).max() <= 1e-10 * np.abs(p).max()
    assert multitrace_norm(apply_pi(ex, p) - p, dtn) <= 1e-10 * multitrace_norm(p, dtn)


def test_orthogonal_decomposition(setup, rng):
    dtn, stm, ex = setup
    p = random_complex(rng, ex.size)
    q, tr = orthogonal_decompose(ex, p)
    assert np.abs(q + tr - p).max() <= 1e-12 * np.abs(p).max()
    assert np.abs(stm.adjoint(q)).max() <= 1e-10 * np.abs(p).max()
    inner = np.vdot(dtn.whiten(tr), dtn.whiten(q))
    assert abs(inner) <= 1e-10 * multitrace_norm(p, dtn) ** 2
    # special cases
    q2, tr2 = orthogonal_decompose(ex, q)
    assert np.abs(tr2).max() <= 1e-10 * np.abs(q).max()
    q3, _ = orthogonal_decompose(ex, tr)
    assert np.abs(q3).max() <= 1e-10 * np.abs(tr).max()


@pytest.mark.parametrize("factor", [0.5, 1.0, 2.0])
def test_transmission_residual_zero_on_single_traces(setup, rng, factor):
    dtn, stm, ex = setup
    r = stm.stacked.toarray()
    phi = random_complex(rng, r.shape[1])
    q = random_complex(rng, ex.size)
    q = q - r @ np.linalg.solve(r.T @ r, r.T @ q)
    u_dir = stm.restrict(phi)
    omega = factor * 3.0
    scale = multitrace_norm(q, dtn) + omega * multitrace_norm(dtn.apply(u_dir), dtn)
    assert transmission_residual(ex, u_dir, q, omega) <= 1e-10 * scale


def test_transmission_residual_detects_cross_point_jump(setup, disk_skeleton, rng):
    dtn, stm, ex = setup
    phi = np.ones(stm.stacked.shape[1])
    u_dir = stm.restrict(phi).astype(complex)
    k = int(disk_skeleton.interior_cross_points()[0])
    row = int(np.flatnonzero(stm.columns == k)[0])
    u_dir[row] += 1e-3
    assert transmission_residual(ex, u_dir, np.zeros(ex.size), 3.0) > 1e-6
    with pytest.raises(ValueError):
        transmission_residual(ex, u_dir, np.zeros(ex.size), 0.0)


def test_rank_deficiency_detected(setup, disk_skeleton):
    dtn, stm, _ = setup
    cols = stm.columns.copy()
    # put a second copy of vertex cols[0] into block 0
    cols[1] = cols[0]
    n = len(cols)
    stacked = sp.csr_matrix((np.ones(n), (np.arange(n), cols)), shape=stm.stacked.shape)
    off = disk_skeleton.offsets
    blocks = tuple(stacked[off[j]:off[j + 1]] for j in range(4))
    with pytest.raises(RankDeficiencyError):
        build_exchange(dtn, SingleTraceMap(disk_skeleton, blocks, stacked))
