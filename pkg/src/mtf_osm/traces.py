"""Discrete trace spaces: Yukawa DtN maps, inner products, pairings.

Multi-trace vectors are flat arrays laid out subdomain after subdomain in
the order of :attr:`Skeleton.boundary_vertices`.  Dirichlet blocks hold
nodal values, Neumann blocks hold dual (load-vector) coefficients, and the
duality pairing between them is the unconjugated dot product.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import LocalMesh, assemble_yukawa
from .mesh import Skeleton

KINDS = ("dirichlet", "neumann", "pair")


@dataclass
class MultiTraceVector:
    """Per-subdomain blocks of one kind (``pair`` blocks are ``(dir, neu)`` tuples)."""

    blocks: list
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")

    @classmethod
    def from_flat(cls, skeleton: Skeleton, flat, kind="neumann"):
        return cls([b.copy() for b in skeleton.split(np.asarray(flat))], kind)

    def flat(self):
        if self.kind == "pair":
            return (
                np.concatenate([b[0] for b in self.blocks]),
                np.concatenate([b[1] for b in self.blocks]),
            )
        return np.concatenate(self.blocks)


class DtNOperator:
    """Block-diagonal Yukawa Dirichlet-to-Neumann map ``T = diag(T_j)``.

    Each ``T_j`` is the dense Schur complement of the Yukawa matrix onto the
    skeleton dofs of subdomain ``j``; its Cholesky factor serves ``T^-1``
    applications and whitening.
    """

    def __init__(self, skeleton: Skeleton, blocks, extensions=None, gamma=None):
        self.skeleton = skeleton
        self.blocks = [np.asarray(t, dtype=float) for t in blocks]
        self.gamma = gamma
        self._extensions = extensions
        self.cholesky = []
        for j, t in enumerate(self.blocks):
            if not np.allclose(t, t.T, rtol=0, atol=1e-12 * np.abs(t).max()):
                raise ValueError(f"T_{j} is not symmetric")
            try:
                self.cholesky.append(np.linalg.cholesky(t))
            except np.linalg.LinAlgError:
                raise ValueError(f"T_{j} is not positive definite") from None

    @property
    def n_subdomains(self):
        return len(self.blocks)

    def apply(self, u_dir):
        """``T u`` for a flat Dirichlet multi-trace (returns dual coefficients)."""
        blocks = self.skeleton.split(np.asarray(u_dir))
        return np.concatenate([t @ b for t, b in zip(self.blocks, blocks)])

    def solve(self, p):
        """``T^-1 p`` for a flat Neumann multi-trace."""
        blocks = self.skeleton.split(np.asarray(p))
        return np.concatenate([sla.cho_solve((c, True), b) for c, b in zip(self.cholesky, blocks)])

    def whiten(self, p):
        """``C^-1 p`` with ``T = C C^T``; Euclidean norms of the result are H_N norms."""
        blocks = self.skeleton.split(np.asarray(p))
        return np.concatenate(
            [sla.solve_triangular(c, b, lower=True) for c, b in zip(self.cholesky, blocks)]
        )

    def unwhiten(self, q):
        blocks = self.skeleton.split(np.asarray(q))
        return np.concatenate([c @ b for c, b in zip(self.cholesky, blocks)])

    def dense(self):
        return sla.block_diag(*self.blocks)

    def extend(self, j, v):
        """Yukawa extension of Dirichlet data ``v`` into subdomain ``j`` (local nodal vector)."""
        if self._extensions is None:
            raise RuntimeError("operator was built without extension data")
        lm, a, lu_ii, idof = self._extensions[j]
        v = np.asarray(v)
        u = np.zeros(lm.n_dofs, dtype=np.result_type(v, float))
        u[lm.boundary_dofs] = v
        if len(idof):
            u[idof] = -lu_ii.solve(np.asarray(a[idof][:, lm.boundary_dofs] @ v))
        return u


def _schur(a, lm: LocalMesh):
    bd = lm.boundary_dofs
    idof = lm.interior_dofs
    a = a.tocsc()
    a_bb = a[bd][:, bd].toarray()
    if len(idof) == 0:
        return a_bb, None, idof
    try:
        lu = spla.splu(a[idof][:, idof].tocsc())
    except RuntimeError as exc:
        raise ValueError(f"interior Yukawa block of subdomain {lm.subdomain} is singular: {exc}") from None
    x = lu.solve(a[idof][:, bd].toarray())
    t = a_bb - a[bd][:, idof] @ x
    return 0.5 * (t + t.T), lu, idof


def build_dtn(lm: LocalMesh, gamma, closure="robin"):
    """Dense DtN matrix of ``-Laplace + gamma^-2`` on the skeleton dofs of ``lm``.

    Truncation edges (if any) carry the Yukawa closure selected by
    ``closure`` (``"robin"``: ``gamma^-1`` mass term; ``"bessel"``: exact
    circular exterior DtN).
    """
    a = assemble_yukawa(lm, gamma, closure=closure)
    t, _, _ = _schur(a, lm)
    return t


def build_dtn_operator(skeleton: Skeleton, local_meshes, gamma, closure="robin") -> DtNOperator:
    blocks, ext = [], []
    for lm in local_meshes:
        a = assemble_yukawa(lm, gamma, closure=closure).tocsc()
        t, lu, idof = _schur(a, lm)
        blocks.append(t)
        ext.append((lm, a, lu, idof))
    return DtNOperator(skeleton, blocks, extensions=ext, gamma=gamma)


# ---------------------------------------------------------------------------
# Inner products and pairings
# ---------------------------------------------------------------------------
def h12_inner(u, v, t_j):
    """``(u, v)_{H^1/2} = conj(v)^T T_j u``."""
    return complex(np.conj(v) @ (t_j @ u))


def hm12_inner(p, q, t_j):
    """``(p, q)_{H^-1/2} = conj(q)^T T_j^-1 p``.

    ``t_j`` may be the matrix itself or its lower Cholesky factor given as
    ``("chol", C)``.
    """
    if isinstance(t_j, tuple):
        y = sla.cho_solve((t_j[1], True), p)
    else:
        y = np.linalg.solve(t_j, p)
    return complex(np.conj(q) @ y)


def hn_inner(p, q, dtn: DtNOperator):
    """Multi-trace Neumann inner product ``sum_j (p_j, q_j)_{H^-1/2}``."""
    return complex(np.vdot(dtn.whiten(q), dtn.whiten(p)))


def multitrace_norm(p, dtn: DtNOperator):
    """``||p||_{H_N}``."""
    return float(np.linalg.norm(dtn.whiten(p)))


def duality(u_dir, p_neu):
    """Bilinear multi-trace duality ``<<u, p>> = sum_j p_j^T u_j`` (no conjugation)."""
    return complex(np.dot(np.asarray(u_dir), np.asarray(p_neu)))


def skew_pairing(u_pair, v_pair):
    """``[[u, v]] = sum_j (q_j^T u_j - p_j^T v_j)`` for ``u = (u, p)``, ``v = (v, q)``."""
    (u, p), (v, q) = u_pair, v_pair
    return complex(np.dot(q, u) - np.dot(p, v))


# ---------------------------------------------------------------------------
# Single-trace space
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SingleTraceMap:
    """0/1 restriction from skeleton nodal values to the multi-trace layout.

    ``stacked`` has one row per multi-trace dof with a single 1 in the column
    of the corresponding skeleton vertex; ``range(stacked)`` is the discrete
    Dirichlet single-trace space and ``ker(stacked.T)`` the Neumann one.
    """

    skeleton: Skeleton
    blocks: tuple
    stacked: sp.csr_matrix

    @property
    def columns(self):
        return self.stacked.indices.reshape(-1)

    def restrict(self, phi):
        return self.stacked @ phi

    def adjoint(self, p):
        return self.stacked.T @ p


def _map_from_columns(skeleton, cols):
    n_rows = len(cols)
    n_skel = len(skeleton.skeleton_vertices)
    stacked = sp.csr_matrix(
        (np.ones(n_rows), (np.arange(n_rows), cols)), shape=(n_rows, n_skel)
    )
    off = skeleton.offsets
    blocks = tuple(stacked[off[j]:off[j + 1]] for j in range(skeleton.n_subdomains))
    return SingleTraceMap(skeleton=skeleton, blocks=blocks, stacked=stacked)


def assemble_single_trace_map(skeleton: Skeleton) -> SingleTraceMap:
    return _map_from_columns(skeleton, np.concatenate(skeleton.restriction))


def corrupted_single_trace_map(skeleton: Skeleton, seed=0) -> SingleTraceMap:
    """Fault injection: re-point one multi-trace dof at a wrong skeleton vertex.

    The new target is a vertex absent from that subdomain's block, so the
    corrupted map still has full column rank and the exchange operator can
    be built from it.
    """
    rng = np.random.default_rng(seed)
    cols = np.concatenate(skeleton.restriction).copy()
    row = int(rng.integers(len(cols)))
    j = int(np.searchsorted(skeleton.offsets, row, side="right") - 1)
    candidates = np.setdiff1d(np.arange(len(skeleton.skeleton_vertices)), skeleton.restriction[j])
    if len(candidates) == 0:
        raise ValueError("no admissible corruption target")
    cols[row] = int(rng.choice(candidates))
    return _map_from_columns(skeleton, cols)


def _copies(stm: SingleTraceMap):
    """Multi-trace dofs grouped by skeleton vertex."""
    cols = stm.columns
    order = np.argsort(cols, kind="stable")
    splits = np.flatnonzero(np.diff(cols[order])) + 1
    return np.split(order, splits)


def polarity_residual(u_dir, u_neu, stm: SingleTraceMap):
    """Largest skew pairing of ``(u_dir, u_neu)`` with unit elements of discrete ``X``.

    Pairing with ``(R e_k, 0)`` measures ``(R^T u_neu)_k``; pairing with
    ``(0, q)`` for unit ``q`` in ``ker R^T`` measures how far the copies of
    ``u_dir`` at each skeleton vertex are from agreeing.
    """
    neu = np.abs(stm.adjoint(np.asarray(u_neu)))
    res = float(neu.max()) if neu.size else 0.0
    u_dir = np.asarray(u_dir)
    for idx in _copies(stm):
        vals = u_dir[idx]
        res = max(res, float(np.linalg.norm(vals - vals.mean())))
    return res
