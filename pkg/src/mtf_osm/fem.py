"""P1 finite elements on subdomain meshes.

Sign convention: the Helmholtz form is ``-div(mu grad u) - kappa^2 u = f``,
discretised as ``A u = F`` with ``A = K_mu - M_{kappa^2} - i kappa0 M_trunc``.
Discrete Neumann traces are dual (load-vector) coefficients: the boundary
rows of ``A u - F``.  Pairing a Neumann trace with nodal Dirichlet values is
the plain, unconjugated dot product.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh, Skeleton

Coefficient = Union[float, complex, Callable]

# Symmetric 6-point rule on the reference triangle, exact for degree 4.
_TRI_A, _TRI_WA = 0.445948490915965, 0.223381589678011
_TRI_B, _TRI_WB = 0.091576213509771, 0.109951743655322
TRI_BARY = np.array(
    [
        [1 - 2 * _TRI_A, _TRI_A, _TRI_A],
        [_TRI_A, 1 - 2 * _TRI_A, _TRI_A],
        [_TRI_A, _TRI_A, 1 - 2 * _TRI_A],
        [1 - 2 * _TRI_B, _TRI_B, _TRI_B],
        [_TRI_B, 1 - 2 * _TRI_B, _TRI_B],
        [_TRI_B, _TRI_B, 1 - 2 * _TRI_B],
    ]
)
TRI_WEIGHTS = np.array([_TRI_WA] * 3 + [_TRI_WB] * 3)


class SingularSystemError(RuntimeError):
    """Factorization of a local system failed or is numerically singular."""

    def __init__(self, subdomain, detail=""):
        self.subdomain = subdomain
        super().__init__(f"singular system on subdomain {subdomain}" + (f": {detail}" if detail else ""))


@dataclass
class CoefficientField:
    """Material data and sources.

    ``mu`` and ``kappa_sq`` hold one entry per subdomain, either a constant
    or a callable ``f(xy) -> values`` evaluated at triangle barycentres.
    ``source`` is the volume right-hand side ``f(xy)``; ``outer_data`` is an
    optional inhomogeneous term ``g(xy, normal)`` in the truncation condition
    ``mu du/dn - i kappa0 u = g``.
    """

    mu: Sequence[Coefficient]
    kappa_sq: Sequence[Coefficient]
    kappa0: float
    source: Optional[Callable] = None
    outer_data: Optional[Callable] = None

    def __post_init__(self):
        if len(self.mu) != len(self.kappa_sq):
            raise ValueError("mu and kappa_sq need one entry per subdomain")
        if not self.kappa0 > 0:
            raise ValueError("kappa0 must be positive")

    @classmethod
    def piecewise_constant(cls, mu, kappa, kappa0, source=None, outer_data=None):
        """Per-subdomain constants given as wavenumbers ``kappa`` (squared internally)."""
        return cls(
            mu=[float(m) for m in mu],
            kappa_sq=[complex(k) ** 2 for k in kappa],
            kappa0=kappa0,
            source=source,
            outer_data=outer_data,
        )

    def _eval(self, table, j, xy, dtype):
        c = table[j]
        vals = c(xy) if callable(c) else np.full(len(xy), c)
        return np.asarray(vals, dtype=dtype) * np.ones(len(xy), dtype=dtype)

    def mu_at(self, j, xy):
        vals = self._eval(self.mu, j, xy, float)
        if np.any(vals <= 0):
            raise ValueError(f"mu must be positive on subdomain {j}")
        return vals

    def kappa_sq_at(self, j, xy):
        vals = self._eval(self.kappa_sq, j, xy, complex)
        if np.any(vals.imag < -1e-14 * np.abs(vals)):
            raise ValueError(f"Im kappa^2 must be >= 0 on subdomain {j}")
        return vals


@dataclass(frozen=True)
class LocalMesh:
    """Triangles of one subdomain (or of the whole mesh) in local numbering.

    ``boundary_dofs[k]`` is the local index of the ``k``-th vertex of the
    skeleton boundary list of the subdomain; ``trunc_edges`` are the local
    truncation-boundary edges, oriented with the domain on their left.
    """

    subdomain: int
    vertex_ids: np.ndarray
    vertices: np.ndarray
    triangles: np.ndarray
    tags: np.ndarray
    trunc_edges: np.ndarray
    boundary_dofs: np.ndarray

    @property
    def n_dofs(self):
        return len(self.vertex_ids)

    @property
    def interior_dofs(self):
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.boundary_dofs] = False
        return np.flatnonzero(mask)

    @property
    def area(self):
        p = self.vertices[self.triangles]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _localize(mesh, tri_mask, subdomain, boundary_global):
    tris = mesh.triangles[tri_mask]
    ids = np.unique(tris)
    g2l = np.full(len(mesh.vertices), -1, dtype=np.int64)
    g2l[ids] = np.arange(len(ids))
    outer = mesh.outer_boundary_edges
    keep = np.all(g2l[outer] >= 0, axis=1)
    outer = outer[keep]
    if subdomain is not None and len(outer):
        # Keep only truncation edges owned by this subdomain's triangles.
        nv = len(mesh.vertices)
        own = {(int(a) * nv + int(b)) for t in tris for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0]))}
        outer = outer[[int(a) * nv + int(b) in own for a, b in outer]]
    bdofs = g2l[boundary_global] if boundary_global is not None else np.empty(0, dtype=np.int64)
    return LocalMesh(
        subdomain=-1 if subdomain is None else subdomain,
        vertex_ids=ids,
        vertices=mesh.vertices[ids],
        triangles=g2l[tris],
        tags=mesh.subdomain_of_triangle[tri_mask],
        trunc_edges=g2l[outer].reshape(-1, 2),
        boundary_dofs=bdofs,
    )


def local_mesh(mesh: Mesh, skeleton: Skeleton, j: int) -> LocalMesh:
    """Restrict ``mesh`` to subdomain ``j`` with boundary dofs in skeleton order."""
    mask = mesh.subdomain_of_triangle == j
    if not mask.any():
        raise ValueError(f"subdomain {j} is empty")
    return _localize(mesh, mask, j, skeleton.boundary_vertices[j])


def global_mesh(mesh: Mesh) -> LocalMesh:
    """The whole mesh as a single :class:`LocalMesh` (no boundary dofs)."""
    return _localize(mesh, np.ones(len(mesh.triangles), dtype=bool), None, None)


# ---------------------------------------------------------------------------
# Element kernels
# ---------------------------------------------------------------------------
def _gradients(vertices, triangles):
    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    # Rows of the inverse Jacobian transpose give the gradients of barycentrics.
    g1 = np.column_stack([d2[:, 1], -d2[:, 0]]) / det[:, None]
    g2 = np.column_stack([-d1[:, 1], d1[:, 0]]) / det[:, None]
    g0 = -g1 - g2
    return np.stack([g0, g1, g2], axis=1), 0.5 * det


def _scatter(triangles, local, n):
    rows = np.repeat(triangles, 3, axis=1).ravel()
    cols = np.tile(triangles, (1, 3)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def barycentres(lm: LocalMesh):
    return lm.vertices[lm.triangles].mean(axis=1)


def stiffness_matrix(lm: LocalMesh, coef=None):
    """``int coef grad u . grad v`` with one coefficient value per triangle."""
    grads, area = _gradients(lm.vertices, lm.triangles)
    w = area if coef is None else area * coef
    local = np.einsum("t,tid,tjd->tij", w, grads, grads)
    return _scatter(lm.triangles, local, lm.n_dofs)


_MASS_REF = (np.ones((3, 3)) + np.eye(3)) / 12.0


def mass_matrix(lm: LocalMesh, coef=None):
    """Consistent P1 mass ``int coef u v`` with one coefficient value per triangle."""
    _, area = _gradients(lm.vertices, lm.triangles)
    w = area if coef is None else area * coef
    local = w[:, None, None] * _MASS_REF[None]
    return _scatter(lm.triangles, local, lm.n_dofs)


def segment_mass(points, segments, n=None):
    """P1 mass matrix on straight segments ``(a, b)`` of ``points``."""
    segments = np.asarray(segments, dtype=np.int64).reshape(-1, 2)
    n = len(points) if n is None else n
    if len(segments) == 0:
        return sp.csr_matrix((n, n))
    length = np.linalg.norm(points[segments[:, 1]] - points[segments[:, 0]], axis=1)
    local = length[:, None, None] * (np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0)[None]
    rows = np.repeat(segments, 2, axis=1).ravel()
    cols = np.tile(segments, (1, 2)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def boundary_mass(points, segments, n=None):
    """P1 boundary mass matrix on a polyline given as segment index pairs."""
    return segment_mass(np.asarray(points, dtype=float), segments, n)


def edge_quadrature(points, segments, order=4):
    """Gauss points, weights, P1 shape values and outward normals on segments.

    Segments are oriented with the domain on their left, so the outward
    normal is the unit tangent rotated clockwise.
    """
    s, w = np.polynomial.legendre.leggauss(order)
    s = 0.5 * (s + 1.0)
    w = 0.5 * w
    pa = points[segments[:, 0]]
    pb = points[segments[:, 1]]
    tangent = pb - pa
    length = np.linalg.norm(tangent, axis=1)
    normal = np.column_stack([tangent[:, 1], -tangent[:, 0]]) / length[:, None]
    xq = pa[:, None, :] + s[None, :, None] * tangent[:, None, :]
    wq = length[:, None] * w[None, :]
    shape = np.stack([1.0 - s, s], axis=-1)  # (order, 2)
    return xq, wq, shape, normal


def _edge_load(points, segments, func, n):
    """``int_e g(x, n) phi_i`` on segments, with ``g`` called on Gauss points."""
    if len(segments) == 0:
        return np.zeros(n, dtype=complex)
    xq, wq, shape, normal = edge_quadrature(points, segments)
    nq = np.broadcast_to(normal[:, None, :], xq.shape)
    vals = np.asarray(func(xq.reshape(-1, 2), nq.reshape(-1, 2)), dtype=complex).reshape(wq.shape)
    contrib = np.einsum("eq,eq,qa->ea", vals, wq, shape)
    return np.bincount(segments.ravel(), weights=contrib.real.ravel(), minlength=n) + 1j * np.bincount(
        segments.ravel(), weights=contrib.imag.ravel(), minlength=n
    )


def volume_load(lm: LocalMesh, func):
    """``int f phi_i`` by the degree-4 six-point rule."""
    if func is None:
        return np.zeros(lm.n_dofs, dtype=complex)
    p = lm.vertices[lm.triangles]  # (t, 3, 2)
    xq = np.einsum("qa,tad->tqd", TRI_BARY, p)
    _, area = _gradients(lm.vertices, lm.triangles)
    vals = np.asarray(func(xq.reshape(-1, 2)), dtype=complex).reshape(xq.shape[:2])
    contrib = np.einsum("tq,q,qa,t->ta", vals, TRI_WEIGHTS, TRI_BARY, area)
    idx = lm.triangles.ravel()
    return np.bincount(idx, weights=contrib.real.ravel(), minlength=lm.n_dofs) + 1j * np.bincount(
        idx, weights=contrib.imag.ravel(), minlength=lm.n_dofs
    )


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------
def yukawa_closure_matrix(lm: LocalMesh, gamma, closure="robin"):
    """Yukawa closure on the truncation boundary.

    ``"robin"`` adds ``gamma^-1 M_trunc``.  ``"bessel"`` adds the exact
    exterior Yukawa DtN of a circle centred at the origin, built from
    mass-orthonormalised Fourier modes and ``-K_n'/K_n`` ratios.
    """
    n = lm.n_dofs
    if closure == "none" or len(lm.trunc_edges) == 0:
        return sp.csr_matrix((n, n))
    m_trunc = segment_mass(lm.vertices, lm.trunc_edges, n)
    if closure == "robin":
        return m_trunc / gamma
    if closure != "bessel":
        raise ValueError(f"unknown closure {closure!r}")
    from .specfun import bessel_k_ratio_sequence

    nodes = np.unique(lm.trunc_edges)
    xy = lm.vertices[nodes]
    radius = np.linalg.norm(xy, axis=1)
    rho = float(radius.mean())
    if np.max(np.abs(radius - rho)) > 1e-9 * rho:
        raise ValueError("bessel closure requires a truncation circle centred at the origin")
    theta = np.arctan2(xy[:, 1], xy[:, 0])
    n_modes = (len(nodes) - 1) // 2
    cols = [np.ones_like(theta)]
    orders = [0]
    for k in range(1, n_modes + 1):
        cols += [np.cos(k * theta), np.sin(k * theta)]
        orders += [k, k]
    phi = np.column_stack(cols)
    m_loc = m_trunc[nodes][:, nodes].toarray()
    gram = phi.T @ m_loc @ phi
    chol = np.linalg.cholesky(gram)
    psi = sla.solve_triangular(chol, phi.T, lower=True).T
    x = rho / gamma
    ratios = bessel_k_ratio_sequence(n_modes, x)  # K_{k+1}/K_k
    d = np.array([(ratios[k] - k / x) / gamma for k in orders])
    mp = m_loc @ psi
    dense = (mp * d) @ mp.T
    rows = np.repeat(nodes, len(nodes))
    cols_ = np.tile(nodes, len(nodes))
    return sp.coo_matrix((dense.ravel(), (rows, cols_)), shape=(n, n)).tocsr()


def assemble_yukawa(lm: LocalMesh, gamma, closure="none"):
    """Real SPD matrix ``K + gamma^-2 M`` (plus optional truncation closure)."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if len(lm.triangles) == 0:
        raise ValueError("empty subdomain")
    a = stiffness_matrix(lm) + mass_matrix(lm) / gamma**2
    return (a + yukawa_closure_matrix(lm, gamma, closure)).tocsr()


@dataclass
class LocalSystem:
    """Complex symmetric system ``(A + E D E^T) u = load``.

    ``matrix`` is the sparse part, ``boundary_block`` the optional dense
    matrix ``D`` acting on ``boundary_dofs``.  Factorization eliminates the
    interior dofs with a sparse LU first, then factors the dense boundary
    Schur complement.
    """

    matrix: sp.csr_matrix
    load: np.ndarray
    boundary_dofs: np.ndarray
    boundary_block: Optional[np.ndarray] = None
    subdomain: int = -1
    _factors: Optional[tuple] = field(default=None, repr=False)

    @property
    def n_dofs(self):
        return self.matrix.shape[0]

    def full_matrix(self):
        """Sparse matrix including the dense boundary block (for checks)."""
        a = self.matrix.tolil(copy=True).astype(complex)
        if self.boundary_block is not None:
            b = self.boundary_dofs
            a[np.ix_(b, b)] = a[np.ix_(b, b)].toarray() + self.boundary_block
        return a.tocsr()

    def factorize(self):
        if self._factors is not None:
            return self._factors
        n = self.n_dofs
        bd = np.asarray(self.boundary_dofs, dtype=np.int64)
        mask = np.ones(n, dtype=bool)
        mask[bd] = False
        idof = np.flatnonzero(mask)
        a = self.matrix.tocsc().astype(complex)
        try:
            lu_ii = spla.splu(a[idof][:, idof].tocsc()) if len(idof) else None
        except RuntimeError as exc:
            raise SingularSystemError(self.subdomain, str(exc)) from None
        if len(bd):
            a_ib = a[idof][:, bd].toarray()
            a_bi = a[bd][:, idof]
            schur = a[bd][:, bd].toarray()
            if self.boundary_block is not None:
                schur = schur + self.boundary_block
            x_ib = lu_ii.solve(a_ib) if lu_ii is not None else np.zeros((0, len(bd)))
            if lu_ii is not None:
                schur = schur - a_bi @ x_ib
            lu, piv = sla.lu_factor(schur, check_finite=True)
            diag = np.abs(np.diag(lu))
            if diag.min() <= 1e-13 * diag.max():
                raise SingularSystemError(self.subdomain, "boundary Schur complement is singular")
            self._factors = (idof, bd, lu_ii, x_ib, a_bi, (lu, piv))
        else:
            self._factors = (idof, bd, lu_ii, None, None, None)
        return self._factors

    def solve(self, rhs=None):
        """Solve with ``rhs`` (defaults to ``load``); accepts (n,) or (n, k)."""
        rhs = self.load if rhs is None else rhs
        rhs = np.asarray(rhs, dtype=complex)
        idof, bd, lu_ii, x_ib, a_bi, lu_b = self.factorize()
        out = np.zeros_like(rhs)
        y = lu_ii.solve(rhs[idof]) if lu_ii is not None else rhs[idof]
        if lu_b is None:
            out[idof] = y
            return out
        ub = sla.lu_solve(lu_b, rhs[bd] - (a_bi @ y if lu_ii is not None else 0.0))
        out[bd] = ub
        if lu_ii is not None:
            out[idof] = y - x_ib @ ub
        return out


def solve(system: LocalSystem, rhs=None):
    """Direct solve of a :class:`LocalSystem`."""
    return system.solve(rhs)


def assemble_helmholtz(lm: LocalMesh, coeffs: CoefficientField, boundary_operator=None) -> LocalSystem:
    """Helmholtz system on a local mesh.

    The matrix realises ``int mu grad u grad v - kappa^2 u v`` minus
    ``i kappa0 int_trunc u v``; with ``boundary_operator=B`` the dense block
    ``-i B`` is added on the boundary dofs.  The load collects the volume
    source and the inhomogeneous truncation data.
    """
    xy = barycentres(lm)
    mu = np.empty(len(lm.triangles))
    ksq = np.empty(len(lm.triangles), dtype=complex)
    for tag in np.unique(lm.tags):
        sel = lm.tags == tag
        mu[sel] = coeffs.mu_at(tag, xy[sel])
        ksq[sel] = coeffs.kappa_sq_at(tag, xy[sel])
    a = stiffness_matrix(lm, mu).astype(complex) - mass_matrix(lm, ksq)
    if len(lm.trunc_edges):
        a = a - 1j * coeffs.kappa0 * segment_mass(lm.vertices, lm.trunc_edges, lm.n_dofs)
    load = volume_load(lm, coeffs.source)
    if coeffs.outer_data is not None:
        load = load + _edge_load(lm.vertices, lm.trunc_edges, coeffs.outer_data, lm.n_dofs)
    block = None
    if boundary_operator is not None:
        block = -1j * np.asarray(boundary_operator)
    return LocalSystem(
        matrix=a.tocsr(),
        load=load,
        boundary_dofs=lm.boundary_dofs,
        boundary_block=block,
        subdomain=lm.subdomain,
    )


def discrete_neumann_trace(system: LocalSystem, u, load=None):
    """Dual Neumann trace: boundary rows of ``A u - load`` (sparse part only)."""
    u = np.asarray(u)
    if u.shape[0] != system.n_dofs:
        raise ValueError(f"u has {u.shape[0]} entries, system has {system.n_dofs}")
    load = system.load if load is None else load
    r = system.matrix @ u - load
    return r[system.boundary_dofs]


def l2_error(lm: LocalMesh, u_h, exact):
    """``||u_h - exact||_{L2}`` with the six-point rule."""
    p = lm.vertices[lm.triangles]
    xq = np.einsum("qa,tad->tqd", TRI_BARY, p)
    _, area = _gradients(lm.vertices, lm.triangles)
    uh_q = np.einsum("qa,ta->tq", TRI_BARY, np.asarray(u_h)[lm.triangles])
    ex = np.asarray(exact(xq.reshape(-1, 2))).reshape(uh_q.shape)
    err = np.abs(uh_q - ex) ** 2
    return float(np.sqrt(np.einsum("tq,q,t->", err, TRI_WEIGHTS, area)))


def l2_norm(lm: LocalMesh, u_h):
    m = mass_matrix(lm)
    u_h = np.asarray(u_h)
    return float(np.sqrt(abs(np.vdot(u_h, m @ u_h))))
