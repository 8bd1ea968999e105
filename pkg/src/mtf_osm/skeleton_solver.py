"""Skeleton equation ``p - Pi S p = f`` and its solvers.

All norms and inner products are taken in ``H_N`` (``T^-1``-weighted).
Internally this is done by whitening: with ``T = C C^T`` the map
``p -> C^-1 p`` is an isometry from ``H_N`` onto Euclidean space, so the
whitened operator ``C^-1 (I - Pi S) C`` can be handled with plain complex
linear algebra.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .exchange import ExchangeOperator, build_exchange
from .fem import CoefficientField, assemble_helmholtz, global_mesh, local_mesh
from .local_solver import LocalRobinSolver, ScatteringOperator, offset_traces
from .mesh import Mesh, extract_skeleton
from .traces import (
    SingleTraceMap,
    assemble_single_trace_map,
    build_dtn_operator,
    multitrace_norm,
)

MAX_DENSE_DOFS = 2000
FORMS = ("product", "difference")


class SkeletonSystem:
    """All operators of the skeleton formulation for one mesh and medium.

    Parameters
    ----------
    mesh : Mesh
    coeffs : CoefficientField
    gamma : float, optional
        Yukawa decay length; defaults to ``1 / kappa0``.
    omega : float, optional
        Impedance; defaults to ``kappa0``.
    closure : {"robin", "bessel"}
        Yukawa closure on the truncation boundary.
    stm : SingleTraceMap, optional
        Override the restriction map (used for fault injection).
    """

    def __init__(self, mesh: Mesh, coeffs: CoefficientField, gamma=None, omega=None,
                 closure="robin", stm: Optional[SingleTraceMap] = None):
        self.mesh = mesh
        self.coeffs = coeffs
        self.gamma = float(gamma) if gamma is not None else 1.0 / coeffs.kappa0
        self.omega = float(omega) if omega is not None else float(coeffs.kappa0)
        if not self.gamma > 0 or not self.omega > 0:
            raise ValueError("gamma and omega must be positive")
        if len(coeffs.mu) < mesh.n_subdomains:
            raise ValueError("coefficient data missing for some subdomains")
        self.closure = closure
        self.skeleton = extract_skeleton(mesh)
        self.local_meshes = [local_mesh(mesh, self.skeleton, j) for j in range(mesh.n_subdomains)]
        self.dtn = build_dtn_operator(self.skeleton, self.local_meshes, self.gamma, closure)
        self.stm = stm if stm is not None else assemble_single_trace_map(self.skeleton)
        self.exchange: ExchangeOperator = build_exchange(self.dtn, self.stm)
        self.solvers = [
            LocalRobinSolver(lm, coeffs, t, self.omega)
            for lm, t in zip(self.local_meshes, self.dtn.blocks)
        ]
        self.scattering = ScatteringOperator(self.skeleton, self.solvers)
        self.tau_plus, self.offset_fields = offset_traces(self.solvers)
        self.rhs = self.exchange.apply(self.tau_plus)

    @property
    def size(self):
        return self.skeleton.n_trace_dofs

    def norm(self, p):
        return multitrace_norm(p, self.dtn)

    def apply(self, p, form="product"):
        """``p - Pi S p`` (product form) or ``(Pi - S) p`` (difference form)."""
        p = np.asarray(p, dtype=complex)
        sp_ = self.scattering.apply(p)
        if form == "product":
            return p - self.exchange.apply(sp_)
        if form == "difference":
            return self.exchange.apply(p) - sp_
        raise ValueError(f"form must be one of {FORMS}")

    def adjoint(self, q):
        """Euclidean adjoint of the product-form operator, ``q - S^H Pi^H q``."""
        q = np.asarray(q, dtype=complex)
        ex = self.exchange
        # Pi^H = I - 2 R G^-1 R^T T  (real matrices)
        tq = self.dtn.apply(q)
        pih = q - 2.0 * ex.stm.restrict(sla.cho_solve(ex.gram_factor, ex.stm.adjoint(tq)))
        return q - self.scattering.adjoint(pih)

    def rhs_for(self, form="product"):
        return self.rhs if form == "product" else self.tau_plus

    def config(self):
        edges = self.mesh.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        lengths = np.linalg.norm(np.diff(self.mesh.vertices[edges], axis=1)[:, 0], axis=1)
        outer = self.mesh.outer_boundary_edges
        r_outer = float(np.linalg.norm(self.mesh.vertices[outer.ravel()], axis=1).max()) if len(outer) else None
        return {
            "gamma": self.gamma,
            "omega": self.omega,
            "kappa0": float(self.coeffs.kappa0),
            "h": float(lengths.max()),
            "r_outer": r_outer,
            "closure": self.closure,
            "trace_dofs": self.size,
        }

    # -- dense materialisation -------------------------------------------
    def _check_dense(self, allow_large):
        if self.size > MAX_DENSE_DOFS and not allow_large:
            raise ValueError(
                f"dense materialisation limited to {MAX_DENSE_DOFS} trace dofs (system has {self.size})"
            )

    def dense(self, form="product", allow_large=False):
        """Dense operator matrix, column by column."""
        self._check_dense(allow_large)
        n = self.size
        out = np.empty((n, n), dtype=complex)
        for k in range(n):
            e = np.zeros(n, dtype=complex)
            e[k] = 1.0
            out[:, k] = self.apply(e, form)
        return out

    def whitened_dense(self, allow_large=False):
        """``C^-1 (I - Pi S) C``, built from dense ``Pi`` and block-diagonal ``S``."""
        self._check_dense(allow_large)
        c = sla.block_diag(*self.dtn.cholesky)
        a = np.eye(self.size) - self.exchange.dense() @ self.scattering.dense()
        return sla.solve_triangular(c, a @ c, lower=True)


def build_skeleton_system(mesh, coeffs, **kwargs) -> SkeletonSystem:
    return SkeletonSystem(mesh, coeffs, **kwargs)


def apply_system(sys: SkeletonSystem, p, form="product"):
    return sys.apply(p, form)


def build_rhs(sys: SkeletonSystem, source=None):
    """``Pi tau_+(phi_f)``; with ``source`` given, recompute the offset for that volume source."""
    if source is None:
        return sys.rhs
    traces = []
    for s in sys.solvers:
        load = s.load_for(source)
        phi = s.solve(load=load)
        d, n = s.traces(phi, load)
        traces.append(n + 1j * s.omega * (s.t @ d))
    return sys.exchange.apply(np.concatenate(traces))


@dataclass
class SolveReport:
    """Iteration history; norms are ``H_N`` norms, relative to ``||rhs||``."""

    method: str
    iterations: int = 0
    residuals: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    contraction: list = field(default_factory=list)
    alpha_est: Optional[float] = None
    converged: bool = False
    breakdown: Optional[str] = None
    wall_time: float = 0.0
    config: dict = field(default_factory=dict)

    @property
    def max_contraction(self):
        return max(self.contraction) if self.contraction else None


def richardson(sys: SkeletonSystem, beta=0.5, tol=1e-10, maxit=1000, p0=None,
               reference=None, alpha=None):
    """Damped fixed-point iteration ``p <- (1 - beta) p + beta (Pi S p + f)``.

    ``reference`` (e.g. a direct solution) turns on error tracking; the
    recorded contraction factors are then error ratios, otherwise residual
    ratios.  Both follow the same recursion.
    """
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    t0 = time.perf_counter()
    f = sys.rhs
    fnorm = sys.norm(f)
    scale = fnorm if fnorm > 0 else 1.0
    p = np.zeros(sys.size, dtype=complex) if p0 is None else np.asarray(p0, dtype=complex).copy()
    rep = SolveReport("richardson", alpha_est=alpha, config={**sys.config(), "beta": beta, "tol": tol})
    pisp = sys.exchange.apply(sys.scattering.apply(p))
    r = f - (p - pisp)
    res = sys.norm(r)
    rep.residuals.append(res / scale)
    err = None
    if reference is not None:
        err = sys.norm(p - reference)
        rep.errors.append(err / scale)
    while res > tol * fnorm and rep.iterations < maxit:
        p = (1.0 - beta) * p + beta * (pisp + f)
        rep.iterations += 1
        pisp = sys.exchange.apply(sys.scattering.apply(p))
        r = f - (p - pisp)
        new_res = sys.norm(r)
        rep.residuals.append(new_res / scale)
        if reference is not None:
            new_err = sys.norm(p - reference)
            rep.errors.append(new_err / scale)
            if err > 0:
                rep.contraction.append(new_err / err)
            err = new_err
        elif res > 0:
            rep.contraction.append(new_res / res)
        res = new_res
    rep.converged = bool(res <= tol * fnorm)
    rep.wall_time = time.perf_counter() - t0
    return p, rep


def _gmres_whitened(matvec, b, tol, maxit, restart):
    """Restarted GMRES (modified Gram-Schmidt Arnoldi) in Euclidean space."""
    n = len(b)
    x = np.zeros(n, dtype=complex)
    bnorm = np.linalg.norm(b)
    history = [1.0 if bnorm > 0 else 0.0]
    if bnorm == 0:
        return x, history, True, None
    total = 0
    breakdown = None
    while total < maxit:
        r = b - matvec(x)
        beta = np.linalg.norm(r)
        if beta <= tol * bnorm:
            return x, history, True, breakdown
        m = min(restart, maxit - total, n)
        v = np.zeros((m + 1, n), dtype=complex)
        hmat = np.zeros((m + 1, m), dtype=complex)
        v[0] = r / beta
        g = np.zeros(m + 1, dtype=complex)
        g[0] = beta
        cs = np.zeros(m, dtype=complex)
        sn = np.zeros(m, dtype=complex)
        k_used = 0
        for k in range(m):
            w = matvec(v[k])
            for i in range(k + 1):
                hmat[i, k] = np.vdot(v[i], w)
                w = w - hmat[i, k] * v[i]
            hmat[k + 1, k] = np.linalg.norm(w)
            lucky = hmat[k + 1, k] <= 1e-14 * np.abs(hmat[: k + 1, k]).max()
            if not lucky:
                v[k + 1] = w / hmat[k + 1, k]
            for i in range(k):
                tmp = np.conj(cs[i]) * hmat[i, k] + np.conj(sn[i]) * hmat[i + 1, k]
                hmat[i + 1, k] = -sn[i] * hmat[i, k] + cs[i] * hmat[i + 1, k]
                hmat[i, k] = tmp
            a, c = hmat[k, k], hmat[k + 1, k]
            denom = np.hypot(abs(a), abs(c))
            cs[k], sn[k] = (a / denom, c / denom) if denom > 0 else (1.0, 0.0)
            hmat[k, k] = denom
            hmat[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = np.conj(cs[k]) * g[k]
            total += 1
            k_used = k + 1
            history.append(abs(g[k + 1]) / bnorm)
            if lucky:
                breakdown = f"happy breakdown at iteration {total}"
                break
            if abs(g[k + 1]) <= tol * bnorm:
                break
        y = sla.solve_triangular(hmat[:k_used, :k_used], g[:k_used])
        x = x + v[:k_used].T @ y
        if k_used == m and len(history) > m and history[-1] >= history[-1 - m] * (1 - 1e-12):
            return x, history, False, "stagnation over a full restart cycle"
    r = b - matvec(x)
    return x, history, bool(np.linalg.norm(r) <= tol * bnorm), breakdown


def gmres(sys: SkeletonSystem, tol=1e-10, maxit=500, restart=100, form="product"):
    """GMRES in the ``H_N`` inner product on the product or difference form."""
    t0 = time.perf_counter()
    dtn = sys.dtn
    b = dtn.whiten(sys.rhs_for(form))

    def matvec(w):
        return dtn.whiten(sys.apply(dtn.unwhiten(w), form))

    w, hist, ok, brk = _gmres_whitened(matvec, b, tol, maxit, restart)
    p = dtn.unwhiten(w)
    rep = SolveReport("gmres", config={**sys.config(), "form": form, "tol": tol, "restart": restart})
    rep.iterations = len(hist) - 1
    rep.residuals = [float(h) for h in hist]
    rep.contraction = [hist[k + 1] / hist[k] for k in range(len(hist) - 1) if hist[k] > 0]
    bn = np.linalg.norm(b)
    true_res = np.linalg.norm(b - matvec(w)) / (bn if bn > 0 else 1.0)
    rep.residuals[-1] = float(true_res)
    rep.converged = bool(bn == 0 or (ok and true_res <= tol * (1 + 1e-6)))
    rep.breakdown = brk
    rep.wall_time = time.perf_counter() - t0
    return p, rep


def estimate_coercivity(sys: SkeletonSystem, method="dense", tol=1e-10, allow_large=False):
    """``min Re((I - Pi S) p, p)_{H_N} / ||p||^2``.

    ``"dense"`` takes the smallest eigenvalue of the Hermitian part of the
    whitened dense operator; ``"lanczos"`` finds it matrix-free with ARPACK
    on the real symmetric embedding of the Hermitian part.
    """
    if method == "dense":
        a = sys.whitened_dense(allow_large)
        return float(sla.eigvalsh(0.5 * (a + a.conj().T))[0])
    if method != "lanczos":
        raise ValueError("method must be 'dense' or 'lanczos'")
    dtn = sys.dtn
    n = sys.size

    def herm(w):
        p = dtn.unwhiten(w)
        fwd = dtn.whiten(sys.apply(p))
        # adjoint of C^-1 A C is C^T A^H C^-T
        bwd = _ct_apply(dtn, sys.adjoint(_cinvt_apply(dtn, w)))
        return 0.5 * (fwd + bwd)

    def real_mv(x):
        z = herm(x[:n] + 1j * x[n:])
        return np.concatenate([z.real, z.imag])

    op = spla.LinearOperator((2 * n, 2 * n), matvec=real_mv, dtype=float)
    v0 = np.ones(2 * n)
    vals = spla.eigsh(op, k=1, which="SA", tol=tol, v0=v0, ncv=min(2 * n - 1, 60),
                      maxiter=20 * n, return_eigenvectors=False)
    return float(vals[0])


def _ct_apply(dtn, x):
    blocks = dtn.skeleton.split(np.asarray(x))
    return np.concatenate([c.T @ b for c, b in zip(dtn.cholesky, blocks)])


def _cinvt_apply(dtn, x):
    blocks = dtn.skeleton.split(np.asarray(x))
    return np.concatenate(
        [sla.solve_triangular(c, b, lower=True, trans="T") for c, b in zip(dtn.cholesky, blocks)]
    )


def rayleigh_quotients(sys: SkeletonSystem, n_probe=100, seed=0):
    """``Re((I - Pi S) p, p)_{H_N} / ||p||^2`` for seeded random complex ``p``."""
    rng = np.random.default_rng(seed)
    out = np.empty(n_probe)
    for k in range(n_probe):
        p = rng.standard_normal(sys.size) + 1j * rng.standard_normal(sys.size)
        wp = sys.dtn.whiten(p)
        wa = sys.dtn.whiten(sys.apply(p))
        out[k] = np.vdot(wp, wa).real / np.vdot(wp, wp).real
    return out


def injectivity_check(sys: SkeletonSystem, allow_large=False):
    """Smallest singular value of ``I - Pi S`` measured in ``H_N``."""
    return float(sla.svdvals(sys.whitened_dense(allow_large))[-1])


@dataclass
class Reconstruction:
    local_fields: list
    global_field: np.ndarray
    interface_jump: float
    neumann_balance: float


def reconstruct(sys: SkeletonSystem, p):
    """Local fields ``u_j`` with ``tau_-(u_j) = p_j`` and the configured source.

    The global field averages copies at shared vertices; ``interface_jump``
    is the largest mismatch between copies relative to ``max |u|`` and
    ``neumann_balance`` is ``|R^T u_neu|_inf`` relative to ``max |u_neu|``.
    """
    mesh = sys.mesh
    nv = len(mesh.vertices)
    acc = np.zeros(nv, dtype=complex)
    cnt = np.zeros(nv)
    fields, neus = [], []
    for s, pj, lm in zip(sys.solvers, sys.skeleton.split(np.asarray(p)), sys.local_meshes):
        load = s.system.load
        u = s.solve(h=pj, load=load)
        fields.append(u)
        neus.append(s.traces(u, load)[1])
        acc[lm.vertex_ids] += u
        cnt[lm.vertex_ids] += 1
    glob = acc / np.maximum(cnt, 1)
    umax = np.abs(glob).max()
    jump = 0.0
    for u, lm in zip(fields, sys.local_meshes):
        bd = lm.boundary_dofs
        jump = max(jump, float(np.abs(u[bd] - glob[lm.vertex_ids[bd]]).max(initial=0.0)))
    neu = np.concatenate(neus)
    bal = np.abs(sys.stm.adjoint(neu)).max(initial=0.0)
    nscale = np.abs(neu).max(initial=0.0)
    return Reconstruction(
        local_fields=fields,
        global_field=glob,
        interface_jump=jump / umax if umax > 0 else jump,
        neumann_balance=bal / nscale if nscale > 0 else bal,
    )


def monolithic_reference(mesh: Mesh, coeffs: CoefficientField):
    """Single global P1 solve with the same truncation closure; returns ``(local_mesh, u)``.

    The global mesh keeps the original vertex numbering since every vertex
    belongs to some triangle.
    """
    lm = global_mesh(mesh)
    system = assemble_helmholtz(lm, coeffs)
    u = system.solve()
    out = np.zeros(len(mesh.vertices), dtype=complex)
    out[lm.vertex_ids] = u
    return lm, out
