"""Local Robin solves and the scattering operator.

For subdomain ``j`` the Robin system is ``(A_j - i w E T_j E^T) u = F + E h``
where ``E`` injects boundary positions into local dofs.  With the dual
Neumann trace ``lam = (A_j u - F)_B`` this enforces
``tau_-(u) = lam - i w T_j u_B = h``; the ingoing trace is
``tau_+(u) = lam + i w T_j u_B = h + 2 i w T_j u_B``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import CoefficientField, LocalMesh, LocalSystem, assemble_helmholtz, volume_load
from .traces import skew_pairing


def robin_minus(u_dir, u_neu, t_j, omega):
    """Outgoing Robin trace ``u_neu - i w T u_dir``."""
    return np.asarray(u_neu) - 1j * omega * (t_j @ np.asarray(u_dir))


def robin_plus(u_dir, u_neu, t_j, omega):
    """Ingoing Robin trace ``u_neu + i w T u_dir``."""
    return np.asarray(u_neu) + 1j * omega * (t_j @ np.asarray(u_dir))


def energy_flux(u_dir, u_neu):
    """``i [[u, conj(u)]] = -2 Im(conj(u_neu) . u_dir)``; real by construction."""
    u_dir = np.asarray(u_dir)
    u_neu = np.asarray(u_neu)
    val = 1j * skew_pairing((u_dir, u_neu), (np.conj(u_dir), np.conj(u_neu)))
    return float(val.real)


@dataclass
class CauchyPair:
    """Per-subdomain Dirichlet (nodal) and Neumann (dual) trace blocks."""

    dirichlet: list
    neumann: list

    def __post_init__(self):
        if len(self.dirichlet) != len(self.neumann):
            raise ValueError("block counts differ")
        for j, (d, n) in enumerate(zip(self.dirichlet, self.neumann)):
            if np.shape(d) != np.shape(n):
                raise ValueError(f"block {j}: Dirichlet and Neumann lengths differ")

    def flat(self):
        return np.concatenate(self.dirichlet), np.concatenate(self.neumann)

    def energy_flux(self):
        return [energy_flux(d, n) for d, n in zip(self.dirichlet, self.neumann)]


class LocalRobinSolver:
    """Factorized Robin Helmholtz problem on one subdomain."""

    def __init__(self, lm: LocalMesh, coeffs: CoefficientField, t_j, omega):
        if not omega > 0:
            raise ValueError("omega must be positive")
        self.mesh = lm
        self.subdomain = lm.subdomain
        self.coeffs = coeffs
        self.t = np.asarray(t_j, dtype=float)
        self.omega = float(omega)
        self.system: LocalSystem = assemble_helmholtz(lm, coeffs, boundary_operator=self.omega * self.t)
        self.system.factorize()

    @property
    def n_boundary(self):
        return len(self.mesh.boundary_dofs)

    def load_for(self, source=None):
        """Load vector of the configured data, or of ``source`` if given (no outer data then)."""
        if source is None:
            return self.system.load
        return volume_load(self.mesh, source)

    def solve(self, h=None, load=None):
        """Field ``u`` with ``tau_-(u) = h`` and volume load ``load`` (both default to zero).

        ``h`` may be a matrix of several data columns.
        """
        bd = self.mesh.boundary_dofs
        n = self.mesh.n_dofs
        if h is None:
            shape = (n,) if load is None or np.ndim(load) == 1 else (n, np.shape(load)[1])
        else:
            h = np.asarray(h)
            if h.shape[0] != len(bd):
                raise ValueError(f"datum has {h.shape[0]} entries, subdomain {self.subdomain} has {len(bd)}")
            shape = (n,) + h.shape[1:]
        rhs = np.zeros(shape, dtype=complex)
        if load is not None:
            load = np.asarray(load)
            rhs += load[:, None] if load.ndim < rhs.ndim else load
        if h is not None:
            rhs[bd] += h
        return self.system.solve(rhs)

    def traces(self, u, load=None):
        """``(u_dir, u_neu)`` of a local field; ``u_neu = (A u - load)_B``."""
        u = np.asarray(u)
        bd = self.mesh.boundary_dofs
        r = self.system.matrix @ u
        if load is not None:
            r = r - (load if r.ndim == 1 else np.asarray(load)[:, None])
        return u[bd], r[bd]

    def scatter(self, p):
        """``S_j p = tau_+(u)`` for the source-free solve with ``tau_-(u) = p``."""
        u = self.solve(h=p)
        ub = u[self.mesh.boundary_dofs]
        return np.asarray(p) + 2j * self.omega * (self.t @ ub)

    def scattering_matrix(self):
        nb = self.n_boundary
        return self.scatter(np.eye(nb, dtype=complex))

    def scatter_adjoint(self, q):
        """Euclidean adjoint of :meth:`scatter` (uses complex symmetry of the system)."""
        # S = I + 2iw T X with X = E^T M^-1 E, M complex symmetric, so
        # S^H q = q - 2iw X^H T q = q - 2iw conj(X conj(T q)).
        tq = self.t @ np.asarray(q)
        x = self.solve(h=np.conj(tq))[self.mesh.boundary_dofs]
        return np.asarray(q) - 2j * self.omega * np.conj(x)


def solve_robin(solver: LocalRobinSolver, source=None, h=None):
    """Local field for volume source ``source`` (callable or load vector) and datum ``h``."""
    load = None
    if callable(source):
        load = volume_load(solver.mesh, source)
    elif source is not None:
        load = np.asarray(source)
    return solver.solve(h=h, load=load)


def scattering_apply(solver: LocalRobinSolver, p):
    return solver.scatter(p)


class ScatteringOperator:
    """Block-diagonal ``S = diag(S_j)`` over the multi-trace layout."""

    def __init__(self, skeleton, solvers):
        self.skeleton = skeleton
        self.solvers = list(solvers)

    def apply(self, p):
        blocks = self.skeleton.split(np.asarray(p))
        return np.concatenate([s.scatter(b) for s, b in zip(self.solvers, blocks)])

    def adjoint(self, q):
        blocks = self.skeleton.split(np.asarray(q))
        return np.concatenate([s.scatter_adjoint(b) for s, b in zip(self.solvers, blocks)])

    def dense(self):
        import scipy.linalg as sla

        return sla.block_diag(*[s.scattering_matrix() for s in self.solvers])


def offset_traces(solvers, skeleton=None):
    """Offset fields ``phi_f`` (``tau_-(phi_f) = 0`` with the configured source) and ``tau_+(phi_f)``.

    Returns
    -------
    traces : ndarray
        Flat ``tau_+(phi_f)`` over all subdomains.
    fields : list of ndarray
        Local offset fields.
    """
    fields, traces = [], []
    for s in solvers:
        load = s.system.load
        phi = s.solve(load=load)
        d, n = s.traces(phi, load)
        fields.append(phi)
        traces.append(robin_plus(d, n, s.t, s.omega))
    return np.concatenate(traces), fields
