"""Nonlocal exchange operator.

``P`` is the ``T^-1``-orthogonal projector onto ``T(range R)``,

    P p = T R (R^T T R)^-1 R^T p,

and the exchange operator is the reflection ``Pi = I - 2P``.  It fixes
``ker R^T`` (Neumann single traces) and negates ``T(range R)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .traces import DtNOperator, SingleTraceMap, multitrace_norm


class RankDeficiencyError(ValueError):
    """The stacked restriction map does not have full column rank."""


@dataclass(frozen=True)
class ExchangeOperator:
    dtn: DtNOperator
    stm: SingleTraceMap
    gram_factor: tuple  # Cholesky factor of R^T T R

    @property
    def size(self):
        return self.stm.stacked.shape[0]

    def project(self, p):
        """``P p``."""
        p = np.asarray(p)
        phi = sla.cho_solve(self.gram_factor, self.stm.adjoint(p))
        return self.dtn.apply(self.stm.restrict(phi))

    def apply(self, p):
        """``Pi p = p - 2 P p``."""
        p = np.asarray(p)
        return p - 2.0 * self.project(p)

    def dense(self):
        """Dense matrix of ``Pi``."""
        n = self.size
        return self.apply(np.eye(n))


def _gram(dtn: DtNOperator, stm: SingleTraceMap):
    n_skel = stm.stacked.shape[1]
    g = np.zeros((n_skel, n_skel))
    for t, r in zip(dtn.blocks, stm.blocks):
        rd = r.toarray()
        g += rd.T @ t @ rd
    return g


def build_exchange(dtn: DtNOperator, stm: SingleTraceMap) -> ExchangeOperator:
    """Factorize ``R^T T R`` once.

    Raises
    ------
    RankDeficiencyError
        If a skeleton vertex has no copy, or one subdomain block holds two
        copies of the same skeleton vertex.
    """
    counts = np.asarray(stm.stacked.sum(axis=0)).ravel()
    if np.any(counts == 0):
        raise RankDeficiencyError(f"skeleton vertices {np.flatnonzero(counts == 0)[:5]} have no trace copy")
    for j, r in enumerate(stm.blocks):
        cols = r.indices
        if len(np.unique(cols)) != len(cols):
            raise RankDeficiencyError(f"subdomain {j} block maps two positions to one skeleton vertex")
    try:
        factor = sla.cho_factor(_gram(dtn, stm), lower=True)
    except np.linalg.LinAlgError:
        raise RankDeficiencyError("R^T T R is not positive definite") from None
    return ExchangeOperator(dtn=dtn, stm=stm, gram_factor=factor)


def apply_pi(op: ExchangeOperator, p):
    return op.apply(p)


def orthogonal_decompose(op: ExchangeOperator, p):
    """Split ``p = q + T R u`` with ``R^T q = 0``; returns ``(q, T R u)``."""
    p = np.asarray(p)
    tr = op.project(p)
    return p - tr, tr


def transmission_residual(op: ExchangeOperator, u_dir, u_neu, omega):
    """``||(u_neu - i w T u_dir) - Pi (u_neu + i w T u_dir)||_{H_N}``.

    Vanishes exactly when ``u_dir`` lies in ``range R`` and ``R^T u_neu = 0``.
    """
    if not omega > 0:
        raise ValueError("omega must be positive")
    tu = 1j * omega * op.dtn.apply(np.asarray(u_dir))
    u_neu = np.asarray(u_neu)
    r = (u_neu - tu) - op.apply(u_neu + tu)
    return multitrace_norm(r, op.dtn)
