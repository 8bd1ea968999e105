"""Off-boundary Yukawa layer potentials on polygonal subdomain boundaries.

Densities live on the boundary vertices of a subdomain and are extended
piecewise linearly along the edges.  Neumann data given in dual form
(integrals against the hat functions) is converted to nodal values with a
boundary mass solve before quadrature.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import LocalMesh, edge_quadrature, segment_mass
from .mesh import Mesh, Skeleton, _boundary_edges, boundary_segments
from .specfun import KernelParams, yukawa_green, yukawa_green_grad

MIN_DISTANCE_FACTOR = 2.0


class TooCloseError(ValueError):
    """Evaluation point is too close to the boundary for plain quadrature."""


@dataclass(frozen=True)
class BoundaryQuadrature:
    """Gauss-Legendre rule on every edge of a closed polygonal boundary.

    ``nodes`` are the boundary vertices (coordinates in ``points``); edges
    index into ``nodes`` and are oriented with the domain on their left, so
    ``normals`` point outward.
    """

    points: np.ndarray
    edges: np.ndarray
    xq: np.ndarray  # (E, Q, 2)
    wq: np.ndarray  # (E, Q)
    shape: np.ndarray  # (Q, 2) values of the two edge hat functions
    normals: np.ndarray  # (E, 2)
    mass: np.ndarray  # dense boundary mass over nodes

    @property
    def n_nodes(self):
        return len(self.points)

    @property
    def length(self):
        return float(self.wq.sum())

    def interpolate(self, values):
        """Values of the P1 density at the quadrature points, shape ``(E, Q)``."""
        v = np.asarray(values)[self.edges]  # (E, 2)
        return np.einsum("qa,ea->eq", self.shape, v)

    def flipped(self):
        """Same boundary seen from the other side (reversed normals)."""
        return BoundaryQuadrature(
            points=self.points,
            edges=self.edges[:, ::-1],
            xq=self.xq,
            wq=self.wq,
            shape=self.shape[:, ::-1],
            normals=-self.normals,
            mass=self.mass,
        )


def boundary_quadrature(vertices, edges, order=4) -> BoundaryQuadrature:
    """Quadrature on directed ``edges`` (global vertex indices into ``vertices``)."""
    edges = np.asarray(edges, dtype=np.int64)
    nodes, inv = np.unique(edges, return_inverse=True)
    loc = inv.reshape(edges.shape)
    pts = np.asarray(vertices, dtype=float)[nodes]
    xq, wq, shape, normal = edge_quadrature(pts, loc, order)
    mass = segment_mass(pts, loc, len(pts)).toarray()
    return BoundaryQuadrature(pts, loc, xq, wq, shape, normal, mass)


def subdomain_quadrature(lm: LocalMesh, order=4):
    """Quadrature on the whole boundary of a local mesh, plus the node ids it uses."""
    edges = _boundary_edges(lm.triangles)
    nodes = np.unique(edges)
    return boundary_quadrature(lm.vertices, edges, order), nodes


def _check_distance(quad: BoundaryQuadrature, x):
    a = quad.points[quad.edges[:, 0]]
    b = quad.points[quad.edges[:, 1]]
    d = b - a
    ln = np.linalg.norm(d, axis=1)
    x = np.atleast_2d(x)
    for pt in x:
        t = np.clip(np.einsum("ed,ed->e", pt - a, d) / ln**2, 0.0, 1.0)
        dist = np.linalg.norm(pt - (a + t[:, None] * d), axis=1)
        if np.any(dist < MIN_DISTANCE_FACTOR * ln):
            raise TooCloseError(f"point {pt} lies within {MIN_DISTANCE_FACTOR} edge lengths of the boundary")


def nodal_from_dual(quad: BoundaryQuadrature, dual):
    """Boundary mass solve turning dual coefficients into nodal values."""
    return np.linalg.solve(quad.mass, np.asarray(dual))


def single_layer(quad: BoundaryQuadrature, q, x, params: KernelParams, dual=True):
    """``int G(x - y) q(y) dsigma(y)`` at each point of ``x`` (shape ``(m, 2)`` or ``(2,)``)."""
    x = np.asarray(x, dtype=float)
    _check_distance(quad, x)
    qn = nodal_from_dual(quad, q) if dual else np.asarray(q)
    dens = quad.interpolate(qn) * quad.wq
    xs = np.atleast_2d(x)
    out = np.array([np.sum(yukawa_green(params, pt - quad.xq) * dens) for pt in xs])
    return out if x.ndim == 2 else out[0]


def double_layer(quad: BoundaryQuadrature, v, x, params: KernelParams):
    """``int n(y) . (grad G)(x - y) v(y) dsigma(y)`` for nodal ``v``."""
    x = np.asarray(x, dtype=float)
    _check_distance(quad, x)
    dens = quad.interpolate(v) * quad.wq
    xs = np.atleast_2d(x)
    out = []
    for pt in xs:
        g = yukawa_green_grad(params, pt - quad.xq)  # (E, Q, 2)
        kern = np.einsum("eqd,ed->eq", g, quad.normals)
        out.append(np.sum(kern * dens))
    out = np.array(out)
    return out if x.ndim == 2 else out[0]


def green_traces(quad: BoundaryQuadrature, params: KernelParams, source):
    """Nodal Dirichlet values and dual Neumann coefficients of ``G(. - source)``.

    The Neumann coefficients use the exact normal derivative on every edge,
    integrated against the hat functions.
    """
    source = np.asarray(source, dtype=float)
    u = yukawa_green(params, quad.points - source)
    grad = yukawa_green_grad(params, quad.xq - source)
    dn = np.einsum("eqd,ed->eq", grad, quad.normals) * quad.wq
    dual = np.zeros(quad.n_nodes)
    np.add.at(dual, quad.edges[:, 0], dn @ quad.shape[:, 0])
    np.add.at(dual, quad.edges[:, 1], dn @ quad.shape[:, 1])
    return u, dual


def potential(quad, u_dir, u_neu_dual, x, params):
    """Potential of a Cauchy pair: single layer of the Neumann part plus double layer."""
    return single_layer(quad, u_neu_dual, x, params) + double_layer(quad, u_dir, x, params)


def verify_representation(lm: LocalMesh, gamma, source, inside, outside=None, order=4):
    """Reproduce ``G(. - source)`` from its traces on the boundary of ``lm``.

    Returns
    -------
    dict
        ``interior``: max relative error at ``inside``; ``exterior``: max
        ``|Psi|`` at ``outside`` relative to ``max |u|`` at ``inside``.
    """
    params = KernelParams(gamma)
    quad, _ = subdomain_quadrature(lm, order)
    u, dual = green_traces(quad, params, source)
    inside = np.atleast_2d(inside)
    exact = yukawa_green(params, inside - np.asarray(source))
    approx = potential(quad, u, dual, inside, params)
    res = {"interior": float(np.max(np.abs(approx - exact) / np.abs(exact)))}
    if outside is not None:
        leak = potential(quad, u, dual, np.atleast_2d(outside), params)
        res["exterior"] = float(np.max(np.abs(leak)) / np.max(np.abs(exact)))
    return res


def multi_potential(quads, pairs, x, params):
    """``sum_j Psi_j(u_j)`` over subdomain boundaries."""
    return sum(potential(q, d, n, x, params) for q, (d, n) in zip(quads, pairs))


def verify_single_trace_annihilation(local_meshes, gamma, source, points, exterior_edges=None, order=4):
    """Max ``|Psi(tau(G_source))|`` at ``points`` relative to ``max |G_source|`` there.

    Each subdomain contributes the potential of the traces of the Green
    function on its own boundary.  ``exterior_edges`` (the mesh boundary,
    given as ``(vertices, edges)``) adds the unbounded complement so that
    the subdomains tile the plane.
    """
    params = KernelParams(gamma)
    quads = [subdomain_quadrature(lm, order)[0] for lm in local_meshes]
    if exterior_edges is not None:
        verts, edges = exterior_edges
        quads.append(boundary_quadrature(verts, np.asarray(edges)[:, ::-1], order))
    pairs = [green_traces(q, params, source) for q in quads]
    points = np.atleast_2d(points)
    val = multi_potential(quads, pairs, points, params)
    ref = np.abs(yukawa_green(params, points - np.asarray(source))).max()
    return float(np.max(np.abs(val)) / ref)


def skeleton_green_traces(mesh: Mesh, skeleton: Skeleton, gamma, source, order=4):
    """Multi-trace ``(u_dir, u_neu)`` of ``G(. - source)`` on the skeleton.

    Dirichlet blocks are nodal values; Neumann blocks integrate the exact
    normal derivative (with each subdomain's outward normal) against the
    boundary hat functions.  Built from geometry alone, this is an element
    of the discrete single-trace space that does not depend on any
    restriction map.
    """
    params = KernelParams(gamma)
    source = np.asarray(source, dtype=float)
    dirs, neus = [], []
    for j in range(skeleton.n_subdomains):
        pts = mesh.vertices[skeleton.boundary_vertices[j]]
        segs = boundary_segments(skeleton, j)
        dirs.append(yukawa_green(params, pts - source))
        xq, wq, shape, normal = edge_quadrature(pts, segs, order)
        dn = np.einsum("eqd,ed->eq", yukawa_green_grad(params, xq - source), normal) * wq
        dual = np.zeros(len(pts))
        np.add.at(dual, segs[:, 0], dn @ shape[:, 0])
        np.add.at(dual, segs[:, 1], dn @ shape[:, 1])
        neus.append(dual)
    return np.concatenate(dirs), np.concatenate(neus)
