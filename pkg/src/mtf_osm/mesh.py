"""Conforming triangulations partitioned into subdomains, and their skeleton.

Edges that belong to a single triangle form the artificial truncation
boundary (an absorbing closure is imposed there).  Edges shared by two
triangles with different subdomain tags are interface edges; their union is
the skeleton on which all trace quantities live.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MESH_HEADER = "mtf-mesh 1"


class MeshError(ValueError):
    """Invalid mesh file or topology."""


@dataclass(frozen=True)
class Mesh:
    """P1 triangulation with one subdomain tag per triangle.

    Attributes
    ----------
    vertices : ndarray, shape (nv, 2)
    triangles : ndarray, shape (nt, 3)
        Vertex indices, counter-clockwise.
    subdomain_of_triangle : ndarray, shape (nt,)
        Tags ``0..J``.
    outer_boundary_edges : ndarray, shape (nb, 2)
        Edges owned by a single triangle (the truncation boundary), oriented
        so that the owning triangle lies on their left.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    subdomain_of_triangle: np.ndarray
    outer_boundary_edges: np.ndarray = field(default=None)

    def __post_init__(self):
        verts = np.ascontiguousarray(self.vertices, dtype=float)
        tris = np.ascontiguousarray(self.triangles, dtype=np.int64)
        tags = np.ascontiguousarray(self.subdomain_of_triangle, dtype=np.int64)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "subdomain_of_triangle", tags)
        validate_mesh(self)
        if self.outer_boundary_edges is None:
            object.__setattr__(self, "outer_boundary_edges", _boundary_edges(tris))
        for arr in (self.vertices, self.triangles, self.subdomain_of_triangle, self.outer_boundary_edges):
            arr.setflags(write=False)

    @property
    def n_subdomains(self) -> int:
        return int(self.subdomain_of_triangle.max()) + 1

    @property
    def areas(self) -> np.ndarray:
        return triangle_areas(self.vertices, self.triangles)

    def triangles_of(self, j):
        return self.triangles[self.subdomain_of_triangle == j]


def triangle_areas(vertices, triangles):
    p0, p1, p2 = (vertices[triangles[:, k]] for k in range(3))
    d1 = p1 - p0
    d2 = p2 - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _edge_table(triangles):
    """All directed triangle edges (a, b) with the owning triangle id."""
    nt = len(triangles)
    a = triangles[:, [0, 1, 2]].ravel()
    b = triangles[:, [1, 2, 0]].ravel()
    owner = np.repeat(np.arange(nt), 3)
    return a, b, owner


def _boundary_edges(triangles):
    a, b, _ = _edge_table(triangles)
    key = np.minimum(a, b) * (int(max(a.max(), b.max())) + 1) + np.maximum(a, b)
    _, inverse, counts = np.unique(key, return_inverse=True, return_counts=True)
    once = counts[inverse] == 1
    return np.column_stack([a[once], b[once]])


def validate_mesh(mesh: Mesh) -> None:
    """Raise :class:`MeshError` on index, orientation or manifoldness violations."""
    verts, tris, tags = mesh.vertices, mesh.triangles, mesh.subdomain_of_triangle
    if verts.ndim != 2 or verts.shape[1] != 2:
        raise MeshError(f"vertices must have shape (n, 2), got {verts.shape}")
    if tris.ndim != 2 or tris.shape[1] != 3:
        raise MeshError(f"triangles must have shape (n, 3), got {tris.shape}")
    if len(tags) != len(tris):
        raise MeshError("one subdomain tag per triangle is required")
    bad = np.flatnonzero((tris < 0).any(axis=1) | (tris >= len(verts)).any(axis=1))
    if bad.size:
        raise MeshError(f"triangle {bad[0]} references a missing vertex")
    if np.any(tags < 0):
        raise MeshError(f"triangle {np.flatnonzero(tags < 0)[0]} has a negative subdomain tag")
    missing = np.setdiff1d(np.arange(tags.max() + 1), tags)
    if missing.size:
        raise MeshError(f"subdomain {missing[0]} has no triangles")
    area = triangle_areas(verts, tris)
    bad = np.flatnonzero(area <= 0.0)
    if bad.size:
        raise MeshError(f"triangle {bad[0]} is inverted or degenerate (area {area[bad[0]]:.3e})")
    a, b, owner = _edge_table(tris)
    nv = len(verts)
    directed = a * nv + b
    uniq, counts = np.unique(directed, return_counts=True)
    if np.any(counts > 1):
        e = uniq[counts > 1][0]
        t = owner[np.flatnonzero(directed == e)[1]]
        raise MeshError(f"triangle {t} overlaps a neighbour along edge ({e // nv}, {e % nv})")
    undirected = np.minimum(a, b) * nv + np.maximum(a, b)
    uniq, counts = np.unique(undirected, return_counts=True)
    if np.any(counts > 2):
        e = uniq[counts > 2][0]
        t = owner[np.flatnonzero(undirected == e)[2]]
        raise MeshError(f"triangle {t} makes edge ({e // nv}, {e % nv}) non-manifold")
    used = np.zeros(nv, dtype=bool)
    used[tris.ravel()] = True
    if not used.all():
        raise MeshError(f"vertex {np.flatnonzero(~used)[0]} is not used by any triangle")


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------
def _ring_counts(radii, h, n_sectors):
    counts = []
    for r in radii:
        n = max(3, int(math.ceil(2.0 * math.pi * r / h)))
        n = int(math.ceil(n / n_sectors)) * n_sectors
        counts.append(n)
    return counts


def _stitch(inner, outer, inner_t, outer_t):
    """Triangulate the strip between two angle-ordered point chains."""
    tris = []
    i = j = 0
    m, n = len(inner) - 1, len(outer) - 1
    while i < m or j < n:
        advance_outer = i == m or (j < n and outer_t[j + 1] <= inner_t[i + 1])
        if advance_outer:
            tris.append((inner[i], outer[j + 1], outer[j]))
            j += 1
        else:
            tris.append((inner[i], inner[i + 1], outer[j]))
            i += 1
    return tris


def generate_partitioned_disk(n_sectors: int, r_skeleton: float, r_outer: float, h: float) -> Mesh:
    """Disk of radius ``r_skeleton`` cut into ``n_sectors`` pie slices, inside an annulus.

    Slices are subdomains ``1..n_sectors`` and meet at the centre; the annulus
    ``r_skeleton < r < r_outer`` is subdomain 0.  Rings are equispaced with
    spacing close to ``h`` and every sector boundary passes through ring
    vertices, so the mesh is conforming across all interfaces.
    ``n_sectors = 1`` gives a single disk subdomain.
    """
    if n_sectors < 1:
        raise ValueError("n_sectors must be >= 1")
    if not (r_outer > r_skeleton > 0.0):
        raise ValueError("need r_outer > r_skeleton > 0")
    if not h > 0.0:
        raise ValueError("h must be positive")
    n_in = max(1, int(round(r_skeleton / h)))
    n_out = max(1, int(round((r_outer - r_skeleton) / h)))
    radii = list(np.linspace(0.0, r_skeleton, n_in + 1)[1:]) + list(
        np.linspace(r_skeleton, r_outer, n_out + 1)[1:]
    )
    counts = _ring_counts(radii, h, n_sectors)
    if min(counts) < 3 or 2.0 * math.pi * r_skeleton / h < 3:
        raise ValueError("h too large: fewer than 3 vertices per boundary component")

    vertices = [(0.0, 0.0)]
    ring_ids = []
    for r, n in zip(radii, counts):
        theta = 2.0 * math.pi * np.arange(n) / n
        start = len(vertices)
        vertices.extend(zip(r * np.cos(theta), r * np.sin(theta)))
        ring_ids.append(np.arange(start, start + n))

    triangles, tags = [], []
    # Centre fan, one block per sector.
    first = ring_ids[0]
    n1 = len(first)
    per = n1 // n_sectors
    for s in range(n_sectors):
        for k in range(s * per, (s + 1) * per):
            triangles.append((0, first[k], first[(k + 1) % n1]))
            tags.append(s + 1)

    for ring in range(1, len(radii)):
        inner, outer = ring_ids[ring - 1], ring_ids[ring]
        ni, no = len(inner), len(outer)
        in_annulus = ring >= n_in
        groups = 1 if in_annulus else n_sectors
        for s in range(groups):
            ki = np.arange(s * ni // groups, (s + 1) * ni // groups + 1)
            ko = np.arange(s * no // groups, (s + 1) * no // groups + 1)
            chain_i = inner[ki % ni]
            chain_o = outer[ko % no]
            ti = (ki - ki[0]) / (len(ki) - 1)
            to = (ko - ko[0]) / (len(ko) - 1)
            strip = _stitch(chain_i, chain_o, ti, to)
            triangles.extend(strip)
            tags.extend([0 if in_annulus else s + 1] * len(strip))

    vertices = np.array(vertices)
    triangles = np.array(triangles, dtype=np.int64)
    # Stitching yields clockwise triangles; flip to counter-clockwise.
    area = triangle_areas(vertices, triangles)
    flip = area < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]
    return Mesh(vertices, triangles, np.array(tags))


def generate_partitioned_square(n: int, side: float = 1.0, split: str = "vertical") -> Mesh:
    """Structured ``n x n`` square mesh split into two halves (tags 0 and 1).

    ``split="vertical"`` cuts at ``x = side/2``; ``n`` must be even.  The
    whole outer square is the truncation boundary, so the single interface
    touches it at both ends and there is no cross point.
    """
    if n < 2 or n % 2:
        raise ValueError("n must be an even integer >= 2")
    xs = np.linspace(0.0, side, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    v00 = idx[:-1, :-1].ravel()
    v10 = idx[:-1, 1:].ravel()
    v01 = idx[1:, :-1].ravel()
    v11 = idx[1:, 1:].ravel()
    tris = np.vstack([np.column_stack([v00, v10, v11]), np.column_stack([v00, v11, v01])])
    centroid = vertices[tris].mean(axis=1)
    if split == "vertical":
        tags = (centroid[:, 0] > 0.5 * side).astype(np.int64)
    elif split == "diagonal":
        tags = (centroid[:, 1] > centroid[:, 0]).astype(np.int64)
    else:
        raise ValueError(f"unknown split {split!r}")
    return Mesh(vertices, tris, tags)


# ---------------------------------------------------------------------------
# File IO
# ---------------------------------------------------------------------------
def save_mesh(mesh: Mesh, path) -> None:
    """Write the ASCII ``mtf-mesh 1`` format (17 significant digits)."""
    lines = [MESH_HEADER, f"V {len(mesh.vertices)}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines.append(f"T {len(mesh.triangles)}")
    lines += [f"{a} {b} {c} {t}" for (a, b, c), t in zip(mesh.triangles, mesh.subdomain_of_triangle)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> Mesh:
    """Read and validate a mesh written by :func:`save_mesh`.

    Raises
    ------
    MeshError
        With a line number on parse errors, or an element id on topology errors.
    """
    lines = Path(path).read_text().splitlines()
    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            raise MeshError(f"line {pos + 1}: unexpected end of file")
        pos += 1
        return pos, lines[pos - 1].split()

    def section(tag):
        lineno, tok = next_line()
        if len(tok) != 2 or tok[0] != tag:
            raise MeshError(f"line {lineno}: expected '{tag} <count>'")
        try:
            count = int(tok[1])
        except ValueError:
            raise MeshError(f"line {lineno}: bad count {tok[1]!r}") from None
        if count < 0:
            raise MeshError(f"line {lineno}: negative count")
        return count

    lineno, tok = next_line()
    if " ".join(tok) != MESH_HEADER:
        raise MeshError(f"line {lineno}: expected header '{MESH_HEADER}'")
    nv = section("V")
    vertices = np.empty((nv, 2))
    for i in range(nv):
        lineno, tok = next_line()
        try:
            if len(tok) != 2:
                raise ValueError
            vertices[i] = [float(tok[0]), float(tok[1])]
        except ValueError:
            raise MeshError(f"line {lineno}: expected 'x y'") from None
    nt = section("T")
    tris = np.empty((nt, 3), dtype=np.int64)
    tags = np.empty(nt, dtype=np.int64)
    for i in range(nt):
        lineno, tok = next_line()
        try:
            if len(tok) != 4:
                raise ValueError
            vals = [int(t) for t in tok]
        except ValueError:
            raise MeshError(f"line {lineno}: expected 'v0 v1 v2 tag'") from None
        tris[i] = vals[:3]
        tags[i] = vals[3]
    if any(line.strip() for line in lines[pos:]):
        raise MeshError(f"line {pos + 1}: trailing content")
    return Mesh(vertices, tris, tags)


# ---------------------------------------------------------------------------
# Skeleton
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Skeleton:
    """Interface structure of a partitioned mesh.

    Attributes
    ----------
    boundary_vertices : list of ndarray
        For each subdomain ``j``, the global vertex ids on its interface
        boundary, ordered along the polylines.
    boundary_components : list of list of (int, bool)
        ``(length, closed)`` for each polyline making up ``boundary_vertices[j]``.
    skeleton_vertices : ndarray
        Sorted global ids of all skeleton vertices.
    restriction : list of ndarray
        ``restriction[j][k]`` is the skeleton index of the ``k``-th entry of
        ``boundary_vertices[j]``.
    multiplicity : ndarray
        Number of subdomain boundaries through each skeleton vertex.
    cross_points : ndarray
        Skeleton indices with multiplicity >= 3.
    """

    boundary_vertices: list
    boundary_components: list
    skeleton_vertices: np.ndarray
    restriction: list
    multiplicity: np.ndarray
    cross_points: np.ndarray

    @property
    def n_subdomains(self):
        return len(self.boundary_vertices)

    @property
    def block_sizes(self):
        return [len(b) for b in self.boundary_vertices]

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.block_sizes)]).astype(int)

    @property
    def n_trace_dofs(self):
        return int(sum(self.block_sizes))

    def split(self, flat):
        """Split a flat multi-trace vector into per-subdomain blocks (views)."""
        off = self.offsets
        return [flat[off[j]:off[j + 1]] for j in range(self.n_subdomains)]

    def position_in(self, j):
        """Map skeleton index -> position in ``boundary_vertices[j]`` (-1 if absent)."""
        pos = np.full(len(self.skeleton_vertices), -1, dtype=np.int64)
        pos[self.restriction[j]] = np.arange(len(self.restriction[j]))
        return pos

    def interior_cross_points(self):
        """Cross points not lying on the boundary of subdomain 0."""
        on0 = np.zeros(len(self.skeleton_vertices), dtype=bool)
        on0[self.restriction[0]] = True
        return self.cross_points[~on0[self.cross_points]]


def interface_edges(mesh: Mesh, j: int):
    """Directed edges of subdomain ``j`` that are shared with another subdomain.

    Edges are oriented with subdomain ``j`` on their left, so the outward
    normal of ``j`` is the tangent rotated clockwise.
    """
    a, b, owner = _edge_table(mesh.triangles)
    nv = len(mesh.vertices)
    tags = mesh.subdomain_of_triangle
    und = np.minimum(a, b) * nv + np.maximum(a, b)
    order = np.argsort(und, kind="stable")
    su = und[order]
    pair_start = np.flatnonzero((su[:-1] == su[1:]))
    e1, e2 = order[pair_start], order[pair_start + 1]
    t1, t2 = tags[owner[e1]], tags[owner[e2]]
    differ = t1 != t2
    e1, e2, t1, t2 = e1[differ], e2[differ], t1[differ], t2[differ]
    mine = np.concatenate([e1[t1 == j], e2[t2 == j]])
    mine.sort()
    return np.column_stack([a[mine], b[mine]])


def _order_polylines(edges, j):
    """Chain directed edges into polylines; reject branching boundaries."""
    if len(edges) == 0:
        return [], []
    succ = {}
    pred = {}
    for a, b in edges:
        a, b = int(a), int(b)
        if a in succ or b in pred:
            raise MeshError(f"subdomain {j} has a non-manifold boundary at vertex {a if a in succ else b}")
        succ[a] = b
        pred[b] = a
    remaining = set(succ)
    components = []
    closed = []
    # Open chains first, starting from vertices with no predecessor.
    starts = sorted(v for v in succ if v not in pred)
    for s in starts:
        chain = [s]
        v = s
        while v in succ:
            remaining.discard(v)
            v = succ[v]
            chain.append(v)
        components.append(chain)
        closed.append(False)
    while remaining:
        s = min(remaining)
        chain = [s]
        v = s
        while True:
            remaining.discard(v)
            v = succ[v]
            if v == s:
                break
            chain.append(v)
        components.append(chain)
        closed.append(True)
    return components, closed


def extract_skeleton(mesh: Mesh) -> Skeleton:
    """Build per-subdomain boundary lists, restriction maps and cross points."""
    nsub = mesh.n_subdomains
    lists, comps = [], []
    for j in range(nsub):
        chains, closed = _order_polylines(interface_edges(mesh, j), j)
        verts = [v for c in chains for v in c]
        if len(set(verts)) != len(verts):
            raise MeshError(f"subdomain {j} has a non-manifold boundary (pinched vertex)")
        lists.append(np.array(verts, dtype=np.int64))
        comps.append(list(zip([len(c) for c in chains], closed)))
    skel = np.unique(np.concatenate(lists)) if lists else np.empty(0, dtype=np.int64)
    lookup = np.full(len(mesh.vertices), -1, dtype=np.int64)
    lookup[skel] = np.arange(len(skel))
    restriction = [lookup[lst] for lst in lists]
    mult = np.zeros(len(skel), dtype=np.int64)
    for r in restriction:
        mult[r] += 1
    for arr in [skel, mult, *lists, *restriction]:
        arr.setflags(write=False)
    return Skeleton(
        boundary_vertices=lists,
        boundary_components=comps,
        skeleton_vertices=skel,
        restriction=restriction,
        multiplicity=mult,
        cross_points=np.flatnonzero(mult >= 3),
    )


def boundary_segments(skeleton: Skeleton, j: int):
    """Consecutive position pairs along the polylines of ``boundary_vertices[j]``."""
    segs = []
    start = 0
    for length, closed in skeleton.boundary_components[j]:
        idx = list(range(start, start + length))
        segs += list(zip(idx[:-1], idx[1:]))
        if closed:
            segs.append((idx[-1], idx[0]))
        start += length
    return np.array(segs, dtype=np.int64).reshape(-1, 2)
