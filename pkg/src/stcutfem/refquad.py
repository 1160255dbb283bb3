"""Simplex quadrature kernels: reference rules, red subdivision, level-set slicing.

All routines are vectorized over a leading batch axis.  A batch of simplices is
an array of shape (M, nv, dim) where nv-1 is the simplex dimension (segment,
triangle or tetrahedron) and dim the ambient space-time dimension.  Slicing
operates on the vertex-interpolated (linear) level set, so it is exact for
affine level sets and second-order accurate after recursive subdivision.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

# vertices with |phi| <= SIGN_TOL count as lying on the zero set
SIGN_TOL = 1e-14

_FACTORIAL = [math.factorial(k) for k in range(5)]

# edge numbering per simplex type: EDGES[nv] lists vertex pairs (i, j), i < j
EDGES = {
    2: [(0, 1)],
    3: [(0, 1), (0, 2), (1, 2)],
    4: [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)],
}

# red-refinement children as index tuples into [vertices..., edge midpoints...]
# (midpoint k corresponds to EDGES[nv][k], numbered nv + k)
CHILD_TEMPLATES = {
    2: [(0, 2), (2, 1)],
    3: [(0, 3, 4), (3, 1, 5), (4, 5, 2), (3, 5, 4)],
}

# octahedron tetrahedra for each interior diagonal choice (3D red refinement);
# midpoints numbered 4..9 following EDGES[4]
OCTAHEDRON_SPLITS = {
    (5, 8): [(5, 8, 4, 6), (5, 8, 6, 9), (5, 8, 9, 7), (5, 8, 7, 4)],
    (6, 7): [(6, 7, 4, 5), (6, 7, 5, 9), (6, 7, 9, 8), (6, 7, 8, 4)],
    (4, 9): [(4, 9, 5, 7), (4, 9, 7, 8), (4, 9, 8, 6), (4, 9, 6, 5)],
}

_TET_CORNERS = [(0, 4, 5, 6), (1, 4, 7, 8), (2, 5, 7, 9), (3, 6, 8, 9)]
CHILD_TEMPLATES[4] = _TET_CORNERS + OCTAHEDRON_SPLITS[(5, 8)]


def simplex_measure(simplices: np.ndarray) -> np.ndarray:
    """k-dimensional measure of each simplex, k = nv - 1 (Gram determinant)."""
    simplices = np.asarray(simplices, dtype=float)
    m, nv, dim = simplices.shape
    k = nv - 1
    edges = simplices[:, 1:, :] - simplices[:, :1, :]
    if k == dim == 2:
        det = edges[:, 0, 0] * edges[:, 1, 1] - edges[:, 0, 1] * edges[:, 1, 0]
        return np.abs(det) / 2.0
    if k == dim == 3:
        cross = np.cross(edges[:, 1, :], edges[:, 2, :])
        det = np.einsum("md,md->m", edges[:, 0, :], cross)
        return np.abs(det) / 6.0
    if k == 1:
        return np.linalg.norm(edges[:, 0, :], axis=1)
    if k == 2 and dim == 3:
        cross = np.cross(edges[:, 0, :], edges[:, 1, :])
        return 0.5 * np.linalg.norm(cross, axis=1)
    gram = np.einsum("mik,mjk->mij", edges, edges)
    det = np.linalg.det(gram)
    return np.sqrt(np.maximum(det, 0.0)) / _FACTORIAL[k]


def reference_rule(nv: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric points and weights (summing to one) on the unit simplex."""
    if order <= 1:
        return np.full((1, nv), 1.0 / nv), np.array([1.0])
    if order == 2:
        if nv == 2:
            g = math.sqrt(3.0) / 6.0
            pts = np.array([[0.5 + g, 0.5 - g], [0.5 - g, 0.5 + g]])
            return pts, np.array([0.5, 0.5])
        if nv == 3:
            pts = np.array(
                [
                    [2 / 3, 1 / 6, 1 / 6],
                    [1 / 6, 2 / 3, 1 / 6],
                    [1 / 6, 1 / 6, 2 / 3],
                ]
            )
            return pts, np.full(3, 1 / 3)
        if nv == 4:
            a = 0.5854101966249685
            b = 0.1381966011250105
            pts = np.full((4, 4), b)
            np.fill_diagonal(pts, a)
            return pts, np.full(4, 0.25)
    raise ValueError(f"unsupported reference rule: nv={nv}, order={order}")


def map_rule(
    simplices: np.ndarray, bary: np.ndarray, wref: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Map a reference rule onto each simplex of a batch.

    Returns points (M, nq, dim) and weights (M, nq); weights already include
    the simplex measures.
    """
    pts = np.einsum("qv,mvd->mqd", bary, simplices)
    w = simplex_measure(simplices)[:, None] * wref[None, :]
    return pts, w


def subdivide(simplices: np.ndarray, return_midpoints: bool = False):
    """Red refinement of every simplex: (M, nv, dim) -> (M, 2^(nv-1), nv, dim).

    With ``return_midpoints`` the edge midpoints (M, n_edges, dim) come along,
    which lets callers evaluate fields at the new nodes only.
    """
    m, nv, dim = simplices.shape
    edges = EDGES[nv]
    mids = 0.5 * (simplices[:, [e[0] for e in edges], :] + simplices[:, [e[1] for e in edges], :])
    nodes = np.concatenate([simplices, mids], axis=1)
    tmpl = np.array(CHILD_TEMPLATES[nv])
    children = nodes[:, tmpl, :]
    if return_midpoints:
        return children, mids
    return children


def subdivision_lattice(nv: int, depth: int) -> np.ndarray:
    """Barycentric coordinates of the uniform depth-level subdivision lattice.

    Depth 0 yields the vertices only.
    """
    n = 1 << depth
    combos = itertools.combinations(range(n + nv - 1), nv - 1)
    pts = []
    for cut in combos:
        prev = -1
        comp = []
        for c in cut:
            comp.append(c - prev - 1)
            prev = c
        comp.append(n + nv - 2 - prev)
        pts.append(comp)
    return np.asarray(pts, dtype=float) / n


# ---------------------------------------------------------------------------
# slicing by the vertex-interpolated level set


def _canonical_templates(nv: int, nneg: int):
    """Volume/surface piece recipes for the canonical sign pattern.

    Tokens are ('v', i) for vertex slots and ('e', i, j) for the intersection
    point on the edge between negative slot i and positive slot j.  Surface
    triangulations match the volume decompositions so the sliced pieces form a
    closed polytope and the discrete divergence identity holds exactly.
    """
    v = lambda i: ("v", i)
    e = lambda i, j: ("e", i, j)
    if nv == 2:
        if nneg == 1:
            return [(v(0), e(0, 1))], []
    if nv == 3:
        if nneg == 1:
            return [(v(0), e(0, 1), e(0, 2))], [(e(0, 1), e(0, 2))]
        if nneg == 2:
            return (
                [(v(0), v(1), e(1, 2)), (v(0), e(1, 2), e(0, 2))],
                [(e(0, 2), e(1, 2))],
            )
    if nv == 4:
        if nneg == 1:
            return [(v(0), e(0, 1), e(0, 2), e(0, 3))], [(e(0, 1), e(0, 2), e(0, 3))]
        if nneg == 2:
            return (
                [
                    (v(0), e(0, 2), e(0, 3), v(1)),
                    (e(0, 2), e(0, 3), v(1), e(1, 2)),
                    (e(0, 3), v(1), e(1, 2), e(1, 3)),
                ],
                [(e(0, 2), e(1, 2), e(0, 3)), (e(1, 2), e(1, 3), e(0, 3))],
            )
        if nneg == 3:
            return (
                [
                    (v(0), v(1), v(2), e(0, 3)),
                    (v(1), v(2), e(0, 3), e(1, 3)),
                    (v(2), e(0, 3), e(1, 3), e(2, 3)),
                ],
                [(e(0, 3), e(1, 3), e(2, 3))],
            )
    raise ValueError(f"no slicing template for nv={nv}, nneg={nneg}")


def _resolve_tokens(tokens, perm, verts, vals):
    """Coordinates for a tuple of template tokens under a slot permutation."""
    cols = []
    for tok in tokens:
        if tok[0] == "v":
            cols.append(verts[:, perm[tok[1]], :])
        else:
            i, j = perm[tok[1]], perm[tok[2]]
            a = vals[:, i][:, None]
            b = vals[:, j][:, None]
            t = a / (a - b)
            cols.append(verts[:, i, :] + t * (verts[:, j, :] - verts[:, i, :]))
    return np.stack(cols, axis=1)


def slice_negative(
    simplices: np.ndarray, values: np.ndarray, want_surface: bool = False
):
    """Split each simplex by the linear interpolant of its vertex values.

    Returns (vol_simplices, vol_parent, surf_simplices, surf_parent) where the
    volume pieces tile {interpolant < 0} and the surface pieces triangulate
    {interpolant = 0}.  Vertex values within SIGN_TOL of zero are treated as
    positive, which keeps zero-faces (e.g. a boundary lying exactly on a mesh
    plane) attached to the negative side exactly once.
    """
    simplices = np.asarray(simplices, dtype=float)
    values = np.asarray(values, dtype=float)
    m, nv, dim = simplices.shape
    vals = np.where(values > -SIGN_TOL, np.maximum(values, SIGN_TOL), values)
    neg = vals < 0.0
    code = np.zeros(m, dtype=np.int64)
    for i in range(nv):
        code |= neg[:, i].astype(np.int64) << i

    vol_parts, vol_parents = [], []
    surf_parts, surf_parents = [], []
    idx_all = np.arange(m)
    for c in np.unique(code):
        sel = idx_all[code == c]
        neg_slots = [i for i in range(nv) if (c >> i) & 1]
        nneg = len(neg_slots)
        if nneg == 0:
            continue
        if nneg == nv:
            vol_parts.append(simplices[sel])
            vol_parents.append(sel)
            continue
        pos_slots = [i for i in range(nv) if not (c >> i) & 1]
        perm = neg_slots + pos_slots  # canonical slot -> actual vertex
        vol_t, surf_t = _canonical_templates(nv, nneg)
        vv, ww = simplices[sel], vals[sel]
        for tokens in vol_t:
            vol_parts.append(_resolve_tokens(tokens, perm, vv, ww))
            vol_parents.append(sel)
        if want_surface:
            for tokens in surf_t:
                surf_parts.append(_resolve_tokens(tokens, perm, vv, ww))
                surf_parents.append(sel)

    def _cat(parts, parents, pieces_nv):
        if not parts:
            return np.zeros((0, pieces_nv, dim)), np.zeros(0, dtype=np.int64)
        return np.concatenate(parts), np.concatenate(parents)

    vol, vol_par = _cat(vol_parts, vol_parents, nv)
    surf, surf_par = _cat(surf_parts, surf_parents, nv - 1)
    return vol, vol_par, surf, surf_par


def facet_normals(facets: np.ndarray) -> np.ndarray:
    """Unit normals of (dim-1)-simplices embedded in R^dim (sign arbitrary)."""
    facets = np.asarray(facets, dtype=float)
    m, nv, dim = facets.shape
    if nv != dim:
        raise ValueError("normals need codimension-one simplices")
    if dim == 2:
        t = facets[:, 1, :] - facets[:, 0, :]
        n = np.stack([t[:, 1], -t[:, 0]], axis=1)
    elif dim == 3:
        e1 = facets[:, 1, :] - facets[:, 0, :]
        e2 = facets[:, 2, :] - facets[:, 0, :]
        n = np.cross(e1, e2)
    else:
        raise ValueError(f"unsupported ambient dimension {dim}")
    length = np.linalg.norm(n, axis=1, keepdims=True)
    length[length == 0.0] = 1.0
    return n / length
