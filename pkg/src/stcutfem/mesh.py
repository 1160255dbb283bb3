"""Structured simplicial meshes of the space-time box and their connectivity.

The box Omega x (0, T) is triangulated on a Cartesian grid: every rectangle is
split into two triangles along the low-to-high diagonal, every cuboid into six
tetrahedra (Kuhn split along the main diagonal).  Both splits conform across
neighbouring cells and reproduce themselves under uniform red refinement, so a
refined structured mesh is again the structured mesh of the halved grid.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import refquad
from .errors import MeshError, NonConformingMeshError

# boundary face tags
INTERIOR = 0
T0 = 1
TT = 2
LATERAL = 3

TAG_NAMES = {INTERIOR: "interior", T0: "t0", TT: "tT", LATERAL: "lateral"}

# octahedron diagonals in preference order for ties (shortest wins); each
# diagonal connects the midpoints of one opposite-edge pair of the parent
_DIAGONALS = [(5, 8), (6, 7), (4, 9)]
# EDGES[4][k] belongs to the opposite-edge pair of _DIAGONALS[_EDGE_TO_DIAG[k]]
_EDGE_TO_DIAG = np.array([2, 0, 1, 1, 0, 2])


@dataclass(frozen=True)
class SpaceTimeBox:
    """Axis-aligned background box: spatial extent plus final time."""

    spatial_lo: tuple[float, ...]
    spatial_hi: tuple[float, ...]
    t_final: float

    def __post_init__(self):
        if len(self.spatial_lo) != len(self.spatial_hi):
            raise MeshError("spatial_lo and spatial_hi must have equal length")
        if any(lo >= hi for lo, hi in zip(self.spatial_lo, self.spatial_hi)):
            raise MeshError("box must have positive spatial extent")
        if self.t_final <= 0:
            raise MeshError("t_final must be positive")

    @property
    def dim(self) -> int:
        return len(self.spatial_lo) + 1

    @property
    def lo(self) -> np.ndarray:
        return np.array(list(self.spatial_lo) + [0.0])

    @property
    def hi(self) -> np.ndarray:
        return np.array(list(self.spatial_hi) + [self.t_final])


@dataclass
class MeshSizes:
    h_K: np.ndarray
    h: float


@dataclass
class FaceData:
    """Faces with adjacency, unit normals and boundary tags.

    For an interior face the normal points from ``elems[f, 0]`` into
    ``elems[f, 1]``; jumps follow [w] = w+ - w- with w+ on the side the normal
    points into.  Boundary normals point out of the box.
    """

    vertices: np.ndarray  # (F, dim) vertex ids
    elems: np.ndarray  # (F, 2), second entry -1 on the boundary
    normals: np.ndarray  # (F, dim) unit vectors
    tags: np.ndarray  # (F,) INTERIOR / T0 / TT / LATERAL
    measures: np.ndarray  # (F,)


class BackgroundMesh:
    """Conforming simplicial mesh of the space-time box.

    Vertices carry coordinates (x..., t); elements are (dim+1)-tuples of vertex
    ids with positive orientation.  The mesh is immutable after construction
    and safe to share across threads for read-only queries.
    """

    def __init__(self, vertices, elements, box: SpaceTimeBox | None = None,
                 n_cells=None, h_grid: float | None = None):
        self.vertices = np.asarray(vertices, dtype=float)
        self.elements = np.asarray(elements, dtype=np.int64)
        self.dim = self.vertices.shape[1]
        if self.dim not in (2, 3):
            raise MeshError(f"space-time dimension must be 2 or 3, got {self.dim}")
        if self.elements.shape[1] != self.dim + 1:
            raise MeshError("element arity does not match the mesh dimension")
        self.box = box
        self.n_cells = None if n_cells is None else tuple(int(n) for n in n_cells)
        self.h_grid = h_grid
        self._fix_orientation()
        self.sizes = self._compute_sizes()
        self.faces = face_connectivity(self)

    # -- construction helpers -------------------------------------------------

    def _fix_orientation(self):
        coords = self.vertices[self.elements]
        edges = coords[:, 1:, :] - coords[:, :1, :]
        det = np.linalg.det(edges)
        if np.any(det == 0.0):
            raise MeshError("degenerate element (zero volume)")
        flip = det < 0.0
        if np.any(flip):
            els = self.elements.copy()
            els[flip, -2], els[flip, -1] = (
                self.elements[flip, -1],
                self.elements[flip, -2],
            )
            self.elements = els

    def _compute_sizes(self) -> MeshSizes:
        coords = self.vertices[self.elements]
        nv = coords.shape[1]
        h_K = np.zeros(len(self.elements))
        for i, j in itertools.combinations(range(nv), 2):
            d = np.linalg.norm(coords[:, i, :] - coords[:, j, :], axis=1)
            np.maximum(h_K, d, out=h_K)
        return MeshSizes(h_K=h_K, h=float(h_K.max()))

    # -- queries ---------------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def element_coords(self, idx=None) -> np.ndarray:
        if idx is None:
            return self.vertices[self.elements]
        return self.vertices[self.elements[idx]]

    def element_volumes(self) -> np.ndarray:
        return refquad.simplex_measure(self.vertices[self.elements])

    def bounding_box(self) -> SpaceTimeBox:
        if self.box is not None:
            return self.box
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return SpaceTimeBox(tuple(lo[:-1]), tuple(hi[:-1]), float(hi[-1] - lo[-1]))

    def boundary_faces(self, tag: int) -> np.ndarray:
        return np.nonzero(self.faces.tags == tag)[0]

    def dump_vtk(self, path, point_data=None) -> None:
        from .vtk import write_vtk

        write_vtk(path, self.vertices, self.elements, point_data=point_data)


def build_cartesian_simplicial_mesh(box: SpaceTimeBox, n_cells) -> BackgroundMesh:
    """Triangulate the box on an n_cells Cartesian grid.

    2D: two triangles per rectangle along a fixed diagonal.  3D: six Kuhn
    tetrahedra per cuboid, conforming across cells.  Vertex coordinates are
    exact grid points; deduplication happens on integer grid indices.
    """
    n_cells = [int(n) for n in n_cells]
    dim = box.dim
    if len(n_cells) != dim:
        raise MeshError(f"need {dim} cell counts, got {len(n_cells)}")
    if any(n < 1 for n in n_cells):
        raise MeshError("cell counts must be positive")

    axes = [np.linspace(box.lo[k], box.hi[k], n_cells[k] + 1) for k in range(dim)]
    grids = np.meshgrid(*axes, indexing="ij")
    vertices = np.stack([g.ravel() for g in grids], axis=1)

    shape = tuple(n + 1 for n in n_cells)
    vid = np.arange(np.prod(shape)).reshape(shape)

    if dim == 2:
        nx, nt = n_cells
        i, j = np.meshgrid(np.arange(nx), np.arange(nt), indexing="ij")
        v00 = vid[i, j].ravel()
        v10 = vid[i + 1, j].ravel()
        v01 = vid[i, j + 1].ravel()
        v11 = vid[i + 1, j + 1].ravel()
        tris = np.empty((2 * nx * nt, 3), dtype=np.int64)
        tris[0::2] = np.stack([v00, v10, v11], axis=1)
        tris[1::2] = np.stack([v00, v11, v01], axis=1)
        elements = tris
    else:
        n0, n1, n2 = n_cells
        i, j, k = np.meshgrid(np.arange(n0), np.arange(n1), np.arange(n2), indexing="ij")
        base = np.stack([i.ravel(), j.ravel(), k.ravel()], axis=1)
        cells = len(base)
        elements = np.empty((6 * cells, 4), dtype=np.int64)
        for p, perm in enumerate(itertools.permutations(range(3))):
            idx = base.copy()
            corners = [idx.copy()]
            for ax in perm:
                idx = idx.copy()
                idx[:, ax] += 1
                corners.append(idx)
            ids = [vid[c[:, 0], c[:, 1], c[:, 2]] for c in corners]
            elements[p::6] = np.stack(ids, axis=1)

    spacing = max((box.hi[k] - box.lo[k]) / n_cells[k] for k in range(dim))
    return BackgroundMesh(vertices, elements, box=box, n_cells=n_cells, h_grid=spacing)


def uniform_refine(mesh: BackgroundMesh) -> BackgroundMesh:
    """Red refinement: triangles 1->4, tetrahedra 1->8 via edge midpoints.

    The interior octahedron of a tetrahedron is split along its shortest
    diagonal (deterministic tie-break), which keeps the Kuhn family
    self-similar, so h halves exactly on the structured meshes.
    """
    elements = mesh.elements
    nv = elements.shape[1]
    edges = refquad.EDGES[nv]

    pairs = np.concatenate([np.sort(elements[:, list(e)], axis=1) for e in edges])
    uniq, inv = np.unique(pairs, axis=0, return_inverse=True)
    mid_coords = 0.5 * (mesh.vertices[uniq[:, 0]] + mesh.vertices[uniq[:, 1]])
    new_vertices = np.concatenate([mesh.vertices, mid_coords])

    m = len(elements)
    mid_ids = inv.reshape(len(edges), m).T + mesh.n_vertices
    nodes = np.concatenate([elements, mid_ids], axis=1)  # (m, nv + n_edges)

    if nv == 3:
        tmpl = np.array(refquad.CHILD_TEMPLATES[3])
        children = nodes[:, tmpl].reshape(-1, 3)
    else:
        children = np.empty((m, 8, 4), dtype=np.int64)
        corners = np.array(refquad.CHILD_TEMPLATES[4][:4])
        children[:, :4, :] = nodes[:, corners]
        coords = new_vertices[nodes]
        # the diagonal through the midpoint of the longest parent edge breaks
        # shape self-similarity: rule it out, then take the shortest remaining
        elem_coords = mesh.vertices[elements]
        edge_len = np.stack(
            [
                np.linalg.norm(elem_coords[:, i] - elem_coords[:, j], axis=1)
                for (i, j) in edges
            ],
            axis=1,
        )
        excluded = _EDGE_TO_DIAG[np.argmax(edge_len, axis=1)]
        diag_len = np.stack(
            [
                np.linalg.norm(coords[:, d[0]] - coords[:, d[1]], axis=1)
                for d in _DIAGONALS
            ],
            axis=1,
        )
        diag_len[np.arange(m), excluded] = np.inf
        choice = np.argmin(diag_len, axis=1)  # first minimum wins the tie
        for c, diag in enumerate(_DIAGONALS):
            sel = choice == c
            if not np.any(sel):
                continue
            tmpl = np.array(refquad.OCTAHEDRON_SPLITS[diag])
            children[sel, 4:, :] = nodes[np.nonzero(sel)[0][:, None, None], tmpl[None, :, :]]
        children = children.reshape(-1, 4)

    n_cells = None if mesh.n_cells is None else tuple(2 * n for n in mesh.n_cells)
    h_grid = None if mesh.h_grid is None else 0.5 * mesh.h_grid
    return BackgroundMesh(new_vertices, children, box=mesh.box, n_cells=n_cells, h_grid=h_grid)


def face_connectivity(mesh: BackgroundMesh) -> FaceData:
    """Collect faces with adjacency, unit normals and boundary tags.

    Raises NonConformingMeshError when a face is shared by more than two
    elements or when a single-element face does not lie on the box boundary.
    """
    elements = mesh.elements
    nv = elements.shape[1]
    m = len(elements)
    facets = []
    for drop in range(nv):
        keep = [v for v in range(nv) if v != drop]
        facets.append(np.sort(elements[:, keep], axis=1))
    all_faces = np.concatenate(facets)  # (nv*m, nv-1)
    owners = np.tile(np.arange(m), nv)

    order = np.lexsort(all_faces.T[::-1])
    sorted_faces = all_faces[order]
    sorted_owners = owners[order]
    new_face = np.any(sorted_faces != np.roll(sorted_faces, 1, axis=0), axis=1)
    new_face[0] = True
    face_id = np.cumsum(new_face) - 1
    n_faces = face_id[-1] + 1
    counts = np.bincount(face_id, minlength=n_faces)
    if counts.max() > 2:
        raise NonConformingMeshError("a face is shared by more than two elements")

    face_vertices = sorted_faces[new_face]
    elems = np.full((n_faces, 2), -1, dtype=np.int64)
    first = new_face
    elems[:, 0] = sorted_owners[first]
    second = ~new_face
    elems[face_id[second], 1] = sorted_owners[second]

    coords = mesh.vertices[face_vertices]
    normals = refquad.facet_normals(coords)
    measures = refquad.simplex_measure(coords)

    face_centroid = coords.mean(axis=1)
    elem_centroid = mesh.vertices[elements[elems[:, 0]]].mean(axis=1)
    flip = np.einsum("fd,fd->f", normals, face_centroid - elem_centroid) < 0.0
    normals[flip] *= -1.0

    box = mesh.bounding_box()
    tags = np.full(n_faces, INTERIOR, dtype=np.int8)
    boundary = elems[:, 1] < 0
    tol = 1e-12 * max(box.t_final, 1.0)
    t = coords[..., -1]
    on_t0 = np.all(np.abs(t) <= tol, axis=1)
    on_tT = np.all(np.abs(t - box.t_final) <= tol, axis=1)
    tags[boundary & on_t0] = T0
    tags[boundary & on_tT] = TT
    tags[boundary & ~on_t0 & ~on_tT] = LATERAL

    # meshes built from a declared box must have boundary faces on its sides
    lateral = np.nonzero(tags == LATERAL)[0] if mesh.box is not None else []
    if len(lateral):
        c = coords[lateral]
        on_side = np.zeros(len(lateral), dtype=bool)
        for k in range(mesh.dim - 1):
            for plane in (box.lo[k], box.hi[k]):
                scale = max(abs(box.hi[k] - box.lo[k]), 1.0)
                on_side |= np.all(np.abs(c[..., k] - plane) <= 1e-12 * scale, axis=1)
        if not np.all(on_side):
            raise NonConformingMeshError("boundary face off the box boundary (hanging node?)")

    return FaceData(face_vertices, elems, normals, tags, measures)
