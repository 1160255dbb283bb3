"""Level-set cut geometry: element classification and cut-cell quadrature.

The moving domain is the negative set of a space-time level set phi(x, t).
Cut elements are integrated by recursive red subdivision: sub-simplices that
are safely inside contribute a mapped reference rule, safely outside ones are
dropped, and at the final depth the remainder is sliced by the vertex-
interpolated level set.  Surface rules triangulate the sliced facets and carry
their unit normals (outward from the negative side); on affine level sets this
reproduces the exact boundary, and in general the volume and surface rules of
one element describe the boundary of one and the same polytope, so discrete
divergence identities hold to rounding.

Everything here is a pure function of immutable inputs and deterministic, so
results are independent of evaluation order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable

import numpy as np

from . import mesh as meshmod
from . import refquad
from .errors import DomainNotContainedError
from .refquad import SIGN_TOL

logger = logging.getLogger(__name__)

# safety factor on the vertex-value variation used to decide that a uniform
# sign at the vertices cannot hide a sign change inside
_BAND_FACTOR = 4.0

_SLIVER_REL = 1e-14

_CHUNK_ELEMS = 4096


class Label(IntEnum):
    INTERIOR = 0
    CUT = 1
    EXTERIOR = 2


@dataclass
class LevelSet:
    """Scalar field phi(x, t) with {phi < 0} the moving domain.

    ``value`` maps an (n, dim) array of space-time points to (n,) values.
    ``gradient`` (optional) maps points to (n, dim) space-time gradients;
    when absent, ``gradient_at`` falls back to central differences.
    """

    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray] | None = None

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(self.value(np.asarray(pts, dtype=float)), dtype=float)

    def gradient_at(self, pts: np.ndarray, step: float = 1e-8) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        if self.gradient is not None:
            return np.asarray(self.gradient(pts), dtype=float)
        grad = np.empty_like(pts)
        for k in range(pts.shape[1]):
            hi = pts.copy()
            lo = pts.copy()
            hi[:, k] += step
            lo[:, k] -= step
            grad[:, k] = (self(hi) - self(lo)) / (2.0 * step)
        return grad


@dataclass
class QuadratureRule:
    """Points, weights and (for surface rules) unit normals."""

    points: np.ndarray
    weights: np.ndarray
    normals: np.ndarray | None = None

    @property
    def total(self) -> float:
        return float(self.weights.sum())


@dataclass
class RuleBatch:
    """Concatenated per-element rules: elem[i] owns (points[i], weights[i])."""

    elem: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    normals: np.ndarray | None = None

    def for_element(self, e: int) -> QuadratureRule:
        sel = self.elem == e
        normals = None if self.normals is None else self.normals[sel]
        return QuadratureRule(self.points[sel], self.weights[sel], normals)


@dataclass
class MeshClassification:
    """Interior/Cut/Exterior labels plus the level set that produced them."""

    labels: np.ndarray
    depth: int
    levelset: LevelSet

    @property
    def active(self) -> np.ndarray:
        return np.nonzero(self.labels != Label.EXTERIOR)[0]

    @property
    def cut(self) -> np.ndarray:
        return np.nonzero(self.labels == Label.CUT)[0]

    @property
    def interior(self) -> np.ndarray:
        return np.nonzero(self.labels == Label.INTERIOR)[0]


# ---------------------------------------------------------------------------
# classification


def _label_from_samples(values: np.ndarray) -> Label:
    if np.all(values < -SIGN_TOL):
        return Label.INTERIOR
    if np.all(values > SIGN_TOL):
        return Label.EXTERIOR
    return Label.CUT


def classify_element(simplex, levelset: LevelSet, depth: int) -> Label:
    """Label one simplex by sampling phi on its depth-level subdivision lattice."""
    if depth < 0:
        raise ValueError("depth must be non-negative")
    simplex = np.asarray(simplex, dtype=float)
    bary = refquad.subdivision_lattice(simplex.shape[0], depth)
    pts = bary @ simplex
    return _label_from_samples(levelset(pts))


def classify_mesh(mesh: meshmod.BackgroundMesh, levelset: LevelSet, depth: int) -> MeshClassification:
    """Label every element of the mesh.

    Vertex signs decide most elements; elements with a uniform vertex sign are
    rescanned on the full subdivision lattice only when their smallest vertex
    magnitude is within _BAND_FACTOR times the vertex variation, i.e. when a
    smooth level set could possibly change sign inside.
    """
    phi_v = levelset(mesh.vertices)
    vals = phi_v[mesh.elements]
    vmin = vals.min(axis=1)
    vmax = vals.max(axis=1)

    labels = np.full(mesh.n_elements, Label.CUT, dtype=np.int8)
    all_neg = vmax < -SIGN_TOL
    all_pos = vmin > SIGN_TOL
    labels[all_neg] = Label.INTERIOR
    labels[all_pos] = Label.EXTERIOR

    if depth > 0:
        var = vmax - vmin
        margin = _BAND_FACTOR * np.maximum(var, SIGN_TOL)
        suspect = (all_neg & (vmax > -margin)) | (all_pos & (vmin < margin))
        idx = np.nonzero(suspect)[0]
        if len(idx):
            nv = mesh.elements.shape[1]
            bary = refquad.subdivision_lattice(nv, depth)
            for lo in range(0, len(idx), _CHUNK_ELEMS):
                sel = idx[lo : lo + _CHUNK_ELEMS]
                pts = np.einsum("lv,mvd->mld", bary, mesh.element_coords(sel))
                sample = levelset(pts.reshape(-1, mesh.dim)).reshape(len(sel), -1)
                smin = sample.min(axis=1)
                smax = sample.max(axis=1)
                flip = np.where(
                    labels[sel] == Label.INTERIOR, smax >= -SIGN_TOL, smin <= SIGN_TOL
                )
                labels[sel[flip]] = Label.CUT

    return MeshClassification(labels=labels, depth=depth, levelset=levelset)


# ---------------------------------------------------------------------------
# cut quadrature


def _emit_mapped(simplices, owners, order, out_pts, out_w, out_elem):
    if len(simplices) == 0:
        return
    nv = simplices.shape[1]
    bary, wref = refquad.reference_rule(nv, order)
    pts, w = refquad.map_rule(simplices, bary, wref)
    out_pts.append(pts.reshape(-1, simplices.shape[2]))
    out_w.append(w.reshape(-1))
    out_elem.append(np.repeat(owners, len(wref)))


def _linear_gradients(simplices: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Gradient of the vertex interpolant on full-dimensional simplices."""
    edges = simplices[:, 1:, :] - simplices[:, :1, :]
    rhs = values[:, 1:] - values[:, :1]
    return np.linalg.solve(edges, rhs[..., None])[..., 0]


def _cut_rules_chunk(
    simplices,
    owners,
    levelset,
    depth,
    order,
    want_volume,
    want_surface,
    vol_floor,
    surf_floor,
):
    """Adaptive subdivision of cut simplices; returns rule fragments."""
    vol_pts, vol_w, vol_elem = [], [], []
    surf_pts, surf_w, surf_elem, surf_n = [], [], [], []

    values = levelset(simplices.reshape(-1, simplices.shape[2])).reshape(simplices.shape[:2])
    nv = simplices.shape[1]
    tmpl = np.array(refquad.CHILD_TEMPLATES[nv])
    for _level in range(depth):
        if len(simplices) == 0:
            break
        children, mids = refquad.subdivide(simplices, return_midpoints=True)
        m, nchild, nv, dim = children.shape
        mvals = levelset(mids.reshape(-1, dim)).reshape(m, -1)
        values = np.concatenate([values, mvals], axis=1)[:, tmpl].reshape(m * nchild, nv)
        children = children.reshape(m * nchild, nv, dim)
        owners = np.repeat(owners, nchild)
        vmin = values.min(axis=1)
        vmax = values.max(axis=1)
        margin = np.maximum(vmax - vmin, SIGN_TOL)
        full = vmax < -margin
        empty = vmin > margin
        keep = ~(full | empty)
        if want_volume:
            _emit_mapped(children[full], owners[full], order, vol_pts, vol_w, vol_elem)
        simplices = children[keep]
        owners = owners[keep]
        values = values[keep]

    if len(simplices):
        vol, vol_par, surf, surf_par = refquad.slice_negative(
            simplices, values, want_surface=want_surface
        )
        if want_volume and len(vol):
            meas = refquad.simplex_measure(vol)
            ok = meas > vol_floor[owners[vol_par]]
            _emit_mapped(vol[ok], owners[vol_par[ok]], order, vol_pts, vol_w, vol_elem)
        if want_surface and len(surf):
            meas = refquad.simplex_measure(surf)
            ok = meas > surf_floor[owners[surf_par]]
            surf_sel = surf[ok]
            par_sel = surf_par[ok]
            if len(surf_sel):
                normals = refquad.facet_normals(surf_sel)
                grads = _linear_gradients(simplices[par_sel], values[par_sel])
                flip = np.einsum("sd,sd->s", normals, grads) < 0.0
                normals[flip] *= -1.0
                nv = surf_sel.shape[1]
                bary, wref = refquad.reference_rule(nv, order)
                pts, w = refquad.map_rule(surf_sel, bary, wref)
                surf_pts.append(pts.reshape(-1, pts.shape[2]))
                surf_w.append(w.reshape(-1))
                surf_elem.append(np.repeat(owners[par_sel], len(wref)))
                surf_n.append(np.repeat(normals, len(wref), axis=0))

    return (vol_pts, vol_w, vol_elem), (surf_pts, surf_w, surf_elem, surf_n)


def _concat_batch(pts, w, elem, normals=None, dim=2) -> RuleBatch:
    if not pts:
        return RuleBatch(
            np.zeros(0, dtype=np.int64),
            np.zeros((0, dim)),
            np.zeros(0),
            None if normals is None else np.zeros((0, dim)),
        )
    return RuleBatch(
        np.concatenate(elem),
        np.concatenate(pts),
        np.concatenate(w),
        None if normals is None else np.concatenate(normals),
    )


def rule_chunks(
    mesh: meshmod.BackgroundMesh,
    classification: MeshClassification,
    depth: int,
    order: int = 2,
    want_volume: bool = True,
    want_surface: bool = False,
    chunk_elems: int = _CHUNK_ELEMS,
):
    """Yield (volume, surface) RuleBatch chunks covering the active mesh.

    Memory stays bounded: interior elements come in plain chunks, cut elements
    run through the subdivision recursion a few thousand at a time.
    """
    if depth < 1:
        raise ValueError("cut rules need depth >= 1")
    levelset = classification.levelset

    if want_volume:
        interior = classification.interior
        for lo in range(0, len(interior), 8 * chunk_elems):
            sel = interior[lo : lo + 8 * chunk_elems]
            parts = ([], [], [])
            _emit_mapped(mesh.element_coords(sel), sel, order, *parts)
            yield _concat_batch(*parts, dim=mesh.dim), None

    cut = classification.cut
    if len(cut) == 0:
        return
    elem_meas = mesh.element_volumes()
    k = mesh.dim
    vol_floor = _SLIVER_REL * elem_meas
    surf_floor = _SLIVER_REL * elem_meas ** ((k - 1) / k)
    for lo in range(0, len(cut), chunk_elems):
        sel = cut[lo : lo + chunk_elems]
        vres, sres = _cut_rules_chunk(
            mesh.element_coords(sel),
            sel,
            levelset,
            depth,
            order,
            want_volume,
            want_surface,
            vol_floor,
            surf_floor,
        )
        vol = _concat_batch(*vres, dim=mesh.dim) if want_volume else None
        surf = (
            _concat_batch(sres[0], sres[1], sres[2], sres[3], dim=mesh.dim)
            if want_surface
            else None
        )
        yield vol, surf


def cut_rules(
    mesh: meshmod.BackgroundMesh,
    classification: MeshClassification,
    depth: int,
    order: int = 2,
    want_volume: bool = True,
    want_surface: bool = False,
) -> tuple[RuleBatch | None, RuleBatch | None]:
    """Volume rules on K cap {phi<0} for active elements and surface rules on
    the cut boundary pieces of cut elements, concatenated over the mesh."""
    vol_parts, surf_parts = [], []
    for vol, surf in rule_chunks(
        mesh, classification, depth, order, want_volume, want_surface
    ):
        if vol is not None:
            vol_parts.append(vol)
        if surf is not None:
            surf_parts.append(surf)

    def _merge(parts, with_normals):
        if not parts:
            return RuleBatch(
                np.zeros(0, dtype=np.int64),
                np.zeros((0, mesh.dim)),
                np.zeros(0),
                np.zeros((0, mesh.dim)) if with_normals else None,
            )
        return RuleBatch(
            np.concatenate([p.elem for p in parts]),
            np.concatenate([p.points for p in parts]),
            np.concatenate([p.weights for p in parts]),
            np.concatenate([p.normals for p in parts]) if with_normals else None,
        )

    vol = _merge(vol_parts, False) if want_volume else None
    surf = _merge(surf_parts, True) if want_surface else None
    if want_surface and surf is not None and len(surf.weights) == 0 and len(classification.cut):
        logger.debug("no boundary intersection found at depth %d", depth)
    return vol, surf


def facet_rules(
    mesh: meshmod.BackgroundMesh,
    classification: MeshClassification,
    tag: int,
    depth: int,
    order: int = 2,
) -> RuleBatch:
    """Cut rules on the t=0 or t=T boundary facets of active elements.

    Weights approximate the spatial measure of facet cap {phi(., t*) < 0};
    the owning element id is the single adjacent element of each facet.
    """
    faces = mesh.faces
    sel = np.nonzero(faces.tags == tag)[0]
    owners = faces.elems[sel, 0]
    active = classification.labels[owners] != Label.EXTERIOR
    sel, owners = sel[active], owners[active]
    if len(sel) == 0:
        return RuleBatch(np.zeros(0, dtype=np.int64), np.zeros((0, mesh.dim)), np.zeros(0))

    simplices = mesh.vertices[faces.vertices[sel]]
    levelset = classification.levelset
    meas = faces.measures[sel]
    floors = _SLIVER_REL * meas

    pts_out, w_out, elem_out = [], [], []
    values = levelset(simplices.reshape(-1, mesh.dim)).reshape(len(sel), -1)
    owners_cur, simp_cur, val_cur = owners, simplices, values
    floor_cur = floors
    tmpl = np.array(refquad.CHILD_TEMPLATES[simplices.shape[1]])
    for _level in range(depth):
        if len(simp_cur) == 0:
            break
        vmin = val_cur.min(axis=1)
        vmax = val_cur.max(axis=1)
        margin = np.maximum(vmax - vmin, SIGN_TOL)
        full = vmax < -margin
        empty = vmin > margin
        keep = ~(full | empty)
        _emit_mapped(simp_cur[full], owners_cur[full], order, pts_out, w_out, elem_out)
        children, mids = refquad.subdivide(simp_cur[keep], return_midpoints=True)
        m, nchild, nv, dim = children.shape
        mvals = levelset(mids.reshape(-1, dim)).reshape(m, -1)
        val_cur = np.concatenate([val_cur[keep], mvals], axis=1)[:, tmpl].reshape(m * nchild, nv)
        simp_cur = children.reshape(m * nchild, nv, dim)
        owners_cur = np.repeat(owners_cur[keep], nchild)
        floor_cur = np.repeat(floor_cur[keep], nchild)

    if len(simp_cur):
        vol, vol_par, _, _ = refquad.slice_negative(simp_cur, val_cur)
        if len(vol):
            meas_p = refquad.simplex_measure(vol)
            ok = meas_p > floor_cur[vol_par]
            _emit_mapped(vol[ok], owners_cur[vol_par[ok]], order, pts_out, w_out, elem_out)

    return _concat_batch(pts_out, w_out, elem_out, dim=mesh.dim)


# ---------------------------------------------------------------------------
# single-simplex front end (handy for tests and diagnostics)


def _single(simplex) -> np.ndarray:
    return np.asarray(simplex, dtype=float)


def cut_volume_rule(simplex, levelset: LevelSet, depth: int, base_rule_order: int = 2) -> QuadratureRule:
    """Quadrature over simplex cap {phi < 0}; empty for exterior simplices."""
    simplex = _single(simplex)
    label = classify_element(simplex, levelset, max(depth, 0))
    dim = simplex.shape[1]
    if label == Label.EXTERIOR:
        return QuadratureRule(np.zeros((0, dim)), np.zeros(0))
    if label == Label.INTERIOR:
        bary, wref = refquad.reference_rule(simplex.shape[0], base_rule_order)
        pts, w = refquad.map_rule(simplex[None], bary, wref)
        return QuadratureRule(pts[0], w[0])
    if depth < 1:
        raise ValueError("cut simplices need depth >= 1")
    meas = refquad.simplex_measure(simplex[None])
    vres, _ = _cut_rules_chunk(
        simplex[None],
        np.zeros(1, dtype=np.int64),
        levelset,
        depth,
        base_rule_order,
        True,
        False,
        _SLIVER_REL * meas,
        _SLIVER_REL * meas,
    )
    batch = _concat_batch(vres[0], vres[1], vres[2], dim=dim)
    return QuadratureRule(batch.points, batch.weights)


def cut_surface_rule(simplex, levelset: LevelSet, depth: int, base_rule_order: int = 2) -> QuadratureRule:
    """Quadrature with outward unit normals over simplex cap {phi = 0}."""
    simplex = _single(simplex)
    if depth < 1:
        raise ValueError("cut simplices need depth >= 1")
    dim = simplex.shape[1]
    meas = refquad.simplex_measure(simplex[None])
    k = simplex.shape[0] - 1
    _, sres = _cut_rules_chunk(
        simplex[None],
        np.zeros(1, dtype=np.int64),
        levelset,
        depth,
        base_rule_order,
        False,
        True,
        _SLIVER_REL * meas,
        _SLIVER_REL * meas ** ((k - 1) / k),
    )
    batch = _concat_batch(sres[0], sres[1], sres[2], sres[3], dim=dim)
    if len(batch.weights) == 0:
        logger.debug("surface rule: no intersection found at depth %d", depth)
    return QuadratureRule(batch.points, batch.weights, batch.normals)


def boundary_facet_cut_rule(
    facet, levelset: LevelSet, which: str, depth: int, base_rule_order: int = 2
) -> QuadratureRule:
    """Cut rule over a t=0 / t=T boundary facet (spatial measure)."""
    facet = _single(facet)
    t = facet[:, -1]
    if not np.allclose(t, t[0], atol=1e-10 * max(1.0, abs(t[0]))):
        raise ValueError("facet must lie in a constant-time plane")
    if which not in ("T0", "TT"):
        raise ValueError("which must be 'T0' or 'TT'")
    dim = facet.shape[1]
    meas = refquad.simplex_measure(facet[None])
    vres, _ = _cut_rules_chunk(
        facet[None],
        np.zeros(1, dtype=np.int64),
        levelset,
        depth,
        base_rule_order,
        True,
        False,
        _SLIVER_REL * meas,
        _SLIVER_REL * meas,
    )
    batch = _concat_batch(vres[0], vres[1], vres[2], dim=dim)
    return QuadratureRule(batch.points, batch.weights)


# ---------------------------------------------------------------------------
# ghost faces, containment, connectivity


def ghost_face_set(mesh: meshmod.BackgroundMesh, classification: MeshClassification) -> np.ndarray:
    """Interior faces between active elements, at least one cut, meeting the
    closed domain {phi <= 0} (sampled on the face subdivision lattice)."""
    faces = mesh.faces
    labels = classification.labels
    interior = faces.elems[:, 1] >= 0
    l0 = labels[faces.elems[:, 0]]
    l1 = labels[np.where(interior, faces.elems[:, 1], 0)]
    candidate = (
        interior
        & (l0 != Label.EXTERIOR)
        & (l1 != Label.EXTERIOR)
        & ((l0 == Label.CUT) | (l1 == Label.CUT))
    )
    idx = np.nonzero(candidate)[0]
    if len(idx) == 0:
        return idx

    bary = refquad.subdivision_lattice(mesh.dim, classification.depth)
    meets = np.zeros(len(idx), dtype=bool)
    for lo in range(0, len(idx), _CHUNK_ELEMS):
        sel = idx[lo : lo + _CHUNK_ELEMS]
        coords = mesh.vertices[faces.vertices[sel]]
        pts = np.einsum("lv,mvd->mld", bary, coords)
        vals = classification.levelset(pts.reshape(-1, mesh.dim)).reshape(len(sel), -1)
        meets[lo : lo + len(sel)] = vals.min(axis=1) <= SIGN_TOL
    return idx[meets]


def check_domain_contained(mesh: meshmod.BackgroundMesh, classification: MeshClassification) -> None:
    """Raise when {phi < 0} reaches the lateral boundary of the box."""
    faces = mesh.faces
    sel = np.nonzero(faces.tags == meshmod.LATERAL)[0]
    if len(sel) == 0:
        return
    owners = faces.elems[sel, 0]
    sel = sel[classification.labels[owners] != Label.EXTERIOR]
    if len(sel) == 0:
        return
    bary = refquad.subdivision_lattice(mesh.dim, max(classification.depth, 1))
    for lo in range(0, len(sel), _CHUNK_ELEMS):
        chunk = sel[lo : lo + _CHUNK_ELEMS]
        coords = mesh.vertices[faces.vertices[chunk]]
        pts = np.einsum("lv,mvd->mld", bary, coords)
        vals = classification.levelset(pts.reshape(-1, mesh.dim))
        if vals.min() < -1e-12:
            raise DomainNotContainedError(
                "level set is negative on the lateral box boundary; enlarge the box"
            )


def check_cut_connectivity(mesh: meshmod.BackgroundMesh, classification: MeshClassification):
    """Every cut element should reach an interior element through active faces.

    Returns (ok, max_path_length); logs a geometry-resolution warning when a
    cut element is isolated from the interior mesh.
    """
    labels = classification.labels
    faces = mesh.faces
    interior_faces = faces.elems[:, 1] >= 0
    e0, e1 = faces.elems[interior_faces, 0], faces.elems[interior_faces, 1]
    both_active = (labels[e0] != Label.EXTERIOR) & (labels[e1] != Label.EXTERIOR)
    e0, e1 = e0[both_active], e1[both_active]

    dist = np.full(mesh.n_elements, -1, dtype=np.int64)
    dist[labels == Label.INTERIOR] = 0
    frontier = labels == Label.INTERIOR
    steps = 0
    while np.any(frontier):
        reach = np.zeros(mesh.n_elements, dtype=bool)
        hit0 = frontier[e1] & (dist[e0] < 0)
        hit1 = frontier[e0] & (dist[e1] < 0)
        reach[e0[hit0]] = True
        reach[e1[hit1]] = True
        if not np.any(reach):
            break
        steps += 1
        dist[reach] = steps
        frontier = reach

    cut = classification.cut
    unreachable = cut[dist[cut] < 0]
    ok = len(unreachable) == 0
    if not ok:
        logger.warning(
            "%d cut elements are not face-connected to the interior mesh; "
            "the mesh may be too coarse for this geometry",
            len(unreachable),
        )
    max_path = int(dist[cut].max()) if len(cut) and ok else 0
    return ok, max_path


def dump_rule_csv(rule: QuadratureRule, path) -> None:
    """Debug dump: one row per point (coords, weight, normal components)."""
    dim = rule.points.shape[1] if len(rule.points) else 0
    header = [f"x{k}" for k in range(dim)] + ["weight"]
    if rule.normals is not None:
        header += [f"n{k}" for k in range(dim)]
    rows = [",".join(header)]
    for q in range(len(rule.weights)):
        cells = [f"{c:.16e}" for c in rule.points[q]] + [f"{rule.weights[q]:.16e}"]
        if rule.normals is not None:
            cells += [f"{c:.16e}" for c in rule.normals[q]]
        rows.append(",".join(cells))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(rows) + "\n")
