"""P1 finite elements on the active mesh and assembly of the discrete system.

The bilinear form combines the time-advection and diffusion volume terms, the
symmetric Nitsche boundary terms with penalty gamma/h, the initial-trace mass
term, a residual SUPG term weighted by delta*h^2, and the face-based ghost
penalty gamma1*h on gradient jumps.  All scalings use the global mesh size
h = max element diameter.  Assembly is deterministic: triplets are sorted by
(row, col) before compression, so identical inputs give identical matrices.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import geometry, mesh as meshmod
from .errors import EmptyActiveMeshError, SingularMatrixError
from .geometry import LevelSet, MeshClassification, RuleBatch

logger = logging.getLogger(__name__)

DEFAULT_DEPTH = 4


@dataclass
class ProblemSpec:
    """Data of one moving-domain parabolic problem.

    All callables are vectorized over (n, d+1) arrays of space-time points;
    spatial gradients return (n, d) arrays.  ``dirichlet`` is the boundary
    value on the moving boundary, ``initial`` the value at t = 0.  The exact
    solution (when known) enables error norms.
    """

    levelset: LevelSet
    diffusion: Callable
    diffusion_spatial_gradient: Callable
    source: Callable
    dirichlet: Callable
    initial: Callable
    box: meshmod.SpaceTimeBox
    gamma: float
    gamma1: float
    delta: float
    exact_solution: Callable | None = None
    exact_spatial_gradient: Callable | None = None
    name: str = ""

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.gamma1 < 0 or self.delta < 0:
            raise ValueError("gamma1 and delta must be non-negative")

    @property
    def d(self) -> int:
        return self.box.dim - 1


@dataclass
class FeSpace:
    """Dof bookkeeping: one dof per active vertex, constant basis gradients."""

    mesh: meshmod.BackgroundMesh
    classification: MeshClassification
    dofs: np.ndarray  # dof -> vertex id (sorted)
    vertex_to_dof: np.ndarray  # vertex id -> dof or -1
    active_elems: np.ndarray  # active element ids (sorted)
    elem_pos: np.ndarray  # element id -> position in active_elems or -1
    elem_dofs: np.ndarray  # (E_act, nv)
    grads: np.ndarray  # (E_act, nv, dim) space-time gradients of the basis
    coeff0: np.ndarray  # (E_act, nv) affine offsets: lambda_i(x) = c0 + g.x
    volumes: np.ndarray  # (E_act,) full element volumes

    @property
    def n_dofs(self) -> int:
        return len(self.dofs)

    def basis_at(self, pos: np.ndarray, pts: np.ndarray) -> np.ndarray:
        """Values of all element basis functions at points inside them."""
        return self.coeff0[pos] + np.einsum("qd,qid->qi", pts, self.grads[pos])


def build_fe_space(mesh: meshmod.BackgroundMesh, classification: MeshClassification) -> FeSpace:
    """Collect dofs of active vertices and per-element affine basis data."""
    active = classification.active
    if len(active) == 0:
        raise EmptyActiveMeshError("no element intersects the moving domain")
    elems = mesh.elements[active]
    dofs = np.unique(elems)
    vertex_to_dof = np.full(mesh.n_vertices, -1, dtype=np.int64)
    vertex_to_dof[dofs] = np.arange(len(dofs))

    coords = mesh.vertices[elems]
    nv = coords.shape[1]
    mats = np.concatenate([np.ones((len(elems), nv, 1)), coords], axis=2)
    inv = np.linalg.inv(mats)
    grads = inv[:, 1:, :].transpose(0, 2, 1).copy()
    coeff0 = inv[:, 0, :].copy()

    elem_pos = np.full(mesh.n_elements, -1, dtype=np.int64)
    elem_pos[active] = np.arange(len(active))

    from . import refquad

    volumes = refquad.simplex_measure(coords)
    return FeSpace(
        mesh=mesh,
        classification=classification,
        dofs=dofs,
        vertex_to_dof=vertex_to_dof,
        active_elems=active,
        elem_pos=elem_pos,
        elem_dofs=vertex_to_dof[elems],
        grads=grads,
        coeff0=coeff0,
        volumes=volumes,
    )


@dataclass
class LinearSystem:
    """Sparse nonsymmetric system over active-vertex dofs."""

    A: sp.csr_matrix
    b: np.ndarray

    @property
    def n(self) -> int:
        return self.A.shape[0]


def triplets_to_csr(rows, cols, vals, n: int) -> sp.csr_matrix:
    """Deterministic COO -> CSR: sort by (row, col), sum duplicates in order."""
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    if len(rows) == 0:
        return sp.csr_matrix((n, n))
    new = np.empty(len(rows), dtype=bool)
    new[0] = True
    new[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
    starts = np.nonzero(new)[0]
    summed = np.add.reduceat(vals, starts)
    a = sp.csr_matrix((summed, (rows[starts], cols[starts])), shape=(n, n))
    a.sort_indices()
    return a


def _local_to_triplets(space: FeSpace, loc: np.ndarray, elems_pos=None):
    dofs = space.elem_dofs if elems_pos is None else space.elem_dofs[elems_pos]
    nv = dofs.shape[1]
    rows = np.broadcast_to(dofs[:, :, None], loc.shape).ravel()
    cols = np.broadcast_to(dofs[:, None, :], loc.shape).ravel()
    return rows, cols, loc.ravel()


def _iter_chunks(rules):
    if rules is None:
        return
    if isinstance(rules, RuleBatch):
        yield rules
        return
    yield from rules


# ---------------------------------------------------------------------------
# per-element moments accumulated by streaming over quadrature chunks


@dataclass
class VolumeMoments:
    m_a: np.ndarray  # int a
    m_1: np.ndarray  # int 1
    m_f: np.ndarray  # int f
    m_ga: np.ndarray  # int grad_x a            (E, d)
    m_lam: np.ndarray  # int lambda_j           (E, nv)
    m_flam: np.ndarray  # int f lambda_j        (E, nv)


@dataclass
class SurfaceMoments:
    s: np.ndarray  # int a lambda_j n_x         (E, nv, d)
    p: np.ndarray  # int lambda_j lambda_i      (E, nv, nv)
    sg: np.ndarray  # int a g n_x               (E, d)
    gl: np.ndarray  # int g lambda_j            (E, nv)


@dataclass
class FacetMoments:
    mass: np.ndarray  # int lambda_j lambda_i   (E, nv, nv)
    load: np.ndarray  # int data lambda_j       (E, nv)


def _bincount(idx, weights, n):
    return np.bincount(idx, weights=weights, minlength=n)


def _zero_volume_moments(e: int, nv: int, d: int) -> VolumeMoments:
    return VolumeMoments(
        np.zeros(e), np.zeros(e), np.zeros(e), np.zeros((e, d)),
        np.zeros((e, nv)), np.zeros((e, nv)),
    )


def _zero_surface_moments(e: int, nv: int, d: int) -> SurfaceMoments:
    return SurfaceMoments(
        np.zeros((e, nv, d)), np.zeros((e, nv, nv)), np.zeros((e, d)), np.zeros((e, nv))
    )


def _accumulate_volume(out: VolumeMoments, space: FeSpace, problem: ProblemSpec, batch: RuleBatch):
    if len(batch.weights) == 0:
        return
    e, nv = space.elem_dofs.shape
    d = problem.d
    pos = space.elem_pos[batch.elem]
    w = batch.weights
    a = problem.diffusion(batch.points)
    f = problem.source(batch.points)
    ga = problem.diffusion_spatial_gradient(batch.points)
    lam = space.basis_at(pos, batch.points)
    out.m_a += _bincount(pos, w * a, e)
    out.m_1 += _bincount(pos, w, e)
    out.m_f += _bincount(pos, w * f, e)
    for k in range(d):
        out.m_ga[:, k] += _bincount(pos, w * ga[:, k], e)
    for i in range(nv):
        out.m_lam[:, i] += _bincount(pos, w * lam[:, i], e)
        out.m_flam[:, i] += _bincount(pos, w * f * lam[:, i], e)


def _accumulate_surface(out: SurfaceMoments, space: FeSpace, problem: ProblemSpec, batch: RuleBatch):
    if len(batch.weights) == 0:
        return
    e, nv = space.elem_dofs.shape
    d = problem.d
    pos = space.elem_pos[batch.elem]
    w = batch.weights
    a = problem.diffusion(batch.points)
    g = problem.dirichlet(batch.points)
    nx = batch.normals[:, :d]  # spatial part of the unit space-time normal
    lam = space.basis_at(pos, batch.points)
    wa = w * a
    for j in range(nv):
        for k in range(d):
            out.s[:, j, k] += _bincount(pos, wa * lam[:, j] * nx[:, k], e)
        out.gl[:, j] += _bincount(pos, w * g * lam[:, j], e)
        for i in range(nv):
            out.p[:, j, i] += _bincount(pos, w * lam[:, j] * lam[:, i], e)
    for k in range(d):
        out.sg[:, k] += _bincount(pos, wa * g * nx[:, k], e)


def _accumulate_facet(out: FacetMoments, space: FeSpace, data: Callable | None, batch: RuleBatch):
    if len(batch.weights) == 0:
        return
    e, nv = space.elem_dofs.shape
    pos = space.elem_pos[batch.elem]
    w = batch.weights
    lam = space.basis_at(pos, batch.points)
    vals = None if data is None else data(batch.points)
    for j in range(nv):
        if vals is not None:
            out.load[:, j] += _bincount(pos, w * vals * lam[:, j], e)
        for i in range(nv):
            out.mass[:, j, i] += _bincount(pos, w * lam[:, j] * lam[:, i], e)


def volume_moments(space: FeSpace, problem: ProblemSpec, rules) -> VolumeMoments:
    e, nv = space.elem_dofs.shape
    out = _zero_volume_moments(e, nv, problem.d)
    for batch in _iter_chunks(rules):
        _accumulate_volume(out, space, problem, batch)
    return out


def surface_moments(space: FeSpace, problem: ProblemSpec, rules) -> SurfaceMoments:
    e, nv = space.elem_dofs.shape
    out = _zero_surface_moments(e, nv, problem.d)
    for batch in _iter_chunks(rules):
        _accumulate_surface(out, space, problem, batch)
    return out


def facet_moments(space: FeSpace, data: Callable | None, rules) -> FacetMoments:
    e, nv = space.elem_dofs.shape
    out = FacetMoments(np.zeros((e, nv, nv)), np.zeros((e, nv)))
    for batch in _iter_chunks(rules):
        _accumulate_facet(out, space, data, batch)
    return out


# ---------------------------------------------------------------------------
# assembly operations


def assemble_interior_terms(space: FeSpace, problem: ProblemSpec, volume_rules):
    """(u_t, v) + (a grad_x u, grad_x v) over the cut volume, plus (f, v)."""
    mom = volume_rules if isinstance(volume_rules, VolumeMoments) else volume_moments(
        space, problem, volume_rules
    )
    d = problem.d
    gx = space.grads[:, :, :d]
    gt = space.grads[:, :, d]
    loc = np.einsum("e,eik,ejk->eji", mom.m_a, gx, gx)
    loc += np.einsum("ei,ej->eji", gt, mom.m_lam)
    rows, cols, vals = _local_to_triplets(space, loc)
    a = triplets_to_csr(rows, cols, vals, space.n_dofs)
    b = np.zeros(space.n_dofs)
    np.add.at(b, space.elem_dofs.ravel(), mom.m_flam.ravel())
    return a, b


def assemble_supg_terms(space: FeSpace, problem: ProblemSpec, volume_rules, h: float, delta: float):
    """Residual stabilization (delta h^2 (u_t - grad a . grad u), v_t).

    For P1 elements the divergence term reduces to grad_x a . grad_x u_h.
    """
    n = space.n_dofs
    if delta == 0.0:
        return sp.csr_matrix((n, n)), np.zeros(n)
    mom = volume_rules if isinstance(volume_rules, VolumeMoments) else volume_moments(
        space, problem, volume_rules
    )
    d = problem.d
    gx = space.grads[:, :, :d]
    gt = space.grads[:, :, d]
    scale = delta * h * h
    s = gt * mom.m_1[:, None] - np.einsum("eik,ek->ei", gx, mom.m_ga)
    loc = scale * np.einsum("ei,ej->eji", s, gt)
    rows, cols, vals = _local_to_triplets(space, loc)
    a = triplets_to_csr(rows, cols, vals, n)
    b = np.zeros(n)
    np.add.at(b, space.elem_dofs.ravel(), (scale * mom.m_f[:, None] * gt).ravel())
    return a, b


def assemble_nitsche_terms(space: FeSpace, problem: ProblemSpec, surface_rules, h: float):
    """Symmetric Nitsche terms on the moving boundary with penalty gamma/h.

    n_x is the spatial component of the unit space-time normal, without
    renormalization.
    """
    mom = surface_rules if isinstance(surface_rules, SurfaceMoments) else surface_moments(
        space, problem, surface_rules
    )
    d = problem.d
    gx = space.grads[:, :, :d]
    pen = problem.gamma / h
    loc = -np.einsum("eik,ejk->eji", gx, mom.s)  # -<a grad u . n, v>
    loc += -np.einsum("eik,ejk->eij", gx, mom.s)  # -<a grad v . n, u>
    loc += pen * mom.p
    rows, cols, vals = _local_to_triplets(space, loc)
    a = triplets_to_csr(rows, cols, vals, space.n_dofs)
    b = np.zeros(space.n_dofs)
    rhs_loc = -np.einsum("ejk,ek->ej", gx, mom.sg) + pen * mom.gl
    np.add.at(b, space.elem_dofs.ravel(), rhs_loc.ravel())
    return a, b


def assemble_initial_final_terms(space: FeSpace, problem: ProblemSpec, facet_rules):
    """Mass block <u, v> on the initial boundary and load <u0, v>.

    The final boundary t = T enters the energy norm only, not the system.
    """
    mom = facet_rules if isinstance(facet_rules, FacetMoments) else facet_moments(
        space, problem.initial, facet_rules
    )
    rows, cols, vals = _local_to_triplets(space, mom.mass)
    a = triplets_to_csr(rows, cols, vals, space.n_dofs)
    b = np.zeros(space.n_dofs)
    np.add.at(b, space.elem_dofs.ravel(), mom.load.ravel())
    return a, b


def assemble_ghost_penalty(space: FeSpace, ghost_faces: np.ndarray, h: float, gamma1: float) -> sp.csr_matrix:
    """Face-jump penalty gamma1 h <[dn u], [dn v]> over full ghost faces.

    Jumps use the full space-time normal derivative of the per-element affine
    extensions, so the form vanishes on globally affine functions.
    """
    n = space.n_dofs
    if gamma1 == 0.0 or len(ghost_faces) == 0:
        return sp.csr_matrix((n, n))
    faces = space.mesh.faces
    k1 = space.elem_pos[faces.elems[ghost_faces, 0]]
    k2 = space.elem_pos[faces.elems[ghost_faces, 1]]
    nrm = faces.normals[ghost_faces]
    meas = faces.measures[ghost_faces]
    j1 = np.einsum("fk,fik->fi", nrm, space.grads[k1])
    j2 = -np.einsum("fk,fik->fi", nrm, space.grads[k2])
    jvec = np.concatenate([j1, j2], axis=1)  # (F, 2 nv)
    slots = np.concatenate([space.elem_dofs[k1], space.elem_dofs[k2]], axis=1)
    scale = gamma1 * h * meas
    vals = scale[:, None, None] * jvec[:, :, None] * jvec[:, None, :]
    rows = np.broadcast_to(slots[:, :, None], vals.shape).ravel()
    cols = np.broadcast_to(slots[:, None, :], vals.shape).ravel()
    return triplets_to_csr(rows, cols, vals.ravel(), n)


# ---------------------------------------------------------------------------
# the full discretization


@dataclass
class EnergyNormReport:
    """Components of the discrete energy norm; total^2 = sum of squares."""

    diffusion: float
    boundary_penalty: float
    initial: float
    final: float
    supg: float
    ghost: float

    @property
    def total(self) -> float:
        comps = np.array(
            [self.diffusion, self.boundary_penalty, self.initial, self.final, self.supg, self.ghost]
        )
        return float(np.sqrt((comps**2).sum()))


class Discretization:
    """Classify, build rules, assemble the system and the norm matrices once.

    The depth controls both the classification lattice and the cut-quadrature
    subdivision.  All products are cached and immutable after construction.
    """

    def __init__(self, problem: ProblemSpec, mesh: meshmod.BackgroundMesh,
                 depth: int = DEFAULT_DEPTH, order: int = 2,
                 check_containment: bool = True):
        self.problem = problem
        self.mesh = mesh
        self.depth = depth
        self.order = order
        self.h = mesh.sizes.h

        self.classification = geometry.classify_mesh(mesh, problem.levelset, depth)
        if len(self.classification.active) == 0:
            raise EmptyActiveMeshError("level set leaves no active elements")
        if check_containment:
            geometry.check_domain_contained(mesh, self.classification)
        geometry.check_cut_connectivity(mesh, self.classification)
        self.space = build_fe_space(mesh, self.classification)
        self.ghost_faces = geometry.ghost_face_set(mesh, self.classification)

        chunk = 1024 if mesh.dim == 3 else 4096
        e, nv = self.space.elem_dofs.shape
        self._vol_mom = _zero_volume_moments(e, nv, problem.d)
        self._surf_mom = _zero_surface_moments(e, nv, problem.d)
        for vol, surf in geometry.rule_chunks(
            mesh, self.classification, depth, order,
            want_volume=True, want_surface=True, chunk_elems=chunk,
        ):
            if vol is not None:
                _accumulate_volume(self._vol_mom, self.space, problem, vol)
            if surf is not None:
                _accumulate_surface(self._surf_mom, self.space, problem, surf)
        t0 = geometry.facet_rules(mesh, self.classification, meshmod.T0, depth, order)
        tT = geometry.facet_rules(mesh, self.classification, meshmod.TT, depth, order)
        self._t0_mom = facet_moments(self.space, problem.initial, t0)
        self._tT_mom = facet_moments(self.space, None, tT)

        self._assemble()

    def _assemble(self):
        space, problem, h = self.space, self.problem, self.h
        a_int, b_int = assemble_interior_terms(space, problem, self._vol_mom)
        a_sup, b_sup = assemble_supg_terms(space, problem, self._vol_mom, h, problem.delta)
        a_nit, b_nit = assemble_nitsche_terms(space, problem, self._surf_mom, h)
        a_ini, b_ini = assemble_initial_final_terms(space, problem, self._t0_mom)
        g = assemble_ghost_penalty(space, self.ghost_faces, h, problem.gamma1)

        self.ghost_matrix = g
        a = (a_int + a_sup + a_nit + a_ini + g).tocsr()
        a.sort_indices()
        b = b_int + b_sup + b_nit + b_ini

        empty_rows = np.nonzero(np.diff(a.indptr) == 0)[0]
        if len(empty_rows):
            raise SingularMatrixError(
                f"{len(empty_rows)} dof rows are empty; the geometry is not resolved"
            )
        self.system = LinearSystem(A=a, b=b)

        # symmetric PSD matrices behind the energy-norm components
        d = problem.d
        gx = space.grads[:, :, :d]
        gt = space.grads[:, :, d]
        diff_loc = np.einsum("e,eik,ejk->eji", self._vol_mom.m_a, gx, gx)
        supg_loc = (problem.delta * h * h) * np.einsum("e,ei,ej->eji", self._vol_mom.m_1, gt, gt)
        pen_loc = (problem.gamma / h) * self._surf_mom.p
        n = space.n_dofs

        def _mat(loc):
            rows, cols, vals = _local_to_triplets(space, loc)
            return triplets_to_csr(rows, cols, vals, n)

        self._norm_mats = {
            "diffusion": _mat(diff_loc),
            "boundary_penalty": _mat(pen_loc),
            "initial": _mat(self._t0_mom.mass),
            "final": _mat(self._tT_mom.mass),
            "supg": _mat(supg_loc),
            "ghost": g,
        }

    def energy_norm_report(self, coeffs: np.ndarray) -> EnergyNormReport:
        comps = {
            name: float(np.sqrt(max(coeffs @ (m @ coeffs), 0.0)))
            for name, m in self._norm_mats.items()
        }
        return EnergyNormReport(**comps)

    def bilinear_value(self, u: np.ndarray, v: np.ndarray) -> float:
        """A_h(u, v) = v^T A u including the ghost penalty."""
        return float(v @ (self.system.A @ u))

    def interpolate(self, fn) -> np.ndarray:
        """Nodal interpolation of a space-time function on the dofs."""
        return np.asarray(fn(self.mesh.vertices[self.space.dofs]), dtype=float)


def assemble_system(problem: ProblemSpec, mesh: meshmod.BackgroundMesh,
                    depth: int = DEFAULT_DEPTH) -> LinearSystem:
    """Classify, integrate and assemble A u = b for one background mesh."""
    return Discretization(problem, mesh, depth=depth).system


def energy_norm_report(disc: Discretization, coeffs: np.ndarray) -> EnergyNormReport:
    """Energy-norm components of a coefficient vector on a discretization."""
    return disc.energy_norm_report(coeffs)
