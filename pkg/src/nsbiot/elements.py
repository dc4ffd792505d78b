"""Reference bases, Piola maps and global DOF maps for the discrete spaces.

Global DOF layouts:

* ``BDM1_vec``: edge ``e`` owns DOFs ``2e`` (flux moment) and ``2e+1``
  (linear moment) of the normal trace, measured against the global edge
  orientation (lower vertex index to higher).
* ``BDM1_mat``: row ``r`` of the tensor is a ``BDM1_vec`` field stored at
  offset ``r * 2E``.
* ``P1_vec_cont``: component ``c`` at vertex ``i`` is ``c * Nv + i``.
* ``P0_scalar`` / ``P0_vec``: ``c * M + cell``.
* ``P1_cont_skew``: one scalar per vertex; the skew tensor is
  ``[[0, g], [-g, 0]]``.
* ``P1dc_trace_scalar`` / ``P1dc_trace_vec``: linear per segment of the
  poroelastic interface partition, two nodes per segment at its end points
  (``2s + j``), vector component ``c`` offset by ``c * 2S``.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Optional

import numpy as np

from .mesh import InterfaceTraces, Mesh
from .quadrature import segment_rule, triangle_rule


class ElementKind(str, Enum):
    BDM1_VEC = "BDM1_vec"
    BDM1_MAT = "BDM1_mat"
    P1_VEC = "P1_vec_cont"
    P0_SCALAR = "P0_scalar"
    P0_VEC = "P0_vec"
    P1_SKEW = "P1_cont_skew"
    TRACE_VEC = "P1dc_trace_vec"
    TRACE_SCALAR = "P1dc_trace_scalar"


TRACE_KINDS = (ElementKind.TRACE_VEC, ElementKind.TRACE_SCALAR)
HDIV_KINDS = (ElementKind.BDM1_VEC, ElementKind.BDM1_MAT)

# reference triangle (0,0), (1,0), (0,1); local edge k runs from vertex k+1 to k+2
REF_VERTS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
_EDGE_LOCAL = ((1, 2), (2, 0), (0, 1))


class IncompatibleDomainError(ValueError):
    pass


@dataclass(frozen=True)
class BasisEval:
    values: np.ndarray
    grads: Optional[np.ndarray] = None
    div: Optional[np.ndarray] = None


def _p1_monomials(pts):
    x, y = pts[..., 0], pts[..., 1]
    one = np.ones_like(x)
    zero = np.zeros_like(x)
    # (1,0), (x,0), (y,0), (0,1), (0,x), (0,y)
    return np.stack([
        np.stack([one, zero], -1), np.stack([x, zero], -1), np.stack([y, zero], -1),
        np.stack([zero, one], -1), np.stack([zero, x], -1), np.stack([zero, y], -1),
    ], axis=-2)


_MONO_DIV = np.array([0.0, 1.0, 0.0, 0.0, 0.0, 1.0])


def edge_moment_weights(order=4):
    """Parameter points and weights for the normal-trace moments against {1, 2s-1}."""
    rule = segment_rule(order)
    s = rule.points
    q = np.stack([np.ones_like(s), 2.0 * s - 1.0])
    return s, rule.weights, q


@lru_cache(maxsize=None)
def _bdm_coeffs():
    s, w, q = edge_moment_weights()
    D = np.zeros((6, 6))
    for k, (a, b) in enumerate(_EDGE_LOCAL):
        pa, pb = REF_VERTS[a], REF_VERTS[b]
        t = pb - pa
        nrm = np.array([t[1], -t[0]])  # scaled by edge length
        pts = pa + s[:, None] * t
        vals = _p1_monomials(pts) @ nrm  # (nq, 6)
        for j in range(2):
            D[2 * k + j] = (w * q[j]) @ vals
    C = np.linalg.inv(D)
    C.setflags(write=False)
    return C


def _check_ref(pts):
    tol = 1e-12
    if np.any(pts[..., 0] < -tol) or np.any(pts[..., 1] < -tol) or np.any(pts.sum(-1) > 1 + tol):
        raise ValueError("reference point outside the reference triangle")


def bdm_reference(pts):
    """Reference BDM1 basis: values (..., 6, 2) and divergences (..., 6)."""
    pts = np.asarray(pts, dtype=float)
    C = _bdm_coeffs()
    vals = np.einsum("...mi,mk->...ki", _p1_monomials(pts), C)
    div = np.broadcast_to(_MONO_DIV @ C, pts.shape[:-1] + (6,))
    return vals, div


def p1_reference(pts):
    pts = np.asarray(pts, dtype=float)
    x, y = pts[..., 0], pts[..., 1]
    vals = np.stack([1.0 - x - y, x, y], axis=-1)
    grads = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    return vals, grads


def eval_basis(kind, ref_point, check=True) -> BasisEval:
    """Reference basis of ``kind`` at reference point(s).

    Triangle kinds take (x, y) on the reference triangle, trace kinds a
    parameter s in [0, 1].
    """
    kind = ElementKind(kind)
    pts = np.asarray(ref_point, dtype=float)
    if kind in TRACE_KINDS:
        if check and (np.any(pts < -1e-12) or np.any(pts > 1 + 1e-12)):
            raise ValueError("reference parameter outside [0, 1]")
        vals = np.stack([1.0 - pts, pts], axis=-1)
        if kind == ElementKind.TRACE_SCALAR:
            return BasisEval(vals, grads=np.array([-1.0, 1.0]))
        out = np.zeros(pts.shape + (4, 2))
        out[..., 0:2, 0] = vals
        out[..., 2:4, 1] = vals
        return BasisEval(out)
    if check:
        _check_ref(pts)
    if kind == ElementKind.BDM1_VEC:
        v, d = bdm_reference(pts)
        return BasisEval(v, div=d)
    if kind == ElementKind.BDM1_MAT:
        v, d = bdm_reference(pts)
        vals = np.zeros(pts.shape[:-1] + (12, 2, 2))
        div = np.zeros(pts.shape[:-1] + (12, 2))
        for r in range(2):
            vals[..., 6 * r:6 * r + 6, r, :] = v
            div[..., 6 * r:6 * r + 6, r] = d
        return BasisEval(vals, div=div)
    if kind == ElementKind.P1_SKEW:
        v, g = p1_reference(pts)
        return BasisEval(v, grads=g)
    if kind == ElementKind.P1_VEC:
        v, g = p1_reference(pts)
        vals = np.zeros(pts.shape[:-1] + (6, 2))
        grads = np.zeros((6, 2, 2))
        for c in range(2):
            vals[..., 3 * c:3 * c + 3, c] = v
            grads[3 * c:3 * c + 3, c, :] = g
        return BasisEval(vals, grads=grads)
    if kind == ElementKind.P0_SCALAR:
        return BasisEval(np.ones(pts.shape[:-1] + (1,)))
    if kind == ElementKind.P0_VEC:
        return BasisEval(np.broadcast_to(np.eye(2), pts.shape[:-1] + (2, 2)).copy())
    raise ValueError(kind)


def piola_map(J, detJ, vhat, divhat=None):
    """Contravariant Piola transform: v = J vhat / detJ, div v = div vhat / detJ.

    ``J`` is (..., 2, 2) and broadcast against ``vhat`` (..., 2).
    """
    J = np.asarray(J, dtype=float)
    detJ = np.asarray(detJ, dtype=float)
    if np.any(detJ == 0):
        raise ValueError("degenerate element: zero Jacobian determinant")
    v = np.einsum("...ij,...j->...i", J, vhat) / detJ[..., None]
    if divhat is None:
        return v
    return v, divhat / detJ


@dataclass(frozen=True, eq=False)
class FESpace:
    """A finite element space on a mesh or on the poroelastic interface partition.

    ``dof_map[c]`` lists the global DOFs of the local basis functions of
    cell ``c`` (triangle, or trace segment), ``signs[c]`` the factor that
    converts the local basis into the global one.
    """

    kind: ElementKind
    domain: object
    dof_map: np.ndarray
    signs: np.ndarray
    dim: int

    @property
    def mesh(self) -> Mesh:
        return self.domain.mesh_p if isinstance(self.domain, InterfaceTraces) else self.domain

    @property
    def n_cells(self):
        return len(self.dof_map)

    @property
    def n_local(self):
        return self.dof_map.shape[1]

    # tabulation ---------------------------------------------------------
    def tabulate(self, cells, ref):
        """Physical basis at reference points of the given cells.

        ``ref`` is (nq, 2) shared by all cells or (N, nq, 2) per cell; for
        trace spaces it holds parameters, shape (nq,) or (N, nq). Returns a
        :class:`BasisEval` whose arrays start with (N, nq, nlocal) and have
        the orientation signs applied.
        """
        cells = np.asarray(cells, dtype=np.int64)
        kind = self.kind
        ref = np.asarray(ref, dtype=float)
        N = len(cells)
        b = eval_basis(kind, ref, check=False)
        if kind in TRACE_KINDS:
            vals = b.values if ref.ndim == 2 else np.broadcast_to(b.values, (N,) + b.values.shape)
            return BasisEval(vals)
        per_cell = ref.ndim == 3
        vals = b.values if per_cell else np.broadcast_to(b.values, (N,) + b.values.shape)
        mesh = self.mesh
        if kind in (ElementKind.P0_SCALAR, ElementKind.P0_VEC):
            return BasisEval(vals)
        J, det, _ = _jac(mesh, cells)
        if kind in (ElementKind.P1_SKEW, ElementKind.P1_VEC):
            Jinv = np.linalg.inv(J)
            if kind == ElementKind.P1_SKEW:
                g = np.einsum("kj,nji->nki", b.grads, Jinv)  # grad phi = J^-T ghat
            else:
                g = np.einsum("kcj,nji->nkci", b.grads, Jinv)
            nq = vals.shape[1]
            g = np.broadcast_to(g[:, None], (N, nq) + g.shape[1:])
            return BasisEval(vals, grads=g)
        sg = self.signs[cells]
        if kind == ElementKind.BDM1_VEC:
            v = np.einsum("nij,nqkj->nqki", J, vals) / det[:, None, None, None]
            d = b.div if per_cell else np.broadcast_to(b.div, (N,) + b.div.shape)
            d = d / det[:, None, None]
            return BasisEval(v * sg[:, None, :, None], div=d * sg[:, None, :])
        # BDM1_MAT: rows transform independently
        v = np.einsum("nij,nqkrj->nqkri", J, vals) / det[:, None, None, None, None]
        d = b.div if per_cell else np.broadcast_to(b.div, (N,) + b.div.shape)
        d = d / det[:, None, None, None]
        return BasisEval(v * sg[:, None, :, None, None], div=d * sg[:, None, :, None])

    def evaluate(self, coeffs, cells, ref, what="values"):
        """Evaluate a discrete function at reference points of ``cells``."""
        tab = self.tabulate(cells, ref)
        arr = {"values": tab.values, "grads": tab.grads, "div": tab.div}[what]
        c = np.asarray(coeffs)[self.dof_map[np.asarray(cells)]]  # (N, nloc)
        return np.einsum("nqk...,nk->nq...", arr, c)


def _jac(mesh, cells):
    p = mesh.vertices[mesh.triangles[cells]]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    return J, det, p[:, 0]


def to_reference(mesh, cells, x):
    """Inverse affine map of physical points ``x`` (N, nq, 2) into cells (N,)."""
    J, _, x0 = _jac(mesh, cells)
    return np.einsum("nij,nqj->nqi", np.linalg.inv(J), x - x0[:, None, :])


def to_physical(mesh, cells, ref):
    J, _, x0 = _jac(mesh, cells)
    if ref.ndim == 2:
        return x0[:, None, :] + np.einsum("nij,qj->nqi", J, ref)
    return x0[:, None, :] + np.einsum("nij,nqj->nqi", J, ref)


def build_space(domain, kind) -> FESpace:
    kind = ElementKind(kind)
    if kind in TRACE_KINDS:
        if not isinstance(domain, InterfaceTraces):
            raise IncompatibleDomainError(f"{kind.value} lives on the interface partition, got {type(domain).__name__}")
        S = len(domain.trace_p)
        base = np.arange(2 * S).reshape(S, 2)
        if kind == ElementKind.TRACE_SCALAR:
            dm = base
        else:
            dm = np.hstack([base, base + 2 * S])
        return _freeze(FESpace(kind, domain, dm, np.ones(dm.shape), int(dm.max()) + 1))
    if not isinstance(domain, Mesh):
        raise IncompatibleDomainError(f"{kind.value} needs a triangle mesh, got {type(domain).__name__}")
    M, Nv, E = domain.n_triangles, domain.n_vertices, domain.n_edges
    if kind == ElementKind.P0_SCALAR:
        dm = np.arange(M)[:, None]
        dim = M
    elif kind == ElementKind.P0_VEC:
        dm = np.stack([np.arange(M), M + np.arange(M)], axis=1)
        dim = 2 * M
    elif kind == ElementKind.P1_SKEW:
        dm = domain.triangles.copy()
        dim = Nv
    elif kind == ElementKind.P1_VEC:
        dm = np.hstack([domain.triangles, Nv + domain.triangles])
        dim = 2 * Nv
    else:
        te = domain.tri_edges
        dm = np.stack([2 * te, 2 * te + 1], axis=2).reshape(M, 6)
        sg = np.stack([domain.tri_edge_signs, np.ones_like(domain.tri_edge_signs)], axis=2).reshape(M, 6)
        dim = 2 * E
        if kind == ElementKind.BDM1_MAT:
            dm = np.hstack([dm, dm + 2 * E])
            sg = np.hstack([sg, sg])
            dim = 4 * E
        return _freeze(FESpace(kind, domain, dm, sg.astype(float), dim))
    return _freeze(FESpace(kind, domain, dm, np.ones(dm.shape), dim))


def _freeze(space):
    space.dof_map.setflags(write=False)
    space.signs.setflags(write=False)
    return space


# interpolation --------------------------------------------------------------

def edge_dofs(space, edges):
    """Global DOFs attached to the given edges of an H(div) space, shape (n, ndof_per_edge)."""
    edges = np.asarray(edges, dtype=np.int64)
    E = space.mesh.n_edges
    base = np.stack([2 * edges, 2 * edges + 1], axis=1)
    if space.kind == ElementKind.BDM1_VEC:
        return base
    if space.kind == ElementKind.BDM1_MAT:
        return np.hstack([base, base + 2 * E])
    raise ValueError(f"{space.kind.value} has no edge DOFs")


def edge_moments(mesh, edges, func, order=6):
    """Moments of ``func(x) . n`` against {1, 2s-1} on globally oriented edges.

    ``func`` maps points (n, 2) to vectors (n, 2) or tensors (n, 2, 2); for
    tensors the normal is applied row-wise. Returns (len(edges), 2) or
    (len(edges), 2, 2) indexed [edge, row, moment].
    """
    edges = np.asarray(edges, dtype=np.int64)
    s, w, q = edge_moment_weights(order)
    a = mesh.vertices[mesh.edges[edges, 0]]
    b = mesh.vertices[mesh.edges[edges, 1]]
    t = b - a
    nrm = np.stack([t[:, 1], -t[:, 0]], axis=1)
    pts = a[:, None, :] + s[None, :, None] * t[:, None, :]
    vals = np.asarray(func(pts.reshape(-1, 2)))
    vals = vals.reshape((len(edges), len(s)) + vals.shape[1:])
    fn = np.einsum("nq...j,nj->nq...", vals, nrm)
    return np.einsum("nq...,jq->n...j", fn, w * q)


def interpolate(space: FESpace, func, order=None):
    """Canonical interpolant of an analytic field.

    H(div) spaces use edge moments of the normal trace, P1 spaces nodal
    values, P0 spaces cell averages and trace spaces the segmentwise L2
    projection. ``func`` maps points (n, 2) to values of the field shape.
    """
    kind = space.kind
    out = np.zeros(space.dim)
    if kind in HDIV_KINDS:
        mesh = space.mesh
        mom = edge_moments(mesh, np.arange(mesh.n_edges), func)
        E = mesh.n_edges
        if kind == ElementKind.BDM1_VEC:
            out[:] = mom.reshape(-1)
        else:
            out[: 2 * E] = mom[:, 0, :].reshape(-1)
            out[2 * E:] = mom[:, 1, :].reshape(-1)
        return out
    if kind in (ElementKind.P1_SKEW, ElementKind.P1_VEC):
        vals = np.asarray(func(space.mesh.vertices))
        return vals.T.reshape(-1).astype(float) if kind == ElementKind.P1_VEC else vals.astype(float)
    if kind in (ElementKind.P0_SCALAR, ElementKind.P0_VEC):
        mesh = space.mesh
        rule = triangle_rule(order or 5)
        cells = np.arange(mesh.n_triangles)
        x = to_physical(mesh, cells, rule.points)
        vals = np.asarray(func(x.reshape(-1, 2))).reshape(x.shape[:2] + (-1,))
        avg = np.einsum("nqc,q->nc", vals, rule.weights) / rule.weights.sum()
        return avg.T.reshape(-1)
    # trace spaces: L2 projection on each poro trace segment
    tr = space.domain
    rule = segment_rule(order or 6)
    s = rule.points
    seg = tr.seg_p
    x = seg[:, None, :2] + s[None, :, None] * (seg[:, None, 2:] - seg[:, None, :2])
    vals = np.asarray(func(x.reshape(-1, 2))).reshape(x.shape[:2] + (-1,))
    phi = np.stack([1 - s, s], axis=1)
    Mloc = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    rhs = np.einsum("q,qj,nqc->ncj", rule.weights, phi, vals)
    coef = np.linalg.solve(Mloc, rhs.reshape(-1, 2).T).T.reshape(rhs.shape)  # (S, comp, 2)
    S = len(seg)
    if kind == ElementKind.TRACE_SCALAR:
        return coef[:, 0, :].reshape(-1)
    return np.concatenate([coef[:, 0, :].reshape(-1), coef[:, 1, :].reshape(-1)])[: 4 * S]
