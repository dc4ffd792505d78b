"""Sparse assembly of the coupled Navier-Stokes/Biot mixed system.

Unknowns are ordered (sigma_p, p_p, u_p, T_f, u_f, theta, lambda, u_s,
gamma_p). Each row block holds the equation tested with the matching test
function. Boundary-data, forcing and interface-data contributions are
assembled into right-hand sides; essential conditions are handled by the
time stepper through DOF elimination.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .elements import REF_VERTS, ElementKind, FESpace, build_space, to_reference
from .mesh import INTERFACE, InterfaceTraces, Mesh, build_interface_traces
from .quadrature import INTERFACE_ORDER, VOLUME_ORDER, segment_rule, triangle_rule

FIELDS = ("sigma_p", "p_p", "u_p", "T_f", "u_f", "theta", "lambda", "u_s", "gamma_p")
FLUID_FIELDS = ("T_f", "u_f", "theta", "lambda")

FIELD_KINDS = {
    "sigma_p": ElementKind.BDM1_MAT,
    "p_p": ElementKind.P0_SCALAR,
    "u_p": ElementKind.BDM1_VEC,
    "T_f": ElementKind.BDM1_MAT,
    "u_f": ElementKind.P1_VEC,
    "theta": ElementKind.TRACE_VEC,
    "lambda": ElementKind.TRACE_SCALAR,
    "u_s": ElementKind.P0_VEC,
    "gamma_p": ElementKind.P1_SKEW,
}

FLUID_N_TAGS = ("fN", "fN_in", "fN_out")
FLUID_D_TAGS = ("fD",)


def poro_tag_parts(tag):
    """Split a poroelastic boundary tag ``pX_sY`` into (X, Y)."""
    if len(tag) == 5 and tag[0] == "p" and tag[2:4] == "_s" and tag[1] in "DN" and tag[4] in "DN":
        return tag[1], tag[4]
    return None


class ParameterError(ValueError):
    def __init__(self, violations):
        super().__init__("; ".join(violations))
        self.violations = list(violations)


@dataclass
class PhysicalParams:
    """Model coefficients. ``kappa1``/``kappa2``/``skew_c`` default to
    1/(2 mu), 2 mu and 1/(2 mu_p)."""

    mu: float = 1.0
    rho: float = 1.0
    lambda_p: float = 1.0
    mu_p: float = 1.0
    s0: float = 1.0
    K: np.ndarray = field(default_factory=lambda: np.eye(2))
    alpha_p: float = 1.0
    alpha_bjs: float = 1.0
    kappa1: Optional[float] = None
    kappa2: Optional[float] = None
    skew_c: Optional[float] = None
    rho_f_inertia: bool = False
    rho_p: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=float).reshape(2, 2)
        if self.kappa1 is None and self.mu > 0:
            self.kappa1 = 1.0 / (2.0 * self.mu)
        if self.kappa2 is None and self.mu > 0:
            self.kappa2 = 2.0 * self.mu
        if self.skew_c is None and self.mu_p > 0:
            self.skew_c = 1.0 / (2.0 * self.mu_p)
        bad = self.violations()
        if bad:
            raise ParameterError(bad)

    def violations(self):
        out = []
        for name in ("mu", "lambda_p", "mu_p", "s0"):
            if not getattr(self, name) > 0:
                out.append(f"{name} must be > 0 (got {getattr(self, name)!r})")
        if not self.rho >= 0:
            out.append(f"rho must be >= 0 (got {self.rho!r})")
        if not np.allclose(self.K, self.K.T, rtol=1e-12, atol=0) or not np.all(np.linalg.eigvalsh(self.K) > 0):
            out.append("K must be symmetric positive definite")
        if not 0 < self.alpha_p <= 1:
            out.append(f"alpha_p must lie in (0, 1] (got {self.alpha_p!r})")
        if not self.alpha_bjs >= 0:
            out.append(f"alpha_bjs must be >= 0 (got {self.alpha_bjs!r})")
        if self.kappa1 is not None and not self.kappa1 > 0:
            out.append(f"kappa1 must be > 0 (got {self.kappa1!r})")
        if self.kappa2 is not None and self.mu > 0 and not 0 < self.kappa2 < 4 * self.mu:
            out.append(f"kappa2 must lie in (0, 4*mu) = (0, {4 * self.mu!r}) (got {self.kappa2!r})")
        if self.skew_c is not None and not self.skew_c > 0:
            out.append(f"skew_c must be > 0 (got {self.skew_c!r})")
        if self.rho_p < 0 or self.beta < 0:
            out.append("rho_p and beta must be >= 0")
        return out

    @property
    def a_min(self):
        return 1.0 / (2.0 * self.mu_p + 2.0 * self.lambda_p)

    @property
    def a_max(self):
        return 1.0 / (2.0 * self.mu_p)


def deviatoric(tau):
    """Trace-free part of 2x2 tensors (..., 2, 2)."""
    tau = np.asarray(tau, dtype=float)
    tr = tau[..., 0, 0] + tau[..., 1, 1]
    out = tau.copy()
    out[..., 0, 0] -= 0.5 * tr
    out[..., 1, 1] -= 0.5 * tr
    return out


def apply_compliance(tau, lambda_p, mu_p, skew_c=None):
    """Isotropic compliance on the symmetric part plus ``skew_c`` times the skew part."""
    tau = np.asarray(tau, dtype=float)
    if skew_c is None:
        skew_c = 1.0 / (2.0 * mu_p)
    sym = 0.5 * (tau + np.swapaxes(tau, -1, -2))
    skw = tau - sym
    tr = tau[..., 0, 0] + tau[..., 1, 1]
    out = sym / (2.0 * mu_p) + skew_c * skw
    coef = lambda_p / (2.0 * mu_p * (2.0 * mu_p + 2.0 * lambda_p))
    out[..., 0, 0] -= coef * tr
    out[..., 1, 1] -= coef * tr
    return out


def inverse_compliance(tau, lambda_p, mu_p):
    tau = np.asarray(tau, dtype=float)
    tr = tau[..., 0, 0] + tau[..., 1, 1]
    out = 2.0 * mu_p * tau
    out[..., 0, 0] += lambda_p * tr
    out[..., 1, 1] += lambda_p * tr
    return out


def tangential_permeability(K, t):
    """K_j = (K t) . t for unit tangents ``t`` (..., 2)."""
    return np.einsum("...i,ij,...j->...", t, np.asarray(K, dtype=float), t)


# ---------------------------------------------------------------------------
# discretization


@dataclass(frozen=True, eq=False)
class Discretization:
    """Meshes, interface traces, the nine spaces and the global DOF layout.

    Without a fluid mesh the fluid and interface fields have zero size and
    only the Biot system is assembled.
    """

    mesh_f: Optional[Mesh]
    mesh_p: Mesh
    traces: Optional[InterfaceTraces]
    spaces: dict
    offsets: dict
    sizes: dict
    ndof: int

    @property
    def has_fluid(self):
        return self.mesh_f is not None

    def slice(self, name):
        return slice(self.offsets[name], self.offsets[name] + self.sizes[name])

    def split(self, x):
        return {k: x[self.slice(k)] for k in FIELDS}

    def join(self, parts):
        x = np.zeros(self.ndof)
        for k, v in parts.items():
            if self.sizes[k]:
                x[self.slice(k)] = v
        return x


def build_discretization(mesh_f: Optional[Mesh], mesh_p: Mesh) -> Discretization:
    traces = build_interface_traces(mesh_f, mesh_p) if mesh_f is not None else None
    spaces = {}
    for name, kind in FIELD_KINDS.items():
        if name in FLUID_FIELDS:
            if mesh_f is None:
                continue
            dom = traces if name in ("theta", "lambda") else mesh_f
        else:
            dom = mesh_p
        spaces[name] = build_space(dom, kind)
    sizes = {k: (spaces[k].dim if k in spaces else 0) for k in FIELDS}
    offsets, off = {}, 0
    for k in FIELDS:
        offsets[k] = off
        off += sizes[k]
    return Discretization(mesh_f, mesh_p, traces, spaces, offsets, sizes, off)


@dataclass(frozen=True, eq=False)
class BlockSystem:
    """Sparse matrix with named field blocks and a right-hand side."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    offsets: dict
    sizes: dict

    def block(self, row, col):
        r = slice(self.offsets[row], self.offsets[row] + self.sizes[row])
        c = slice(self.offsets[col], self.offsets[col] + self.sizes[col])
        return self.matrix[r, c]


class _Triplets:
    def __init__(self, disc):
        self.disc = disc
        self.rows, self.cols, self.vals = [], [], []

    def add(self, row_field, row_dofs, col_field, col_dofs, local, scale=1.0):
        """Scatter local matrices (N, a, b) with per-cell global DOFs (N, a), (N, b)."""
        if local.size == 0:
            return
        ro = self.disc.offsets[row_field]
        co = self.disc.offsets[col_field]
        n, a, b = local.shape
        self.rows.append(np.broadcast_to((row_dofs + ro)[:, :, None], (n, a, b)).ravel())
        self.cols.append(np.broadcast_to((col_dofs + co)[:, None, :], (n, a, b)).ravel())
        self.vals.append((scale * local).ravel())

    def matrix(self):
        N = self.disc.ndof
        if not self.rows:
            return sp.csr_matrix((N, N))
        A = sp.coo_matrix((np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))),
                          shape=(N, N)).tocsr()
        A.sum_duplicates()
        return A


def _scatter_vec(disc, out, fld, dofs, local):
    np.add.at(out, disc.offsets[fld] + dofs.ravel(), local.ravel())


CHUNK = 512


def _chunks(n):
    # fixed chunk size: results do not depend on the thread count
    return [np.arange(i, min(i + CHUNK, n)) for i in range(0, n, CHUNK)]


def _map_chunks(fn, n, threads):
    """Evaluate ``fn(cells)`` over chunks and concatenate results in chunk order."""
    chunks = _chunks(n)
    if threads <= 1 or len(chunks) == 1:
        parts = [fn(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=int(threads)) as ex:
            parts = list(ex.map(fn, chunks))
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate([p[i] for p in parts]) for i in range(len(parts[0])))
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# quadrature helpers


@dataclass(frozen=True, eq=False)
class VolumeQuad:
    cells: np.ndarray
    ref: np.ndarray
    points: np.ndarray  # (N, nq, 2)
    wdet: np.ndarray  # (N, nq)


def volume_quad(mesh, order=VOLUME_ORDER, cells=None):
    rule = triangle_rule(order)
    cells = np.arange(mesh.n_triangles) if cells is None else np.asarray(cells)
    p = mesh.vertices[mesh.triangles[cells]]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    pts = p[:, 0][:, None, :] + np.einsum("nij,qj->nqi", J, rule.points)
    return VolumeQuad(cells, rule.points, pts, np.abs(det)[:, None] * rule.weights[None, :])


@dataclass(frozen=True, eq=False)
class EdgeQuad:
    """Quadrature on boundary edges, seen from their single adjacent triangle."""

    edges: np.ndarray
    cells: np.ndarray
    ref: np.ndarray  # (N, nq, 2)
    points: np.ndarray  # (N, nq, 2)
    weights: np.ndarray  # (N, nq), includes edge length
    normals: np.ndarray  # (N, 2) unit outward
    param: np.ndarray  # (nq,) position along the globally oriented edge


def boundary_quad(mesh, edges, order=INTERFACE_ORDER):
    rule = segment_rule(order)
    edges = np.asarray(edges, dtype=np.int64)
    cells = mesh.edge_tris[edges, 0]
    if np.any(mesh.edge_tris[edges, 1] >= 0):
        raise ValueError("boundary_quad requires boundary edges")
    k = np.argmax(mesh.tri_edges[cells] == edges[:, None], axis=1)
    sign = mesh.tri_edge_signs[cells, k]
    A = REF_VERTS[(k + 1) % 3]
    B = REF_VERTS[(k + 2) % 3]
    # walk the edge in its global orientation so that ``param`` is shared by all users
    s = np.where(sign[:, None] > 0, rule.points[None, :], 1.0 - rule.points[None, :])
    ref = A[:, None, :] + s[:, :, None] * (B - A)[:, None, :]
    va = mesh.vertices[mesh.edges[edges, 0]]
    vb = mesh.vertices[mesh.edges[edges, 1]]
    pts = va[:, None, :] + rule.points[None, :, None] * (vb - va)[:, None, :]
    d = vb - va
    L = np.hypot(d[:, 0], d[:, 1])
    nrm = sign[:, None] * np.stack([d[:, 1], -d[:, 0]], axis=1) / L[:, None]
    return EdgeQuad(edges, cells, ref, pts, L[:, None] * rule.weights[None, :], nrm, rule.points)


@dataclass(frozen=True, eq=False)
class InterfaceQuad:
    """Quadrature on the interface with both owning cells of every point.

    ``n_f`` is the unit normal pointing out of the fluid, ``t_f`` the
    tangent obtained by rotating ``n_f`` counter-clockwise.
    """

    points: np.ndarray  # (N, nq, 2)
    weights: np.ndarray  # (N, nq)
    cell_f: np.ndarray
    ref_f: np.ndarray
    cell_p: np.ndarray
    ref_p: np.ndarray
    seg_p: np.ndarray
    param_p: np.ndarray  # (N, nq) position in the poro trace segment
    n_f: np.ndarray  # (N, 2)
    t_f: np.ndarray  # (N, 2)


def interface_quad(traces: InterfaceTraces, order=INTERFACE_ORDER, method="merged") -> InterfaceQuad:
    """Interface quadrature on the common refinement (``merged``) or, for
    matching partitions only, directly on paired mesh edges (``direct``)."""
    mf, mp = traces.mesh_f, traces.mesh_p
    rule = segment_rule(order)
    if method == "merged":
        seg = traces.merged
        pf, pp = traces.parent_f, traces.parent_p
        a, b = seg[:, :2], seg[:, 2:]
        pts = a[:, None, :] + rule.points[None, :, None] * (b - a)[:, None, :]
        L = np.hypot(*(b - a).T)
        edge_f = traces.trace_f[pf]
        edge_p = traces.trace_p[pp]
        cell_f = mf.edge_tris[edge_f, 0]
        cell_p = mp.edge_tris[edge_p, 0]
        ref_f = to_reference(mf, cell_f, pts)
        ref_p = to_reference(mp, cell_p, pts)
        sa, sb = traces.seg_p[pp, :2], traces.seg_p[pp, 2:]
        dd = sb - sa
        param = np.einsum("nqi,ni->nq", pts - sa[:, None, :], dd) / (dd * dd).sum(1)[:, None]
        seg_index = pp
    elif method == "direct":
        key = lambda p, q: tuple(sorted([tuple(np.round(p, 12)), tuple(np.round(q, 12))]))  # noqa: E731
        lookup = {key(traces.seg_p[i, :2], traces.seg_p[i, 2:]): i for i in range(len(traces.trace_p))}
        pairs = []
        for i in range(len(traces.trace_f)):
            k = key(traces.seg_f[i, :2], traces.seg_f[i, 2:])
            if k not in lookup:
                raise ValueError("direct interface assembly requires matching partitions")
            pairs.append((i, lookup[k]))
        pairs = np.array(pairs)
        fq = boundary_quad(mf, traces.trace_f[pairs[:, 0]], order)
        pq = boundary_quad(mp, traces.trace_p[pairs[:, 1]], order)
        a = mf.vertices[mf.edges[fq.edges, 0]]
        b = mf.vertices[mf.edges[fq.edges, 1]]
        # both edge walks follow their own global orientation; reverse where they disagree
        same = np.all(np.abs(a - mp.vertices[mp.edges[pq.edges, 0]]) <= 1e-12, axis=1)
        ref_p = np.where(same[:, None, None], pq.ref, pq.ref[:, ::-1, :])
        seg_index = pairs[:, 1]
        forward = np.all(np.abs(a - traces.seg_p[seg_index, :2]) <= 1e-12, axis=1)
        param = np.where(forward[:, None], rule.points[None, :], 1.0 - rule.points[None, :])
        pts, L = fq.points, np.hypot(*(b - a).T)
        cell_f, ref_f, cell_p = fq.cells, fq.ref, pq.cells
    else:
        raise ValueError(f"unknown interface quadrature method {method!r}")
    # outward fluid normal from the owning fluid triangle
    centroid = mf.vertices[mf.triangles[cell_f]].mean(axis=1)
    d = b - a
    n = np.stack([d[:, 1], -d[:, 0]], axis=1) / np.hypot(d[:, 0], d[:, 1])[:, None]
    flip = np.einsum("ni,ni->n", n, a - centroid) < 0
    n[flip] *= -1
    t = np.stack([-n[:, 1], n[:, 0]], axis=1)
    return InterfaceQuad(pts, L[:, None] * rule.weights[None, :], cell_f, ref_f, cell_p, ref_p,
                         np.asarray(seg_index), param, n, t)


# ---------------------------------------------------------------------------
# basis helpers


def _sym(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _ddot(a, b):
    return (a * b).sum(axis=(-1, -2))


def _Atau(params, tau):
    return apply_compliance(tau, params.lambda_p, params.mu_p, params.skew_c)


def _dofs(space, cells):
    return space.dof_map[cells]


# ---------------------------------------------------------------------------
# volume forms


def assemble_static_blocks(disc: Discretization, params: PhysicalParams, threads=1) -> BlockSystem:
    """Time-independent linear forms: Darcy, elasticity coupling, weak
    symmetry and the augmented pseudostress/velocity forms (without the
    convective term and the interface coupling)."""
    tri = _Triplets(disc)
    sp_ = disc.spaces
    mp = disc.mesh_p

    def poro_chunk(cells):
        q = volume_quad(mp, cells=cells)
        w = q.wdet
        S = sp_["sigma_p"].tabulate(cells, q.ref)
        U = sp_["u_p"].tabulate(cells, q.ref)
        G = sp_["gamma_p"].tabulate(cells, q.ref)
        Kinv = np.linalg.inv(params.K)
        out = {}
        out["vp_up"] = params.mu * np.einsum("nq,nqai,ij,nqbj->nab", w, U.values, Kinv, U.values)
        out["vp_p"] = -np.einsum("nq,nqa->na", w, U.div)[:, :, None]
        out["tau_us"] = np.einsum("nq,nqac->nac", w, S.div)
        skew = S.values[..., 0, 1] - S.values[..., 1, 0]  # (gamma, tau) with gamma = [[0,g],[-g,0]]
        out["tau_g"] = np.einsum("nq,nqa,nqb->nab", w, skew, G.values)
        return out["vp_up"], out["vp_p"], out["tau_us"], out["tau_g"]

    vp_up, vp_p, tau_us, tau_g = _map_chunks(poro_chunk, mp.n_triangles, threads)
    cells = np.arange(mp.n_triangles)
    d_s = _dofs(sp_["sigma_p"], cells)
    d_u = _dofs(sp_["u_p"], cells)
    d_p = _dofs(sp_["p_p"], cells)
    d_us = _dofs(sp_["u_s"], cells)
    d_g = _dofs(sp_["gamma_p"], cells)
    tri.add("u_p", d_u, "u_p", d_u, vp_up)
    tri.add("u_p", d_u, "p_p", d_p, vp_p)
    tri.add("p_p", d_p, "u_p", d_u, -np.swapaxes(vp_p, 1, 2))
    tri.add("sigma_p", d_s, "u_s", d_us, tau_us)
    tri.add("u_s", d_us, "sigma_p", d_s, -np.swapaxes(tau_us, 1, 2))
    tri.add("sigma_p", d_s, "gamma_p", d_g, tau_g)
    tri.add("gamma_p", d_g, "sigma_p", d_s, -np.swapaxes(tau_g, 1, 2))

    if disc.has_fluid:
        mf = disc.mesh_f
        mu, k1, k2 = params.mu, params.kappa1, params.kappa2

        def fluid_chunk(cells):
            q = volume_quad(mf, cells=cells)
            w = q.wdet
            T = sp_["T_f"].tabulate(cells, q.ref)
            V = sp_["u_f"].tabulate(cells, q.ref)
            Td = deviatoric(T.values)
            eV = _sym(V.grads)
            gV = V.grads - eV  # skew part of the gradient
            RT = (1.0 / (2 * mu)) * np.einsum("nq,nqaij,nqbij->nab", w, Td, Td)
            RT += k1 * np.einsum("nq,nqai,nqbi->nab", w, T.div, T.div)
            Ru = np.einsum("nq,nqai,nqbi->nab", w, T.div, V.values)
            Ru += np.einsum("nq,nqaij,nqbij->nab", w, T.values, gV)
            vT = -np.einsum("nq,nqai,nqbi->nab", w, V.values, T.div)
            vT -= np.einsum("nq,nqaij,nqbij->nab", w, gV, T.values)
            vT -= (k2 / (2 * mu)) * np.einsum("nq,nqaij,nqbij->nab", w, eV, Td)
            vu = k2 * np.einsum("nq,nqaij,nqbij->nab", w, eV, eV)
            return RT, Ru, vT, vu

        RT, Ru, vT, vu = _map_chunks(fluid_chunk, mf.n_triangles, threads)
        cf = np.arange(mf.n_triangles)
        dT = _dofs(sp_["T_f"], cf)
        dU = _dofs(sp_["u_f"], cf)
        tri.add("T_f", dT, "T_f", dT, RT)
        tri.add("T_f", dT, "u_f", dU, Ru)
        tri.add("u_f", dU, "T_f", dT, vT)
        tri.add("u_f", dU, "u_f", dU, vu)

        # boundary terms: -<R n, u> on interface and velocity-Dirichlet edges, <T n, v> on the interface
        e_int = mf.edges_with_tag(INTERFACE)
        e_dir = mf.edges_with_tag(*FLUID_D_TAGS)
        for edges, both in ((e_int, True), (e_dir, False)):
            if not len(edges):
                continue
            bq = boundary_quad(mf, edges)
            T = sp_["T_f"].tabulate(bq.cells, bq.ref)
            V = sp_["u_f"].tabulate(bq.cells, bq.ref)
            Tn = np.einsum("nqaij,nj->nqai", T.values, bq.normals)
            loc = np.einsum("nq,nqai,nqbi->nab", bq.weights, Tn, V.values)
            dT = _dofs(sp_["T_f"], bq.cells)
            dU = _dofs(sp_["u_f"], bq.cells)
            tri.add("T_f", dT, "u_f", dU, -loc)
            if both:
                tri.add("u_f", dU, "T_f", dT, np.swapaxes(loc, 1, 2))
    return BlockSystem(tri.matrix(), np.zeros(disc.ndof), dict(disc.offsets), dict(disc.sizes))


def assemble_storage_blocks(disc: Discretization, params: PhysicalParams, threads=1) -> sp.csr_matrix:
    """Matrix of s0 (p, w) + (A(sigma + alpha p I), tau + alpha w I), the
    quantity differentiated in time."""
    tri = _Triplets(disc)
    mp = disc.mesh_p
    sp_ = disc.spaces
    alpha = params.alpha_p
    AI = _Atau(params, np.eye(2))

    def chunk(cells):
        q = volume_quad(mp, cells=cells)
        w = q.wdet
        S = sp_["sigma_p"].tabulate(cells, q.ref).values
        AS = _Atau(params, S)
        ss = np.einsum("nq,nqaij,nqbij->nab", w, S, AS)
        sp_loc = alpha * np.einsum("nq,nqaij,ij->na", w, S, AI)[:, :, None]
        pp = (params.s0 + alpha * alpha * _ddot(AI, np.eye(2))) * w.sum(1)[:, None, None]
        return ss, sp_loc, pp

    ss, spl, pp = _map_chunks(chunk, mp.n_triangles, threads)
    cells = np.arange(mp.n_triangles)
    d_s = _dofs(sp_["sigma_p"], cells)
    d_p = _dofs(sp_["p_p"], cells)
    tri.add("sigma_p", d_s, "sigma_p", d_s, ss)
    tri.add("sigma_p", d_s, "p_p", d_p, spl)
    tri.add("p_p", d_p, "sigma_p", d_s, np.swapaxes(spl, 1, 2))
    tri.add("p_p", d_p, "p_p", d_p, pp)
    return tri.matrix()


def assemble_inertia_blocks(disc: Discretization, params: PhysicalParams, threads=1):
    """Mass-type matrices for the optional dynamic terms.

    Returns (M_f, M_s): ``M_f`` multiplies d_t u_f and holds rho (u, v_f)
    and -kappa1 rho (u, div R_f); ``M_s`` is the P0 mass on u_s.
    """
    tri_f = _Triplets(disc)
    tri_s = _Triplets(disc)
    sp_ = disc.spaces
    if disc.has_fluid:
        mf = disc.mesh_f
        cells = np.arange(mf.n_triangles)
        q = volume_quad(mf)
        V = sp_["u_f"].tabulate(cells, q.ref)
        T = sp_["T_f"].tabulate(cells, q.ref)
        vu = np.einsum("nq,nqai,nqbi->nab", q.wdet, V.values, V.values)
        Ru = np.einsum("nq,nqai,nqbi->nab", q.wdet, T.div, V.values)
        dU = _dofs(sp_["u_f"], cells)
        dT = _dofs(sp_["T_f"], cells)
        tri_f.add("u_f", dU, "u_f", dU, params.rho * vu)
        tri_f.add("T_f", dT, "u_f", dU, -params.kappa1 * params.rho * Ru)
    mp = disc.mesh_p
    area = np.abs(mp.signed_areas())
    cells = np.arange(mp.n_triangles)
    d = _dofs(sp_["u_s"], cells)
    tri_s.add("u_s", d, "u_s", d, area[:, None, None] * np.eye(2)[None])
    return tri_f.matrix(), tri_s.matrix()


# ---------------------------------------------------------------------------
# interface forms


def assemble_interface_blocks(disc: Discretization, params: PhysicalParams, method="merged",
                              iq: Optional[InterfaceQuad] = None) -> sp.csr_matrix:
    """BJS friction, the stress/velocity multiplier pairings and the
    interface mass balance, integrated on the interface quadrature."""
    if not disc.has_fluid:
        return sp.csr_matrix((disc.ndof, disc.ndof))
    tri = _Triplets(disc)
    sp_ = disc.spaces
    iq = iq or interface_quad(disc.traces, method=method)
    w = iq.weights
    nf, tf = iq.n_f, iq.t_f
    npor = -nf
    V = sp_["u_f"].tabulate(iq.cell_f, iq.ref_f).values  # (N, q, 6, 2)
    S = sp_["sigma_p"].tabulate(iq.cell_p, iq.ref_p).values  # (N, q, 12, 2, 2)
    U = sp_["u_p"].tabulate(iq.cell_p, iq.ref_p).values  # (N, q, 6, 2)
    Th = sp_["theta"].tabulate(iq.seg_p, iq.param_p).values  # (N, q, 4, 2)
    Lm = sp_["lambda"].tabulate(iq.seg_p, iq.param_p).values  # (N, q, 2)
    dV = _dofs(sp_["u_f"], iq.cell_f)
    dS = _dofs(sp_["sigma_p"], iq.cell_p)
    dU = _dofs(sp_["u_p"], iq.cell_p)
    dTh = _dofs(sp_["theta"], iq.seg_p)
    dL = _dofs(sp_["lambda"], iq.seg_p)

    Kj = tangential_permeability(params.K, tf)
    c = params.mu * params.alpha_bjs / np.sqrt(Kj)  # (N,)
    Vt = np.einsum("nqai,ni->nqa", V, tf)
    Tt = np.einsum("nqai,ni->nqa", Th, tf)
    wc = w * c[:, None]
    tri.add("u_f", dV, "u_f", dV, np.einsum("nq,nqa,nqb->nab", wc, Vt, Vt))
    vth = np.einsum("nq,nqa,nqb->nab", wc, Vt, Tt)
    tri.add("u_f", dV, "theta", dTh, -vth)
    tri.add("theta", dTh, "u_f", dV, -np.swapaxes(vth, 1, 2))
    tri.add("theta", dTh, "theta", dTh, np.einsum("nq,nqa,nqb->nab", wc, Tt, Tt))

    # <sigma n_p, phi> and -<tau n_p, theta>
    Sn = np.einsum("nqaij,nj->nqai", S, npor)
    phs = np.einsum("nq,nqai,nqbi->nab", w, Th, Sn)
    tri.add("theta", dTh, "sigma_p", dS, phs)
    tri.add("sigma_p", dS, "theta", dTh, -np.swapaxes(phs, 1, 2))

    # multiplier lambda against v_p.n_p, v_f.n_f, phi.n_p
    for fld, basis, dofs, nrm in (("u_p", U, dU, npor), ("u_f", V, dV, nf), ("theta", Th, dTh, npor)):
        bn = np.einsum("nqai,ni->nqa", basis, nrm)
        loc = np.einsum("nq,nqa,nqb->nab", w, bn, Lm)
        tri.add(fld, dofs, "lambda", dL, loc)
        tri.add("lambda", dL, fld, dofs, -np.swapaxes(loc, 1, 2))
    return tri.matrix()


# ---------------------------------------------------------------------------
# convective term


@dataclass(frozen=True, eq=False)
class ConvectiveCache:
    """Fluid-side tabulations reused by every Newton iteration."""

    cells: np.ndarray
    w: np.ndarray
    T: np.ndarray
    V: np.ndarray
    eV: np.ndarray
    bcells: np.ndarray
    bw: np.ndarray
    bV: np.ndarray
    bn: np.ndarray


def convective_cache(disc: Discretization) -> Optional[ConvectiveCache]:
    if not disc.has_fluid:
        return None
    mf = disc.mesh_f
    sp_ = disc.spaces
    cells = np.arange(mf.n_triangles)
    q = volume_quad(mf)
    T = sp_["T_f"].tabulate(cells, q.ref)
    V = sp_["u_f"].tabulate(cells, q.ref)
    bq = boundary_quad(mf, mf.edges_with_tag(INTERFACE))
    bV = sp_["u_f"].tabulate(bq.cells, bq.ref).values
    return ConvectiveCache(cells, q.wdet, T.values, V.values, _sym(V.grads), bq.cells, bq.weights, bV, bq.normals)


def assemble_convective(u_f, disc: Discretization, params: PhysicalParams, cache=None, jacobian=True):
    """Residual vector and Jacobian of the convective form at ``u_f``.

    The form is (rho/2mu)((u x u)^d, R - kappa2 e(v)) + rho <u.n_f, u.v> on
    the interface; its Jacobian in direction d replaces u x u by
    d x u + u x d and the boundary product by <d.n, u.v> + <u.n, d.v>.
    """
    N = disc.ndof
    res = np.zeros(N)
    if not disc.has_fluid or params.rho == 0:
        return res, (sp.csr_matrix((N, N)) if jacobian else None)
    cache = cache or convective_cache(disc)
    sp_ = disc.spaces
    rho, mu, k2 = params.rho, params.mu, params.kappa2
    dU = sp_["u_f"].dof_map[cache.cells]
    dT = sp_["T_f"].dof_map[cache.cells]
    cu = np.asarray(u_f)[dU]
    u = np.einsum("nqai,na->nqi", cache.V, cu)  # (N, q, 2)
    uu = deviatoric(np.einsum("nqi,nqj->nqij", u, u))
    c = rho / (2.0 * mu)
    _scatter_vec(disc, res, "T_f", dT, c * np.einsum("nq,nqij,nqaij->na", cache.w, uu, cache.T))
    _scatter_vec(disc, res, "u_f", dU, -c * k2 * np.einsum("nq,nqij,nqaij->na", cache.w, uu, cache.eV))
    bd = sp_["u_f"].dof_map[cache.bcells]
    bu = np.einsum("nqai,na->nqi", cache.bV, np.asarray(u_f)[bd])
    un = np.einsum("nqi,ni->nq", bu, cache.bn)
    _scatter_vec(disc, res, "u_f", bd, rho * np.einsum("nq,nq,nqi,nqai->na", cache.bw, un, bu, cache.bV))
    if not jacobian:
        return res, None

    tri = _Triplets(disc)
    D = np.einsum("nqbi,nqj->nqbij", cache.V, u)
    D = deviatoric(D + np.swapaxes(D, -1, -2))
    tri.add("T_f", dT, "u_f", dU, c * np.einsum("nq,nqaij,nqbij->nab", cache.w, cache.T, D))
    tri.add("u_f", dU, "u_f", dU, -c * k2 * np.einsum("nq,nqaij,nqbij->nab", cache.w, cache.eV, D))
    bVn = np.einsum("nqbi,ni->nqb", cache.bV, cache.bn)
    uv = np.einsum("nqi,nqai->nqa", bu, cache.bV)
    loc = np.einsum("nq,nqb,nqa->nab", cache.bw, bVn, uv)
    loc += np.einsum("nq,nq,nqai,nqbi->nab", cache.bw, un, cache.bV, cache.bV)
    tri.add("u_f", bd, "u_f", bd, rho * loc)
    return res, tri.matrix()


# ---------------------------------------------------------------------------
# right-hand side


Field = Callable  # (points (n, 2), t) -> values


@dataclass
class SourceData:
    """Forcing, boundary data and interface data as functions of (x, t).

    Boundary functions return the full field (tensor or vector); normal
    components are taken by the assembler. Interface data ``g_momentum``,
    ``g_traction`` and ``g_mass`` are residuals of the transmission
    conditions (zero for physical problems); they are called as
    ``g(x, t, n_f)`` with the unit normal pointing out of the fluid.
    """

    f_f: Optional[Field] = None
    f_p: Optional[Field] = None
    q_p: Optional[Field] = None
    p_p_bc: Optional[Field] = None
    u_s_bc: Optional[Field] = None
    T_f_bc: Optional[Field] = None
    u_f_bc: Optional[Field] = None
    u_p_bc: Optional[Field] = None
    sigma_p_bc: Optional[Field] = None
    g_momentum: Optional[Field] = None
    g_traction: Optional[Field] = None
    g_mass: Optional[Field] = None


def _eval(f, pts, t, normals=None):
    shp = pts.shape[:-1]
    if normals is None:
        v = np.asarray(f(pts.reshape(-1, 2), t), dtype=float)
    else:
        n = np.broadcast_to(normals[:, None, :], pts.shape).reshape(-1, 2)
        v = np.asarray(f(pts.reshape(-1, 2), t, n), dtype=float)
    return v.reshape(shp + v.shape[1:])


def assemble_rhs(data: SourceData, disc: Discretization, params: PhysicalParams, t: float,
                 iq: Optional[InterfaceQuad] = None) -> np.ndarray:
    """Load vector at time ``t``: forcing, natural boundary data, interface data."""
    b = np.zeros(disc.ndof)
    sp_ = disc.spaces
    mp = disc.mesh_p
    if data.q_p is not None or data.f_p is not None:
        q = volume_quad(mp)
        cells = q.cells
        if data.q_p is not None:
            _scatter_vec(disc, b, "p_p", sp_["p_p"].dof_map, np.einsum("nq,nq->n", q.wdet, _eval(data.q_p, q.points, t)))
        if data.f_p is not None:
            fv = np.einsum("nq,nqi->ni", q.wdet, _eval(data.f_p, q.points, t))
            _scatter_vec(disc, b, "u_s", sp_["u_s"].dof_map[cells], fv)
    if disc.has_fluid and data.f_f is not None:
        mf = disc.mesh_f
        q = volume_quad(mf)
        f = _eval(data.f_f, q.points, t)
        V = sp_["u_f"].tabulate(q.cells, q.ref).values
        T = sp_["T_f"].tabulate(q.cells, q.ref).div
        _scatter_vec(disc, b, "u_f", sp_["u_f"].dof_map, np.einsum("nq,nqi,nqai->na", q.wdet, f, V))
        _scatter_vec(disc, b, "T_f", sp_["T_f"].dof_map,
                     -params.kappa1 * np.einsum("nq,nqi,nqai->na", q.wdet, f, T))
    # natural poroelastic data
    pD = [e for e in range(mp.n_edges) if poro_tag_parts(mp.edge_tags[e]) and poro_tag_parts(mp.edge_tags[e])[0] == "D"]
    sD = [e for e in range(mp.n_edges) if poro_tag_parts(mp.edge_tags[e]) and poro_tag_parts(mp.edge_tags[e])[1] == "D"]
    if pD and data.p_p_bc is not None:
        bq = boundary_quad(mp, pD)
        U = sp_["u_p"].tabulate(bq.cells, bq.ref).values
        un = np.einsum("nqai,ni->nqa", U, bq.normals)
        pv = _eval(data.p_p_bc, bq.points, t)
        _scatter_vec(disc, b, "u_p", sp_["u_p"].dof_map[bq.cells], -np.einsum("nq,nq,nqa->na", bq.weights, pv, un))
    if sD and data.u_s_bc is not None:
        bq = boundary_quad(mp, sD)
        S = sp_["sigma_p"].tabulate(bq.cells, bq.ref).values
        Sn = np.einsum("nqaij,nj->nqai", S, bq.normals)
        us = _eval(data.u_s_bc, bq.points, t)
        _scatter_vec(disc, b, "sigma_p", sp_["sigma_p"].dof_map[bq.cells],
                     np.einsum("nq,nqi,nqai->na", bq.weights, us, Sn))
    # interface residual data
    if disc.has_fluid and (data.g_momentum or data.g_traction or data.g_mass):
        iq = iq or interface_quad(disc.traces)
        if data.g_momentum is not None:
            V = sp_["u_f"].tabulate(iq.cell_f, iq.ref_f).values
            g = _eval(data.g_momentum, iq.points, t, iq.n_f)
            _scatter_vec(disc, b, "u_f", sp_["u_f"].dof_map[iq.cell_f], np.einsum("nq,nqi,nqai->na", iq.weights, g, V))
        if data.g_traction is not None:
            Th = sp_["theta"].tabulate(iq.seg_p, iq.param_p).values
            g = _eval(data.g_traction, iq.points, t, iq.n_f)
            _scatter_vec(disc, b, "theta", sp_["theta"].dof_map[iq.seg_p], np.einsum("nq,nqi,nqai->na", iq.weights, g, Th))
        if data.g_mass is not None:
            Lm = sp_["lambda"].tabulate(iq.seg_p, iq.param_p).values
            g = _eval(data.g_mass, iq.points, t, iq.n_f)
            _scatter_vec(disc, b, "lambda", sp_["lambda"].dof_map[iq.seg_p], -np.einsum("nq,nq,nqa->na", iq.weights, g, Lm))
    return b


# ---------------------------------------------------------------------------
# essential conditions


def essential_dofs(disc: Discretization):
    """Global indices of DOFs fixed by essential boundary conditions, per field."""
    from .elements import edge_dofs

    out = {}
    mp = disc.mesh_p
    pN = [e for e in range(mp.n_edges) if (pt := poro_tag_parts(mp.edge_tags[e])) and pt[0] == "N"]
    sN = [e for e in range(mp.n_edges) if (pt := poro_tag_parts(mp.edge_tags[e])) and pt[1] == "N"]
    out["u_p"] = np.asarray(pN, dtype=np.int64)
    out["sigma_p"] = np.asarray(sN, dtype=np.int64)
    if disc.has_fluid:
        mf = disc.mesh_f
        out["T_f"] = mf.edges_with_tag(*FLUID_N_TAGS)
        out["u_f"] = mf.edges_with_tag(*FLUID_D_TAGS)
    idx = {}
    for fld, edges in out.items():
        sp_ = disc.spaces[fld]
        if fld == "u_f":
            verts = np.unique(disc.mesh_f.edges[edges].ravel()) if len(edges) else np.zeros(0, np.int64)
            loc = np.concatenate([verts, verts + disc.mesh_f.n_vertices])
        else:
            loc = edge_dofs(sp_, edges).ravel() if len(edges) else np.zeros(0, np.int64)
        idx[fld] = np.sort(loc) + disc.offsets[fld]
    return idx, out


def essential_values(disc: Discretization, data: SourceData, t: float):
    """Prescribed values of the essential DOFs at time ``t`` as (indices, values)."""
    from .elements import edge_moments

    idx, edges = essential_dofs(disc)
    all_idx, all_val = [], []
    specs = {"u_p": data.u_p_bc, "sigma_p": data.sigma_p_bc, "T_f": data.T_f_bc, "u_f": data.u_f_bc}
    for fld, func in specs.items():
        if fld not in edges or not len(edges[fld]):
            continue
        e = edges[fld]
        if func is None:
            vals = np.zeros(len(idx[fld]))
            all_idx.append(idx[fld])
            all_val.append(vals)
            continue
        f = lambda x, func=func: func(x, t)  # noqa: E731
        if fld == "u_f":
            mf = disc.mesh_f
            verts = np.unique(mf.edges[e].ravel())
            v = np.asarray(f(mf.vertices[verts]))
            gi = np.concatenate([verts, verts + mf.n_vertices]) + disc.offsets[fld]
            gv = np.concatenate([v[:, 0], v[:, 1]])
        else:
            mesh = disc.spaces[fld].mesh
            mom = edge_moments(mesh, e, f)
            if fld == "u_p":
                gi = np.stack([2 * e, 2 * e + 1], 1).ravel()
                gv = mom.ravel()
            else:
                E = mesh.n_edges
                base = np.stack([2 * e, 2 * e + 1], 1)
                gi = np.concatenate([base.ravel(), (base + 2 * E).ravel()])
                gv = np.concatenate([mom[:, 0, :].ravel(), mom[:, 1, :].ravel()])
            gi = gi + disc.offsets[fld]
        all_idx.append(gi)
        all_val.append(gv)
    if not all_idx:
        return np.zeros(0, np.int64), np.zeros(0)
    gi = np.concatenate(all_idx)
    gv = np.concatenate(all_val)
    order = np.argsort(gi)
    return gi[order], gv[order]
