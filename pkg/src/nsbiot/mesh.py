"""Triangular meshes of the fluid and poroelastic subdomains and interface traces.

Boundary edges carry free-form string tags. The problem setup interprets the
following vocabulary:

``interface``
    the fluid/poroelastic interface.
``fD`` / ``fN`` / ``fN_in`` / ``fN_out``
    fluid velocity given / fluid pseudostress traction given.
``pX_sY`` with X, Y in {D, N}
    poroelastic edges; ``pD`` prescribes the Darcy pressure, ``pN`` the
    Darcy normal flux, ``sD`` the structure velocity and ``sN`` the
    poroelastic traction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

INTERFACE = "interface"
FLUID = "fluid"
PORO = "poro"
SUBDOMAINS = (FLUID, PORO)
GEOM_TOL = 1e-10

MESH_HEADER = "nsbiot-mesh v1"


class MeshError(ValueError):
    """Invalid mesh data or a violated mesh invariant."""


class MeshParseError(MeshError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


class GeometryMismatchError(MeshError):
    """The two sides of the interface do not cover the same point set."""


@dataclass(frozen=True, eq=False)
class Mesh:
    """An immutable triangulation with tagged boundary edges.

    Triangles are stored counter-clockwise. Local edge ``k`` of a triangle is
    the one opposite local vertex ``k`` and runs from vertex ``k+1`` to
    vertex ``k+2`` (mod 3). Global edges store the lower vertex index first.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    tri_tags: np.ndarray
    boundary_tags: dict = field(default_factory=dict)

    # derived
    edges: np.ndarray = field(init=False, repr=False)
    tri_edges: np.ndarray = field(init=False, repr=False)
    tri_edge_signs: np.ndarray = field(init=False, repr=False)
    edge_tris: np.ndarray = field(init=False, repr=False)
    edge_tags: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        verts = np.ascontiguousarray(self.vertices, dtype=float)
        tris = np.ascontiguousarray(self.triangles, dtype=np.int64)
        tags = np.asarray(self.tri_tags, dtype=object)
        if verts.ndim != 2 or verts.shape[1] != 2:
            raise MeshError("vertices must have shape (N, 2)")
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise MeshError("triangles must have shape (M, 3)")
        if len(tags) != len(tris):
            raise MeshError("one subdomain tag per triangle required")
        if len(tris) == 0:
            raise MeshError("mesh has no triangles")
        if tris.min() < 0 or tris.max() >= len(verts):
            raise MeshError("triangle references a vertex that does not exist")
        for name, arr in (("vertices", verts), ("triangles", tris)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "tri_tags", tags)

        loc = np.array([[1, 2], [2, 0], [0, 1]])
        ends = tris[:, loc]  # (M, 3, 2) local direction
        lo = ends.min(axis=2)
        hi = ends.max(axis=2)
        keys = lo * len(verts) + hi
        uniq, inv = np.unique(keys.ravel(), return_inverse=True)
        edges = np.stack([uniq // len(verts), uniq % len(verts)], axis=1)
        tri_edges = inv.reshape(-1, 3)
        signs = np.where(ends[:, :, 0] < ends[:, :, 1], 1, -1)

        edge_tris = -np.ones((len(edges), 2), dtype=np.int64)
        counts = np.zeros(len(edges), dtype=np.int64)
        for t, k in np.ndindex(tri_edges.shape):
            e = tri_edges[t, k]
            if counts[e] >= 2:
                raise MeshError(f"edge {e} ({edges[e, 0]}, {edges[e, 1]}) has more than two adjacent triangles")
            edge_tris[e, counts[e]] = t
            counts[e] += 1

        bt = {}
        for (i, j), tag in dict(self.boundary_tags).items():
            bt[(min(int(i), int(j)), max(int(i), int(j)))] = str(tag)
        edge_tags = np.array([bt.get((int(a), int(b)), "") for a, b in edges], dtype=object)
        known = {(int(a), int(b)) for a, b in edges}
        for key in bt:
            if key not in known:
                raise MeshError(f"boundary tag on ({key[0]}, {key[1]}) which is not a mesh edge")
        for name, arr in (("edges", edges), ("tri_edges", tri_edges),
                          ("tri_edge_signs", signs), ("edge_tris", edge_tris)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "edge_tags", edge_tags)
        object.__setattr__(self, "boundary_tags", bt)

    # basic geometry -----------------------------------------------------
    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    def signed_areas(self):
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def jacobians(self):
        """Affine map data: (J, detJ, x0) with x = x0 + J @ xhat."""
        p = self.vertices[self.triangles]
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        return J, det, p[:, 0]

    def edge_lengths(self):
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def edge_normals(self):
        """Unit normals of the globally oriented edges (tangent rotated by -90 degrees)."""
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        L = np.hypot(d[:, 0], d[:, 1])
        return np.stack([d[:, 1], -d[:, 0]], axis=1) / L[:, None]

    def boundary_edges(self):
        return np.flatnonzero(self.edge_tris[:, 1] < 0)

    def edges_with_tag(self, *tags):
        tags = set(tags)
        return np.array([e for e in range(self.n_edges) if self.edge_tags[e] in tags], dtype=np.int64)

    def outward_sign(self, e):
        """+1 where the global normal of boundary edge(s) ``e`` points out of the mesh."""
        e = np.atleast_1d(e)
        t = self.edge_tris[e, 0]
        k = np.argmax(self.tri_edges[t] == e[:, None], axis=1)
        return self.tri_edge_signs[t, k]

    def subdomains(self):
        return sorted(set(self.tri_tags))

    def validate(self):
        """Check all invariants eagerly; raise :class:`MeshError` on violation."""
        areas = self.signed_areas()
        bad = np.flatnonzero(areas <= 0)
        if len(bad):
            raise MeshError(f"triangle {bad[0]} has non-positive signed area {areas[bad[0]]:.3e}")
        for e in self.boundary_edges():
            if not self.edge_tags[e]:
                a, b = self.edges[e]
                raise MeshError(f"boundary edge {e} ({a}, {b}) has no tag")
        for e in np.flatnonzero(self.edge_tris[:, 1] >= 0):
            tag = self.edge_tags[e]
            t0, t1 = self.edge_tris[e]
            same = self.tri_tags[t0] == self.tri_tags[t1]
            if tag and tag != INTERFACE and same:
                raise MeshError(f"interior edge {e} carries boundary tag {tag!r}")
            if not same and tag != INTERFACE:
                raise MeshError(f"edge {e} separates subdomains but is not tagged {INTERFACE!r}")
        return self

    def submesh(self, subdomain):
        """Extract the triangles of one subdomain as a standalone mesh."""
        keep = np.flatnonzero(self.tri_tags == subdomain)
        if not len(keep):
            raise MeshError(f"no triangles tagged {subdomain!r}")
        tris = self.triangles[keep]
        used = np.unique(tris)
        remap = -np.ones(self.n_vertices, dtype=np.int64)
        remap[used] = np.arange(len(used))
        new_tris = remap[tris]
        bt = {}
        edge_set = set()
        loc = np.array([[1, 2], [2, 0], [0, 1]])
        for a, b in tris[:, loc].reshape(-1, 2):
            edge_set.add((min(a, b), max(a, b)))
        for key, tag in self.boundary_tags.items():
            if key in edge_set:
                bt[(remap[key[0]], remap[key[1]])] = tag
        return Mesh(self.vertices[used], new_tris, np.full(len(keep), subdomain, dtype=object), bt)


def mesh_size(mesh: Mesh) -> float:
    """Maximum element diameter (longest triangle edge)."""
    if mesh.n_triangles == 0:
        raise MeshError("empty mesh")
    return float(mesh.edge_lengths()[mesh.tri_edges].max())


def build_structured_rect(rect, nx, ny, tag=FLUID, diag="right", side_tags=None) -> Mesh:
    """Structured triangulation of an axis-aligned rectangle.

    ``rect`` is ``((x0, x1), (y0, y1))``. Each of the ``nx * ny`` cells is
    split into two triangles along the diagonal given by ``diag``: ``"right"``
    joins lower-left to upper-right, ``"left"`` lower-right to upper-left.
    Boundary edges are tagged by side (``left``, ``right``, ``bottom``,
    ``top``) unless ``side_tags`` maps a side to another tag.
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"nx and ny must be positive integers, got {nx}, {ny}")
    (x0, x1), (y0, y1) = rect
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate rectangle {rect}")
    if diag not in ("right", "left"):
        raise ValueError(f"diag must be 'right' or 'left', got {diag!r}")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    vid = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    a = vid[:-1, :-1].ravel()
    b = vid[:-1, 1:].ravel()
    c = vid[1:, 1:].ravel()
    d = vid[1:, :-1].ravel()
    if diag == "right":
        t1 = np.stack([a, b, c], axis=1)
        t2 = np.stack([a, c, d], axis=1)
    else:
        t1 = np.stack([a, b, d], axis=1)
        t2 = np.stack([b, c, d], axis=1)
    tris = np.stack([t1, t2], axis=1).reshape(-1, 3)

    names = {"left": "left", "right": "right", "bottom": "bottom", "top": "top"}
    names.update(side_tags or {})
    bt = {}
    for i in range(nx):
        bt[(vid[0, i], vid[0, i + 1])] = names["bottom"]
        bt[(vid[ny, i], vid[ny, i + 1])] = names["top"]
    for j in range(ny):
        bt[(vid[j, 0], vid[j + 1, 0])] = names["left"]
        bt[(vid[j, nx], vid[j + 1, nx])] = names["right"]
    return Mesh(verts, tris, np.full(len(tris), tag, dtype=object), bt).validate()


def build_box_partition(xs, ys, cell_tag, edge_tag, nx_per, ny_per) -> dict:
    """Structured mesh of a rectangle divided into axis-aligned blocks.

    ``xs``/``ys`` are the block break points, ``nx_per``/``ny_per`` the
    number of cells per block in each direction. ``cell_tag(xc, yc)`` gives
    the subdomain of a cell centre and ``edge_tag(x0, y0, x1, y1, side)``
    the tag of an outer boundary edge. Returns one :class:`Mesh` per
    subdomain; block boundaries between subdomains are tagged ``interface``.
    """
    gx = np.concatenate([np.linspace(xs[i], xs[i + 1], n + 1)[:-1] for i, n in enumerate(nx_per)] + [[xs[-1]]])
    gy = np.concatenate([np.linspace(ys[i], ys[i + 1], n + 1)[:-1] for i, n in enumerate(ny_per)] + [[ys[-1]]])
    nx, ny = len(gx) - 1, len(gy) - 1
    X, Y = np.meshgrid(gx, gy, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    vid = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    tris, tags = [], []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = vid[j, i], vid[j, i + 1], vid[j + 1, i + 1], vid[j + 1, i]
            sub = cell_tag(0.5 * (gx[i] + gx[i + 1]), 0.5 * (gy[j] + gy[j + 1]))
            tris += [(a, b, c), (a, c, d)]
            tags += [sub, sub]
    tris = np.array(tris)
    tags = np.array(tags, dtype=object)
    bt = {}
    for i in range(nx):
        bt[(vid[0, i], vid[0, i + 1])] = edge_tag(gx[i], gy[0], gx[i + 1], gy[0], "bottom")
        bt[(vid[ny, i], vid[ny, i + 1])] = edge_tag(gx[i], gy[ny], gx[i + 1], gy[ny], "top")
    for j in range(ny):
        bt[(vid[j, 0], vid[j + 1, 0])] = edge_tag(gx[0], gy[j], gx[0], gy[j + 1], "left")
        bt[(vid[j, nx], vid[j + 1, nx])] = edge_tag(gx[nx], gy[j], gx[nx], gy[j + 1], "right")
    whole = Mesh(verts, tris, tags, bt)
    for e in np.flatnonzero(whole.edge_tris[:, 1] >= 0):
        t0, t1 = whole.edge_tris[e]
        if tags[t0] != tags[t1]:
            bt[tuple(int(v) for v in whole.edges[e])] = INTERFACE
    whole = Mesh(verts, tris, tags, bt).validate()
    return {sub: whole.submesh(sub) for sub in whole.subdomains()}


# file I/O ------------------------------------------------------------------

def save_mesh(mesh: Mesh, path):
    lines = [MESH_HEADER, f"vertices {mesh.n_vertices}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"triangles {mesh.n_triangles}")
    lines += [f"{i} {j} {k} {tag}" for (i, j, k), tag in zip(mesh.triangles.tolist(), mesh.tri_tags)]
    items = sorted(mesh.boundary_tags.items())
    lines.append(f"boundary {len(items)}")
    lines += [f"{i} {j} {tag}" for (i, j), tag in items]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> Mesh:
    """Read a mesh in the ``nsbiot-mesh v1`` ASCII format and validate it."""
    path = Path(path)
    raw = path.read_text().splitlines()
    # keep original line numbers, skip blank and comment lines
    lines = [(n + 1, ln.strip()) for n, ln in enumerate(raw) if ln.strip() and not ln.lstrip().startswith("#")]
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(lines):
            last = lines[-1][0] if lines else 0
            raise MeshParseError(path, last + 1, "unexpected end of file")
        item = lines[pos]
        pos += 1
        return item

    def section(name):
        lineno, text = take()
        parts = text.split()
        if len(parts) != 2 or parts[0] != name:
            raise MeshParseError(path, lineno, f"expected '{name} <count>', got {text!r}")
        try:
            count = int(parts[1])
        except ValueError:
            raise MeshParseError(path, lineno, f"bad count {parts[1]!r}") from None
        if count < 0:
            raise MeshParseError(path, lineno, "negative count")
        return count

    lineno, text = take()
    if text != MESH_HEADER:
        raise MeshParseError(path, lineno, f"expected header {MESH_HEADER!r}")
    nv = section("vertices")
    verts = []
    for _ in range(nv):
        lineno, text = take()
        parts = text.split()
        if len(parts) != 2:
            raise MeshParseError(path, lineno, "vertex line needs 'x y'")
        try:
            verts.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise MeshParseError(path, lineno, f"bad coordinate in {text!r}") from None
    nt = section("triangles")
    tris, tags = [], []
    for _ in range(nt):
        lineno, text = take()
        parts = text.split()
        if len(parts) != 4:
            raise MeshParseError(path, lineno, "triangle line needs 'i j k subdomain_tag'")
        try:
            ijk = tuple(int(p) for p in parts[:3])
        except ValueError:
            raise MeshParseError(path, lineno, f"bad vertex index in {text!r}") from None
        if parts[3] not in SUBDOMAINS:
            raise MeshParseError(path, lineno, f"unknown subdomain tag {parts[3]!r}")
        if min(ijk) < 0 or max(ijk) >= nv:
            raise MeshParseError(path, lineno, "vertex index out of range")
        tris.append(ijk)
        tags.append(parts[3])
    nb = section("boundary")
    bt = {}
    for _ in range(nb):
        lineno, text = take()
        parts = text.split()
        if len(parts) != 3:
            raise MeshParseError(path, lineno, "boundary line needs 'i j tag'")
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise MeshParseError(path, lineno, f"bad vertex index in {text!r}") from None
        bt[(i, j)] = parts[2]
    if pos != len(lines):
        raise MeshParseError(path, lines[pos][0], "trailing content")
    return Mesh(np.array(verts, dtype=float).reshape(-1, 2), np.array(tris, dtype=np.int64).reshape(-1, 3),
                np.array(tags, dtype=object), bt).validate()


# interface traces -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class InterfaceTraces:
    """Interface partitions induced by both meshes and their common refinement.

    ``trace_f``/``trace_p`` hold the mesh edge indices (in arclength order)
    of the interface edges of each side. ``merged`` is an array of
    sub-segments with columns (x0, y0, x1, y1); ``parent_f``/``parent_p``
    give, per merged segment, the position in ``trace_f``/``trace_p``.
    ``seg_f``/``seg_p`` hold the end points (x0, y0, x1, y1) of each trace
    segment, oriented along the common arclength direction.
    """

    mesh_f: Mesh
    mesh_p: Mesh
    trace_f: np.ndarray
    trace_p: np.ndarray
    merged: np.ndarray
    parent_f: np.ndarray
    parent_p: np.ndarray
    seg_f: np.ndarray
    seg_p: np.ndarray

    @property
    def n_segments_p(self):
        return len(self.trace_p)

    def merged_lengths(self):
        d = self.merged[:, 2:] - self.merged[:, :2]
        return np.hypot(d[:, 0], d[:, 1])

    def length(self):
        return float(self.merged_lengths().sum())


def _interface_segments(mesh):
    ids = mesh.edges_with_tag(INTERFACE)
    if not len(ids):
        raise MeshError("mesh has no interface edges")
    for e in ids:
        if mesh.edge_tris[e, 1] >= 0:
            raise MeshError(f"interface edge {e} is not on the mesh boundary")
    return ids


def _order_polyline(mesh, ids):
    """Sort interface edges into a chain and return (edge ids, start points, end points)."""
    V = mesh.vertices
    adj = {}
    for e in ids:
        a, b = mesh.edges[e]
        adj.setdefault(int(a), []).append(int(e))
        adj.setdefault(int(b), []).append(int(e))
    ends = [v for v, es in adj.items() if len(es) == 1]
    if any(len(es) > 2 for es in adj.values()):
        raise MeshError("interface is not a simple polyline")
    if len(ends) != 2:
        raise MeshError("interface must be a single open polyline")
    # deterministic start: lexicographically smallest end point
    start = min(ends, key=lambda v: (V[v][0], V[v][1]))
    order, p0, p1 = [], [], []
    v = start
    prev = None
    while True:
        nxt = [e for e in adj[v] if e != prev]
        if not nxt:
            break
        e = nxt[0]
        a, b = (int(x) for x in mesh.edges[e])
        w = b if a == v else a
        order.append(e)
        p0.append(V[v])
        p1.append(V[w])
        prev, v = e, w
    if len(order) != len(ids):
        raise MeshError("interface edges are not connected")
    return np.array(order), np.array(p0), np.array(p1)


def build_interface_traces(mesh_f: Mesh, mesh_p: Mesh) -> InterfaceTraces:
    """Common refinement of the two interface partitions.

    The interface must be a polyline of straight axis-aligned pieces made of
    mesh edges. Both sides must describe the same point set to within
    ``GEOM_TOL``.
    """
    ids_f, a_f, b_f = _order_polyline(mesh_f, _interface_segments(mesh_f))
    ids_p, a_p, b_p = _order_polyline(mesh_p, _interface_segments(mesh_p))
    for a, b in ((a_f, b_f), (a_p, b_p)):
        d = b - a
        if np.any((np.abs(d[:, 0]) > GEOM_TOL) & (np.abs(d[:, 1]) > GEOM_TOL)):
            raise MeshError("interface pieces must be axis-aligned")

    # break points along the fluid chain: all vertices of both partitions
    def chain_param(pts, a, b):
        seg_len = np.hypot(*(b - a).T)
        offs = np.concatenate([[0.0], np.cumsum(seg_len)])
        out = np.empty(len(pts))
        for i, p in enumerate(pts):
            d = np.abs((b - a)[:, 0] * (p[1] - a[:, 1]) - (b - a)[:, 1] * (p[0] - a[:, 0])) / seg_len
            s = ((p - a) * (b - a)).sum(axis=1) / seg_len ** 2
            ok = np.flatnonzero((d <= GEOM_TOL) & (s >= -GEOM_TOL / seg_len) & (s <= 1 + GEOM_TOL / seg_len))
            if not len(ok):
                raise GeometryMismatchError(f"point ({p[0]:.12g}, {p[1]:.12g}) is not on the other interface trace")
            k = ok[0]
            out[i] = offs[k] + np.clip(s[k], 0.0, 1.0) * seg_len[k]
        return out

    pts_p = np.vstack([a_p, b_p[-1:]])
    pts_f = np.vstack([a_f, b_f[-1:]])
    total_f = np.hypot(*(b_f - a_f).T).sum()
    total_p = np.hypot(*(b_p - a_p).T).sum()
    if abs(total_f - total_p) > GEOM_TOL * max(1.0, len(ids_f) + len(ids_p)):
        raise GeometryMismatchError(f"interface lengths differ: {total_f!r} vs {total_p!r}")
    sp = chain_param(pts_p, a_f, b_f)
    # the poro chain may run in the opposite direction
    if sp[0] > sp[-1]:
        ids_p, a_p, b_p = ids_p[::-1], b_p[::-1], a_p[::-1]
        pts_p = np.vstack([a_p, b_p[-1:]])
        sp = sp[::-1]
    if abs(sp[0]) > GEOM_TOL or abs(sp[-1] - total_f) > GEOM_TOL * max(1.0, len(ids_f)):
        raise GeometryMismatchError("interface traces do not cover the same polyline")
    chain_param(pts_f, a_p, b_p)  # every fluid vertex must also lie on the poro trace

    sf = np.concatenate([[0.0], np.cumsum(np.hypot(*(b_f - a_f).T))])
    params = np.concatenate([sf, sp])
    params.sort()
    brk = [params[0]]
    for s in params[1:]:
        if s - brk[-1] > GEOM_TOL:
            brk.append(s)
    brk = np.array(brk)
    brk[0], brk[-1] = 0.0, total_f

    mids = 0.5 * (brk[:-1] + brk[1:])
    parent_f = np.searchsorted(sf, mids) - 1
    parent_p = np.searchsorted(sp, mids) - 1

    def point_at(s):
        k = np.clip(np.searchsorted(sf, s, side="right") - 1, 0, len(ids_f) - 1)
        L = sf[k + 1] - sf[k]
        return a_f[k] + ((s - sf[k]) / L)[:, None] * (b_f[k] - a_f[k])

    P0 = point_at(brk[:-1])
    P1 = point_at(brk[1:])
    # snap merged end points onto the exact vertex coordinates where possible
    for P, s in ((P0, brk[:-1]), (P1, brk[1:])):
        for cand_s, cand in ((sf, pts_f), (sp, pts_p)):
            idx = np.searchsorted(cand_s, s)
            for i, (j, si) in enumerate(zip(idx, s)):
                for jj in (j - 1, j):
                    if 0 <= jj < len(cand_s) and abs(cand_s[jj] - si) <= GEOM_TOL:
                        P[i] = cand[jj]
    merged = np.hstack([P0, P1])
    return InterfaceTraces(mesh_f, mesh_p, ids_f, ids_p, merged, parent_f.astype(np.int64),
                           parent_p.astype(np.int64), np.hstack([a_f, b_f]), np.hstack([a_p, b_p]))

