"""Derived physical fields and file export (legacy VTK, interface CSV)."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def recover_pf(T_f, u_f, rho):
    """Fluid pressure p_f = -(tr T_f + rho |u_f|^2) / 2 from pointwise values.

    ``T_f`` is (..., 2, 2), ``u_f`` is (..., 2).
    """
    T_f = np.asarray(T_f, dtype=float)
    u_f = np.asarray(u_f, dtype=float)
    return -0.5 * (T_f[..., 0, 0] + T_f[..., 1, 1] + rho * (u_f * u_f).sum(-1))


def recover_sigma_f(T_f, u_f, rho):
    """Fluid Cauchy stress sigma_f = T_f + rho u_f (x) u_f."""
    T_f = np.asarray(T_f, dtype=float)
    u_f = np.asarray(u_f, dtype=float)
    return T_f + rho * u_f[..., :, None] * u_f[..., None, :]


def accumulate_displacement(u_s_history, dt, eta0=None):
    """Displacements eta^m = dt u_s^m + eta^(m-1) for every step of the history."""
    u_s_history = [np.asarray(u, dtype=float) for u in u_s_history]
    if not u_s_history and eta0 is None:
        return []
    eta = np.zeros_like(u_s_history[0]) if eta0 is None else np.array(eta0, dtype=float)
    out = []
    for u in u_s_history:
        eta = eta + dt * u
        out.append(eta.copy())
    return out


# ---------------------------------------------------------------------------
# cell-wise field extraction


def _centroid_ref():
    return np.array([[1.0 / 3.0, 1.0 / 3.0]])


def cell_fields(disc, state, rho, shift=None):
    """Cell-centre values of the physical fields on each subdomain.

    Returns ``{"fluid": {...}, "poro": {...}}`` with arrays shaped (M,),
    (M, 2) or (M, 2, 2). ``shift`` optionally maps field names to constants
    added back (for runs solved around a reference state).
    """
    shift = shift or {}
    ref = _centroid_ref()
    sp_ = disc.spaces
    mp = disc.mesh_p
    cp = np.arange(mp.n_triangles)
    poro = {
        "p_p": sp_["p_p"].evaluate(state.p_p, cp, ref)[:, 0],
        "u_p": sp_["u_p"].evaluate(state.u_p, cp, ref)[:, 0],
        "sigma_p": sp_["sigma_p"].evaluate(state.sigma_p, cp, ref)[:, 0],
        "u_s": sp_["u_s"].evaluate(state.u_s, cp, ref)[:, 0],
        "gamma_p": sp_["gamma_p"].evaluate(state.gamma_p, cp, ref)[:, 0],
    }
    if state.eta_p is not None:
        poro["eta_p"] = sp_["u_s"].evaluate(state.eta_p, cp, ref)[:, 0]
    if "p_p" in shift:
        poro["p_p"] = poro["p_p"] + shift["p_p"]
    if "sigma_p" in shift:
        poro["sigma_p"] = poro["sigma_p"] + shift["sigma_p"]
    out = {"poro": poro}
    if disc.has_fluid:
        mf = disc.mesh_f
        cf = np.arange(mf.n_triangles)
        T = sp_["T_f"].evaluate(state.T_f, cf, ref)[:, 0]
        if "T_f" in shift:
            T = T + shift["T_f"]
        u = sp_["u_f"].evaluate(state.u_f, cf, ref)[:, 0]
        out["fluid"] = {
            "u_f": u,
            "T_f": T,
            "p_f": recover_pf(T, u, rho),
            "sigma_f": recover_sigma_f(T, u, rho),
        }
    return out


# ---------------------------------------------------------------------------
# VTK legacy ASCII


@dataclass(frozen=True)
class FieldExport:
    name: str
    attachment: str  # "point" or "cell"
    components: int  # 1, 2 or 4

    def __post_init__(self):
        if self.attachment not in ("point", "cell"):
            raise ValueError("attachment must be 'point' or 'cell'")
        if self.components not in (1, 2, 4):
            raise ValueError("components must be 1, 2 or 4")


def _components(arr):
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 1:
        return arr[:, None], 1
    if arr.ndim == 2 and arr.shape[1] == 2:
        return arr, 2
    if arr.ndim == 3 and arr.shape[1:] == (2, 2):
        return arr.reshape(len(arr), 4), 4
    raise ValueError(f"unsupported field shape {arr.shape}")


def write_vtk(path, vertices, triangles, cell_data=None, point_data=None, title="nsbiot"):
    """Write a legacy ASCII VTK unstructured grid of triangles.

    Fields are written as SCALARS with 1, 2 or 4 components (tensors
    flattened row-wise). Returns the list of :class:`FieldExport`.
    """
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {len(vertices)} double"]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in vertices]
    lines.append(f"CELLS {len(triangles)} {4 * len(triangles)}")
    lines += [f"3 {a} {b} {c}" for a, b, c in triangles]
    lines.append(f"CELL_TYPES {len(triangles)}")
    lines += ["5"] * len(triangles)
    exports = []
    for att, data, count in (("cell", cell_data, len(triangles)), ("point", point_data, len(vertices))):
        if not data:
            continue
        lines.append(f"{att.upper()}_DATA {count}")
        for name, arr in data.items():
            vals, nc = _components(arr)
            if len(vals) != count:
                raise ValueError(f"field {name!r} has {len(vals)} entries, expected {count}")
            lines.append(f"SCALARS {name} double {nc}")
            lines.append("LOOKUP_TABLE default")
            lines += [" ".join(f"{v:.17g}" for v in row) for row in vals]
            exports.append(FieldExport(name, att, nc))
    Path(path).write_text("\n".join(lines) + "\n")
    return exports


def export_vtk(disc, state, path, rho, shift=None, fields=None):
    """Export both subdomains of a state into one VTK file.

    The meshes are concatenated; a ``subdomain`` cell field marks fluid (0)
    and poroelastic (1) cells and every physical field is zero-filled on
    the subdomain where it is undefined.
    """
    cf = cell_fields(disc, state, rho, shift)
    parts = []
    if disc.has_fluid:
        parts.append(("fluid", disc.mesh_f))
    parts.append(("poro", disc.mesh_p))
    verts, tris, sub, off = [], [], [], 0
    for i, (name, mesh) in enumerate(parts):
        verts.append(mesh.vertices)
        tris.append(mesh.triangles + off)
        sub.append(np.full(mesh.n_triangles, 0 if name == "fluid" else 1, dtype=float))
        off += mesh.n_vertices
    verts = np.vstack(verts)
    tris = np.vstack(tris)
    ncell = len(tris)
    data = {"subdomain": np.concatenate(sub)}
    names = []
    for name, _ in parts:
        names += [k for k in cf[name] if k not in names]
    if fields is not None:
        names = [n for n in names if n in fields]
    for k in names:
        blocks = []
        for name, mesh in parts:
            if k in cf[name]:
                blocks.append(np.asarray(cf[name][k], dtype=float))
            else:
                shape = next(np.asarray(cf[o][k]).shape[1:] for o, _ in parts if k in cf[o])
                blocks.append(np.zeros((mesh.n_triangles,) + shape))
        data[k] = np.concatenate(blocks)
        assert len(data[k]) == ncell
    return write_vtk(path, verts, tris, cell_data=data)


def read_vtk(path):
    """Minimal structural parser for files written by :func:`write_vtk`."""
    tok = Path(path).read_text().split("\n")
    if not tok[0].startswith("# vtk DataFile Version 3.0"):
        raise ValueError("not a legacy VTK 3.0 file")
    if tok[2].strip() != "ASCII" or tok[3].strip() != "DATASET UNSTRUCTURED_GRID":
        raise ValueError("expected ASCII unstructured grid")
    i = 4
    head = tok[i].split()
    n_pts = int(head[1])
    pts = np.array([[float(v) for v in ln.split()] for ln in tok[i + 1:i + 1 + n_pts]])
    i += 1 + n_pts
    head = tok[i].split()
    if head[0] != "CELLS":
        raise ValueError("CELLS section missing")
    n_cells, size = int(head[1]), int(head[2])
    cells = [list(map(int, ln.split())) for ln in tok[i + 1:i + 1 + n_cells]]
    if sum(len(c) for c in cells) != size or any(c[0] != len(c) - 1 for c in cells):
        raise ValueError("inconsistent CELLS section")
    i += 1 + n_cells
    if tok[i].split()[0] != "CELL_TYPES":
        raise ValueError("CELL_TYPES section missing")
    types = [int(t) for t in tok[i + 1:i + 1 + n_cells]]
    i += 1 + n_cells
    fields = {}
    att, count = None, 0
    while i < len(tok) and tok[i].strip():
        parts = tok[i].split()
        if parts[0] in ("CELL_DATA", "POINT_DATA"):
            att, count = parts[0], int(parts[1])
            i += 1
            continue
        if parts[0] != "SCALARS":
            raise ValueError(f"unexpected line {tok[i]!r}")
        name, nc = parts[1], int(parts[3]) if len(parts) > 3 else 1
        if tok[i + 1].split()[0] != "LOOKUP_TABLE":
            raise ValueError("LOOKUP_TABLE missing")
        vals = np.array([[float(v) for v in ln.split()] for ln in tok[i + 2:i + 2 + count]])
        if vals.shape != (count, nc):
            raise ValueError(f"field {name} has shape {vals.shape}, expected {(count, nc)}")
        fields[name] = (att, vals)
        i += 2 + count
    return {"points": pts[:, :2], "cells": np.array([c[1:] for c in cells]), "types": types, "fields": fields}


# ---------------------------------------------------------------------------
# interface time series


INTERFACE_COLUMNS = ("step", "t", "arclength", "x", "y", "uf_n", "up_us_n", "sigf_nt", "sigp_nt", "eta_n")


def interface_rows(disc, state, rho, step, shift=None):
    """Interface quantities at merged-segment midpoints, ordered by arclength."""
    from .assembly import interface_quad

    iq = interface_quad(disc.traces, order=1)
    sp_ = disc.spaces
    rows = []
    x = iq.points[:, 0, :]
    seg_len = np.hypot(*(disc.traces.merged[:, 2:] - disc.traces.merged[:, :2]).T)
    arc = np.cumsum(seg_len) - 0.5 * seg_len
    ref_f = iq.ref_f
    ref_p = iq.ref_p
    T = sp_["T_f"].evaluate(state.T_f, iq.cell_f, ref_f)[:, 0]
    if shift and "T_f" in shift:
        T = T + shift["T_f"]
    u = sp_["u_f"].evaluate(state.u_f, iq.cell_f, ref_f)[:, 0]
    S = sp_["sigma_p"].evaluate(state.sigma_p, iq.cell_p, ref_p)[:, 0]
    if shift and "sigma_p" in shift:
        S = S + shift["sigma_p"]
    up = sp_["u_p"].evaluate(state.u_p, iq.cell_p, ref_p)[:, 0]
    us = sp_["u_s"].evaluate(state.u_s, iq.cell_p, ref_p)[:, 0]
    eta = sp_["u_s"].evaluate(state.eta_p, iq.cell_p, ref_p)[:, 0] if state.eta_p is not None else np.zeros_like(us)
    nf, tf = iq.n_f, iq.t_f
    npor = -nf
    sig_f = recover_sigma_f(T, u, rho)
    for i in range(len(x)):
        rows.append((
            step, state.t, arc[i], x[i, 0], x[i, 1],
            float(u[i] @ nf[i]),
            float((up[i] + us[i]) @ npor[i]),
            float((sig_f[i] @ nf[i]) @ tf[i]),
            float((S[i] @ npor[i]) @ tf[i]),
            float(eta[i] @ npor[i]),
        ))
    return rows


def write_interface_csv(path, rows, append=False):
    path = Path(path)
    new = not append or not path.exists()
    with path.open("a" if append else "w", newline="") as fh:
        wr = csv.writer(fh)
        if new:
            wr.writerow(INTERFACE_COLUMNS)
        for r in rows:
            wr.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in r])


