"""Scenario builders: filter channel and Biot-only column."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .assembly import Discretization, PhysicalParams, SourceData, build_discretization
from .mesh import FLUID, PORO, Mesh, build_box_partition, build_structured_rect

# filter channel geometry (m)
CHANNEL_LENGTH = 0.75
CHANNEL_HEIGHT = 0.25
FILTER_X = (0.25, 0.5)
FILTER_HEIGHT = 0.2

MATERIALS = {
    "hard": dict(lambda_p=1e5, mu_p=1e4),
    "soft": dict(lambda_p=1e3, mu_p=1e2),
}


@dataclass
class Scenario:
    """Everything a time loop needs, plus the reference shift for output.

    Unknowns are stored as perturbations of a uniform rest state at pressure
    ``p_ref``; ``shift`` is added back on export.
    """

    disc: Discretization
    params: PhysicalParams
    data: SourceData
    p_ref: float = 0.0

    def shift(self) -> dict:
        """Constants to add to the stored deviations for physical output."""
        if self.p_ref == 0.0:
            return {}
        I = np.eye(2)
        return {"p_p": self.p_ref, "sigma_p": -self.params.alpha_p * self.p_ref * I, "T_f": -self.p_ref * I}


def filter_params(material="hard", **overrides) -> PhysicalParams:
    if material not in MATERIALS:
        raise ValueError(f"material must be one of {sorted(MATERIALS)}, got {material!r}")
    base = dict(mu=1.81e-8, rho=1.225e-3, s0=7e-2, K=np.array([[0.505, 0.495], [0.495, 0.505]]) * 1e-6,
                alpha_p=1.0, alpha_bjs=1.0, **MATERIALS[material])
    base.update(overrides)
    return PhysicalParams(**base)


def filter_meshes(h=0.025) -> tuple[Mesh, Mesh]:
    """Channel (fluid) around a filter block (poro) sitting on the bottom wall."""
    xs = [0.0, FILTER_X[0], FILTER_X[1], CHANNEL_LENGTH]
    ys = [0.0, FILTER_HEIGHT, CHANNEL_HEIGHT]
    nx = [max(1, int(round((xs[i + 1] - xs[i]) / h))) for i in range(3)]
    ny = [max(1, int(round((ys[i + 1] - ys[i]) / h))) for i in range(2)]

    def cell_tag(xc, yc):
        return PORO if FILTER_X[0] < xc < FILTER_X[1] and yc < FILTER_HEIGHT else FLUID

    def edge_tag(x0, y0, x1, y1, side):
        if side == "left":
            return "fN_in"
        if side == "right":
            return "fN_out"
        if side == "bottom" and FILTER_X[0] <= 0.5 * (x0 + x1) <= FILTER_X[1]:
            return "pN_sD"
        return "fD"

    parts = build_box_partition(xs, ys, cell_tag, edge_tag, nx, ny)
    return parts[FLUID], parts[PORO]


def filter_scenario(material="hard", h=0.025, p_ref=100.0, dp=1e-9, **overrides) -> Scenario:
    """Pressure-driven channel flow through a poroelastic filter.

    Solved for the deviation from the rest state p = p_ref, sigma_p =
    -alpha p_ref I. The pressure drop ``dp`` is applied as a normal
    pseudostress on the inlet.
    """
    params = filter_params(material, **overrides)
    mf, mp = filter_meshes(h)
    disc = build_discretization(mf, mp)
    return Scenario(disc, params, _inlet_data(disc, dp), p_ref)


def _inlet_data(disc: Discretization, dp: float) -> SourceData:
    """Pressure-drop data: normal pseudostress -dp on ``fN_in``, zero elsewhere."""
    if disc.mesh_f is None or dp == 0.0:
        return SourceData()
    mf = disc.mesh_f
    inlet = mf.edges_with_tag("fN_in")
    if not len(inlet):
        raise ValueError("a nonzero pressure drop needs edges tagged 'fN_in'")
    # inlet edges identified by their points; other fN edges get zero
    ends = mf.vertices[mf.edges[inlet]]

    def on_inlet(x):
        a, b = ends[:, 0][None], ends[:, 1][None]
        ab = b - a
        s = np.einsum("nkd,nkd->nk", x[:, None] - a, ab) / np.einsum("nkd,nkd->nk", ab, ab)
        foot = a + s[..., None] * ab
        dist = np.linalg.norm(x[:, None] - foot, axis=-1)
        return ((dist < 1e-10) & (s > -1e-12) & (s < 1 + 1e-12)).any(axis=1)

    def T_bc(x, t):
        p = np.where(on_inlet(x), dp, 0.0)
        return -p[:, None, None] * np.eye(2)

    return SourceData(T_f_bc=T_bc)


def custom_scenario(mesh_p: Mesh, mesh_f: Optional[Mesh], params: PhysicalParams, p_ref=0.0, dp=0.0) -> Scenario:
    """Meshes from files, zero forcing, optional inlet pressure drop."""
    disc = build_discretization(mesh_f, mesh_p)
    return Scenario(disc, params, _inlet_data(disc, dp), p_ref)


def column_meshes(nx=8, ny=64, width=0.25, height=1.0) -> Mesh:
    """Confined poro column: drained loaded top, clamped sealed walls and base."""
    tags = {"top": "pD_sN", "bottom": "pN_sD", "left": "pN_sD", "right": "pN_sD"}
    return build_structured_rect(((0.0, width), (0.0, height)), nx, ny, PORO, "right", tags)


def column_scenario(nx=8, ny=64, load=1.0, s0=5e-6, k=1e-9, height=1.0, **overrides) -> Scenario:
    """Consolidation of a confined column under a suddenly applied top load.

    Low storage and permeability make this the regime where non-mixed
    discretizations show spurious pressure oscillations.
    """
    base = dict(mu=1.0, rho=0.0, lambda_p=1.0, mu_p=1.0, s0=s0, K=k * np.eye(2), alpha_p=1.0)
    base.update(overrides)
    params = PhysicalParams(**base)
    disc = build_discretization(None, column_meshes(nx, ny, height=height))

    def sigma_bc(x, t):
        out = np.zeros((len(x), 2, 2))
        out[:, 1, 1] = -load
        return out

    data = SourceData(sigma_p_bc=sigma_bc)
    return Scenario(disc, params, data)


def row_profile(mesh: Mesh, values, tol=1e-9):
    """Average of a cellwise field over horizontal layers of a structured mesh.

    Returns (layer heights, averages) sorted by height.
    """
    yc = mesh.vertices[mesh.triangles, 1].mean(axis=1)
    ylo = mesh.vertices[mesh.triangles, 1].min(axis=1)
    keys = np.round(ylo / tol).astype(np.int64)
    uniq, inv = np.unique(keys, return_inverse=True)
    avg = np.bincount(inv, weights=np.asarray(values, dtype=float)) / np.bincount(inv)
    hts = np.bincount(inv, weights=yc) / np.bincount(inv)
    return hts, avg


def oscillation_indicator(mesh: Mesh, values) -> float:
    """Largest jump of a cellwise field across an interior edge, over its range."""
    values = np.asarray(values, dtype=float)
    inner = mesh.edge_tris[:, 1] >= 0
    a, b = mesh.edge_tris[inner, 0], mesh.edge_tris[inner, 1]
    spread = float(values.max() - values.min())
    if spread == 0.0:
        return 0.0
    return float(np.abs(values[a] - values[b]).max() / spread)
