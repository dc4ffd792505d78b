import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nsbiot.elements import (REF_VERTS, ElementKind, IncompatibleDomainError, build_space, eval_basis, interpolate,
                             piola_map, to_physical, to_reference)
from nsbiot.mesh import FLUID, PORO, Mesh, build_interface_traces, build_structured_rect
from nsbiot.quadrature import segment_rule

K = ElementKind
EDGES = ((1, 2), (2, 0), (0, 1))


def random_ref_points(rng, n):
    p = rng.random((n, 2))
    flip = p.sum(1) > 1
    p[flip] = 1 - p[flip]
    return p


def jittered_mesh(seed, nx=4, ny=3):
    base = build_structured_rect(((0, 1), (0, 1)), nx, ny)
    rng = np.random.default_rng(seed)
    v = base.vertices.copy()
    inner = (v[:, 0] > 0) & (v[:, 0] < 1) & (v[:, 1] > 0) & (v[:, 1] < 1)
    v[inner] += 0.2 / max(nx, ny) * (rng.random((inner.sum(), 2)) - 0.5)
    return Mesh(v, base.triangles, base.tri_tags, base.boundary_tags).validate()


def test_p1_partition_of_unity():
    pts = random_ref_points(np.random.default_rng(0), 50)
    b = eval_basis(K.P1_SKEW, pts)
    assert np.allclose(b.values.sum(-1), 1.0, atol=1e-15)
    assert np.allclose(b.grads.sum(0), 0.0, atol=1e-15)


def test_bdm_edge_moment_duality():
    # independent oracle: high-order Gauss rule on each reference edge, Legendre modes {1, 2s-1}
    rule = segment_rule(8)
    s, w = rule.points, rule.weights
    D = np.zeros((6, 6))
    for k, (a, b) in enumerate(EDGES):
        pa, pb = REF_VERTS[a], REF_VERTS[b]
        t = pb - pa
        n_scaled = np.array([t[1], -t[0]])
        vals = eval_basis(K.BDM1_VEC, pa + s[:, None] * t).values @ n_scaled  # (nq, 6)
        D[2 * k] = w @ vals
        D[2 * k + 1] = (w * (2 * s - 1)) @ vals
    assert np.allclose(D, np.eye(6), atol=1e-13)


def test_bdm_divergence_constant():
    rng = np.random.default_rng(1)
    pts = random_ref_points(rng, 3)
    b = eval_basis(K.BDM1_VEC, pts)
    assert b.values.shape == (3, 6, 2)
    assert np.abs(b.div - b.div[0]).max() < 1e-13
    # against a centred finite difference of the values
    h = 1e-6
    x = np.array([[0.3, 0.2]])
    dx = (eval_basis(K.BDM1_VEC, x + [h, 0]).values - eval_basis(K.BDM1_VEC, x - [h, 0]).values) / (2 * h)
    dy = (eval_basis(K.BDM1_VEC, x + [0, h]).values - eval_basis(K.BDM1_VEC, x - [0, h]).values) / (2 * h)
    assert np.allclose(dx[0, :, 0] + dy[0, :, 1], b.div[0], atol=1e-8)


def test_bdm_mat_rows_are_vector_basis():
    pts = random_ref_points(np.random.default_rng(2), 4)
    v = eval_basis(K.BDM1_VEC, pts)
    m = eval_basis(K.BDM1_MAT, pts)
    assert np.array_equal(m.values[:, :6, 0, :], v.values)
    assert np.array_equal(m.values[:, 6:, 1, :], v.values)
    assert not m.values[:, :6, 1, :].any() and not m.values[:, 6:, 0, :].any()


def test_eval_outside_reference_rejected():
    with pytest.raises(ValueError):
        eval_basis(K.BDM1_VEC, np.array([[0.8, 0.8]]))
    with pytest.raises(ValueError):
        eval_basis(K.TRACE_SCALAR, np.array([1.5]))


def test_piola_identity_and_scaling():
    rng = np.random.default_rng(3)
    v = rng.standard_normal((5, 2))
    d = rng.standard_normal(5)
    out, dout = piola_map(np.eye(2), 1.0, v, d)
    assert np.array_equal(out, v) and np.array_equal(dout, d)
    out, dout = piola_map(2 * np.eye(2), 4.0, v, d)
    assert np.allclose(out, v / 2) and np.allclose(dout, d / 4)


def test_piola_zero_det():
    with pytest.raises(ValueError, match="zero Jacobian"):
        piola_map(np.zeros((2, 2)), 0.0, np.ones(2))


def test_piola_divergence_theorem_random_elements():
    rng = np.random.default_rng(4)
    rule = segment_rule(8)
    s, w = rule.points, rule.weights
    count = 0
    while count < 20:
        P = rng.standard_normal((3, 2)) * rng.uniform(0.1, 5)
        J = np.stack([P[1] - P[0], P[2] - P[0]], axis=1)
        det = np.linalg.det(J)
        if abs(det) < 1e-2:
            continue
        count += 1
        b = eval_basis(K.BDM1_VEC, np.array([[1 / 3, 1 / 3]]))
        _, div = piola_map(J, det, b.values[0], b.div[0])
        vol = div * abs(det) / 2  # div is constant
        flux = np.zeros(6)
        for a, c in EDGES:
            ra, rc = REF_VERTS[a], REF_VERTS[c]
            ref = ra + s[:, None] * (rc - ra)
            vh = eval_basis(K.BDM1_VEC, ref).values  # (nq, 6, 2)
            v = piola_map(J, det, vh)
            t = P[c] - P[a]
            n_out = np.sign(det) * np.array([t[1], -t[0]])  # outward, scaled by length
            flux += w @ (v @ n_out)
        assert np.allclose(vol, flux, atol=1e-12 * max(1.0, np.abs(flux).max()))


@pytest.mark.parametrize("seed", range(3))
def test_hdiv_normal_continuity(seed):
    mesh = jittered_mesh(seed)
    rng = np.random.default_rng(seed)
    for kind in (K.BDM1_VEC, K.BDM1_MAT):
        space = build_space(mesh, kind)
        c = rng.standard_normal(space.dim)
        inner = np.flatnonzero(mesh.edge_tris[:, 1] >= 0)
        a, b = mesh.vertices[mesh.edges[inner, 0]], mesh.vertices[mesh.edges[inner, 1]]
        s = np.array([0.1, 0.5, 0.9])
        x = a[:, None] + s[None, :, None] * (b - a)[:, None]
        t = b - a
        n = np.stack([t[:, 1], -t[:, 0]], 1) / np.hypot(*t.T)[:, None]
        vals = []
        for side in (0, 1):
            cells = mesh.edge_tris[inner, side]
            ref = to_reference(mesh, cells, x)
            v = space.evaluate(c, cells, ref)
            vals.append(np.einsum("nq...j,nj->nq...", v, n))
        assert np.abs(vals[0] - vals[1]).max() <= 1e-12 * max(1.0, np.abs(vals[0]).max())


def test_hdiv_divergence_in_p0():
    mesh = jittered_mesh(7)
    rng = np.random.default_rng(7)
    pts = random_ref_points(rng, 3)
    cells = np.arange(mesh.n_triangles)
    for kind in (K.BDM1_VEC, K.BDM1_MAT):
        space = build_space(mesh, kind)
        d = space.evaluate(rng.standard_normal(space.dim), cells, pts, "div")
        # P0 projection is the cell mean; the residual must vanish
        assert np.abs(d - d.mean(axis=1, keepdims=True)).max() < 1e-12 * np.abs(d).max()


def test_interpolation_reproduces_linear_fields():
    mesh = jittered_mesh(5)
    cells = np.arange(mesh.n_triangles)
    pts = random_ref_points(np.random.default_rng(5), 4)
    x = to_physical(mesh, cells, pts)
    A = np.array([[1.0, -2.0], [0.5, 3.0]])
    f = lambda p: p @ A.T + np.array([0.3, -0.7])
    space = build_space(mesh, K.BDM1_VEC)
    got = space.evaluate(interpolate(space, f), cells, pts)
    assert np.allclose(got, f(x.reshape(-1, 2)).reshape(got.shape), atol=1e-12)
    fm = lambda p: np.stack([f(p), f(p)[:, ::-1]], axis=1)
    space = build_space(mesh, K.BDM1_MAT)
    got = space.evaluate(interpolate(space, fm), cells, pts)
    assert np.allclose(got, fm(x.reshape(-1, 2)).reshape(got.shape), atol=1e-12)
    space = build_space(mesh, K.P1_VEC)
    got = space.evaluate(interpolate(space, f), cells, pts)
    assert np.allclose(got, f(x.reshape(-1, 2)).reshape(got.shape), atol=1e-12)


def test_dimensions():
    m = build_structured_rect(((0, 1), (0, 1)), 1, 1)
    assert m.n_edges == 5
    assert build_space(m, K.BDM1_VEC).dim == 10
    assert build_space(m, K.BDM1_MAT).dim == 20
    assert build_space(m, K.P0_SCALAR).dim == 2
    assert build_space(m, K.P0_VEC).dim == 4
    assert build_space(m, K.P1_VEC).dim == 8
    assert build_space(m, K.P1_SKEW).dim == 4
    mf = build_structured_rect(((0, 1), (0, 1)), 3, 1, FLUID, "right", {"bottom": "interface"})
    mp = build_structured_rect(((0, 1), (-1, 0)), 5, 1, PORO, "right", {"top": "interface"})
    tr = build_interface_traces(mf, mp)
    assert build_space(tr, K.TRACE_SCALAR).dim == 10
    assert build_space(tr, K.TRACE_VEC).dim == 20


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6))
def test_dof_maps_contiguous(nx, ny):
    m = build_structured_rect(((0, 1), (0, 1)), nx, ny)
    for kind in (K.BDM1_VEC, K.BDM1_MAT, K.P0_SCALAR, K.P0_VEC, K.P1_VEC, K.P1_SKEW):
        sp = build_space(m, kind)
        assert np.array_equal(np.unique(sp.dof_map), np.arange(sp.dim))
        assert set(np.unique(sp.signs)) <= {-1.0, 1.0}


def test_shared_edge_signs_opposite():
    m = build_structured_rect(((0, 1), (0, 1)), 3, 3)
    for e in np.flatnonzero(m.edge_tris[:, 1] >= 0):
        t0, t1 = m.edge_tris[e]
        k0 = list(m.tri_edges[t0]).index(e)
        k1 = list(m.tri_edges[t1]).index(e)
        assert m.tri_edge_signs[t0, k0] == -m.tri_edge_signs[t1, k1]


def test_incompatible_domain():
    m = build_structured_rect(((0, 1), (0, 1)), 1, 1)
    with pytest.raises(IncompatibleDomainError):
        build_space(m, K.TRACE_SCALAR)
    mf = build_structured_rect(((0, 1), (0, 1)), 2, 1, FLUID, "right", {"bottom": "interface"})
    mp = build_structured_rect(((0, 1), (-1, 0)), 2, 1, PORO, "right", {"top": "interface"})
    with pytest.raises(IncompatibleDomainError):
        build_space(build_interface_traces(mf, mp), K.BDM1_VEC)
