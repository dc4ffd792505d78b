import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from nsbiot.assembly import (ParameterError, PhysicalParams, SourceData, apply_compliance, assemble_convective,
                             assemble_interface_blocks, assemble_rhs, assemble_static_blocks,
                             assemble_storage_blocks, build_discretization, deviatoric, essential_dofs,
                             inverse_compliance, tangential_permeability, volume_quad)
from nsbiot.elements import interpolate
from nsbiot.mesh import FLUID, PORO, build_structured_rect
from nsbiot.verify import EXAMPLE1_FLUID_TAGS, EXAMPLE1_PORO_TAGS, example1_meshes

finite = st.floats(-1e3, 1e3, allow_nan=False)


def small_disc(nf=(4, 3), np_=(3, 3)):
    mf = build_structured_rect(((0, 1), (0, 1)), *nf, FLUID, "right", EXAMPLE1_FLUID_TAGS)
    mp = build_structured_rect(((0, 1), (-1, 0)), *np_, PORO, "right", EXAMPLE1_PORO_TAGS)
    return build_discretization(mf, mp)


def rand_params(seed):
    rng = np.random.default_rng(seed)
    R = np.linalg.qr(rng.standard_normal((2, 2)))[0]
    K = R @ np.diag(rng.uniform(0.2, 3, 2)) @ R.T
    return PhysicalParams(mu=rng.uniform(0.5, 2), rho=rng.uniform(0.5, 2), lambda_p=rng.uniform(0.5, 5),
                          mu_p=rng.uniform(0.5, 5), s0=rng.uniform(0.1, 2), K=K, alpha_p=rng.uniform(0.2, 1))


def sym(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


# --- pointwise operators ---------------------------------------------------

def test_compliance_of_identity():
    assert np.allclose(apply_compliance(np.eye(2), 1.0, 1.0), 0.25 * np.eye(2), atol=1e-16)


def test_compliance_inverse_pair():
    rng = np.random.default_rng(0)
    for _ in range(10):
        tau = sym(rng.standard_normal((2, 2)))
        lam, mu = rng.uniform(0.1, 10, 2)
        assert np.abs(apply_compliance(inverse_compliance(tau, lam, mu), lam, mu) - tau).max() <= 1e-14 * max(
            1, np.abs(tau).max())
        assert np.abs(inverse_compliance(apply_compliance(tau, lam, mu), lam, mu) - tau).max() <= 1e-14 * max(
            1, np.abs(tau).max())


def test_compliance_bounds_random():
    rng = np.random.default_rng(1)
    p = PhysicalParams(lambda_p=3.0, mu_p=0.7)
    for _ in range(100):
        tau = sym(rng.standard_normal((2, 2)))
        ratio = np.sum(apply_compliance(tau, p.lambda_p, p.mu_p) * tau) / np.sum(tau * tau)
        assert p.a_min * (1 - 1e-14) <= ratio <= p.a_max * (1 + 1e-14)


@settings(max_examples=100, deadline=None)
@given(arrays(float, (2, 2), elements=finite), st.floats(0.01, 100), st.floats(0.01, 100))
def test_compliance_bounds_property(t, lam, mu):
    tau = sym(t)
    nn = np.sum(tau * tau)
    if nn < 1e-12:
        return
    ratio = np.sum(apply_compliance(tau, lam, mu) * tau) / nn
    assert 1 / (2 * mu + 2 * lam) * (1 - 1e-12) <= ratio <= 1 / (2 * mu) * (1 + 1e-12)


def test_compliance_skew_part_scaled():
    skw = np.array([[0.0, 1.0], [-1.0, 0.0]])
    assert np.allclose(apply_compliance(skw, 2.0, 3.0), skw / 6.0)
    assert np.allclose(apply_compliance(skw, 2.0, 3.0, skew_c=0.5), 0.5 * skw)


def test_deviatoric():
    assert np.allclose(deviatoric(np.eye(2)), 0)
    assert np.allclose(deviatoric(np.diag([3.0, 1.0])), np.diag([1.0, -1.0]))


@settings(max_examples=50, deadline=None)
@given(arrays(float, (4, 2, 2), elements=finite))
def test_deviatoric_trace_free(t):
    d = deviatoric(t)
    assert np.allclose(d[:, 0, 0] + d[:, 1, 1], 0, atol=1e-12 * max(1, np.abs(t).max()))
    assert np.allclose(d - t, (d - t)[:, :1, :1] * np.eye(2))  # only the isotropic part removed


def test_tangential_permeability_filter_tensor():
    K = np.array([[0.505, 0.495], [0.495, 0.505]]) * 1e-6
    assert tangential_permeability(K, np.array([1.0, 0.0])) == pytest.approx(0.505e-6, rel=1e-15)


# --- parameters --------------------------------------------------------------

def test_params_defaults():
    p = PhysicalParams(mu=2.0, mu_p=4.0)
    assert p.kappa1 == 0.25 and p.kappa2 == 4.0 and p.skew_c == 0.125


@pytest.mark.parametrize("kw,msg", [
    (dict(kappa2=5.0), r"kappa2 must lie in \(0, 4\*mu\)"),
    (dict(s0=0.0), "s0 must be > 0"),
    (dict(mu=-1.0), "mu must be > 0"),
    (dict(alpha_p=1.5), "alpha_p"),
    (dict(K=np.array([[1.0, 2.0], [2.0, 1.0]])), "positive definite"),
    (dict(kappa1=0.0), "kappa1"),
])
def test_params_invalid(kw, msg):
    with pytest.raises(ParameterError, match=msg):
        PhysicalParams(**kw)


def test_params_collect_all_violations():
    with pytest.raises(ParameterError) as info:
        PhysicalParams(s0=-1.0, kappa2=5.0)
    assert len(info.value.violations) == 2


# --- block structure ----------------------------------------------------------

@pytest.fixture(scope="module")
def disc():
    return small_disc()


@pytest.fixture(scope="module")
def params():
    return rand_params(3)


def dense(m):
    return m.toarray()


def test_skew_duality(disc, params):
    S = assemble_static_blocks(disc, params)
    I = assemble_interface_blocks(disc, params)
    from nsbiot.assembly import BlockSystem
    Ib = BlockSystem(I, np.zeros(disc.ndof), disc.offsets, disc.sizes)
    for blocks, a, b in ((S, "gamma_p", "sigma_p"), (S, "p_p", "u_p"), (S, "u_s", "sigma_p"),
                         (Ib, "theta", "sigma_p"), (Ib, "lambda", "u_p"), (Ib, "lambda", "u_f"),
                         (Ib, "lambda", "theta")):
        ab, ba = dense(blocks.block(a, b)), dense(blocks.block(b, a))
        assert np.abs(ab).max() > 0
        assert np.array_equal(ab, -ba.T), (a, b)


def test_static_blocks_thread_independent(disc, params):
    a = assemble_static_blocks(disc, params, threads=1).matrix
    b = assemble_static_blocks(disc, params, threads=3).matrix
    assert abs(a - b).max() <= 1e-12 * abs(a).max()


def l2_mass(disc, name):
    sp_ = disc.spaces[name]
    q = volume_quad(sp_.mesh)
    V = sp_.tabulate(q.cells, q.ref).values
    loc = np.einsum("nq,nqai,nqbi->nab", q.wdet, V, V)
    M = np.zeros((sp_.dim, sp_.dim))
    for c in range(len(loc)):
        d = sp_.dof_map[c]
        M[np.ix_(d, d)] += loc[c]
    return M


def test_darcy_block_bound(disc, params):
    A = dense(assemble_static_blocks(disc, params).block("u_p", "u_p"))
    M = l2_mass(disc, "u_p")
    kmax = np.linalg.eigvalsh(params.K).max()
    rng = np.random.default_rng(4)
    for _ in range(10):
        x = rng.standard_normal(len(A))
        assert x @ A @ x >= params.mu / kmax * (x @ M @ x) * (1 - 1e-12)
    assert np.allclose(A, A.T, atol=1e-14 * np.abs(A).max())


def test_bjs_psd_and_kernel(disc, params):
    I = assemble_interface_blocks(disc, params)
    idx = np.r_[disc.slice("u_f"), disc.slice("theta")]
    B = dense(I[idx][:, idx])
    assert np.allclose(B, B.T, atol=1e-14 * np.abs(B).max())
    ev = np.linalg.eigvalsh(B)
    assert ev.min() >= -1e-12 * ev.max()
    # equal tangential traces -> zero
    c = np.array([0.7, -0.3])
    x = np.concatenate([interpolate(disc.spaces["u_f"], lambda p: np.tile(c, (len(p), 1))),
                        interpolate(disc.spaces["theta"], lambda p: np.tile(c, (len(p), 1)))])
    assert abs(x @ B @ x) <= 1e-13 * np.abs(B).max()
    y = x.copy()
    y[disc.sizes["u_f"]:] *= 0.5
    assert y @ B @ y > 1e-3


def test_storage_psd(disc, params):
    E = dense(assemble_storage_blocks(disc, params))
    idx = np.r_[disc.slice("sigma_p"), disc.slice("p_p")]
    Eb = E[np.ix_(idx, idx)]
    assert np.allclose(Eb, Eb.T, atol=1e-13 * np.abs(Eb).max())
    ev = np.linalg.eigvalsh(Eb)
    assert ev.min() >= -1e-12 * ev.max()
    rng = np.random.default_rng(5)
    for _ in range(10):
        x = rng.standard_normal(len(idx))
        assert x @ Eb @ x > 0
    # exactly the s0 mass on the pressure when the stress cancels the pressure
    mesh = disc.mesh_p
    sig = interpolate(disc.spaces["sigma_p"], lambda p: -params.alpha_p * np.tile(np.eye(2), (len(p), 1, 1)))
    x = np.concatenate([sig, np.ones(disc.sizes["p_p"])])
    area = np.abs(mesh.signed_areas()).sum()
    assert x @ Eb @ x == pytest.approx(params.s0 * area, rel=1e-12)


def test_fluid_block_coercive():
    # generalized eigenvalue of the symmetric part against the H(div) x H1 norm on the free DOFs
    mf, mp = example1_meshes(0)
    d = build_discretization(mf, mp)
    p = PhysicalParams()
    S = assemble_static_blocks(d, p).matrix + assemble_interface_blocks(d, p)
    idx_ess, _ = essential_dofs(d)
    fixed = np.concatenate([idx_ess.get("T_f", []), idx_ess.get("u_f", [])]).astype(int)
    rows = np.r_[d.slice("T_f"), d.slice("u_f")]
    free = np.setdiff1d(np.arange(d.ndof)[rows], fixed)
    A = S[free][:, free].toarray()
    As = 0.5 * (A + A.T)
    N = np.zeros((d.ndof, d.ndof))
    for name in ("T_f", "u_f"):
        sp_ = d.spaces[name]
        q = volume_quad(sp_.mesh)
        tab = sp_.tabulate(q.cells, q.ref)
        if name == "T_f":
            loc = np.einsum("nq,nqaij,nqbij->nab", q.wdet, tab.values, tab.values)
            loc += np.einsum("nq,nqai,nqbi->nab", q.wdet, tab.div, tab.div)
        else:
            loc = np.einsum("nq,nqai,nqbi->nab", q.wdet, tab.values, tab.values)
            loc += np.einsum("nq,nqaij,nqbij->nab", q.wdet, tab.grads, tab.grads)
        off = d.offsets[name]
        for c in range(len(loc)):
            dd = sp_.dof_map[c] + off
            N[np.ix_(dd, dd)] += loc[c]
    Nf = N[np.ix_(free, free)]
    lam_min = sla.eigh(As, Nf, eigvals_only=True, subset_by_index=[0, 0])[0]
    assert lam_min > 1e-3


# --- convective term -----------------------------------------------------------

def test_convective_zero_velocity(disc, params):
    r, J = assemble_convective(np.zeros(disc.sizes["u_f"]), disc, params)
    assert not r.any()
    assert abs(J).max() == 0


def test_convective_finite_difference_slope(disc, params):
    rng = np.random.default_rng(6)
    u = rng.standard_normal(disc.sizes["u_f"])
    v = rng.standard_normal(disc.sizes["u_f"])
    r0, J = assemble_convective(u, disc, params)
    Jv = J[:, disc.slice("u_f")] @ v
    errs = []
    for eps in (1e-4, 1e-6):
        r1, _ = assemble_convective(u + eps * v, disc, params, jacobian=False)
        errs.append(np.linalg.norm((r1 - r0) / eps - Jv))
    slope = np.log10(errs[0] / errs[1]) / 2
    assert abs(slope - 1) < 0.1
    assert errs[0] < 1e-3 * np.linalg.norm(Jv)


def test_convective_bilinear_structure(disc, params):
    rng = np.random.default_rng(7)
    u1, u2 = rng.standard_normal((2, disc.sizes["u_f"]))
    sl = disc.slice("u_f")
    r, J = assemble_convective(u1, disc, params)
    # quadratic form: J(u) u = 2 K(u)
    assert np.allclose(J[:, sl] @ u1, 2 * r, atol=1e-12 * np.abs(r).max())
    # the Jacobian is linear in the transporting velocity
    _, J2 = assemble_convective(u2, disc, params)
    _, J12 = assemble_convective(2 * u1 - 3 * u2, disc, params)
    assert abs(J12 - (2 * J - 3 * J2)).max() <= 1e-12 * abs(J12).max()


# --- right-hand side ---------------------------------------------------------------

def test_zero_data_zero_rhs(disc, params):
    zero_v = lambda x, t: np.zeros((len(x), 2))
    zero_s = lambda x, t: np.zeros(len(x))
    data = SourceData(f_f=zero_v, f_p=zero_v, q_p=zero_s, p_p_bc=zero_s, u_s_bc=zero_v,
                      g_mass=lambda x, t, n: np.zeros(len(x)))
    assert not assemble_rhs(data, disc, params, 0.3).any()
    assert not assemble_rhs(SourceData(), disc, params, 0.0).any()


def test_constant_fluid_force_lumped(disc, params):
    b = assemble_rhs(SourceData(f_f=lambda x, t: np.tile([1.0, 0.0], (len(x), 1))), disc, params, 0.0)
    mf = disc.mesh_f
    area = np.abs(mf.signed_areas())
    expect = np.zeros(mf.n_vertices)
    np.add.at(expect, mf.triangles.ravel(), np.repeat(area / 3, 3))
    bu = b[disc.slice("u_f")]
    assert np.allclose(bu[: mf.n_vertices], expect, atol=1e-15)
    assert np.allclose(bu[mf.n_vertices:], 0, atol=1e-15)


def test_interface_mass_row_cancels(disc, params):
    I = assemble_interface_blocks(disc, params)
    sp_ = disc.spaces
    const = lambda c: (lambda p: np.tile(c, (len(p), 1)))
    x = disc.join({
        "u_f": interpolate(sp_["u_f"], const([0.0, -1.0])),   # u_f . n_f = 1 on the bottom of the fluid
        "theta": interpolate(sp_["theta"], const([0.0, -0.5])),
        "u_p": interpolate(sp_["u_p"], const([0.0, -0.5])),   # -(theta + u_p) . n_p = 1
    })
    xi = np.ones(disc.sizes["lambda"])
    val = xi @ (I @ x)[disc.slice("lambda")]
    single = xi @ (I @ disc.join({"u_f": x[disc.slice("u_f")]}))[disc.slice("lambda")]
    assert abs(single) == pytest.approx(1.0, rel=1e-12)  # |Gamma| * 1
    assert abs(val) < 1e-14


def test_mortar_equals_direct_on_matching_grids():
    mf = build_structured_rect(((0, 1), (0, 1)), 5, 4, FLUID, "right", EXAMPLE1_FLUID_TAGS)
    mp = build_structured_rect(((0, 1), (-1, 0)), 5, 5, PORO, "right", EXAMPLE1_PORO_TAGS)
    d = build_discretization(mf, mp)
    p = rand_params(8)
    A1 = assemble_interface_blocks(d, p, method="merged")
    A2 = assemble_interface_blocks(d, p, method="direct")
    assert abs(A1 - A2).max() <= 1e-13


def test_direct_method_rejects_nonmatching(disc, params):
    with pytest.raises(ValueError):
        assemble_interface_blocks(disc, params, method="direct")
