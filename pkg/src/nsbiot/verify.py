"""Manufactured-solution verification: analytic fields, forcing, error norms, rates."""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .assembly import (
    Discretization,
    PhysicalParams,
    SourceData,
    build_discretization,
    deviatoric,
    tangential_permeability,
)
from .mesh import FLUID, PORO, build_structured_rect, mesh_size
from .postprocess import recover_pf
from .quadrature import segment_rule, triangle_rule
from .system import NewtonConfig, SystemState, TimeStepper, set_initial_state
from .elements import to_physical

PI = np.pi


@dataclass
class AnalyticSolution:
    """Closed-form manufactured solution on the unit square pair.

    u_f = e^t (sin(pi x) cos(pi y), -sin(pi y) cos(pi x)),
    p_f = e^t sin(pi x) cos(pi y / 2) + 2 pi cos(pi t),
    p_p = e^t sin(pi x) cos(pi y / 2),
    eta_p = sin(pi t) (-3 x + cos y, y + 1).
    All closures take points (n, 2) and a time t.
    """

    params: PhysicalParams

    # primary fields and derivatives
    def u_f(self, x, t):
        X, Y = PI * x[:, 0], PI * x[:, 1]
        return np.exp(t) * np.stack([np.sin(X) * np.cos(Y), -np.sin(Y) * np.cos(X)], axis=1)

    def grad_u_f(self, x, t):
        X, Y = PI * x[:, 0], PI * x[:, 1]
        e = np.exp(t) * PI
        g = np.empty((len(x), 2, 2))
        g[:, 0, 0] = e * np.cos(X) * np.cos(Y)
        g[:, 0, 1] = -e * np.sin(X) * np.sin(Y)
        g[:, 1, 0] = e * np.sin(X) * np.sin(Y)
        g[:, 1, 1] = -e * np.cos(X) * np.cos(Y)
        return g

    def lap_u_f(self, x, t):
        return -2.0 * PI ** 2 * self.u_f(x, t)

    def dt_u_f(self, x, t):
        return self.u_f(x, t)

    def p_f(self, x, t):
        return self.p_p(x, t) + 2.0 * PI * np.cos(PI * t)

    def grad_p_f(self, x, t):
        return self.grad_p_p(x, t)

    def p_p(self, x, t):
        return np.exp(t) * np.sin(PI * x[:, 0]) * np.cos(0.5 * PI * x[:, 1])

    def dt_p_p(self, x, t):
        return self.p_p(x, t)

    def grad_p_p(self, x, t):
        X, Y = PI * x[:, 0], 0.5 * PI * x[:, 1]
        e = np.exp(t)
        return np.stack([e * PI * np.cos(X) * np.cos(Y), -0.5 * PI * e * np.sin(X) * np.sin(Y)], axis=1)

    def hess_p_p(self, x, t):
        X, Y = PI * x[:, 0], 0.5 * PI * x[:, 1]
        e = np.exp(t)
        h = np.empty((len(x), 2, 2))
        h[:, 0, 0] = -PI ** 2 * e * np.sin(X) * np.cos(Y)
        h[:, 1, 1] = -0.25 * PI ** 2 * e * np.sin(X) * np.cos(Y)
        h[:, 0, 1] = h[:, 1, 0] = -0.5 * PI ** 2 * e * np.cos(X) * np.sin(Y)
        return h

    def eta_p(self, x, t):
        return np.sin(PI * t) * np.stack([-3.0 * x[:, 0] + np.cos(x[:, 1]), x[:, 1] + 1.0], axis=1)

    def grad_eta_p(self, x, t):
        g = np.zeros((len(x), 2, 2))
        g[:, 0, 0] = -3.0
        g[:, 0, 1] = -np.sin(x[:, 1])
        g[:, 1, 1] = 1.0
        return np.sin(PI * t) * g

    def div_grad_eta_sym(self, x, t):
        # div(e(eta)) in closed form
        return np.sin(PI * t) * np.stack([-0.5 * np.cos(x[:, 1]), np.zeros(len(x))], axis=1)

    def u_s(self, x, t):
        return PI * np.cos(PI * t) * np.stack([-3.0 * x[:, 0] + np.cos(x[:, 1]), x[:, 1] + 1.0], axis=1)

    def dt_u_s(self, x, t):
        return -PI ** 2 * self.eta_p(x, t)

    def grad_u_s(self, x, t):
        g = np.zeros((len(x), 2, 2))
        g[:, 0, 0] = -3.0
        g[:, 0, 1] = -np.sin(x[:, 1])
        g[:, 1, 1] = 1.0
        return PI * np.cos(PI * t) * g

    def div_eta_p(self, x, t):
        return np.full(len(x), -2.0 * np.sin(PI * t))


def _sym(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def derive_fields(an: AnalyticSolution, params: Optional[PhysicalParams] = None) -> dict:
    """All unknowns of the mixed system as closures f(x, t), keyed by field name.

    ``gamma_p`` is the scalar g of the skew tensor [[0, g], [-g, 0]].
    Extra keys: ``p_f``, ``eta_p``, ``div_T_f``, ``div_sigma_p``,
    ``div_u_p``, ``grad_u_f``, ``sigma_f``.
    """
    p = params or an.params
    I = np.eye(2)

    def sigma_f(x, t):
        return -an.p_f(x, t)[:, None, None] * I + 2.0 * p.mu * _sym(an.grad_u_f(x, t))

    def T_f(x, t):
        u = an.u_f(x, t)
        return sigma_f(x, t) - p.rho * np.einsum("ni,nj->nij", u, u)

    def div_T_f(x, t):
        # div(sigma_f) - rho (grad u) u, with div u = 0
        u = an.u_f(x, t)
        return -an.grad_p_f(x, t) + p.mu * an.lap_u_f(x, t) - p.rho * np.einsum("nij,nj->ni", an.grad_u_f(x, t), u)

    def sigma_p(x, t):
        e = _sym(an.grad_eta_p(x, t))
        tr = an.div_eta_p(x, t)
        return (p.lambda_p * tr - p.alpha_p * an.p_p(x, t))[:, None, None] * I + 2.0 * p.mu_p * e

    def div_sigma_p(x, t):
        return 2.0 * p.mu_p * an.div_grad_eta_sym(x, t) - p.alpha_p * an.grad_p_p(x, t)

    Kmu = p.K / p.mu

    def u_p(x, t):
        return -an.grad_p_p(x, t) @ Kmu.T

    def div_u_p(x, t):
        return -np.einsum("ij,nij->n", Kmu, an.hess_p_p(x, t))

    def gamma_p(x, t):
        g = an.grad_u_s(x, t)
        return 0.5 * (g[:, 0, 1] - g[:, 1, 0])

    return {
        "sigma_p": sigma_p, "p_p": an.p_p, "u_p": u_p, "T_f": T_f, "u_f": an.u_f,
        "theta": an.u_s, "lambda": an.p_p, "u_s": an.u_s, "gamma_p": gamma_p,
        "p_f": an.p_f, "eta_p": an.eta_p, "div_T_f": div_T_f, "div_sigma_p": div_sigma_p,
        "div_u_p": div_u_p, "grad_u_f": an.grad_u_f, "sigma_f": sigma_f,
    }


def forcing_terms(an: AnalyticSolution, params: Optional[PhysicalParams] = None):
    """Body forces and source: (f_f, f_p, q_p) as closures f(x, t)."""
    p = params or an.params
    flds = derive_fields(an, p)

    def f_f(x, t):
        f = -flds["div_T_f"](x, t)
        if p.rho_f_inertia:
            f = f + p.rho * an.dt_u_f(x, t)
        return f

    def f_p(x, t):
        f = -flds["div_sigma_p"](x, t)
        if p.rho_p > 0:
            f = f + p.rho_p * an.dt_u_s(x, t)
        if p.beta > 0:
            f = f + p.beta * an.eta_p(x, t)
        return f

    def q_p(x, t):
        dt_div_eta = np.full(len(x), -2.0 * PI * np.cos(PI * t))
        return p.s0 * an.dt_p_p(x, t) + p.alpha_p * dt_div_eta + flds["div_u_p"](x, t)

    return f_f, f_p, q_p


def interface_data(an: AnalyticSolution, params: Optional[PhysicalParams] = None):
    """Residuals of the transmission conditions for the manufactured solution.

    Returns closures g(x, t, n_f) for the fluid momentum balance, the
    poroelastic traction balance and the mass balance.
    """
    p = params or an.params
    flds = derive_fields(an, p)

    def tangent(n):
        return np.stack([-n[:, 1], n[:, 0]], axis=1)

    def bjs(x, t, n):
        tt = tangent(n)
        c = p.mu * p.alpha_bjs / np.sqrt(tangential_permeability(p.K, tt))
        slip = np.einsum("ni,ni->n", an.u_f(x, t) - an.u_s(x, t), tt)
        return (c * slip)[:, None] * tt

    def g_momentum(x, t, n):
        u = an.u_f(x, t)
        un = np.einsum("ni,ni->n", u, n)
        Tn = np.einsum("nij,nj->ni", flds["T_f"](x, t), n)
        return Tn + p.rho * un[:, None] * u + bjs(x, t, n) + an.p_p(x, t)[:, None] * n

    def g_traction(x, t, n):
        Sn = np.einsum("nij,nj->ni", flds["sigma_p"](x, t), -n)
        return Sn - bjs(x, t, n) - an.p_p(x, t)[:, None] * n

    def g_mass(x, t, n):
        return np.einsum("ni,ni->n", an.u_f(x, t) - an.u_s(x, t) - flds["u_p"](x, t), n)

    return g_momentum, g_traction, g_mass


# ---------------------------------------------------------------------------
# Example 1 setup

# (nx, ny) per level, chosen so that the longest edge matches the tabulated mesh sizes
FLUID_LEVELS = ((8, 7), (16, 13), (32, 27), (64, 51), (128, 90))
PORO_LEVELS = ((5, 5), (10, 8), (20, 17), (40, 28), (80, 53))

EXAMPLE1_FLUID_TAGS = {"bottom": "interface", "top": "fN", "left": "fD", "right": "fD"}
EXAMPLE1_PORO_TAGS = {"top": "interface", "bottom": "pD_sD", "left": "pN_sN", "right": "pN_sN"}


def example1_meshes(level: int):
    nf = FLUID_LEVELS[level]
    npr = PORO_LEVELS[level]
    mf = build_structured_rect(((0.0, 1.0), (0.0, 1.0)), nf[0], nf[1], FLUID, "right", EXAMPLE1_FLUID_TAGS)
    mp = build_structured_rect(((0.0, 1.0), (-1.0, 0.0)), npr[0], npr[1], PORO, "right", EXAMPLE1_PORO_TAGS)
    return mf, mp


def example1_params(**overrides):
    base = dict(mu=1.0, rho=1.0, lambda_p=1.0, mu_p=1.0, s0=1.0, K=np.eye(2), alpha_p=1.0, alpha_bjs=1.0)
    base.update(overrides)
    return PhysicalParams(**base)


def example1_data(an: AnalyticSolution, params: Optional[PhysicalParams] = None) -> SourceData:
    p = params or an.params
    flds = derive_fields(an, p)
    f_f, f_p, q_p = forcing_terms(an, p)
    g1, g2, g3 = interface_data(an, p)
    return SourceData(
        f_f=f_f, f_p=f_p, q_p=q_p,
        p_p_bc=an.p_p, u_s_bc=an.u_s,
        T_f_bc=flds["T_f"], u_f_bc=an.u_f, u_p_bc=flds["u_p"], sigma_p_bc=flds["sigma_p"],
        g_momentum=g1, g_traction=g2, g_mass=g3,
    )


# ---------------------------------------------------------------------------
# error norms

L2_TIME = ("T_f", "u_f", "p_f", "u_p", "u_s", "gamma_p", "eta_p", "theta", "lambda")
LINF_TIME = ("sigma_p", "p_p")
REPORT_FIELDS = ("T_f", "u_f", "p_f", "sigma_p", "p_p", "u_p", "u_s", "gamma_p", "eta_p", "theta", "lambda")
ERROR_ORDER = 6


def _vol(mesh, order=ERROR_ORDER):
    rule = triangle_rule(order)
    cells = np.arange(mesh.n_triangles)
    x = to_physical(mesh, cells, rule.points)
    J = mesh.signed_areas() * 2.0
    return cells, rule.points, x, np.abs(J)[:, None] * rule.weights[None, :]


def _sq(w, diff):
    d = diff.reshape(diff.shape[:2] + (-1,))
    return float(np.einsum("nq,nqk->", w, d * d))


def spatial_errors(disc: Discretization, state: SystemState, fields: dict, params: PhysicalParams, t: float) -> dict:
    """Errors at one time level in the natural norm of each field.

    H(div) for T_f, sigma_p, u_p; H1 for u_f; L2 for p_p, p_f, u_s,
    gamma_p (as a skew tensor), eta_p; L2 on the interface for theta, lambda.
    """
    sp_ = disc.spaces
    out = {}
    mp = disc.mesh_p
    cells, ref, x, w = _vol(mp)
    X = x.reshape(-1, 2)
    shp = x.shape[:2]

    def ana(name):
        v = np.asarray(fields[name](X, t))
        return v.reshape(shp + v.shape[1:])

    S = sp_["sigma_p"]
    out["sigma_p"] = np.sqrt(_sq(w, S.evaluate(state.sigma_p, cells, ref) - ana("sigma_p"))
                             + _sq(w, S.evaluate(state.sigma_p, cells, ref, "div") - ana("div_sigma_p")))
    U = sp_["u_p"]
    out["u_p"] = np.sqrt(_sq(w, U.evaluate(state.u_p, cells, ref) - ana("u_p"))
                         + _sq(w, U.evaluate(state.u_p, cells, ref, "div") - ana("div_u_p")))
    out["p_p"] = np.sqrt(_sq(w, (sp_["p_p"].evaluate(state.p_p, cells, ref) - ana("p_p"))[..., None]))
    out["u_s"] = np.sqrt(_sq(w, sp_["u_s"].evaluate(state.u_s, cells, ref) - ana("u_s")))
    g = sp_["gamma_p"].evaluate(state.gamma_p, cells, ref) - ana("gamma_p")
    out["gamma_p"] = np.sqrt(2.0 * _sq(w, g))
    if state.eta_p is not None:
        out["eta_p"] = np.sqrt(_sq(w, sp_["u_s"].evaluate(state.eta_p, cells, ref) - ana("eta_p")))
    if disc.has_fluid:
        mf = disc.mesh_f
        cells, ref, x, w = _vol(mf)
        X = x.reshape(-1, 2)
        shp = x.shape[:2]
        T = sp_["T_f"]
        V = sp_["u_f"]
        Th = T.evaluate(state.T_f, cells, ref)
        Uh = V.evaluate(state.u_f, cells, ref)
        out["T_f"] = np.sqrt(_sq(w, Th - ana("T_f")) + _sq(w, T.evaluate(state.T_f, cells, ref, "div") - ana("div_T_f")))
        out["u_f"] = np.sqrt(_sq(w, Uh - ana("u_f")) + _sq(w, V.evaluate(state.u_f, cells, ref, "grads") - ana("grad_u_f")))
        pf = recover_pf(Th, Uh, params.rho)
        out["p_f"] = np.sqrt(_sq(w, (pf - ana("p_f"))[..., None]))
        # interface multipliers on the poro trace segments
        tr = disc.traces
        rule = segment_rule(ERROR_ORDER)
        seg = tr.seg_p
        xs = seg[:, None, :2] + rule.points[None, :, None] * (seg[:, None, 2:] - seg[:, None, :2])
        L = np.hypot(*(seg[:, 2:] - seg[:, :2]).T)
        ws = L[:, None] * rule.weights[None, :]
        segs = np.arange(len(seg))
        param = np.broadcast_to(rule.points, (len(seg), len(rule.points)))
        Xs = xs.reshape(-1, 2)
        th = sp_["theta"].evaluate(state.theta, segs, param)
        lm = sp_["lambda"].evaluate(state.lam, segs, param)
        out["theta"] = np.sqrt(_sq(ws, th - np.asarray(fields["theta"](Xs, t)).reshape(xs.shape)))
        out["lambda"] = np.sqrt(_sq(ws, (lm - np.asarray(fields["lambda"](Xs, t)).reshape(xs.shape[:2]))[..., None]))
    return out


@dataclass
class ErrorAccumulator:
    """Discrete-in-time norms: l2 = (sum dt e_m^2)^(1/2), linf = max e_m over m >= 1."""

    dt: float
    sq: dict = field(default_factory=dict)
    mx: dict = field(default_factory=dict)

    def add(self, errs: dict):
        for k, v in errs.items():
            self.sq[k] = self.sq.get(k, 0.0) + self.dt * v * v
            self.mx[k] = max(self.mx.get(k, 0.0), v)

    def result(self):
        out = {}
        for k in self.sq:
            out[k] = self.mx[k] if k in LINF_TIME else float(np.sqrt(self.sq[k]))
        return out


def error_norms(disc, history, fields, params, dt) -> dict:
    """Time norms per field from a list of states (the initial state excluded)."""
    if not history:
        raise ValueError("error_norms needs a non-empty state history")
    acc = ErrorAccumulator(dt)
    for st in history:
        acc.add(spatial_errors(disc, st, fields, params, st.t))
    return acc.result()


# ---------------------------------------------------------------------------
# convergence study


@dataclass
class LevelResult:
    level: int
    h_f: float
    h_p: float
    h_tp: float
    errors: dict
    avg_newton: float
    newton_counts: list
    ndof: int
    seconds: float
    disc: Optional[Discretization] = None
    states: Optional[list] = None


@dataclass
class ErrorReport:
    levels: list

    @property
    def fields(self):
        return [f for f in REPORT_FIELDS if all(f in lv.errors for lv in self.levels)]

    def rates(self):
        out = {f: [None] for f in self.fields}
        for a, b in zip(self.levels[:-1], self.levels[1:]):
            for f in self.fields:
                h0 = a.h_p if f in ("sigma_p", "p_p", "u_p", "u_s", "gamma_p", "eta_p") else a.h_f
                h1 = b.h_p if f in ("sigma_p", "p_p", "u_p", "u_s", "gamma_p", "eta_p") else b.h_f
                if f in ("theta", "lambda"):
                    h0, h1 = a.h_tp, b.h_tp
                e0, e1 = a.errors[f], b.errors[f]
                out[f].append(float(np.log(e0 / e1) / np.log(h0 / h1)) if e0 > 0 and e1 > 0 else float("nan"))
        return out

    def to_csv(self):
        rates = self.rates()
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        head = ["level", "h_f", "h_p", "h_tp"]
        for f in self.fields:
            head += [f"err_{f}", f"rate_{f}"]
        head.append("avg_newton")
        wr.writerow(head)
        for i, lv in enumerate(self.levels):
            row = [lv.level, f"{lv.h_f:.6e}", f"{lv.h_p:.6e}", f"{lv.h_tp:.6e}"]
            for f in self.fields:
                r = rates[f][i]
                row += [f"{lv.errors[f]:.6e}", "" if r is None else f"{r:.4f}"]
            row.append(f"{lv.avg_newton:.4f}")
            wr.writerow(row)
        return buf.getvalue()


def run_example1_level(level, params=None, dt=1e-3, T=0.01, newton=NewtonConfig(), threads=1,
                       keep_states=False, interface_method="merged") -> LevelResult:
    """Solve the manufactured problem on one refinement level and measure errors."""
    params = params or example1_params()
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("T must be an integer multiple of dt")
    t0 = time.perf_counter()
    mf, mp = example1_meshes(level)
    disc = build_discretization(mf, mp)
    an = AnalyticSolution(params)
    flds = derive_fields(an, params)
    data = example1_data(an, params)
    stepper = TimeStepper(disc, params, data, dt, newton, threads, interface_method)
    state = set_initial_state(disc, "analytic", flds, 0.0)
    acc = ErrorAccumulator(dt)
    counts, states = [], []
    for _ in range(n_steps):
        state, info = stepper.step(state)
        counts.append(info.iters)
        acc.add(spatial_errors(disc, state, flds, params, state.t))
        if keep_states:
            states.append(state)
    h_tp = float(np.hypot(*(disc.traces.seg_p[:, 2:] - disc.traces.seg_p[:, :2]).T).max())
    return LevelResult(level, mesh_size(mf), mesh_size(mp), h_tp, acc.result(), float(np.mean(counts)), counts,
                       disc.ndof, time.perf_counter() - t0, disc if keep_states else None,
                       states if keep_states else None)


def convergence_study(levels, params=None, dt=1e-3, T=0.01, newton=NewtonConfig(), threads=1,
                      on_level=None) -> ErrorReport:
    levels = list(levels)
    if len(levels) < 2:
        raise ValueError("a convergence study needs at least two levels")
    out = []
    for lv in levels:
        res = run_example1_level(lv, params, dt, T, newton, threads)
        out.append(res)
        if on_level is not None:
            on_level(res)
    return ErrorReport(out)


def interpolant_state(disc: Discretization, fields: dict, t: float) -> SystemState:
    """State holding the canonical interpolant of the analytic fields at time t."""
    st = set_initial_state(disc, "analytic", fields, t)
    return st
