"""Backward Euler time stepping with Newton iterations and a sparse direct solve."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (
    FIELDS,
    Discretization,
    PhysicalParams,
    SourceData,
    assemble_convective,
    assemble_inertia_blocks,
    assemble_interface_blocks,
    assemble_rhs,
    assemble_static_blocks,
    assemble_storage_blocks,
    convective_cache,
    essential_dofs,
    essential_values,
    interface_quad,
)
from .elements import interpolate

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class SingularMatrixError(SolverError):
    def __init__(self, msg, index=None):
        super().__init__(msg if index is None else f"{msg} (index {index})")
        self.index = index


class NewtonDivergence(SolverError):
    def __init__(self, iters, residual, step=None):
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"Newton did not converge{where} after {iters} iterations, residual {residual:.3e}")
        self.iters = iters
        self.residual = residual
        self.step = step


@dataclass
class SystemState:
    """Coefficient vectors of all fields at one time level."""

    sigma_p: np.ndarray
    p_p: np.ndarray
    u_p: np.ndarray
    T_f: np.ndarray
    u_f: np.ndarray
    theta: np.ndarray
    lam: np.ndarray
    u_s: np.ndarray
    gamma_p: np.ndarray
    t: float = 0.0
    eta_p: Optional[np.ndarray] = None

    def field(self, name):
        return getattr(self, "lam" if name == "lambda" else name)

    def vector(self):
        return np.concatenate([self.field(k) for k in FIELDS])

    @classmethod
    def from_vector(cls, disc: Discretization, x, t=0.0, eta_p=None):
        parts = {("lam" if k == "lambda" else k): np.array(x[disc.slice(k)]) for k in FIELDS}
        return cls(**parts, t=float(t), eta_p=eta_p)

    @classmethod
    def zeros(cls, disc: Discretization, t=0.0):
        return cls.from_vector(disc, np.zeros(disc.ndof), t, np.zeros(disc.sizes["u_s"]))


@dataclass(frozen=True)
class NewtonConfig:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    max_iters: int = 15
    # stop once the update is at round-off level relative to the iterate
    step_tol: float = 1e-12

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0 and self.step_tol >= 0):
            raise ValueError("Newton tolerances must be positive")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError("max_iters must be an integer >= 1")


# ---------------------------------------------------------------------------
# linear solve


def _first_empty(A):
    A = A.tocsr()
    rows = np.flatnonzero(np.diff(A.indptr) == 0)
    if len(rows):
        return "empty row", int(rows[0])
    cols = np.flatnonzero(np.diff(A.tocsc().indptr) == 0)
    if len(cols):
        return "empty column", int(cols[0])
    return None, None


def solve_linear(A, b, refine=3):
    """Direct sparse solve with row equilibration and iterative refinement.

    Postcondition: ||A x - b|| <= 1e-10 (||A|| ||x|| + ||b||) in the
    infinity norm, else :class:`SolverError`.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or b.shape != (n,):
        raise ValueError("solve_linear needs a square matrix and a matching vector")
    if n == 0:
        return np.zeros(0)
    what, idx = _first_empty(A)
    if what is not None:
        raise SingularMatrixError(f"matrix is singular: {what}", idx)
    rmax = np.asarray(abs(A).max(axis=1).todense()).ravel()
    D = sp.diags(1.0 / rmax)
    As = (D @ A).tocsc()
    try:
        lu = spla.splu(As, permc_spec="COLAMD")
    except RuntimeError as exc:
        msg = str(exc)
        idx = None
        for tok in msg.replace(",", " ").split():
            if tok.isdigit():
                idx = int(tok)
        raise SingularMatrixError(f"matrix is singular: {msg}", idx) from exc
    bs = D @ b
    x = lu.solve(bs)
    normA = abs(A).sum(axis=1).max()
    for _ in range(refine + 1):
        r = b - A @ x
        bound = 1e-10 * (normA * np.abs(x).max() + np.abs(b).max())
        if not np.all(np.isfinite(x)):
            raise SingularMatrixError("matrix is numerically singular (non-finite solution)")
        if np.abs(r).max() <= bound:
            return x
        x = x + lu.solve(D @ r)
    r = b - A @ x
    raise SolverError(f"linear solve residual {np.abs(r).max():.3e} exceeds the bound {bound:.3e}")


# ---------------------------------------------------------------------------
# time stepping


@dataclass
class StepInfo:
    iters: int
    residuals: list = field(default_factory=list)


class TimeStepper:
    """Holds the assembled time-independent operators of one discretization.

    For time step dt the discrete problem at t_m reads
    ``(S + E/dt) x + N(x) = b(t_m) + E x_prev / dt`` with S the static and
    interface operators, E the storage operator and N the convective term,
    plus inertia terms when the dynamic flags are set.
    """

    def __init__(self, disc: Discretization, params: PhysicalParams, data: SourceData, dt: float,
                 newton: NewtonConfig = NewtonConfig(), threads=1, interface_method="merged"):
        if not dt > 0:
            raise ValueError("time step must be positive")
        self.disc = disc
        self.params = params
        self.data = data
        self.dt = float(dt)
        self.newton = newton
        self.threads = threads
        self.iq = interface_quad(disc.traces, method=interface_method) if disc.has_fluid else None
        self.S = (assemble_static_blocks(disc, params, threads).matrix
                  + assemble_interface_blocks(disc, params, iq=self.iq)).tocsr()
        self.E = assemble_storage_blocks(disc, params, threads)
        self.M_f, self.M_s = assemble_inertia_blocks(disc, params, threads)
        L = self.S + self.E / self.dt
        if params.rho_f_inertia:
            L = L + self.M_f / self.dt
        if params.rho_p > 0 or params.beta > 0:
            L = L + (params.rho_p / self.dt + params.beta * self.dt) * self.M_s
        self.L = L.tocsr()
        self.conv = convective_cache(disc)
        self.fixed_idx, _ = essential_dofs(disc)
        fixed = np.concatenate(list(self.fixed_idx.values())) if self.fixed_idx else np.zeros(0, np.int64)
        mask = np.ones(disc.ndof, dtype=bool)
        mask[fixed] = False
        self.free = np.flatnonzero(mask)
        self.fixed = np.flatnonzero(~mask)

    def load(self, t, prev: SystemState):
        """Right-hand side at time t including the previous-state terms."""
        p = self.params
        xp = prev.vector()
        b = assemble_rhs(self.data, self.disc, p, t, iq=self.iq) + (self.E @ xp) / self.dt
        if p.rho_f_inertia:
            b += (self.M_f @ xp) / self.dt
        if p.rho_p > 0 or p.beta > 0:
            us = np.zeros(self.disc.ndof)
            us[self.disc.slice("u_s")] = prev.u_s
            eta = np.zeros(self.disc.ndof)
            if prev.eta_p is not None:
                eta[self.disc.slice("u_s")] = prev.eta_p
            b += self.M_s @ (p.rho_p / self.dt * us - p.beta * eta)
        return b

    def residual(self, x, b, jacobian=True):
        n, J = assemble_convective(x[self.disc.slice("u_f")], self.disc, self.params, self.conv, jacobian)
        F = self.L @ x + n - b
        return F, J

    def newton_solve(self, x0, b):
        """Solve L x + N(x) = b on the free DOFs; x0 carries the essential values."""
        cfg = self.newton
        x = np.array(x0, dtype=float)
        free = self.free
        F, J = self.residual(x, b)
        r = np.linalg.norm(F[free])
        r0 = r
        hist = [r]
        tol = max(cfg.abs_tol, cfg.rel_tol * r0)
        iters = 0
        while r > tol:
            if iters >= cfg.max_iters:
                raise NewtonDivergence(iters, r)
            A = (self.L + J)[free][:, free]
            dx = solve_linear(A, -F[free])
            x[free] += dx
            iters += 1
            F, J = self.residual(x, b)
            r = np.linalg.norm(F[free])
            hist.append(r)
            if np.linalg.norm(dx) <= cfg.step_tol * max(np.linalg.norm(x[free]), 1e-300):
                break
            if not np.isfinite(r):
                raise NewtonDivergence(iters, r)
        return x, StepInfo(iters, hist)

    def step(self, prev: SystemState) -> tuple[SystemState, StepInfo]:
        t = prev.t + self.dt
        b = self.load(t, prev)
        x0 = prev.vector()
        gi, gv = essential_values(self.disc, self.data, t)
        x0[gi] = gv
        x, info = self.newton_solve(x0, b)
        us = x[self.disc.slice("u_s")]
        eta_prev = prev.eta_p if prev.eta_p is not None else np.zeros_like(us)
        return SystemState.from_vector(self.disc, x, t, eta_prev + self.dt * us), info


def backward_euler_step(state_prev: SystemState, dt, params, data, disc, newton=NewtonConfig(), threads=1):
    """One time step; returns (new state, Newton iteration count)."""
    stepper = TimeStepper(disc, params, data, dt, newton, threads)
    state, info = stepper.step(state_prev)
    return state, info.iters


def newton_solve(stepper: TimeStepper, x0, b):
    return stepper.newton_solve(x0, b)


def run(stepper: TimeStepper, state0: SystemState, n_steps: int, callback: Optional[Callable] = None):
    """Advance ``n_steps``; returns (final state, list of Newton counts)."""
    state = state0
    counts = []
    for m in range(1, n_steps + 1):
        try:
            state, info = stepper.step(state)
        except NewtonDivergence as exc:
            raise NewtonDivergence(exc.iters, exc.residual, step=m) from exc
        except SolverError as exc:
            raise SolverError(f"step {m}: {exc}") from exc
        counts.append(info.iters)
        log.debug("step %d t=%.6g newton=%d residuals=%s", m, state.t, info.iters,
                  " ".join(f"{r:.2e}" for r in info.residuals))
        if callback is not None:
            callback(m, state, info)
    return state, counts


# ---------------------------------------------------------------------------
# initial data


def set_initial_state(disc: Discretization, mode="zero", data=None, t0=0.0) -> SystemState:
    """Initial state by interpolation of analytic fields or from constants.

    ``analytic``: ``data`` maps field names to callables f(x, t).
    ``constants``: ``data`` holds ``p_p0`` and ``alpha_p`` (and optionally
    ``p_f0``); sets p_p = lambda = p_p0, sigma_p = -alpha_p p_p0 I,
    T_f = -p_f0 I and zero velocities.
    ``zero``: all zero.
    """
    st = SystemState.zeros(disc, t0)
    if mode == "zero":
        return st
    if mode == "analytic":
        parts = {}
        for name in FIELDS:
            if name not in disc.spaces or name not in data:
                continue
            f = data[name]
            parts[name] = interpolate(disc.spaces[name], lambda x, f=f: f(x, t0))
        x = disc.join(parts)
        eta = None
        if "eta_p" in data:
            eta = interpolate(disc.spaces["u_s"], lambda x: data["eta_p"](x, t0))
        return SystemState.from_vector(disc, x, t0, eta if eta is not None else np.zeros(disc.sizes["u_s"]))
    if mode == "constants":
        p0 = float(data["p_p0"])
        a = float(data.get("alpha_p", 1.0))
        pf0 = float(data.get("p_f0", p0))
        I = np.eye(2)
        parts = {
            "p_p": np.full(disc.sizes["p_p"], p0),
            "sigma_p": interpolate(disc.spaces["sigma_p"], lambda x: np.broadcast_to(-a * p0 * I, (len(x), 2, 2))),
        }
        if disc.has_fluid:
            parts["T_f"] = interpolate(disc.spaces["T_f"], lambda x: np.broadcast_to(-pf0 * I, (len(x), 2, 2)))
            parts["lambda"] = np.full(disc.sizes["lambda"], p0)
        return SystemState.from_vector(disc, disc.join(parts), t0, np.zeros(disc.sizes["u_s"]))
    raise ValueError(f"unknown initial-state mode {mode!r}")
