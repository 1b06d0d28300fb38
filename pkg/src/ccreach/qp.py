"""Convex QP subproblem: assembly from the moment maps and a dense dual active-set solver.

Decision variable is the stacked jerk sequence ``u_flat = u.reshape(-1)``.
Problems are written as

    minimize    0.5 u'Hu + f'u + const
    subject to  G u <= h,   A_eq u = b_eq
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from ccreach.chance import AffineConstraint, expected_c_coeffs
from ccreach.dynamics import AffineQuadraticMaps, StateMoments, SystemModel, control_to_moment_maps

__all__ = [
    "CostWeights",
    "QPProblem",
    "QPSolution",
    "ConstraintSpec",
    "assemble_qp",
    "solve_qp",
    "kkt_residuals",
    "dump_qp_csv",
]

TERMINAL_MODES = ("soft", "position", "state")


@dataclass(frozen=True)
class CostWeights:
    """State-cost weights ``w`` toward ``target`` over the last ``cost_window`` states."""

    w: np.ndarray
    target: np.ndarray
    cost_window: int
    terminal: str = "soft"

    def __post_init__(self):
        object.__setattr__(self, "w", np.asarray(self.w, float).reshape(6))
        object.__setattr__(self, "target", np.asarray(self.target, float).reshape(6))
        if np.any(self.w < 0):
            raise ValueError("state-cost weights must be non-negative")
        if self.cost_window < 1:
            raise ValueError("cost_window must be at least 1")
        if self.terminal not in TERMINAL_MODES:
            raise ValueError(f"terminal must be one of {TERMINAL_MODES}, got {self.terminal!r}")

    def window(self, T: int) -> range:
        if self.cost_window > T:
            raise ValueError(f"cost_window {self.cost_window} exceeds horizon {T}")
        return range(T - self.cost_window + 1, T + 1)


@dataclass(frozen=True)
class ConstraintSpec:
    """One linearized collision row: obstacle ``j`` at state index ``t``."""

    obstacle: int
    t: int
    lin: AffineConstraint


@dataclass(frozen=True)
class QPProblem:
    H: np.ndarray
    f: np.ndarray
    G: np.ndarray
    h: np.ndarray
    A_eq: np.ndarray = None
    b_eq: np.ndarray = None
    const: float = 0.0
    tags: list = field(default_factory=list)

    def __post_init__(self):
        n = len(self.f)
        if self.A_eq is None:
            object.__setattr__(self, "A_eq", np.zeros((0, n)))
            object.__setattr__(self, "b_eq", np.zeros(0))
        G = np.asarray(self.G, float).reshape(-1, n)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", np.asarray(self.h, float).reshape(len(G)))

    @property
    def n(self) -> int:
        return len(self.f)

    def objective(self, u) -> float:
        u = np.asarray(u, float)
        return float(0.5 * u @ self.H @ u + self.f @ u + self.const)


@dataclass
class QPSolution:
    u_star: np.ndarray
    objective: float
    status: str  # "optimal" | "infeasible" | "max-iterations"
    kkt_residuals: tuple = (np.inf, np.inf, np.inf)
    multipliers: np.ndarray = None
    eq_multipliers: np.ndarray = None
    iterations: int = 0
    certificate: dict = None

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def assemble_qp(
    sys: SystemModel,
    x0: StateMoments,
    weights: CostWeights,
    lins: list[ConstraintSpec],
    tau: float,
    lam: float,
    maps: AffineQuadraticMaps | None = None,
) -> QPProblem:
    """Effort + expected state cost + lambda-weighted positional variance, with
    expected linearized collision values tightened by ``tau``."""
    if lam < 0 or tau < 0:
        raise ValueError("tau and lambda must be non-negative")
    maps = control_to_moment_maps(sys, x0) if maps is None else maps
    T, n = sys.T, 2 * sys.T
    H = 2.0 * np.eye(n)
    f = np.zeros(n)
    const = 0.0
    noise_w = maps.noise_weights()  # (T+1, 6, n)
    diag = np.zeros(n)
    for t in weights.window(T):
        M = maps.mean_gain[t]
        err = maps.mean_offset[t] - weights.target
        Mw = M * weights.w[:, None]
        H += 2.0 * M.T @ Mw
        f += 2.0 * Mw.T @ err
        const += float(weights.w @ (err**2 + maps.var_offset[t]))
        diag += 2.0 * weights.w @ noise_w[t]
    diag += 2.0 * lam * noise_w[:, :2, :].sum(axis=(0, 1))
    const += lam * float(maps.var_offset[:, :2].sum())
    H[np.diag_indices(n)] += diag

    rows, rhs, tags = [], [], []
    for spec in lins:
        if not 1 <= spec.t <= T:
            raise ValueError(f"constraint timestep {spec.t} outside 1..{T}")
        a_x, a_y, c = expected_c_coeffs(spec.lin)
        rows.append(a_x * maps.mean_gain[spec.t, 0] + a_y * maps.mean_gain[spec.t, 1])
        rhs.append(-tau - c - a_x * maps.mean_offset[spec.t, 0] - a_y * maps.mean_offset[spec.t, 1])
        tags.append((spec.obstacle, spec.t))
    G = np.array(rows).reshape(-1, n)
    h = np.array(rhs)

    A_eq = b_eq = None
    if weights.terminal != "soft":
        comps = [0, 1] if weights.terminal == "position" else list(range(6))
        A_eq = maps.mean_gain[T, comps]
        b_eq = weights.target[comps] - maps.mean_offset[T, comps]
    return QPProblem(0.5 * (H + H.T), f, G, h, A_eq, b_eq, const, tags)


def dump_qp_csv(p: QPProblem, directory) -> list[Path]:
    """Write H, f, G, h (and A_eq, b_eq when present) as plain CSV for offline inspection.

    ``G.csv`` carries two leading columns with each row's (obstacle, t) tag.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    fmt = "%.17g"
    out = []

    def save(name, arr, header=""):
        path = directory / name
        np.savetxt(path, np.atleast_2d(arr), fmt=fmt, delimiter=",", header=header, comments="# ")
        out.append(path)

    save("H.csv", p.H)
    save("f.csv", p.f[None, :])
    tags = np.array(p.tags, float).reshape(-1, 2) if p.tags else np.full((len(p.h), 2), -1.0)
    if len(p.h):
        save("G.csv", np.hstack([tags, p.G]), header="obstacle,t,coefficients...")
        save("h.csv", p.h[None, :])
    if len(p.b_eq):
        save("A_eq.csv", p.A_eq)
        save("b_eq.csv", p.b_eq[None, :])
    return out


def kkt_residuals(p: QPProblem, u, lam_ineq, nu_eq) -> tuple[float, float, float]:
    """(stationarity, primal violation, complementarity), all as max-abs values."""
    u = np.asarray(u, float)
    grad = p.H @ u + p.f + p.G.T @ lam_ineq + p.A_eq.T @ nu_eq
    slack = p.G @ u - p.h
    primal = 0.0
    if len(slack):
        primal = max(primal, float(np.max(slack, initial=0.0)))
    if len(p.b_eq):
        primal = max(primal, float(np.max(np.abs(p.A_eq @ u - p.b_eq))))
    comp = float(np.max(np.abs(lam_ineq * slack), initial=0.0))
    return float(np.max(np.abs(grad))), primal, comp


def _factor(H: np.ndarray):
    try:
        return sla.cho_factor(H, lower=True)
    except np.linalg.LinAlgError:
        ridge = 1e-12 * max(1.0, float(np.max(np.abs(np.diag(H)))))
        return sla.cho_factor(H + ridge * np.eye(len(H)), lower=True)


def solve_qp(p: QPProblem, tol: float = 1e-10, max_iter: int | None = None) -> QPSolution:
    """Dual active-set method (Goldfarb-Idnani) in range-space form.

    Starts from the unconstrained minimizer and adds the most violated
    constraint each step, staying dual feasible throughout.  Needs ``H``
    positive definite; a tiny ridge is added if Cholesky fails.
    """
    n, meq, mi = p.n, len(p.b_eq), len(p.h)
    N = np.vstack([p.A_eq, p.G])
    b = np.concatenate([p.b_eq, p.h])
    m = meq + mi
    max_iter = 10 * (m + n) if max_iter is None else max_iter
    cf = _factor(p.H)
    x = -sla.cho_solve(cf, p.f)
    V = sla.cho_solve(cf, N.T) if m else np.zeros((n, 0))  # H^-1 N'
    S = N @ V
    row_norm = np.maximum(np.linalg.norm(N, axis=1), 1e-300)
    scale_b = 1.0 + np.abs(b)

    active: list[int] = []
    sign: list[float] = []  # equality rows may enter with flipped sign
    mult: list[float] = []
    eq_pending = list(range(meq))
    it = 0
    status = "optimal"
    certificate = None

    def directions(p_idx, s_p):
        if not active:
            return s_p * V[:, p_idx], np.zeros(0)
        A = np.array(active)
        sg = np.array(sign)
        S_AA = S[np.ix_(A, A)] * np.outer(sg, sg)
        S_Ap = S[A, p_idx] * sg * s_p
        r = np.linalg.solve(S_AA, S_Ap)
        z = s_p * V[:, p_idx] - (V[:, A] * sg) @ r
        return z, r

    while True:
        # pick the next constraint to enforce
        if eq_pending:
            p_idx = eq_pending[0]
            viol = float(N[p_idx] @ x - b[p_idx])
            sp = 1.0 if viol >= 0 else -1.0
            viol = abs(viol)
            if viol <= tol * scale_b[p_idx]:
                # already satisfied; enter anyway so it stays satisfied
                viol = 0.0
        else:
            if mi == 0:
                break
            slack = (p.G @ x - p.h) / row_norm[meq:]
            if active:
                slack[[a - meq for a in active if a >= meq]] = -np.inf
            j = int(np.argmax(slack))
            if slack[j] <= tol * scale_b[meq + j] / row_norm[meq + j]:
                break
            p_idx, sp = meq + j, 1.0
            viol = float(N[p_idx] @ x - b[p_idx])
        mult_p = 0.0
        while True:
            it += 1
            if it > max_iter:
                status = "max-iterations"
                break
            z, r = directions(p_idx, sp)
            nz = float(sp * N[p_idx] @ z)
            dependent = nz <= 1e-13 * max(S[p_idx, p_idx], 1e-300)
            t2 = np.inf if dependent else viol / nz
            t1, drop = np.inf, -1
            for k, (a, rk) in enumerate(zip(active, r)):
                if a >= meq and rk > 0:
                    ratio = mult[k] / rk
                    if ratio < t1:
                        t1, drop = ratio, k
            if t1 == np.inf and t2 == np.inf:
                if viol == 0.0:
                    # already satisfied equality spanned by the active set
                    break
                status = "infeasible"
                # sum_i w_i N_i = 0 while sum_i w_i b_i < 0, w_i >= 0 on inequality rows
                weights = {int(p_idx): sp}
                for a, sg, rk in zip(active, sign, r):
                    weights[int(a)] = float(-rk * sg)
                bound = sum(w * b[i] for i, w in weights.items())
                certificate = {"rows": weights, "combined_bound": float(bound)}
                break
            t = min(t1, t2)
            if not dependent:
                x = x - t * z
                viol -= t * nz
            mult = [mk - t * rk for mk, rk in zip(mult, r)]
            mult_p += t
            if t == t2:
                active.append(p_idx)
                sign.append(sp)
                mult.append(mult_p)
                break
            del active[drop], sign[drop], mult[drop]
        if status != "optimal":
            break
        if eq_pending and eq_pending[0] == p_idx:
            eq_pending.pop(0)

    lam_all = np.zeros(m)
    for a, sg, mk in zip(active, sign, mult):
        lam_all[a] = sg * mk
    if status == "optimal" and active:
        x, lam_all = _polish(p, N, b, active, x, lam_all, meq)
    lam_ineq, nu_eq = lam_all[meq:], lam_all[:meq]
    res = kkt_residuals(p, x, np.maximum(lam_ineq, 0.0), nu_eq)
    return QPSolution(
        u_star=x,
        objective=p.objective(x),
        status=status,
        kkt_residuals=res,
        multipliers=lam_ineq,
        eq_multipliers=nu_eq,
        iterations=it,
        certificate=certificate,
    )


def _polish(p, N, b, active, x, lam_all, meq):
    """Re-solve the equality-constrained KKT system on the final active set."""
    A = np.array(sorted(active))
    NA = N[A]
    n, q = p.n, len(A)
    K = np.zeros((n + q, n + q))
    K[:n, :n] = p.H
    K[:n, n:] = NA.T
    K[n:, :n] = NA
    rhs = np.concatenate([-p.f, b[A]])
    # symmetric equilibration: unit primal diagonal, unit-norm scaled constraint rows
    hd = np.sqrt(np.maximum(np.abs(np.diag(p.H)), 1e-300))
    dx = 1.0 / hd
    rn = np.linalg.norm(NA * dx, axis=1)
    dz = 1.0 / np.where(rn > 0, rn, 1.0)
    D = np.concatenate([dx, dz])
    Ks = K * D[:, None] * D[None, :]
    try:
        lu = sla.lu_factor(Ks, check_finite=False)
        y = sla.lu_solve(lu, rhs * D, check_finite=False)
        for _ in range(3):  # iterative refinement against the unscaled residual
            r = rhs - K @ (D * y)
            y = y + sla.lu_solve(lu, r * D, check_finite=False)
        sol = D * y
    except (np.linalg.LinAlgError, ValueError):
        return x, lam_all
    if not np.all(np.isfinite(sol)):
        return x, lam_all
    x_new = sol[:n]
    lam_new = lam_all.copy()
    lam_new[A] = sol[n:]
    old = kkt_residuals(p, x, np.maximum(lam_all[meq:], 0), lam_all[:meq])
    new = kkt_residuals(p, x_new, np.maximum(lam_new[meq:], 0), lam_new[:meq])
    if np.any(lam_new[meq:] < -1e-9 * (1 + np.max(np.abs(lam_new), initial=0))):
        return x, lam_all
    if max(new[0], new[1]) <= max(old[0], old[1]) or new[1] <= 1e-12:
        lam_new[meq:] = np.maximum(lam_new[meq:], 0.0)
        return x_new, lam_new
    return x, lam_all
