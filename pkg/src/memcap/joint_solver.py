"""Capacity under joint total / per-antenna / interference / harvesting constraints.

The Lagrangian separates over frequency, and at every node the inner problem
``max_R log det(I + W R) - tr(M R)`` is a generalized water-filling with a
closed form. The outer problem over the multipliers is a smooth convex
minimization on the nonnegative orthant, solved by a projected gradient
method with Barzilai-Borwein steps and a nonmonotone line search (spectral
projected gradient). The gradient of the dual is the vector of constraint
slacks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .channel_model import dtft
from .errors import Infeasible, MNotPositive, NotRankOne, SpecError
from .spectral import FrequencyGrid, SpectralField, integrate
from .waterfill import log_det_rate, positive_part

__all__ = [
    "LinkConstraint",
    "ConstraintSet",
    "JointOptions",
    "JointResult",
    "Feasibility",
    "feasibility_check",
    "inner_waterfill",
    "solve_joint",
    "extract_rank_one",
]

logger = logging.getLogger(__name__)


def _ct(A):
    return np.conj(np.swapaxes(A, -1, -2))


def _herm(A):
    return 0.5 * (A + _ct(A))


@dataclass(frozen=True, eq=False)
class LinkConstraint:
    """Power delivered through a factor channel ``H_k``: an interference cap or a harvest floor.

    Give either ``taps`` (list of ``(delay, n_k x n_tx matrix)``, evaluated on
    the solver grid by the same DTFT as the main channel) or a precomputed
    ``field`` of shape ``(N, n_k, n_tx)``.
    """

    limit: float
    taps: tuple = None
    field: np.ndarray = None

    def __post_init__(self):
        if (self.taps is None) == (self.field is None):
            raise SpecError("link constraint needs exactly one of taps / field")
        if not np.isfinite(self.limit) or self.limit < 0:
            raise SpecError(f"link constraint limit must be finite and >= 0, got {self.limit}")
        if self.taps is not None:
            taps = []
            for delay, mat in self.taps:
                if int(delay) != delay or delay < 0:
                    raise SpecError(f"factor channel delay {delay!r} must be a nonnegative integer")
                arr = np.atleast_2d(np.array(mat, dtype=complex))
                taps.append((int(delay), arr))
            shapes = {m.shape for _, m in taps}
            if len(shapes) != 1:
                raise SpecError("factor channel taps have inconsistent shapes")
            object.__setattr__(self, "taps", tuple(sorted(taps, key=lambda t: t[0])))

    @property
    def n_tx(self) -> int:
        return self.taps[0][1].shape[1] if self.taps is not None else self.field.shape[-1]

    def channel_field(self, grid: FrequencyGrid) -> np.ndarray:
        if self.taps is not None:
            return dtft(self.taps, grid.nodes)
        fld = np.asarray(self.field, dtype=complex)
        if fld.shape[0] != len(grid):
            raise SpecError("factor channel field does not match the grid size")
        return fld

    def gram(self, grid: FrequencyGrid) -> np.ndarray:
        """``H_k^H H_k`` at every grid node."""
        Hk = self.channel_field(grid)
        return _herm(_ct(Hk) @ Hk)


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """Any nonempty combination of power constraints containing a total or per-antenna budget."""

    tpc: Optional[float] = None
    pac: Optional[Sequence[float]] = None
    ipc: Sequence[LinkConstraint] = ()
    ehc: Sequence[LinkConstraint] = ()

    def __post_init__(self):
        if self.tpc is None and self.pac is None:
            raise SpecError("unbounded problem: need a total (tpc) or per-antenna (pac) budget")
        if self.tpc is not None:
            if not np.isfinite(self.tpc) or self.tpc < 0:
                raise SpecError(f"tpc budget must be finite and >= 0, got {self.tpc}")
            object.__setattr__(self, "tpc", float(self.tpc))
        if self.pac is not None:
            pac = np.asarray(self.pac, dtype=float).ravel()
            if pac.size == 0 or not np.all(np.isfinite(pac)) or np.any(pac < 0):
                raise SpecError("pac budgets must be finite and >= 0")
            pac.setflags(write=False)
            object.__setattr__(self, "pac", pac)
        object.__setattr__(self, "ipc", tuple(self.ipc))
        object.__setattr__(self, "ehc", tuple(self.ehc))

    @property
    def tpc_only(self) -> bool:
        return self.pac is None and not self.ipc and not self.ehc

    @property
    def pac_only(self) -> bool:
        return self.tpc is None and not self.ipc and not self.ehc

    def validate_for(self, n_tx: int):
        if self.pac is not None and self.pac.size != n_tx:
            raise SpecError(f"pac has {self.pac.size} budgets for {n_tx} transmit antennas")
        for c in (*self.ipc, *self.ehc):
            if c.n_tx != n_tx:
                raise SpecError("factor channel column count does not match n_tx")


@dataclass
class _Lin:
    """One linear constraint ``sense * ((1/2pi) int tr(A R) - budget) <= 0``."""

    kind: str
    index: int
    A: np.ndarray  # (N, n, n)
    budget: float
    sense: int  # +1: upper bound, -1: lower bound


def _linear_constraints(cons: ConstraintSet, grid: FrequencyGrid, n: int) -> List[_Lin]:
    N = len(grid)
    out = []
    if cons.tpc is not None:
        out.append(_Lin("tpc", 0, np.broadcast_to(np.eye(n), (N, n, n)), cons.tpc, 1))
    if cons.pac is not None:
        for i, p in enumerate(cons.pac):
            E = np.zeros((n, n))
            E[i, i] = 1.0
            out.append(_Lin("pac", i, np.broadcast_to(E, (N, n, n)), float(p), 1))
    for k, c in enumerate(cons.ipc):
        out.append(_Lin("ipc", k, c.gram(grid), float(c.limit), 1))
    for m, c in enumerate(cons.ehc):
        out.append(_Lin("ehc", m, c.gram(grid), float(c.limit), -1))
    return out


def _usage(grid, A, R) -> float:
    tr = np.real(np.einsum("kij,kji->k", A, R))
    return float(integrate(grid, tr)) / (2 * np.pi)


# ---------------------------------------------------------------- inner problem


def _inner_batch(W, M, allow_null=True):
    """Vectorized inner maximizer. Returns ``(R, value)`` with ``value`` per node.

    With ``allow_null`` a singular ``M`` is accepted when ``W`` vanishes on
    its null space (those directions carry neither rate nor cost and get no
    power); otherwise `MNotPositive` is raised.
    """
    m, V = np.linalg.eigh(_herm(M))
    scale = np.maximum(np.abs(m).max(axis=-1, keepdims=True), 1e-300)
    null = m <= 1e-13 * scale
    if np.any(null):
        if not allow_null or np.any(m < -1e-13 * scale):
            raise MNotPositive("dual weight matrix is not positive definite")
        Wv = _ct(V) @ W @ V
        wdiag = np.real(np.einsum("kii->ki", Wv))
        wscale = np.maximum(np.real(np.einsum("kii->k", W)), 1e-300)[:, None]
        if np.any(wdiag[null] > 1e-12 * np.broadcast_to(wscale, wdiag.shape)[null]):
            raise MNotPositive("dual weight matrix is singular on a direction the channel uses")
    inv_sqrt = np.where(null, 0.0, 1.0 / np.sqrt(np.where(null, 1.0, m)))
    S = (V * inv_sqrt[..., None, :]) @ _ct(V)  # M^{-1/2} (pseudo-inverse on null space)
    Wt = _herm(S @ W @ S)
    lt, Ut = np.linalg.eigh(Wt)
    on = lt > 1.0
    d = np.where(on, 1.0 - 1.0 / np.where(on, lt, 1.0), 0.0)
    Rt = (Ut * d[..., None, :]) @ _ct(Ut)
    R = _herm(S @ Rt @ S)
    value = np.where(on, np.log(np.where(on, lt, 1.0)) - d, 0.0).sum(axis=-1)
    return R, value


def inner_waterfill(W: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Maximizer of ``log det(I + W R) - tr(M R)`` over ``R >= 0``.

    With ``Wt = M^{-1/2} W M^{-1/2} = U diag(l) U^H`` the answer is
    ``M^{-1/2} U diag((1 - 1/l)_+) U^H M^{-1/2}``; for ``M = I / mu`` this is
    ordinary water-filling at level ``mu``.

    Raises
    ------
    MNotPositive
        If ``M`` is not positive definite.
    """
    W = np.asarray(W, dtype=complex)
    M = np.asarray(M, dtype=complex)
    if np.linalg.eigvalsh(_herm(M)).min() <= 0:
        raise MNotPositive("M must be positive definite")
    R, _ = _inner_batch(W[None], M[None], allow_null=False)
    return R[0]


# ---------------------------------------------------------------- feasibility


@dataclass
class Feasibility:
    feasible: bool
    witness: Optional[str] = None
    margin: float = np.inf
    point: Optional[np.ndarray] = None
    max_harvest: Optional[np.ndarray] = None

    def __bool__(self):
        return self.feasible


def feasibility_check(cons: ConstraintSet, samples: SpectralField, grid: FrequencyGrid, tol: float = 1e-9) -> Feasibility:
    """Decide whether the harvest floors are reachable within the power budgets.

    The returned ``point`` is a PSD field meeting every constraint (the zero
    field when no floor is positive); it maximizes the smallest relative
    harvest margin.
    """
    n = samples.n
    cons.validate_for(n)
    N = len(grid)
    floors = [c for c in cons.ehc if c.limit > 0]
    if not floors:
        return Feasibility(True, point=np.zeros((N, n, n), dtype=complex))

    lins = _linear_constraints(cons, grid, n)
    upper = [c for c in lins if c.sense > 0]
    lower = [c for c in lins if c.sense < 0 and c.budget > 0]

    if len(lower) == 1 and [c.kind for c in upper] == ["tpc"]:
        # all budget on the single best (node, eigenmode) of the harvest channel
        G = lower[0].A
        g, U = np.linalg.eigh(G)
        k = int(np.argmax(g[:, -1]))
        best = float(g[k, -1])
        P = cons.tpc
        harvest = P * best
        point = np.zeros((N, n, n), dtype=complex)
        u = U[k, :, -1]
        point[k] = (2 * np.pi * P / grid.weights[k]) * np.outer(u, u.conj())
        margin = (harvest - lower[0].budget) / lower[0].budget
        ok = margin >= -tol
        witness = None if ok else f"ehc[{lower[0].index}]"
        return Feasibility(ok, witness, margin, point if ok else None, np.array([harvest]))
    return _feasibility_sdp(upper, lower, grid, n, tol)


def _feasibility_sdp(upper, lower, grid, n, tol):
    import cvxpy as cp

    N = len(grid)
    w = grid.weights / (2 * np.pi)
    R = [cp.Variable((n, n), hermitian=True) for _ in range(N)]
    t = cp.Variable()

    def use(c):
        return sum(w[k] * cp.real(cp.trace(c.A[k] @ R[k])) for k in range(N))

    cs = [Rk >> 0 for Rk in R]
    cs += [use(c) <= c.budget for c in upper]
    cs += [use(c) >= c.budget * (1 + t) for c in lower]
    prob = cp.Problem(cp.Maximize(t), cs)
    prob.solve(solver=cp.CLARABEL)
    if prob.status not in ("optimal", "optimal_inaccurate"):
        raise RuntimeError(f"feasibility program failed: {prob.status}")
    point = positive_part(np.array([Rk.value for Rk in R]))
    loads = [_usage(grid, c.A, point) for c in upper]
    s = min([1.0] + [c.budget / u for c, u in zip(upper, loads) if u > 0])
    point = point * s
    harvest = np.array([_usage(grid, c.A, point) for c in lower])
    margins = np.array([(h - c.budget) / c.budget for h, c in zip(harvest, lower)])
    j = int(np.argmin(margins))
    ok = margins[j] >= -tol
    return Feasibility(bool(ok), None if ok else f"ehc[{lower[j].index}]", float(margins[j]),
                       point if ok else None, harvest)


# ---------------------------------------------------------------- outer solver


@dataclass
class JointOptions:
    max_iter: int = 5000
    gap_tol: float = 1e-5
    step: float = 1.0
    memory: int = 10
    armijo: float = 1e-4
    min_step: float = 1e-12
    max_step: float = 1e12
    feas_tol: float = 1e-9


@dataclass
class JointResult:
    capacity_nats: float
    psd: Optional[np.ndarray]
    multipliers: dict
    duality_gap: float
    constraint_slacks: dict
    status: str
    iterations: int = 0
    dual_value: float = np.nan
    history: list = field(default_factory=list, repr=False)
    samples: Optional[SpectralField] = field(default=None, repr=False)
    constraints: Optional[ConstraintSet] = field(default=None, repr=False)
    witness: Optional[str] = None

    @property
    def water_level(self) -> Optional[float]:
        """Equivalent water level ``1 / (2 mu_tpc)`` when only the total budget binds."""
        mu = self.multipliers.get("tpc")
        return 1.0 / (2.0 * mu) if mu else None

    def to_dict(self) -> dict:
        def plain(v):
            if isinstance(v, np.ndarray):
                return [float(x) for x in v]
            return None if v is None else float(v)

        return {
            "capacity_nats": self.capacity_nats,
            "status": self.status,
            "duality_gap": self.duality_gap,
            "dual_value": self.dual_value,
            "iterations": self.iterations,
            "multipliers": {k: plain(v) for k, v in self.multipliers.items()},
            "constraint_slacks": {k: plain(v) for k, v in self.constraint_slacks.items()},
            "witness": self.witness,
        }


def _pack(lins, vec, cons):
    out = {"tpc": None, "pac": None, "ipc": np.zeros(len(cons.ipc)), "ehc": np.zeros(len(cons.ehc))}
    if cons.pac is not None:
        out["pac"] = np.zeros(len(cons.pac))
    for c, v in zip(lins, vec):
        if c.kind == "tpc":
            out["tpc"] = float(v)
        else:
            out[c.kind][c.index] = v
    return out


class _Dual:
    """Dual function of the joint problem on a fixed grid."""

    def __init__(self, W, lins, grid):
        self.W = W
        self.lins = lins
        self.grid = grid
        self.A = np.stack([c.A for c in lins])  # (J, N, n, n)
        self.b = np.array([c.budget for c in lins])
        self.s = np.array([c.sense for c in lins], dtype=float)
        self.evals = 0

    def weight(self, y):
        return np.tensordot(self.s * y, self.A, axes=(0, 0))

    def usages(self, R):
        tr = np.real(np.einsum("jkil,kli->jk", self.A, R))
        return tr @ self.grid.weights / (2 * np.pi)

    def slacks(self, R):
        """Nonnegative when satisfied: ``b - u`` for caps, ``u - b`` for floors."""
        return self.s * (self.b - self.usages(R))

    def __call__(self, y):
        """Dual value, gradient and inner maximizer; ``None`` outside the domain."""
        self.evals += 1
        try:
            R, val = _inner_batch(self.W, 2.0 * self.weight(y))
        except MNotPositive:
            return None
        D = float(integrate(self.grid, val)) / (4 * np.pi) + float(np.dot(self.s * y, self.b))
        return D, self.slacks(R), R


def _initial_multipliers(lins, samples, cons):
    levels = samples.noise_levels
    finite = levels[np.isfinite(levels)]
    ref = float(np.median(finite)) if finite.size else 1.0
    n = samples.n
    y = np.zeros(len(lins))
    for j, c in enumerate(lins):
        if c.kind == "tpc":
            y[j] = 1.0 / (2.0 * (c.budget / n + ref))
        elif c.kind == "pac" and cons.tpc is None:
            y[j] = 1.0 / (2.0 * (c.budget + ref))
    return y


def _make_feasible(R, dual, point):
    """Scale ``R`` onto the tightest cap, then blend with ``point`` to restore floors."""
    caps = dual.s > 0
    u = dual.usages(R)
    ratios = [dual.b[j] / u[j] for j in np.flatnonzero(caps) if u[j] > 0]
    if ratios:
        R = R * min(ratios)
    if point is not None and np.any(~caps):
        sl = dual.slacks(R)
        sp = dual.slacks(point)
        t = 0.0
        for j in np.flatnonzero(~caps):
            if sl[j] < 0:
                t = max(t, -sl[j] / max(sp[j] - sl[j], 1e-300))
        if t > 0:
            R = (1 - t) * R + t * point
    return R


def solve_joint(
    cons: ConstraintSet,
    samples: SpectralField,
    grid: FrequencyGrid,
    opts: Optional[JointOptions] = None,
    strict: bool = False,
) -> JointResult:
    """Maximize ``(1/4pi) int log det(I + W R)`` over the joint constraint set.

    Returns a `JointResult` whose ``status`` is ``optimal``, ``infeasible``
    or ``max_iters``; with ``strict=True`` infeasibility raises `Infeasible`.
    The reported capacity is the rate of a feasible PSD field, so it is a
    certified lower bound and ``duality_gap`` bounds its suboptimality.
    """
    opts = opts or JointOptions()
    n = samples.n
    N = len(grid)
    cons.validate_for(n)
    # drop floors that are always met
    cons = ConstraintSet(cons.tpc, cons.pac, cons.ipc, [c for c in cons.ehc if c.limit > 0]) if cons.ehc else cons

    feas = feasibility_check(cons, samples, grid, tol=opts.feas_tol)
    zero = np.zeros((N, n, n), dtype=complex)
    if not feas:
        if strict:
            raise Infeasible(f"constraints are incompatible ({feas.witness})", feas.witness)
        lins = _linear_constraints(cons, grid, n)
        return JointResult(0.0, None, _pack(lins, np.zeros(len(lins)), cons), np.nan,
                           {}, "infeasible", witness=feas.witness, samples=samples, constraints=cons)

    # antennas with a zero per-antenna budget carry no power
    keep = np.ones(n, dtype=bool)
    if cons.pac is not None:
        keep &= cons.pac > 0
    if cons.tpc == 0 or not keep.any():
        lins = _linear_constraints(cons, grid, n)
        dual = _Dual(samples.W, lins, grid)
        return JointResult(0.0, zero, _pack(lins, np.zeros(len(lins)), cons), 0.0,
                           _pack(lins, dual.slacks(zero), cons), "optimal", samples=samples, constraints=cons)

    lins_full = _linear_constraints(cons, grid, n)
    ix = np.flatnonzero(keep)
    lins = [
        _Lin(c.kind, c.index, c.A[:, ix][:, :, ix], c.budget, c.sense)
        for c in lins_full
        if not (c.kind == "pac" and not keep[c.index])
    ]
    W = samples.W[:, ix][:, :, ix]
    point = None if feas.point is None else feas.point[:, ix][:, :, ix]
    dual = _Dual(W, lins, grid)

    y = _initial_multipliers(lins, samples, cons)
    cur = dual(y)
    if cur is None:
        raise MNotPositive("initial multipliers outside the dual domain")
    D, g, Rin = cur
    best_dual = D
    best_primal, best_R = -np.inf, None
    recent = [D]
    scale = max(1.0, float(np.max(np.abs(g))))
    alpha = opts.step / scale
    status = "max_iters"
    it = 0
    history = []

    def primal(R):
        Rf = _make_feasible(R, dual, point)
        return log_det_rate_reduced(W, grid, Rf), Rf

    for it in range(1, opts.max_iter + 1):
        val, Rf = primal(Rin)
        if val > best_primal:
            best_primal, best_R = val, Rf
        best_dual = min(best_dual, D)
        history.append((D, best_primal))
        gap = best_dual - best_primal
        if gap <= opts.gap_tol * (1 + abs(best_primal)):
            status = "optimal"
            break

        d = np.maximum(y - alpha * g, 0.0) - y
        if not np.any(d):
            break
        slope = float(np.dot(g, d))
        ref = max(recent[-opts.memory:])
        lam = 1.0
        while True:
            trial = dual(y + lam * d)
            if trial is not None and trial[0] <= ref + opts.armijo * lam * slope:
                break
            lam *= 0.5
            if lam < 1e-20:
                trial = None
                break
        if trial is None:
            break
        y_new = y + lam * d
        D_new, g_new, R_new = trial
        s = y_new - y
        dg = g_new - g
        sy = float(np.dot(s, dg))
        alpha = opts.max_step if sy <= 0 else min(opts.max_step, max(opts.min_step, float(np.dot(s, s)) / sy))
        y, D, g, Rin = y_new, D_new, g_new, R_new
        recent.append(D)

    R_out = zero.copy()
    R_out[np.ix_(np.arange(N), ix, ix)] = best_R
    kept = iter(y)
    y_full = np.array([
        np.nan if (c.kind == "pac" and not keep[c.index]) else next(kept) for c in lins_full
    ])  # nan: antenna forced off, multiplier unbounded
    sl_full = _Dual(samples.W, lins_full, grid).slacks(R_out)
    gap = max(0.0, best_dual - best_primal)
    if status != "optimal" and gap <= opts.gap_tol * (1 + abs(best_primal)):
        status = "optimal"
    cap = log_det_rate(samples, grid, R_out)
    logger.info("joint solver: %s after %d iterations, gap %.3g", status, it, gap)
    return JointResult(
        capacity_nats=cap,
        psd=R_out,
        multipliers=_pack(lins_full, y_full, cons),
        duality_gap=gap,
        constraint_slacks=_pack(lins_full, sl_full, cons),
        status=status,
        iterations=it,
        dual_value=best_dual,
        history=history,
        samples=samples,
        constraints=cons,
    )


def log_det_rate_reduced(W, grid, R) -> float:
    n = W.shape[-1]
    _, logdet = np.linalg.slogdet(np.eye(n) + W @ R)
    return float(integrate(grid, logdet)) / (4 * np.pi)


# ---------------------------------------------------------------- rank-one structure


def extract_rank_one(result: JointResult, tol: float = 1e-6):
    """Dominant beam ``w(theta)`` of the optimal PSD at each node.

    Returns a list of ``(w, residual)`` with ``residual = lambda_2 / lambda_1``.
    For a MISO channel under per-antenna budgets only, every node must be
    rank one within ``tol`` and ``arg w_i`` must equal ``arg h_i`` (with
    ``H = h^H``) up to a common phase; ``w`` is returned with that common
    phase removed.
    """
    if result.status != "optimal" or result.psd is None:
        raise ValueError("rank-one extraction needs an optimal joint result")
    lam, U = np.linalg.eigh(result.psd)
    lam = np.clip(lam[:, ::-1], 0.0, None)
    U = U[:, :, ::-1]
    samples = result.samples
    qualifying = (
        samples is not None
        and samples.H is not None
        and samples.H.shape[1] == 1
        and result.constraints is not None
        and result.constraints.pac_only
    )
    out = []
    peak = float(lam[:, 0].max()) if lam.size else 0.0
    for k in range(lam.shape[0]):
        l1 = lam[k, 0]
        if l1 <= 1e-14 * max(peak, 1e-300):
            out.append((np.zeros(lam.shape[1], dtype=complex), 0.0))
            continue
        resid = float(lam[k, 1] / l1) if lam.shape[1] > 1 else 0.0
        w = np.sqrt(l1) * U[k, :, 0]
        if qualifying:
            if resid > tol:
                raise NotRankOne(f"node {k}: lambda2/lambda1 = {resid:.3g} > {tol:.3g}")
            h = np.conj(samples.H[k, 0, :])
            z = w * np.conj(h)
            w = w * np.exp(-1j * np.angle(z.sum()))
            used = (np.abs(h) > 1e-9 * np.abs(h).max()) & (np.abs(w) > 1e-9 * np.abs(w).max())
            dev = np.angle(w[used] * np.exp(-1j * np.angle(h[used])))
            if np.any(np.abs(dev) > 1e-5):
                raise NotRankOne(f"node {k}: beam phases do not follow the channel phases")
        out.append((w, resid))
    return out
