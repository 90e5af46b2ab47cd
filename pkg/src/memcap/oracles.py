"""Brute-force reference computations for tests and acceptance runs.

Nothing here calls into the main solvers: transforms, whitening,
eigenvalues, quadrature and the water-level search are re-done from
scratch with plain numpy arithmetic (trapezoid rule instead of midpoint,
cyclic Jacobi instead of LAPACK ``eigh``).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import OracleBudgetExceeded

__all__ = [
    "OracleReport",
    "jacobi_eigvalsh",
    "dense_bisection_capacity",
    "grid_search_joint",
    "miso_pac_grid_search",
    "write_reports",
]

MAX_POINTS = 10**8


@dataclass
class OracleReport:
    case_id: str
    oracle_value: float
    main_value: float
    abs_deviation: float
    rel_deviation: float
    tolerance: float
    passed: bool

    @classmethod
    def compare(cls, case_id: str, oracle: float, main: float, tol: float, relative: bool = True):
        dev = abs(main - oracle)
        rel = dev / abs(oracle) if oracle != 0 else (0.0 if dev == 0 else math.inf)
        return cls(case_id, float(oracle), float(main), dev, rel, tol, bool((rel if relative else dev) <= tol))

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def write_reports(reports: Iterable[OracleReport], fh) -> None:
    for r in reports:
        fh.write(r.to_json() + "\n")


def jacobi_eigvalsh(A: np.ndarray, sweeps: int = 12) -> np.ndarray:
    """Eigenvalues of a stack of small Hermitian matrices by cyclic Jacobi rotations.

    Each rotation first removes the phase of the pivot, then applies a real
    Givens rotation that zeroes it. Returns ascending eigenvalues.
    """
    A = np.array(A, dtype=complex)
    single = A.ndim == 2
    if single:
        A = A[None]
    n = A.shape[-1]
    if n > 4:
        raise OracleBudgetExceeded("Jacobi oracle is limited to n <= 4")
    A = 0.5 * (A + np.conj(np.swapaxes(A, -1, -2)))
    idx = np.arange(A.shape[0])
    for _ in range(sweeps):
        off = np.sum(np.abs(A) ** 2, axis=(-1, -2)) - np.sum(np.abs(np.diagonal(A, axis1=-2, axis2=-1)) ** 2, axis=-1)
        if np.all(off <= 1e-30 * np.maximum(np.sum(np.abs(A) ** 2, axis=(-1, -2)), 1e-300)):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[:, p, q]
                mag = np.abs(apq)
                app = A[:, p, p].real
                aqq = A[:, q, q].real
                # negligible pivots are left alone
                nz = mag > 1e-18 * np.maximum(np.abs(app) + np.abs(aqq), 1e-280)
                phase = np.where(nz, apq / np.where(nz, mag, 1.0), 1.0)
                tau = np.where(nz, (aqq - app) / (2 * np.where(nz, mag, 1.0)), 0.0)
                t = np.where(nz, np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.sqrt(1 + tau**2)), 0.0)
                c = 1 / np.sqrt(1 + t**2)
                s = t * c
                # V = D G with D = diag(.., conj(phase) at q ..), G the real rotation in (p, q)
                V = np.broadcast_to(np.eye(n, dtype=complex), A.shape).copy()
                V[idx, p, p] = c
                V[idx, p, q] = s
                V[idx, q, p] = -s * np.conj(phase)
                V[idx, q, q] = c * np.conj(phase)
                A = np.conj(np.swapaxes(V, -1, -2)) @ A @ V
    ev = np.sort(np.real(np.diagonal(A, axis1=-2, axis2=-1)), axis=-1)
    return ev[0] if single else ev


def _dtft(taps, theta):
    rows, cols = np.asarray(taps[0][1]).shape
    out = np.zeros((theta.size, rows, cols), dtype=complex)
    for t, m in taps:
        m = np.asarray(m, dtype=complex)
        out += np.cos(t * theta)[:, None, None] * m - 1j * np.sin(t * theta)[:, None, None] * m
    return out


def _noise(spec, theta):
    n = spec.n_rx
    out = np.zeros((theta.size, n, n), dtype=complex)
    for t, m in spec.noise_taps:
        m = np.asarray(m, dtype=complex)
        if t == 0:
            out += m
        else:
            e = np.exp(-1j * t * theta)[:, None, None]
            out += e * m + np.conj(e) * np.conj(m.T)
    return out


def _whitened(spec, theta):
    H = _dtft(spec.h_taps, theta)
    R = _noise(spec, theta)
    Y = np.linalg.solve(R, H)
    return np.conj(np.swapaxes(H, -1, -2)) @ Y


def dense_bisection_capacity(spec, P: float, N_dense: int = 2**16, iterations: int = 200) -> float:
    """TPC capacity (nats) by trapezoid quadrature on ``N_dense + 1`` nodes and bisection."""
    if spec.n_tx > 4:
        raise OracleBudgetExceeded("dense oracle supports n_tx <= 4")
    theta = np.linspace(-np.pi, np.pi, N_dense + 1)
    wts = np.full(theta.size, 2 * np.pi / N_dense)
    wts[0] = wts[-1] = np.pi / N_dense
    lw = jacobi_eigvalsh(_whitened(spec, theta))
    top = lw.max(axis=-1, keepdims=True)
    live = lw > 1e-12 * np.maximum(top, 0)
    level = np.where(live, 1.0 / np.where(live, lw, 1.0), np.inf)

    def power(mu):
        return float(np.sum(wts[:, None] * np.clip(mu - level, 0, None))) / (2 * np.pi)

    if P == 0:
        return 0.0
    lo, hi = 0.0, 1.0
    while power(hi) < P:
        hi *= 2
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if power(mid) < P:
            lo = mid
        else:
            hi = mid
    mu = 0.5 * (lo + hi)
    safe = np.where(np.isfinite(level), level, mu)
    gain = np.clip(np.log(mu / safe), 0, None)
    return float(np.sum(wts[:, None] * gain)) / (4 * np.pi)


def _psd_from_params(X):
    """PSD matrices from rows ``(r11,)`` or ``(r11, r22, |rho|, arg rho)``.

    The 2x2 form ``[[r11, rho sqrt(r11 r22)], [conj, r22]]`` with ``|rho| <= 1``
    covers every PSD matrix, and per-antenna powers are grid coordinates.
    """
    if X.shape[1] == 1:
        return X[:, 0].reshape(-1, 1, 1).astype(complex)
    r1, r2, m, f = X.T
    off = m * np.exp(1j * f) * np.sqrt(r1 * r2)
    R = np.empty((X.shape[0], 2, 2), dtype=complex)
    R[:, 0, 0], R[:, 1, 1] = r1, r2
    R[:, 0, 1], R[:, 1, 0] = off, np.conj(off)
    return R


def _mesh(axes):
    G = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in G], axis=-1)


def _combine(obj_parts, use_parts, caps, floors, slack=1e-12):
    """Best sum of per-node objectives over all feasible per-node choices.

    ``use_parts[k]`` has shape ``(M_k, J)``: per-candidate usage of each
    constraint; caps/floors give the bound (nan when absent) per constraint.
    Returns ``(best, chosen index per node)``.
    """
    def merge(parts_o, parts_u):
        o, u = parts_o[0], parts_u[0]
        for po, pu in zip(parts_o[1:], parts_u[1:]):
            o = (o[:, None] + po[None, :]).ravel()
            u = (u[:, None, :] + pu[None, :, :]).reshape(-1, u.shape[1])
        return o, u

    sizes = [o.size for o in obj_parts]
    half = max(1, len(obj_parts) // 2)
    oa, ua = merge(obj_parts[:half], use_parts[:half])
    if len(obj_parts) > half:
        ob, ub = merge(obj_parts[half:], use_parts[half:])
    else:
        ob, ub = np.zeros(1), np.zeros((1, ua.shape[1]))
    best, arg = -np.inf, None
    chunk = max(1, 2_000_000 // max(1, ob.size))
    for i in range(0, oa.size, chunk):
        o = oa[i:i + chunk, None] + ob[None, :]
        u = ua[i:i + chunk, None, :] + ub[None, :, :]
        ok = np.all(np.isnan(caps) | (u <= caps + slack), axis=-1)
        ok &= np.all(np.isnan(floors) | (u >= floors - slack), axis=-1)
        if np.any(ok):
            o = np.where(ok, o, -np.inf)
            j = int(np.argmax(o))
            if o.flat[j] > best:
                best = float(o.flat[j])
                ia, ib = np.unravel_index(j, o.shape)
                arg = (i + ia, ib)
    if arg is None:
        return best, None
    idx = list(np.unravel_index(arg[0], sizes[:half]))
    if len(sizes) > half:
        idx += list(np.unravel_index(arg[1], sizes[half:]))
    return best, [int(k) for k in idx]


def _constraint_mats(constraints, theta, n):
    mats, caps, floors = [], [], []
    N = theta.size
    if constraints.tpc is not None:
        mats.append(np.broadcast_to(np.eye(n), (N, n, n)))
        caps.append(constraints.tpc)
        floors.append(np.nan)
    if constraints.pac is not None:
        for i, p in enumerate(constraints.pac):
            E = np.zeros((n, n))
            E[i, i] = 1
            mats.append(np.broadcast_to(E, (N, n, n)))
            caps.append(p)
            floors.append(np.nan)
    for group, is_cap in ((constraints.ipc, True), (constraints.ehc, False)):
        for c in group:
            Hk = _dtft(c.taps, theta) if c.taps is not None else np.asarray(c.field)
            mats.append(np.conj(np.swapaxes(Hk, -1, -2)) @ Hk)
            caps.append(c.limit if is_cap else np.nan)
            floors.append(np.nan if is_cap else c.limit)
    return mats, np.array(caps, dtype=float), np.array(floors, dtype=float)


def grid_search_joint(spec, constraints, N: int, resolution: int = 21, angles: int = 5,
                      phases: int = 8, levels: int = 0, zoom_points: int = 5,
                      theta: Optional[np.ndarray] = None) -> float:
    """Exhaustive lower bound on the joint-constraint capacity on ``N <= 4`` midpoint nodes.

    Each node's PSD is gridded over its diagonal (antenna powers) and the
    magnitude and phase of the correlation coefficient, and every
    combination across nodes is checked against the constraints. ``levels`` further passes
    repeat the search on ``zoom_points`` points per parameter around the
    incumbent with a shrinking step; the incumbent stays on the grid, so
    the bound never gets worse.
    """
    n = spec.n_tx
    if n > 2 or N > 4:
        raise OracleBudgetExceeded("grid search supports n_tx <= 2 and N <= 4")
    if theta is None:
        theta = -np.pi + (np.arange(N) + 0.5) * 2 * np.pi / N
    w = np.full(N, 2 * np.pi / N)
    W = _whitened(spec, theta)
    mats, caps, floors = _constraint_mats(constraints, theta, n)
    budget = constraints.tpc if constraints.tpc is not None else float(np.sum(constraints.pac))
    pmax = 2 * np.pi * budget / w

    def search(cands):
        if float(np.prod([c.shape[0] for c in cands], dtype=float)) > MAX_POINTS:
            raise OracleBudgetExceeded("grid search exceeds the point budget")
        objs, uses = [], []
        for k in range(N):
            R = _psd_from_params(cands[k])
            det = np.real(np.linalg.det(np.eye(n) + W[k] @ R))
            objs.append(w[k] * np.log(np.maximum(det, 1e-300)) / (4 * np.pi))
            uses.append(np.stack([w[k] * np.real(np.einsum("ij,mji->m", A[k], R)) / (2 * np.pi)
                                  for A in mats], axis=-1))
        return _combine(objs, uses, caps, floors)

    if n == 1:
        steps = [np.array([pmax[k] / (resolution - 1)]) for k in range(N)]
        cands = [np.linspace(0, pmax[k], resolution)[:, None] for k in range(N)]
    else:
        steps = [np.array([pmax[k] / (resolution - 1)] * 2 + [1.0 / (angles - 1), 2 * np.pi / phases])
                 for k in range(N)]
        cands = [_mesh([np.linspace(0, pmax[k], resolution)] * 2
                       + [np.linspace(0, 1, angles), np.linspace(0, 2 * np.pi, phases, endpoint=False)])
                 for k in range(N)]
    best, idx = search(cands)
    for _ in range(levels):
        if idx is None:
            break
        centers = [cands[k][idx[k]] for k in range(N)]
        offs = np.linspace(-1.0, 1.0, zoom_points)
        new = []
        for k in range(N):
            axes = []
            for j, c0 in enumerate(centers[k]):
                ax = c0 + steps[k][j] * offs
                hi = pmax[k] if j < 2 else 1.0
                ax = ax if j == 3 else np.clip(ax, 0.0, hi)
                axes.append(np.unique(np.append(ax, c0)))
            new.append(_mesh(axes))
            steps[k] = steps[k] * min(0.5, 2 / (zoom_points - 1))
        cands = new
        best, idx = search(cands)
    return best


def miso_pac_grid_search(h: np.ndarray, sigma2, pac, resolution: int = 200) -> float:
    """Per-antenna MISO capacity by search over per-node antenna powers.

    ``h`` has shape ``(N, 2)`` (channel ``H = h^H`` at ``N`` equal-weight
    nodes). Rate per node is ``log(1 + (sum_i |h_i| sqrt(r_ii))^2 / sigma2)``
    with co-phased beams.
    """
    h = np.atleast_2d(np.asarray(h, dtype=complex))
    N, n = h.shape
    if n != 2:
        raise OracleBudgetExceeded("MISO search supports two antennas")
    if float(resolution**2) ** N > MAX_POINTS:
        raise OracleBudgetExceeded("MISO grid too large")
    sigma2 = np.broadcast_to(np.asarray(sigma2, dtype=float), (N,))
    w = np.full(N, 2 * np.pi / N)
    pac = np.asarray(pac, dtype=float)
    objs, uses = [], []
    for k in range(N):
        r1 = np.linspace(0, 2 * np.pi * pac[0] / w[k], resolution)
        r2 = np.linspace(0, 2 * np.pi * pac[1] / w[k], resolution)
        R1, R2 = (x.ravel() for x in np.meshgrid(r1, r2, indexing="ij"))
        amp = np.abs(h[k, 0]) * np.sqrt(R1) + np.abs(h[k, 1]) * np.sqrt(R2)
        objs.append(w[k] * np.log1p(amp**2 / sigma2[k]) / (4 * np.pi))
        uses.append(np.stack([w[k] * R1, w[k] * R2], axis=-1) / (2 * np.pi))
    return _combine(objs, uses, pac, np.full(2, np.nan))[0]
