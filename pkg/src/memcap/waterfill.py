"""Closed-form capacity under a total power constraint.

Power is poured over all eigenmodes of the whitened channel and all
frequencies at once; mode ``i`` at frequency ``theta`` sits at the noise
level ``1 / lambda_w,i(theta)`` and receives ``(mu - level)_+``.
Capacities are in nats per channel use.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import AllModesSingular, FormMismatch, NoConvergence
from .spectral import FrequencyGrid, SpectralField, integrate

__all__ = [
    "TpcResult",
    "total_power_at",
    "solve_water_level",
    "capacity_forms",
    "capacity_tpc",
    "optimal_psd",
    "identity_channel_psd",
    "positive_part",
    "log_det_rate",
    "average_power",
    "solve_tpc",
]

logger = logging.getLogger(__name__)

FORM_RTOL = 1e-10


@dataclass
class TpcResult:
    capacity_nats: float
    water_level: float
    psd: np.ndarray
    power_used: float
    power_budget: float

    @property
    def active_fraction(self) -> float:
        """Share of (node, mode) pairs that receive positive power."""
        lam = np.linalg.eigvalsh(self.psd)
        return float(np.mean(lam > 1e-14 * max(1.0, self.water_level)))


def total_power_at(mu: float, samples: SpectralField, grid: FrequencyGrid) -> float:
    """Average transmit power ``(1/2pi) int sum_i (mu - 1/lambda_w,i)_+`` at water level ``mu``."""
    fill = np.clip(mu - samples.noise_levels, 0.0, None)
    return float(integrate(grid, fill.sum(axis=1))) / (2 * np.pi)


def solve_water_level(
    P: float,
    samples: SpectralField,
    grid: FrequencyGrid,
    tol: float = 1e-12,
    max_iter: int = 500,
) -> float:
    """Water level meeting the power budget ``P`` with equality, by bisection."""
    if P < 0:
        raise ValueError("power budget must be nonnegative")
    levels = samples.noise_levels
    finite = levels[np.isfinite(levels)]
    if finite.size == 0:
        raise AllModesSingular("whitened channel vanishes at every node")
    lo = float(finite.min())
    if P == 0:
        return lo
    hi = lo + P + 1.0
    doublings = 0
    while total_power_at(hi, samples, grid) < P:
        hi = lo + 2.0 * (hi - lo)
        doublings += 1
        if doublings > 200:
            raise NoConvergence("could not bracket the water level")

    best_mu, best_err = hi, abs(total_power_at(hi, samples, grid) - P)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        p = total_power_at(mid, samples, grid)
        err = abs(p - P)
        if err < best_err:
            best_mu, best_err = mid, err
        if err <= tol:
            break
        if p < P:
            lo = mid
        else:
            hi = mid
    return best_mu


def capacity_forms(samples: SpectralField, grid: FrequencyGrid, mu: float):
    """Capacity at water level ``mu`` in two algebraically equal forms.

    Returns ``(levels_form, whitened_form)``: the first integrates
    ``(log(mu / level))_+`` over noise-referred levels, the second sums
    ``log(mu * lambda_w)`` over modes with ``mu * lambda_w > 1``.
    """
    levels = samples.noise_levels
    finite = np.isfinite(levels)
    safe = np.where(finite, levels, 1.0)
    a = np.where(finite, np.clip(np.log(mu / safe), 0.0, None), 0.0)
    lw = samples.eigvals
    on = mu * lw > 1.0
    b = np.where(on, np.log(np.where(on, mu * lw, 1.0)), 0.0)
    norm = 1.0 / (4 * np.pi)
    return float(integrate(grid, a.sum(axis=1))) * norm, float(integrate(grid, b.sum(axis=1))) * norm


def capacity_tpc(samples: SpectralField, grid: FrequencyGrid, mu: float) -> float:
    """Capacity (nats/use) at water level ``mu``; both forms must agree."""
    c1, c2 = capacity_forms(samples, grid, mu)
    if abs(c1 - c2) > FORM_RTOL * max(abs(c1), abs(c2)) + 1e-300:
        raise FormMismatch(f"capacity forms disagree: {c1!r} vs {c2!r}")
    return c1


def positive_part(A: np.ndarray) -> np.ndarray:
    """Keep the positive eigenmodes of (a stack of) Hermitian matrices."""
    lam, U = np.linalg.eigh(0.5 * (A + np.conj(np.swapaxes(A, -1, -2))))
    lam = np.clip(lam, 0.0, None)
    out = (U * lam[..., None, :]) @ np.conj(np.swapaxes(U, -1, -2))
    return 0.5 * (out + np.conj(np.swapaxes(out, -1, -2)))


def optimal_psd(samples: SpectralField, mu: float) -> np.ndarray:
    """Optimal input PSD ``U_w diag((mu - 1/lambda_w)_+) U_w^H`` per node."""
    d = np.clip(mu - samples.noise_levels, 0.0, None)
    U = samples.eigvecs
    R = (U * d[:, None, :]) @ np.conj(np.swapaxes(U, -1, -2))
    return 0.5 * (R + np.conj(np.swapaxes(R, -1, -2)))


def identity_channel_psd(noise_psd_samples: np.ndarray, mu: float, spec=None) -> np.ndarray:
    """``(mu I - R_noise(theta))_+`` per node; valid only for ``H(theta) = I``.

    If ``spec`` is given it must describe the single-tap identity channel.
    """
    if spec is not None and not spec.is_identity_channel:
        raise ValueError("identity-channel formula requires H(0) = I and no other taps")
    R = np.asarray(noise_psd_samples, dtype=complex)
    n = R.shape[-1]
    return positive_part(mu * np.eye(n) - R)


def average_power(grid: FrequencyGrid, psd: np.ndarray) -> float:
    """``(1/2pi) int tr R(theta) dtheta``."""
    tr = np.real(np.trace(psd, axis1=-2, axis2=-1))
    return float(integrate(grid, tr)) / (2 * np.pi)


def log_det_rate(samples: SpectralField, grid: FrequencyGrid, psd: np.ndarray) -> float:
    """Mutual information rate ``(1/4pi) int log det(I + W R) dtheta`` of a PSD field."""
    n = samples.n
    sign, logdet = np.linalg.slogdet(np.eye(n) + samples.W @ psd)
    return float(integrate(grid, logdet)) / (4 * np.pi)


def solve_tpc(samples: SpectralField, grid: FrequencyGrid, P: float, tol: float = 1e-12) -> TpcResult:
    """Water-filling solution for total power budget ``P``."""
    mu = solve_water_level(P, samples, grid, tol=tol)
    if P == 0:
        n = samples.n
        return TpcResult(0.0, mu, np.zeros((len(grid), n, n), dtype=complex), 0.0, 0.0)
    cap = capacity_tpc(samples, grid, mu)
    psd = optimal_psd(samples, mu)
    used = total_power_at(mu, samples, grid)
    logger.debug("water level %.12g, capacity %.12g nats", mu, cap)
    return TpcResult(cap, mu, psd, used, float(P))
