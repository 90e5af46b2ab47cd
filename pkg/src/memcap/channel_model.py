"""Time-domain channel/noise description and its frequency-domain transforms.

A channel is stored as a finite list of causal matrix taps ``H(t)``; the
noise as its one-sided covariance sequence ``R(tau)``, ``tau >= 0``, with the
negative lags implied by Hermitian symmetry ``R(-tau) = R(tau)^H``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence, Tuple, Union

import numpy as np

from .errors import NoiseIndefinite, NoiseSingular, SpecError

__all__ = [
    "ChannelSpec",
    "AdmissibilityReport",
    "dtft",
    "transfer_function",
    "noise_psd",
    "check_admissibility",
    "DEFAULT_SINGULAR_TOL",
]

logger = logging.getLogger(__name__)

DEFAULT_SINGULAR_TOL = 1e-10

Taps = Tuple[Tuple[int, np.ndarray], ...]
ThetaLike = Union[float, np.ndarray]


def _normalize_taps(taps, shape, what: str) -> Taps:
    out = []
    seen = set()
    for delay, mat in taps:
        if int(delay) != delay:
            raise SpecError(f"{what}: delay {delay!r} is not an integer")
        delay = int(delay)
        if delay < 0:
            raise SpecError(f"{what}: negative delay {delay} (taps must be causal / one-sided)")
        if delay in seen:
            raise SpecError(f"{what}: duplicate delay {delay}")
        seen.add(delay)
        arr = np.array(mat, dtype=complex)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        if arr.shape != shape:
            raise SpecError(f"{what}: tap at delay {delay} has shape {arr.shape}, expected {shape}")
        if not np.all(np.isfinite(arr)):
            raise SpecError(f"{what}: tap at delay {delay} has non-finite entries")
        arr.setflags(write=False)
        out.append((delay, arr))
    out.sort(key=lambda dm: dm[0])
    return tuple(out)


def dtft(taps: Taps, theta: ThetaLike) -> np.ndarray:
    """Finite DTFT ``sum_t A(t) exp(-j t theta)`` of a matrix tap list.

    Returns an array of shape ``(rows, cols)`` for scalar ``theta`` and
    ``(len(theta), rows, cols)`` for an array of frequencies.
    """
    th = np.asarray(theta, dtype=float)
    scalar = th.ndim == 0
    th = np.atleast_1d(th)
    rows, cols = taps[0][1].shape
    out = np.zeros((th.size, rows, cols), dtype=complex)
    for delay, mat in taps:
        out += np.exp(-1j * delay * th)[:, None, None] * mat
    return out[0] if scalar else out


@dataclass(frozen=True, eq=False)
class ChannelSpec:
    """Finite-tap MIMO channel with stationary Gaussian noise.

    Parameters
    ----------
    n_tx, n_rx : int
        Number of inputs and outputs.
    h_taps : sequence of (delay, matrix)
        Channel impulse response, each matrix ``n_rx x n_tx``; delays >= 0.
    noise_taps : sequence of (lag, matrix)
        Noise covariance at lags >= 0, each ``n_rx x n_rx``. Lag 0 must be
        Hermitian positive semi-definite.
    """

    n_tx: int
    n_rx: int
    h_taps: Taps
    noise_taps: Taps
    hermitian_tol: float = field(default=1e-12, repr=False)

    def __post_init__(self):
        if int(self.n_tx) < 1 or int(self.n_rx) < 1:
            raise SpecError("n_tx and n_rx must be positive integers")
        object.__setattr__(self, "n_tx", int(self.n_tx))
        object.__setattr__(self, "n_rx", int(self.n_rx))
        if not self.h_taps:
            raise SpecError("channel: at least one tap is required")
        if not self.noise_taps:
            raise SpecError("noise: at least one covariance tap is required")
        object.__setattr__(
            self, "h_taps", _normalize_taps(self.h_taps, (self.n_rx, self.n_tx), "channel")
        )
        object.__setattr__(
            self, "noise_taps", _normalize_taps(self.noise_taps, (self.n_rx, self.n_rx), "noise")
        )
        r0 = self.noise_lag(0)
        scale = max(1.0, float(np.abs(r0).max()))
        if np.abs(r0 - r0.conj().T).max() > self.hermitian_tol * scale:
            raise SpecError("noise: R(0) is not Hermitian")
        if np.linalg.eigvalsh((r0 + r0.conj().T) / 2).min() < -1e-12 * scale:
            raise SpecError("noise: R(0) is not positive semi-definite")

    @classmethod
    def scalar(cls, h: Sequence[complex], noise: Sequence[complex] = (1.0,)) -> "ChannelSpec":
        """SISO channel from consecutive tap values ``h[0], h[1], ...``."""
        return cls(
            1,
            1,
            tuple((t, [[v]]) for t, v in enumerate(h)),
            tuple((t, [[v]]) for t, v in enumerate(noise)),
        )

    @classmethod
    def memoryless(cls, h, noise_cov) -> "ChannelSpec":
        h = np.atleast_2d(np.asarray(h, dtype=complex))
        noise_cov = np.atleast_2d(np.asarray(noise_cov, dtype=complex))
        return cls(h.shape[1], h.shape[0], ((0, h),), ((0, noise_cov),))

    def noise_lag(self, lag: int) -> np.ndarray:
        for t, mat in self.noise_taps:
            if t == lag:
                return mat
        return np.zeros((self.n_rx, self.n_rx), dtype=complex)

    @property
    def is_identity_channel(self) -> bool:
        """True for the single-tap ``H(0) = I`` channel."""
        if self.n_tx != self.n_rx:
            return False
        nonzero = [(t, m) for t, m in self.h_taps if np.any(m != 0)]
        return (
            len(nonzero) == 1
            and nonzero[0][0] == 0
            and np.array_equal(nonzero[0][1], np.eye(self.n_tx))
        )

    @property
    def is_white(self) -> bool:
        return all(t == 0 or not np.any(m) for t, m in self.noise_taps)

    def same_as(self, other: "ChannelSpec") -> bool:
        """Exact value equality (used for serialization round trips)."""

        def taps_eq(a, b):
            return len(a) == len(b) and all(
                ta == tb and np.array_equal(ma, mb) for (ta, ma), (tb, mb) in zip(a, b)
            )

        return (
            self.n_tx == other.n_tx
            and self.n_rx == other.n_rx
            and taps_eq(self.h_taps, other.h_taps)
            and taps_eq(self.noise_taps, other.noise_taps)
        )


def transfer_function(spec: ChannelSpec, theta: ThetaLike) -> np.ndarray:
    """Channel transfer function ``H(theta) = sum_t H(t) exp(-j t theta)``."""
    _check_theta(theta)
    return dtft(spec.h_taps, theta)


def noise_psd(spec: ChannelSpec, theta: ThetaLike) -> np.ndarray:
    """Noise PSD matrix, exactly Hermitian.

    ``R(0) + sum_{tau>0} (R(tau) e^{-j tau theta} + R(tau)^H e^{j tau theta})``
    """
    _check_theta(theta)
    th = np.asarray(theta, dtype=float)
    scalar = th.ndim == 0
    th = np.atleast_1d(th)
    out = np.broadcast_to(spec.noise_lag(0), (th.size, spec.n_rx, spec.n_rx)).copy()
    for lag, mat in spec.noise_taps:
        if lag == 0:
            continue
        ph = np.exp(-1j * lag * th)[:, None, None]
        out += ph * mat + ph.conj() * mat.conj().T
    out = 0.5 * (out + np.conj(np.swapaxes(out, -1, -2)))
    return out[0] if scalar else out


def _check_theta(theta):
    th = np.asarray(theta, dtype=float)
    if np.any(np.abs(th) > np.pi * (1 + 1e-14)):
        raise ValueError("frequency outside [-pi, pi]")


@dataclass
class AdmissibilityReport:
    min_channel_sv: float
    min_noise_eig: float
    singular_frequencies: list
    causal: bool
    summable: bool
    witness_b: float
    channel_sum_frobenius: float = 0.0
    noise_sum_frobenius: float = 0.0

    @property
    def channel_singular(self) -> bool:
        return bool(self.singular_frequencies)

    def to_dict(self) -> dict:
        return {
            "min_channel_sv": self.min_channel_sv,
            "min_noise_eig": self.min_noise_eig,
            "singular_frequencies": [float(t) for t in self.singular_frequencies],
            "causal": self.causal,
            "summable": self.summable,
            "witness_b": self.witness_b,
            "channel_sum_frobenius": self.channel_sum_frobenius,
            "noise_sum_frobenius": self.noise_sum_frobenius,
        }


def noise_eigs_checked(spec: ChannelSpec, nodes: np.ndarray, tol: float = DEFAULT_SINGULAR_TOL):
    """Noise PSD on ``nodes`` plus its eigenvalues, validated.

    Raises `NoiseIndefinite` for eigenvalues below ``-tol * lambda_max`` and
    `NoiseSingular` for eigenvalues at or below ``tol * lambda_max``.
    """
    R = noise_psd(spec, nodes)
    eig = np.linalg.eigvalsh(R)
    lmax = float(eig.max())
    if lmax <= 0:
        raise NoiseSingular("noise PSD vanishes on the whole grid", list(nodes))
    thr = tol * lmax
    low = eig.min(axis=1)
    if np.any(low < -thr):
        bad = nodes[low < -thr]
        raise NoiseIndefinite(
            f"noise PSD is indefinite (eigenvalue {low.min():.3g}) at theta={bad[0]:.6g}",
            theta=float(bad[0]),
        )
    if np.any(low <= thr):
        bad = [float(t) for t in nodes[low <= thr]]
        shown = ", ".join(f"{t:.6g}" for t in bad[:6])
        raise NoiseSingular(f"noise PSD is singular at theta = {shown}", bad)
    return R, eig


def check_admissibility(spec: ChannelSpec, grid, tol: float = DEFAULT_SINGULAR_TOL) -> AdmissibilityReport:
    """Validate the channel/noise regularity conditions on ``grid``.

    Singularity thresholds are relative: ``tol`` times the largest singular
    value of ``H`` (resp. largest noise eigenvalue) seen on the grid. A
    singular channel is only reported; a singular noise PSD raises.
    """
    nodes = np.asarray(grid.nodes, dtype=float)
    if nodes.size == 0:
        raise ValueError("empty evaluation grid")
    _, eig = noise_eigs_checked(spec, nodes, tol)

    H = transfer_function(spec, nodes)
    sv = np.linalg.svd(H, compute_uv=False)
    smax = float(sv.max())
    # svd yields min(n_rx, n_tx) values: singular means rank-deficient
    smin = sv.min(axis=1)
    singular = [float(t) for t in nodes[smin <= tol * smax]] if smax > 0 else [float(t) for t in nodes]
    if singular:
        logger.warning("channel is singular at %d grid frequencies", len(singular))

    delays = [t for t, _ in spec.h_taps]
    fro = [float(np.linalg.norm(m)) for _, m in spec.h_taps]
    decay = [t * f for t, f in zip(delays, fro) if t > 0]
    witness_b = float(max(decay) * (1 + 1e-9) + np.finfo(float).tiny) if decay else 0.0
    noise_fro = sum(
        float(np.linalg.norm(m)) * (1 if t == 0 else 2) for t, m in spec.noise_taps
    )
    return AdmissibilityReport(
        min_channel_sv=float(smin.min()),
        min_noise_eig=float(eig.min()),
        singular_frequencies=singular,
        causal=all(t >= 0 for t in delays),
        # finite tap lists: both sums are finite by construction
        summable=bool(np.isfinite(sum(fro)) and np.isfinite(noise_fro)),
        witness_b=witness_b,
        channel_sum_frobenius=float(sum(fro)),
        noise_sum_frobenius=float(noise_fro),
    )
