"""Frequency grids, quadrature and the whitened channel ``W = H^H R^-1 H``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel_model import ChannelSpec, noise_eigs_checked, transfer_function

__all__ = [
    "FrequencyGrid",
    "SpectralSample",
    "SpectralField",
    "uniform_grid",
    "trapezoid_grid",
    "whiten",
    "whiten_grid",
    "whiten_matrices",
    "integrate",
    "noise_referred_eigenvalues",
    "EIG_CLIP_REL",
]

EIG_CLIP_REL = 1e-12


@dataclass(frozen=True, eq=False)
class FrequencyGrid:
    """Quadrature nodes on ``[-pi, pi]`` with weights summing to ``2 pi``."""

    nodes: np.ndarray
    weights: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float).ravel()
        weights = np.asarray(self.weights, dtype=float).ravel()
        if nodes.size == 0 or nodes.shape != weights.shape:
            raise ValueError("grid needs matching, nonempty nodes and weights")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("grid nodes must be strictly increasing")
        if nodes[0] < -np.pi - 1e-14 or nodes[-1] > np.pi + 1e-14:
            raise ValueError("grid nodes must lie in [-pi, pi]")
        if np.any(weights <= 0):
            raise ValueError("grid weights must be positive")
        if abs(weights.sum() - 2 * np.pi) > 1e-12:
            raise ValueError("grid weights must sum to 2*pi")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    def __len__(self):
        return self.nodes.size


def uniform_grid(N: int) -> FrequencyGrid:
    """Midpoint rule: ``theta_i = -pi + (i + 1/2) 2 pi / N``, equal weights."""
    N = int(N)
    if N < 1:
        raise ValueError("N must be >= 1")
    step = 2 * np.pi / N
    nodes = -np.pi + (np.arange(N) + 0.5) * step
    return FrequencyGrid(nodes, np.full(N, step), kind="midpoint")


def trapezoid_grid(N: int) -> FrequencyGrid:
    """Closed trapezoid rule on ``N + 1`` nodes including both ends ``+-pi``."""
    N = int(N)
    if N < 1:
        raise ValueError("N must be >= 1")
    step = 2 * np.pi / N
    nodes = np.linspace(-np.pi, np.pi, N + 1)
    weights = np.full(N + 1, step)
    weights[[0, -1]] = step / 2
    return FrequencyGrid(nodes, weights, kind="trapezoid")


def integrate(grid: FrequencyGrid, values) -> float:
    """Riemann sum ``sum_i values_i * dtheta_i``."""
    values = np.asarray(values)
    if values.shape[:1] != (len(grid),):
        raise ValueError(f"expected {len(grid)} values, got shape {values.shape}")
    return np.tensordot(grid.weights, values, axes=(0, 0))


@dataclass(frozen=True, eq=False)
class SpectralSample:
    """Whitened channel at one frequency.

    ``eigvals`` are nonincreasing and clipped at zero; column ``i`` of
    ``eigvecs`` belongs to ``eigvals[i]``.
    """

    theta: float
    W: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray

    @property
    def noise_levels(self) -> np.ndarray:
        """Noise-referred levels ``1 / lambda_w`` (``inf`` for zero modes)."""
        pos = self.eigvals > 0
        return np.where(pos, 1.0 / np.where(pos, self.eigvals, 1.0), np.inf)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """`SpectralSample` values for every node of a grid, stored as stacked arrays."""

    theta: np.ndarray
    W: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray
    H: np.ndarray = None
    R: np.ndarray = None

    def __len__(self):
        return self.theta.size

    def __getitem__(self, i) -> SpectralSample:
        return SpectralSample(float(self.theta[i]), self.W[i], self.eigvals[i], self.eigvecs[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def n(self) -> int:
        return self.W.shape[-1]

    @property
    def noise_levels(self) -> np.ndarray:
        lw = self.eigvals
        pos = lw > 0
        return np.where(pos, 1.0 / np.where(pos, lw, 1.0), np.inf)


def _hermitize(A):
    return 0.5 * (A + np.conj(np.swapaxes(A, -1, -2)))


def _eig_desc(W):
    lam, U = np.linalg.eigh(W)
    lam = lam[..., ::-1].copy()
    U = U[..., ::-1].copy()
    top = np.maximum(lam[..., :1], 0.0)
    lam[lam < EIG_CLIP_REL * top] = 0.0
    return lam, U


def whiten_matrices(H, R, theta=None) -> SpectralField:
    """Whitened channel from stacked ``H (N, n_rx, n_tx)`` and ``R (N, n_rx, n_rx)``.

    ``R^-1`` enters through a Cholesky factor: ``W = X^H X`` with ``L X = H``.
    """
    H = np.asarray(H, dtype=complex)
    R = np.asarray(R, dtype=complex)
    if H.ndim == 2:
        H, R = H[None], R[None]
    L = np.linalg.cholesky(R)
    X = np.linalg.solve(L, H)
    W = _hermitize(np.conj(np.swapaxes(X, -1, -2)) @ X)
    lam, U = _eig_desc(W)
    if theta is None:
        theta = np.zeros(H.shape[0])
    return SpectralField(np.atleast_1d(np.asarray(theta, dtype=float)), W, lam, U, H, R)


def whiten_grid(spec: ChannelSpec, grid: FrequencyGrid, tol: float = 1e-10) -> SpectralField:
    """Evaluate and whiten the channel at every grid node.

    Raises `NoiseSingular`/`NoiseIndefinite` if the noise PSD is not
    positive definite on the grid.
    """
    nodes = np.asarray(grid.nodes, dtype=float)
    R, _ = noise_eigs_checked(spec, nodes, tol)
    H = transfer_function(spec, nodes)
    return whiten_matrices(H, R, nodes)


def whiten(spec: ChannelSpec, theta: float, tol: float = 1e-10) -> SpectralSample:
    """Whitened channel ``W(theta)`` and its descending eigendecomposition."""
    nodes = np.array([float(theta)])
    R, _ = noise_eigs_checked(spec, nodes, tol)
    return whiten_matrices(transfer_function(spec, nodes), R, nodes)[0]


def noise_referred_eigenvalues(H: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of ``H^-1 R H^-H`` for square nonsingular ``H``.

    Computed without forming ``W``; serves as a cross-check of the reciprocal
    relation with the whitened-channel eigenvalues.
    """
    Y = np.linalg.solve(H, R)
    X = np.linalg.solve(H, np.conj(np.swapaxes(Y, -1, -2)))
    return np.linalg.eigvalsh(_hermitize(X))

