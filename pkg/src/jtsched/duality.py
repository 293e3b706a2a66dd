"""Uplink-downlink duality under per-BS weighted noise.

The per-BS weights ``lam`` define the virtual-uplink noise covariance
``Q^2 = sum_b lam_b Q_b``; ``aggregate_q`` returns the diagonal of ``Q`` itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .phy import block_power, gain_matrix, uplink_sinr


class MappingInfeasible(ArithmeticError):
    """The SINR targets cannot be met: the interference coupling has spectral radius >= 1."""


def aggregate_q(lam, antennas_per_bs: int) -> np.ndarray:
    """Diagonal of ``Q = sum_b sqrt(lam_b) Q_b``."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise ValueError("lambda must be non-negative")
    if lam.sum() <= 0:
        raise ValueError("lambda must not be all zero")
    return np.repeat(np.sqrt(lam), antennas_per_bs)


@dataclass
class DualState:
    lam: np.ndarray
    antennas_per_bs: int
    g: np.ndarray | None = None
    value: float = np.nan

    @property
    def q_diag(self) -> np.ndarray:
        return aggregate_q(self.lam, self.antennas_per_bs)

    @property
    def noise_diag(self) -> np.ndarray:
        """Diagonal of ``Q^2``."""
        return np.repeat(self.lam, self.antennas_per_bs)


def mmse_beamformers(H, q, lam, antennas_per_bs: int, users=None) -> np.ndarray:
    """Unit-norm MMSE receivers ``(Q^2 + sum_l q_l h_l h_l^H)^{-1} h_k``.

    Returns an (N, len(users)) matrix. ``Q^2`` (not ``Q``) is used so the
    receiver maximizes the virtual-uplink SINR whose noise is ``||Q w||^2``.
    """
    H = np.asarray(H)
    q = np.asarray(q, dtype=float)
    noise = np.repeat(np.asarray(lam, dtype=float), antennas_per_bs)
    R = np.diag(noise).astype(complex) + (H.T * q) @ H.conj()
    cols = np.arange(H.shape[0]) if users is None else np.asarray(users)
    # raises LinAlgError on a singular covariance
    V = np.linalg.solve(R, H[cols].T)
    return V / np.linalg.norm(V, axis=0)


def mmse_beamformer(k, H, q, lam, antennas_per_bs: int) -> np.ndarray:
    return mmse_beamformers(H, q, lam, antennas_per_bs, users=[k])[:, 0]


def spectral_radius(M) -> float:
    """Largest eigenvalue modulus (the Perron root for a non-negative matrix)."""
    M = np.asarray(M, dtype=float)
    if M.shape[0] == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def solve_fixed_point(D, C, rhs, what):
    """Solve ``x = D C x + D rhs`` for x >= 0."""
    M = D[:, None] * C
    rho = spectral_radius(M)
    if rho >= 1.0:
        raise MappingInfeasible(f"{what}: spectral radius {rho:.6g} >= 1")
    x = np.linalg.solve(np.eye(len(D)) - M, D * rhs)
    if np.any(x < -1e-12 * max(1.0, np.max(np.abs(x)))):
        raise MappingInfeasible(f"{what}: negative power in fixed point")
    return np.maximum(x, 0.0)


def downlink_power_from_uplink(S, q, W, lam, H, num_bs: int, sinr=None) -> np.ndarray:
    """Downlink powers on ``S`` reproducing the virtual-uplink SINRs.

    ``q`` and ``W`` are indexed like ``S`` (one entry/column per scheduled user).
    Solves ``(I - D Psi) p = D 1`` with ``D = diag(gamma_k / |h_k^H w_k|^2)`` and
    ``Psi[k, l] = |h_k^H w_l|^2`` off the diagonal.
    """
    Hs = np.asarray(H)[np.asarray(S, dtype=int)]
    q = np.asarray(q, dtype=float)
    if sinr is None:
        sinr = uplink_sinr(Hs, W, q, lam, num_bs)
    G = gain_matrix(Hs, W)
    direct = np.diag(G).copy()
    if np.any(direct <= 0):
        raise MappingInfeasible("zero direct gain")
    Psi = G - np.diag(direct)
    return solve_fixed_point(np.asarray(sinr) / direct, Psi, np.ones(len(q)), "downlink mapping")


def uplink_power_from_downlink(S, p, W, lam, H, num_bs: int, sinr=None) -> np.ndarray:
    """Virtual-uplink powers on ``S`` reproducing the downlink SINRs."""
    from .phy import downlink_sinr

    Hs = np.asarray(H)[np.asarray(S, dtype=int)]
    p = np.asarray(p, dtype=float)
    if sinr is None:
        sinr = downlink_sinr(Hs, W, p)
    G = gain_matrix(Hs, W)
    direct = np.diag(G).copy()
    if np.any(direct <= 0):
        raise MappingInfeasible("zero direct gain")
    Phi = (G - np.diag(direct)).T  # Phi[k, l] = |h_l^H w_k|^2
    noise = np.asarray(lam, dtype=float) @ block_power(W, num_bs)
    return solve_fixed_point(np.asarray(sinr) / direct, Phi, noise, "uplink mapping")


def downlink_power_from_uplink_eig(S, q, W, lam, H, num_bs: int) -> np.ndarray:
    """Same mapping via the dominant eigenvector of the extended matrix."""
    Hs = np.asarray(H)[np.asarray(S, dtype=int)]
    q = np.asarray(q, dtype=float)
    sinr = uplink_sinr(Hs, W, q, lam, num_bs)
    G = gain_matrix(Hs, W)
    direct = np.diag(G)
    D = np.diag(sinr / direct)
    Psi = G - np.diag(direct)
    nu = np.asarray(lam, dtype=float) @ block_power(W, num_bs)
    n = len(q)
    ones = np.ones(n)
    total = q.sum()
    ext = np.zeros((n + 1, n + 1))
    ext[:n, :n] = D @ Psi
    ext[:n, n] = D @ ones
    ext[n, :n] = nu @ D @ Psi / total
    ext[n, n] = nu @ D @ ones / total
    vals, vecs = np.linalg.eig(ext)
    v = vecs[:, np.argmax(vals.real)].real
    return v[:n] / v[n]


def subgradient(p, W, budgets, num_bs: int) -> np.ndarray:
    """``g_b = P_b - sum_k p_k ||Q_b w_k||^2``."""
    return np.asarray(budgets, dtype=float) - block_power(W, num_bs) @ np.asarray(p, dtype=float)


def update_lambda(lam, g, step) -> np.ndarray:
    """Projected step: a coordinate whose update would go negative is left unchanged."""
    if step <= 0:
        raise ValueError("step must be positive")
    lam = np.asarray(lam, dtype=float)
    cand = lam - step * np.asarray(g, dtype=float)
    return np.where(cand >= 0, cand, lam)


def lambda_step(outer_index: int, base=0.05) -> float:
    """Diminishing sub-gradient step ``base / (1 + n)``."""
    return base / (1.0 + outer_index)
