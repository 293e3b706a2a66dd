"""SINR, rate and power bookkeeping shared by all schedulers.

Conventions used throughout the package:

* ``H`` is the (K, N) matrix of noise-normalized channels, row k = ``h_k``,
  with ``N = B * N_t``.
* ``W`` is the (N, K) matrix of beamformers, column k = ``w_k``.
* ``gain_matrix(H, W)[k, l] = |h_k^H w_l|^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scenario import ChannelSet, NetworkConfig


def selection_matrix(b: int, num_bs: int, antennas_per_bs: int) -> np.ndarray:
    """0/1 diagonal matrix picking the antennas of BS ``b`` (0-based)."""
    if not 0 <= b < num_bs:
        raise IndexError(f"BS index {b} out of range for {num_bs} BSs")
    d = np.zeros(num_bs * antennas_per_bs)
    d[b * antennas_per_bs:(b + 1) * antennas_per_bs] = 1.0
    return np.diag(d)


def block_power(W: np.ndarray, num_bs: int) -> np.ndarray:
    """(B, K) array of ``||Q_b w_k||^2``."""
    n, k = W.shape
    return (np.abs(W) ** 2).reshape(num_bs, n // num_bs, k).sum(axis=1)


def gain_matrix(H: np.ndarray, W: np.ndarray) -> np.ndarray:
    return np.abs(H.conj() @ W) ** 2


def downlink_sinr(H, W, p, active=None) -> np.ndarray:
    """Downlink SINR of every user; interference only from ``active`` users."""
    p = np.asarray(p, dtype=float)
    G = gain_matrix(H, W)
    pa = p if active is None else np.where(np.asarray(active, dtype=bool), p, 0.0)
    signal = p * np.diag(G)
    interference = G @ pa - np.diag(G) * pa
    return signal / (interference + 1.0)


def uplink_sinr(H, W, q, lam, num_bs: int) -> np.ndarray:
    """Virtual-uplink SINR with noise ``||Q w_k||^2 = sum_b lam_b ||Q_b w_k||^2``."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0) or lam.sum() <= 0:
        raise ValueError("lambda must be non-negative with a positive sum")
    q = np.asarray(q, dtype=float)
    G = gain_matrix(H, W)
    noise = lam @ block_power(W, num_bs)
    signal = q * np.diag(G)
    interference = q @ G - q * np.diag(G)
    return signal / (interference + noise)


def rate(sinr):
    return np.log1p(np.asarray(sinr, dtype=float)) / np.log(2.0)


def per_bs_power(p, W, num_bs: int) -> np.ndarray:
    """Transmit power drawn from each BS, ``sum_k p_k ||Q_b w_k||^2``."""
    return block_power(W, num_bs) @ np.asarray(p, dtype=float)


@dataclass(frozen=True)
class RateTargets:
    single_user_rate: np.ndarray  # r~_k
    rate: np.ndarray  # r_k
    sinr: np.ndarray  # gamma~_k = 2**r_k - 1
    feasible: np.ndarray  # False for users with a zero channel

    @property
    def candidates(self) -> np.ndarray:
        return np.flatnonzero(self.feasible)


def single_user_power(w: np.ndarray, budgets: np.ndarray) -> float:
    """Largest power for beamformer ``w`` that keeps every BS within budget."""
    num_bs = len(budgets)
    bp = block_power(w[:, None], num_bs)[:, 0]
    used = bp > 0
    return float(np.min(budgets[used] / bp[used]))


def rate_targets(channels: ChannelSet, config: NetworkConfig) -> RateTargets:
    """QoS targets as a fraction of the single-user full-power MRT rate."""
    H = channels.normalized
    budgets = config.budgets
    k = H.shape[0]
    r_su = np.zeros(k)
    feasible = np.zeros(k, dtype=bool)
    for i in range(k):
        nrm = np.linalg.norm(H[i])
        if nrm == 0:
            continue
        w = H[i] / nrm
        p = single_user_power(w, budgets)
        r_su[i] = np.log2(1.0 + p * np.abs(H[i].conj() @ w) ** 2)
        feasible[i] = True
    r = config.rate_fraction * r_su
    return RateTargets(single_user_rate=r_su, rate=r, sinr=2.0 ** r - 1.0, feasible=feasible)


@dataclass
class ScheduleSolution:
    """Downlink schedule with beamformers and powers for all K candidates."""

    mask: np.ndarray  # bool (K,)
    p: np.ndarray  # downlink powers (K,)
    q: np.ndarray  # virtual-uplink powers (K,)
    W: np.ndarray  # (N, K) unit-norm columns
    rates: np.ndarray  # (K,), zero for unscheduled users
    sum_rate: float
    bs_power: np.ndarray  # (B,)
    converged: bool = True
    lam: np.ndarray | None = None
    algorithm: str = ""
    trace: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def scheduled(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    @property
    def num_scheduled(self) -> int:
        return int(self.mask.sum())


def make_solution(H, W, p, mask, num_bs: int, q=None, **kw) -> ScheduleSolution:
    """Assemble a solution, recomputing rates with interference from scheduled users only."""
    K = H.shape[0]
    mask = np.asarray(mask, dtype=bool)
    p = np.where(mask, np.asarray(p, dtype=float), 0.0)
    W = np.array(W, dtype=complex)
    norms = np.linalg.norm(W, axis=0)
    bad = norms == 0
    if np.any(bad):
        W[:, bad] = (H[bad].T / np.linalg.norm(H[bad], axis=1))
        norms = np.linalg.norm(W, axis=0)
    W = W / norms
    sinr = downlink_sinr(H, W, p, active=mask)
    rates = np.where(mask, rate(sinr), 0.0)
    return ScheduleSolution(
        mask=mask,
        p=p,
        q=np.zeros(K) if q is None else np.asarray(q, dtype=float),
        W=W,
        rates=rates,
        sum_rate=float(rates.sum()),
        bs_power=per_bs_power(p, W, num_bs),
        **kw,
    )


def empty_solution(H, num_bs: int, **kw) -> ScheduleSolution:
    K = H.shape[0]
    W = (H / np.maximum(np.linalg.norm(H, axis=1, keepdims=True), 1e-300)).T
    return make_solution(H, W, np.zeros(K), np.zeros(K, dtype=bool), num_bs, **kw)


@dataclass
class ValidationReport:
    violations: list
    sum_rate: float

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self):
        if self.ok:
            return f"valid (sum rate {self.sum_rate:.6g})"
        return "; ".join(self.violations)


def validate_solution(sol: ScheduleSolution, channels: ChannelSet, targets: RateTargets,
                      config: NetworkConfig, qos_tol=1e-4, power_tol=1e-6,
                      norm_tol=1e-12) -> ValidationReport:
    """Check QoS, per-BS budgets, cardinality and beamformer norms of ``sol``."""
    H = channels.normalized
    mask = np.asarray(sol.mask, dtype=bool)
    out = []
    sinr = downlink_sinr(H, sol.W, sol.p, active=mask)
    rates = rate(sinr)
    for k in np.flatnonzero(mask):
        if rates[k] < targets.rate[k] - qos_tol:
            out.append(f"user {k}: rate {rates[k]:.6g} < target {targets.rate[k]:.6g}")
    bsp = per_bs_power(np.where(mask, sol.p, 0.0), sol.W, config.num_bs)
    budgets = config.budgets
    for b in np.flatnonzero(bsp > budgets * (1 + power_tol)):
        out.append(f"BS {b}: power {bsp[b]:.6g} > budget {budgets[b]:.6g}")
    if mask.sum() > config.num_antennas:
        out.append(f"{mask.sum()} users scheduled on {config.num_antennas} antennas")
    norms = np.linalg.norm(sol.W[:, mask], axis=0)
    for k, nrm in zip(np.flatnonzero(mask), norms):
        if abs(nrm - 1.0) > norm_tol:
            out.append(f"user {k}: beamformer norm {nrm:.15g}")
    if np.any(np.asarray(sol.p)[mask] < 0):
        out.append("negative power")
    return ValidationReport(violations=out, sum_rate=float(np.sum(rates[mask])))
