"""Semiorthogonal user selection with zero-forcing beamforming.

Greedy selection on Gram-Schmidt residual norms, ZF beamformers on the chosen
set, then a concave power allocation between the QoS floors and the per-BS
budgets.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import conic
from .assemble import segment_limit
from .conic import Affine, ConicBuilder
from .duality import MappingInfeasible, uplink_power_from_downlink
from .phy import ScheduleSolution, block_power, empty_solution, make_solution

LN2 = np.log(2.0)


def sus_orthogonalize(h, basis) -> np.ndarray:
    """Component of ``h`` orthogonal to the span of ``basis`` (two Gram-Schmidt passes).

    ``basis`` must be mutually orthogonal, as the residuals kept by the selection are.
    """
    g = np.array(h, dtype=complex)
    for _ in range(2):
        for b in basis:
            g = g - (np.vdot(b, g) / np.vdot(b, b).real) * b
    return g


@dataclass(frozen=True)
class ZfBeamformers:
    users: np.ndarray
    W: np.ndarray  # unit-norm columns, N x |S|
    column_power: np.ndarray  # ||W(S)[:, k]||^2 of the unnormalized pseudo-inverse

    @property
    def gains(self) -> np.ndarray:
        """Effective channel gain ``1 / ||W(S)[:, k]||^2``; the SINR is ``p * gain``."""
        return 1.0 / self.column_power


def zf_beamformers(S, H, rank_tol=1e-10) -> ZfBeamformers:
    """Column-normalized ``H(S) (H(S)^H H(S))^{-1}``, with ``H(S)`` holding channels as columns."""
    S = np.asarray(S, dtype=int)
    Hs = np.asarray(H)[S].T
    gram = Hs.conj().T @ Hs
    sv = np.linalg.svd(Hs, compute_uv=False)
    if len(sv) == 0 or sv[-1] <= rank_tol * max(sv[0], 1e-300):
        raise np.linalg.LinAlgError("channel matrix of the selected set is rank deficient")
    Wraw = Hs @ np.linalg.inv(gram)
    cp = np.sum(np.abs(Wraw) ** 2, axis=0)
    return ZfBeamformers(users=S, W=Wraw / np.sqrt(cp), column_power=cp)


def min_qos_power(zf: ZfBeamformers, sinr_targets, budgets, num_bs, max_users=None):
    """Floor powers ``target * ||W(S)[:, k]||^2`` and whether they fit every BS budget."""
    gt = np.asarray(sinr_targets, dtype=float)[zf.users]
    p_floor = gt * zf.column_power
    used = block_power(zf.W, num_bs) @ p_floor
    ok = bool(np.all(used <= np.asarray(budgets) * (1 + 1e-12)))
    if max_users is not None:
        ok = ok and len(zf.users) <= max_users
    return p_floor, ok


def sus_select(H, sinr_targets, budgets, num_bs, antennas_per_bs, threshold=0.4,
               candidates=None, history=None):
    """Greedy semiorthogonal selection; returns the ordered list of selected users.

    ``history`` (a list) receives one dict per round with the surviving candidate set.
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    H = np.asarray(H)
    K = H.shape[0]
    limit = num_bs * antennas_per_bs
    pool = list(range(K)) if candidates is None else [int(k) for k in candidates]
    norms = np.linalg.norm(H, axis=1)
    selected, basis = [], []
    while pool and len(selected) < limit:
        g = {k: sus_orthogonalize(H[k], basis) for k in pool}
        gn = np.array([np.linalg.norm(g[k]) for k in pool])
        pick = pool[int(np.argmax(gn))]  # argmax returns the first, i.e. lowest index, on ties
        trial = selected + [pick]
        try:
            zf = zf_beamformers(trial, H)
            _, ok = min_qos_power(zf, sinr_targets, budgets, num_bs, limit)
        except np.linalg.LinAlgError:
            ok = False
        if not ok:
            break
        selected = trial
        gt_vec = g[pick]
        basis.append(gt_vec)
        gnorm = np.linalg.norm(gt_vec)
        pool = [k for k in pool if k != pick
                and abs(np.vdot(H[k], gt_vec)) / (norms[k] * gnorm) < threshold]
        if history is not None:
            history.append({"selected": pick, "basis": gt_vec.copy(), "survivors": list(pool)})
    return selected


def zf_power_allocation(zf: ZfBeamformers, sinr_targets, budgets, num_bs, backend=None,
                        tolerances=None) -> np.ndarray:
    """Maximize ``sum log2(1 + p_k * gain_k)`` over the QoS floors and per-BS budgets."""
    p_floor, ok = min_qos_power(zf, sinr_targets, budgets, num_bs)
    if not ok:
        raise ValueError("QoS floors exceed the per-BS budgets")
    n = len(zf.users)
    A = block_power(zf.W, num_bs)
    budgets = np.asarray(budgets, dtype=float)
    gain = zf.gains
    b = ConicBuilder()
    p = b.var(n, lb=0.0, name="p")
    t = b.var(n, name="t")
    one = b.var(name="one")
    b.add_eq(Affine.var(one) - 1.0)
    for k in range(n):
        b.add_le(Affine.var(p[k], -1.0) + p_floor[k])
        # log(1 + g p) = log(g) + log(p + 1/g) keeps the cone argument at power scale
        b.add_exp(Affine.var(t[k]), Affine.var(one), Affine.var(p[k]) + 1.0 / gain[k])
    for j in range(num_bs):
        if np.any(A[j] > 0):
            b.add_le(Affine.combo(p, A[j], -budgets[j]))
    b.minimize(Affine.combo(t, -np.ones(n) / LN2, -float(np.sum(np.log2(gain)))))
    sol = conic.solve(b.build(), tolerances, backend)
    if not sol.ok:
        raise ArithmeticError(f"power allocation failed: {sol.status}")
    p_opt = np.maximum(sol.x[p], p_floor)
    # pull back onto the exact feasible set without leaving the QoS floors
    C = np.diag(gain)
    alpha = segment_limit(p_floor, p_opt - p_floor, A, budgets, C, gain * p_floor)
    return p_floor + alpha * (p_opt - p_floor)


def sum_rate_zf(p, zf: ZfBeamformers) -> float:
    return float(np.sum(np.log2(1.0 + np.asarray(p) * zf.gains)))


def run_algorithm3(channels, targets, config, threshold=0.4, backend=None) -> ScheduleSolution:
    start = time.perf_counter()
    H = channels.normalized
    K = H.shape[0]
    B = config.num_bs
    lam = np.full(B, 1.0 / B)
    gt = np.where(targets.feasible, targets.sinr, 0.0)
    S = sus_select(H, gt, config.budgets, B, config.antennas_per_bs, threshold,
                   candidates=np.flatnonzero(targets.feasible))
    if not S:
        sol = empty_solution(H, B, algorithm="alg3", lam=lam)
        sol.info["runtime"] = time.perf_counter() - start
        return sol
    zf = zf_beamformers(S, H)
    ps = zf_power_allocation(zf, gt, config.budgets, B, backend=backend)
    p = np.zeros(K)
    p[S] = ps
    W = np.zeros((H.shape[1], K), dtype=complex)
    W[:, S] = zf.W
    mask = np.zeros(K, dtype=bool)
    mask[S] = True
    q = np.zeros(K)
    try:
        q[S] = uplink_power_from_downlink(np.arange(len(S)), ps, zf.W, lam, H[S], B)
    except MappingInfeasible:
        pass
    sol = make_solution(H, W, p, mask, B, q=q, algorithm="alg3", lam=lam)
    sol.info.update({"order": list(S), "runtime": time.perf_counter() - start})
    return sol
