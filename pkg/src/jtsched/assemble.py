"""Turn a scheduled set plus virtual-uplink state into a feasible downlink solution.

Shared by the SCA and exhaustive schedulers. The uplink picture only enforces
the lambda-weighted total power, so the mapped downlink powers may overdraw a
single BS; in that case the powers are pulled back along the segment between
the minimum-QoS point and the mapped point, and if even the minimum-QoS point
is infeasible the weakest user is dropped.
"""

from __future__ import annotations

import numpy as np

from .duality import (MappingInfeasible, downlink_power_from_uplink, mmse_beamformers,
                      solve_fixed_point, uplink_power_from_downlink)
from .phy import block_power, downlink_sinr, empty_solution, gain_matrix, make_solution

# relative slack used when deciding whether a power vector is feasible
FEAS_TOL = 1e-9


def min_qos_powers(Hs, Ws, sinr_targets) -> np.ndarray:
    """Smallest downlink powers meeting every SINR target with beamformers ``Ws`` fixed."""
    G = gain_matrix(Hs, Ws)
    direct = np.diag(G).copy()
    if np.any(direct <= 0):
        raise MappingInfeasible("zero direct gain")
    return solve_fixed_point(np.asarray(sinr_targets) / direct, G - np.diag(direct),
                             np.ones(len(direct)), "minimum QoS power")


def qos_matrix(Hs, Ws, sinr_targets):
    """``C`` with ``C p >= sinr_targets`` equivalent to the downlink QoS constraints."""
    G = gain_matrix(Hs, Ws)
    direct = np.diag(G)
    C = -np.asarray(sinr_targets)[:, None] * (G - np.diag(direct))
    C[np.diag_indices_from(C)] = direct
    return C


def is_feasible(Hs, Ws, p, sinr_targets, budgets, num_bs) -> bool:
    sinr = downlink_sinr(Hs, Ws, p)
    if np.any(sinr < np.asarray(sinr_targets) * (1 - 1e-7)):
        return False
    used = block_power(Ws, num_bs) @ p
    return bool(np.all(used <= np.asarray(budgets) * (1 + FEAS_TOL)))


def segment_limit(p0, d, A, budgets, C, sinr_targets) -> float:
    """Largest alpha in [0, 1] keeping ``p0 + alpha d`` within budgets and QoS (both linear)."""
    hi = 1.0
    Ad = A @ d
    slack = budgets - A @ p0
    pos = Ad > 0
    if np.any(pos):
        hi = min(hi, float(np.min(np.maximum(slack[pos], 0.0) / Ad[pos])))
    Cd = C @ d
    margin = C @ p0 - sinr_targets
    neg = Cd < 0
    if np.any(neg):
        hi = min(hi, float(np.min(np.maximum(margin[neg], 0.0) / -Cd[neg])))
    return max(hi, 0.0)


def best_on_segments(Hs, Ws, p_floor, directions, sinr_targets, budgets, num_bs, grid=16):
    """Best-sum-rate feasible point on rays ``p_floor + alpha d`` (alpha grid)."""
    A = block_power(Ws, num_bs)
    C = qos_matrix(Hs, Ws, sinr_targets)
    best_p = p_floor
    best = np.sum(np.log2(1 + downlink_sinr(Hs, Ws, p_floor)))
    for d in directions:
        hi = segment_limit(p_floor, d, A, budgets, C, sinr_targets)
        if hi <= 0:
            continue
        for a in np.linspace(0.0, hi, grid + 1)[1:]:
            p = np.maximum(p_floor + a * d, 0.0)
            val = np.sum(np.log2(1 + downlink_sinr(Hs, Ws, p)))
            if val > best:
                best, best_p = val, p
    return best_p


def repair_powers(Hs, Ws, p_mapped, sinr_targets, budgets, num_bs):
    """Feasible powers for fixed beamformers, or ``None`` when QoS cannot be met within budget.

    ``p_mapped`` may be ``None`` (no uplink-derived candidate).
    """
    if p_mapped is not None and is_feasible(Hs, Ws, p_mapped, sinr_targets, budgets, num_bs):
        return p_mapped
    try:
        p_min = min_qos_powers(Hs, Ws, sinr_targets)
    except MappingInfeasible:
        return None
    A = block_power(Ws, num_bs)
    if np.any(A @ p_min > np.asarray(budgets) * (1 + FEAS_TOL)):
        return None
    dirs = [p_min]
    if p_mapped is not None:
        dirs.insert(0, p_mapped - p_min)
    return best_on_segments(Hs, Ws, p_min, dirs, sinr_targets, budgets, num_bs)


def finalize_downlink(H, mask, q, lam, sinr_targets, budgets, num_bs, antennas_per_bs,
                      priority=None, W=None, **solution_kw):
    """Validated downlink solution for the users in ``mask``.

    ``q`` is the full-length virtual-uplink power vector; unscheduled entries are
    ignored. Beamformers are recomputed as MMSE receivers on the scheduled set
    unless ``W`` (N x K, columns of scheduled users used) is given. Users are
    dropped in increasing ``priority`` until the set is feasible.
    """
    H = np.asarray(H)
    K = H.shape[0]
    mask = np.asarray(mask, dtype=bool).copy()
    q = np.asarray(q, dtype=float)
    priority = np.zeros(K) if priority is None else np.asarray(priority, dtype=float)
    dropped = []
    while mask.any():
        S = np.flatnonzero(mask)
        Hs = H[S]
        qs = q[S]
        if W is None:
            Ws = mmse_beamformers(Hs, qs, lam, antennas_per_bs)
        else:
            Ws = np.asarray(W)[:, S]
            Ws = Ws / np.linalg.norm(Ws, axis=0)
        p_mapped = None
        if np.all(qs > 0):
            try:
                p_mapped = downlink_power_from_uplink(np.arange(len(S)), qs, Ws, lam, Hs, num_bs)
            except MappingInfeasible:
                p_mapped = None
        ps = repair_powers(Hs, Ws, p_mapped, sinr_targets[S], budgets, num_bs)
        if ps is None:
            worst = S[np.argmin(priority[S])]
            mask[worst] = False
            dropped.append(int(worst))
            continue
        p = np.zeros(K)
        p[S] = ps
        W_full = np.zeros((H.shape[1], K), dtype=complex)
        W_full[:, S] = Ws
        q_full = np.zeros(K)
        try:
            q_full[S] = uplink_power_from_downlink(np.arange(len(S)), ps, Ws, lam, Hs, num_bs)
        except MappingInfeasible:
            pass
        sol = make_solution(H, W_full, p, mask, num_bs, q=q_full, lam=np.array(lam, dtype=float),
                            **solution_kw)
        sol.info["dropped"] = dropped
        return sol
    sol = empty_solution(H, num_bs, lam=np.array(lam, dtype=float), **solution_kw)
    sol.info["dropped"] = dropped
    return sol


def prune_schedule(sol, H, q, lam, sinr_targets, budgets, num_bs, antennas_per_bs, **solution_kw):
    """Greedy drop-one search: remove a scheduled user while that raises the sum rate.

    Each trial set is re-finalized from ``q`` restricted to the remaining users
    and rescaled to the full uplink budget ``lam @ budgets``; the input solution
    is returned when no single removal helps.
    """
    q = np.asarray(q, dtype=float)
    total = float(np.asarray(lam) @ np.asarray(budgets))
    best = sol
    dropped = list(sol.info.get("dropped", []))
    pruned = []
    while best.num_scheduled > 1:
        trial_best = None
        for k in best.scheduled:
            mask = best.mask.copy()
            mask[k] = False
            qt = np.where(mask, q, 0.0)
            if qt.sum() > 0:
                qt *= total / qt.sum()
            trial = finalize_downlink(H, mask, qt, lam, sinr_targets, budgets, num_bs,
                                      antennas_per_bs, **solution_kw)
            if trial.sum_rate > best.sum_rate + 1e-9 and (
                    trial_best is None or trial.sum_rate > trial_best[1].sum_rate):
                trial_best = (int(k), trial)
        if trial_best is None:
            break
        pruned.append(trial_best[0])
        best = trial_best[1]
    best.info["dropped"] = dropped + list(best.info.get("dropped", []))
    best.info["pruned"] = pruned
    return best
