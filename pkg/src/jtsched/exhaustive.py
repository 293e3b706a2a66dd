"""Brute-force scheduling: every admissible user subset is screened and optimized.

A subset is admitted by a minimum-power SOCP; admitted subsets get a fixed-set
rate maximization on the virtual uplink, and the best downlink solution wins.
"""

from __future__ import annotations

import csv
import itertools
import logging
import time
from dataclasses import dataclass, field
from math import comb

import numpy as np

from . import conic
from .assemble import finalize_downlink, is_feasible
from .conic import Affine, ComplexVar, ConicBuilder
from .duality import (MappingInfeasible, downlink_power_from_uplink, lambda_step,
                      mmse_beamformers, uplink_power_from_downlink, update_lambda)
from .phy import ScheduleSolution, block_power, downlink_sinr, empty_solution, make_solution
from .sca import LN2, _add_bilinear_bound, coupling
from .zfsus import zf_beamformers, zf_power_allocation

log = logging.getLogger(__name__)

DEFAULT_MAX_USERS = 10


def enumerate_subsets(num_users: int, limit: int):
    """All nonempty subsets of size at most ``limit``: by size, then lexicographic."""
    if num_users < 1:
        raise ValueError("need at least one user")
    for size in range(1, min(limit, num_users) + 1):
        for S in itertools.combinations(range(num_users), size):
            yield list(S)


def subset_count(num_users: int, limit: int) -> int:
    return sum(comb(num_users, s) for s in range(1, min(limit, num_users) + 1))


@dataclass
class SubsetCandidate:
    users: list
    feasible: bool
    status: str = ""
    beamformers: np.ndarray | None = None  # unnormalized, N x |S|
    sum_rate: float = 0.0
    solution: ScheduleSolution | None = None

    @property
    def bitmask(self) -> int:
        return sum(1 << k for k in self.users)


def _min_power_socp(Hs, sinr_targets, budgets=None, num_bs=None, antennas_per_bs=None,
                    backend=None, tolerances=None):
    n_users, N = Hs.shape
    b = ConicBuilder()
    ws = [ComplexVar(b, N, name=f"w{j}") for j in range(n_users)]
    for k in range(n_users):
        re_k, im_k = ws[k].inner(Hs[k])
        b.add_eq(im_k)
        if sinr_targets[k] <= 0:
            b.add_le(-re_k)
            continue
        tail = []
        for j in range(n_users):
            re, im = ws[j].inner(Hs[k])
            tail += [re, im]
        tail.append(Affine(const=1.0))
        b.add_soc(re_k * np.sqrt(1.0 + 1.0 / sinr_targets[k]), tail)
    t = b.var(lb=0.0, name="t")
    b.add_soc(Affine.var(t), [e for w in ws for e in w.parts()])
    if budgets is not None:
        for bs in range(num_bs):
            rows = range(bs * antennas_per_bs, (bs + 1) * antennas_per_bs)
            b.add_soc(Affine(const=float(np.sqrt(budgets[bs]))),
                      [e for w in ws for e in w.parts(rows)])
    b.minimize(Affine.var(t))
    sol = conic.solve(b.build(), tolerances, backend)
    if not sol.ok:
        return sol.status, None
    return sol.status, np.column_stack([w.value(sol.x) for w in ws])


def feasibility_socp(S, H, sinr_targets, budgets, num_bs, antennas_per_bs, backend=None,
                     tolerances=None, exact=True):
    """Admission test for the set ``S``; returns ``(feasible, status, beamformers)``.

    The minimum total-power solution is checked against every BS budget. With
    ``exact`` a failed check is retried with the per-BS budgets as constraints,
    so no admissible set is rejected only because the total-power optimum
    overloads one BS.
    """
    S = list(S)
    if len(S) > num_bs * antennas_per_bs:
        return False, "too-many-users", None
    Hs = np.asarray(H)[S]
    gt = np.asarray(sinr_targets, dtype=float)[S]
    status, Wt = _min_power_socp(Hs, gt, backend=backend, tolerances=tolerances)
    if Wt is None:
        return False, status, None
    used = block_power(Wt, num_bs).sum(axis=1)
    if np.all(used <= np.asarray(budgets) * (1 + 1e-7)):
        return True, status, Wt
    if not exact:
        return False, "budget", Wt
    status, Wt = _min_power_socp(Hs, gt, budgets, num_bs, antennas_per_bs, backend, tolerances)
    if Wt is None:
        return False, "budget", None
    return True, "budget-constrained", Wt


@dataclass(frozen=True)
class FixedSetOptions:
    delta: float = 1e-3
    max_inner: int = 30
    max_outer: int = 10
    lambda_step: float = 0.05
    dc_scale: str = "balanced"
    backend: object = None
    tolerances: conic.Tolerances = field(default_factory=conic.Tolerances)


def _downlink_from_min_power(Hs, Wt):
    p = np.sum(np.abs(Wt) ** 2, axis=0)
    return Wt / np.sqrt(p), p


def _rate_subproblem(cp, anchor_q, anchor_theta, gt, budget_total, dc_scale, exp_cone=True):
    """Fixed-set convex subproblem: maximize the sum of rate surrogates."""
    n = len(anchor_q)
    b = ConicBuilder()
    q = b.var(n, lb=0.0, name="q")
    theta = b.var(n, lb=0.0, name="theta")
    rate = b.var(n, lb=0.0, name="rate")
    one = b.var(name="one")
    b.add_eq(Affine.var(one) - 1.0)
    It = cp.interference(anchor_q)
    for k in range(n):
        Ik = Affine.combo(q, cp.cross[k])
        signal = Affine.var(q[k]) * cp.direct[k]
        if dc_scale == "balanced":
            row = cp.noise[k] + It[k]
            w_theta = row / (anchor_theta[k] + 1.0)
            w_target = row / (gt[k] + 1.0)
        else:
            row = w_theta = w_target = 1.0
        _add_bilinear_bound(b, Affine.var(theta[k]), anchor_theta[k], Ik, It[k],
                            Affine.var(theta[k]) * cp.noise[k] - signal, w_theta, row)
        _add_bilinear_bound(b, Affine(const=gt[k]), gt[k], Ik, It[k],
                            Affine(const=gt[k] * cp.noise[k]) - signal, w_target, row)
        b.add_exp(Affine.var(rate[k]) * LN2, Affine.var(one), Affine.var(theta[k]) + 1.0)
    b.add_le(Affine.combo(q, np.ones(n), -float(budget_total)))
    b.minimize(Affine.combo(rate, -np.ones(n)))
    return b.build(), q, theta


def _initial_points(Hs, gt, budgets, num_bs, Wt, backend):
    """Downlink starting points (beamformers, powers) that meet every QoS target."""
    starts = []
    W0, p0 = _downlink_from_min_power(Hs, Wt)
    starts.append(("min-power", W0, p0))
    try:
        zf = zf_beamformers(np.arange(len(Hs)), Hs)
        pz = zf_power_allocation(zf, gt, budgets, num_bs, backend=backend)
        starts.append(("zf", zf.W, pz))
    except (np.linalg.LinAlgError, ValueError, ArithmeticError):
        pass
    return starts


def fixed_set_optimize(S, H, sinr_targets, config, Wt=None, options: FixedSetOptions | None = None):
    """Sum-rate maximization with the scheduled set fixed to ``S``.

    Returns the best QoS- and budget-feasible downlink solution seen over the
    run (a full-length :class:`ScheduleSolution`).
    """
    o = options or FixedSetOptions()
    H = np.asarray(H)
    S = np.asarray(S, dtype=int)
    K = H.shape[0]
    B, Nt = config.num_bs, config.antennas_per_bs
    budgets = config.budgets
    Hs = H[S]
    gt = np.asarray(sinr_targets, dtype=float)[S]
    if Wt is None:
        ok, status, Wt = feasibility_socp(S, H, sinr_targets, budgets, B, Nt, o.backend, o.tolerances)
        if not ok:
            raise ValueError(f"set {list(S)} is not admissible ({status})")
    mask = np.zeros(K, dtype=bool)
    mask[S] = True

    def full(Ws, ps, lam, q=None):
        Wf = np.zeros((H.shape[1], K), dtype=complex)
        Wf[:, S] = Ws
        pf = np.zeros(K)
        pf[S] = ps
        qf = np.zeros(K)
        if q is not None:
            qf[S] = q
        return make_solution(H, Wf, pf, mask, B, q=qf, algorithm="alg2", lam=np.array(lam))

    lam = np.full(B, 1.0 / B)
    starts = _initial_points(Hs, gt, budgets, B, Wt, o.backend)
    best = None
    for _, Ws, ps in starts:
        if is_feasible(Hs, Ws, ps, gt, budgets, B):
            cand = full(Ws, ps, lam)
            if best is None or cand.sum_rate > best.sum_rate:
                best = cand
    start_W, start_p = max(((W, p) for _, W, p in starts),
                           key=lambda wp: np.sum(np.log2(1 + downlink_sinr(Hs, *wp))))
    trace = []
    value_prev = None
    converged = False
    solves = 0
    for outer in range(o.max_outer):
        # every outer round restarts from the initial downlink point
        try:
            q = uplink_power_from_downlink(np.arange(len(S)), start_p, start_W, lam, Hs, B)
        except MappingInfeasible:
            break
        W = start_W
        total = float(lam @ budgets)
        if q.sum() > total:
            q *= total / q.sum()
        upsilon_prev = None
        upsilon = 0.0
        for t in range(o.max_inner):
            cp = coupling(Hs, W, lam, B)
            theta = cp.sinr(q)
            prob, qi, _ = _rate_subproblem(cp, q, theta, gt, total, o.dc_scale)
            sol = conic.solve(prob, o.tolerances, o.backend)
            solves += 1
            if not sol.ok:
                break
            q = np.maximum(sol.x[qi], 0.0)
            try:
                W = mmse_beamformers(Hs, q, lam, Nt)
            except np.linalg.LinAlgError:
                break
            upsilon = float(np.sum(np.log2(1.0 + coupling(Hs, W, lam, B).sinr(q))))
            trace.append({"outer": outer, "t": t, "upsilon": upsilon, "lam": lam.copy()})
            if upsilon_prev is not None and abs(upsilon - upsilon_prev) <= o.delta * abs(upsilon_prev):
                break
            upsilon_prev = upsilon
        cand = finalize_downlink(H, mask, _expand(q, S, K), lam, _expand(gt, S, K), budgets, B, Nt,
                                 algorithm="alg2")
        if cand.num_scheduled == len(S) and (best is None or cand.sum_rate > best.sum_rate):
            best = cand
        if value_prev is not None and abs(upsilon - value_prev) <= o.delta * abs(value_prev):
            converged = True
            break
        value_prev = upsilon
        try:
            p = downlink_power_from_uplink(np.arange(len(S)), q, W, lam, Hs, B)
            g = budgets - block_power(W, B) @ p
        except MappingInfeasible:
            g = budgets - cand.bs_power
        lam = update_lambda(lam, g, lambda_step(outer, o.lambda_step))
    if best is None:
        raise ArithmeticError(f"no feasible downlink point for set {list(S)}")
    best.converged = converged
    best.trace = trace
    best.info["solves"] = solves
    return best


def _expand(v, S, K):
    out = np.zeros(K)
    out[S] = v
    return out


def run_algorithm2(channels, targets, config, options: FixedSetOptions | None = None,
                   max_users=DEFAULT_MAX_USERS, record=None) -> ScheduleSolution:
    """Evaluate every admissible subset and return the best one.

    ``record`` (a list) receives a :class:`SubsetCandidate` per visited subset.
    """
    o = options or FixedSetOptions()
    start = time.perf_counter()
    H = channels.normalized
    K = H.shape[0]
    B, Nt = config.num_bs, config.antennas_per_bs
    if K > max_users:
        raise ValueError(f"exhaustive search limited to {max_users} users, got {K}")
    gt = np.where(targets.feasible, targets.sinr, np.inf)
    best = None
    visited = 0
    admitted = 0
    for S in enumerate_subsets(K, B * Nt):
        visited += 1
        if not np.all(targets.feasible[S]):
            cand = SubsetCandidate(S, False, "infeasible-user")
        else:
            ok, status, Wt = feasibility_socp(S, H, gt, config.budgets, B, Nt, o.backend, o.tolerances)
            cand = SubsetCandidate(S, ok, status, Wt)
            if status not in (conic.OPTIMAL, conic.INFEASIBLE, "budget", "budget-constrained",
                              "too-many-users"):
                log.warning("subset %s skipped: solver status %s", S, status)
        if cand.feasible:
            admitted += 1
            try:
                sol = fixed_set_optimize(S, H, gt, config, Wt, o)
            except (ArithmeticError, ValueError) as exc:
                log.warning("subset %s: %s", S, exc)
                sol = None
            cand.solution = sol
            cand.sum_rate = sol.sum_rate if sol is not None else 0.0
            # strict improvement keeps the earliest (smallest, lexicographic) set on ties
            if sol is not None and (best is None or sol.sum_rate > best.sum_rate + 1e-12):
                best = sol
        if record is not None:
            record.append(cand)
    if best is None:
        best = empty_solution(H, B, algorithm="alg2", lam=np.full(B, 1.0 / B))
    best.info.update({"subsets": visited, "admitted": admitted,
                      "runtime": time.perf_counter() - start})
    return best


def write_subset_log(record, path) -> None:
    """CSV with one row per visited subset: bitmask, feasible flag, sum rate."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bitmask", "users", "feasible", "status", "sum_rate"])
        for c in record:
            w.writerow([c.bitmask, " ".join(map(str, c.users)), int(c.feasible), c.status,
                        repr(float(c.sum_rate))])
