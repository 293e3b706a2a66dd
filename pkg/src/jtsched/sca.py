"""Joint scheduling and beamforming by penalized successive convex approximation.

Three nested loops run on the virtual uplink: convex subproblems over
(mu, q, theta, rate, kappa) with the receivers fixed, MMSE receiver refreshes,
and a sub-gradient loop on the per-BS weights ``lam``. The relaxed schedule is
rounded at the end and mapped back to downlink powers.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import conic
from .assemble import finalize_downlink, prune_schedule
from .conic import Affine, ConicBuilder
from .duality import (MappingInfeasible, downlink_power_from_uplink, lambda_step,
                      mmse_beamformers, update_lambda)
from .phy import ScheduleSolution, block_power, empty_solution, gain_matrix

LN2 = np.log(2.0)
OBJECTIVE_FORMS = ("linear", "penalty")
INIT_MODES = ("uplink", "mrt")


@dataclass(frozen=True)
class Coupling:
    """Receiver-dependent constants of the uplink SINR for fixed beamformers."""

    direct: np.ndarray  # |h_k^H w_k|^2
    cross: np.ndarray  # cross[k, l] = |h_l^H w_k|^2, zero diagonal
    noise: np.ndarray  # ||Q w_k||^2

    def interference(self, q) -> np.ndarray:
        return self.cross @ np.asarray(q, dtype=float)

    def sinr(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        return q * self.direct / (self.interference(q) + self.noise)


def coupling(H, W, lam, num_bs: int) -> Coupling:
    G = gain_matrix(H, W)
    cross = G.T.copy()
    np.fill_diagonal(cross, 0.0)
    noise = np.asarray(lam, dtype=float) @ block_power(W, num_bs)
    return Coupling(direct=np.real(np.diag(G)).copy(), cross=cross, noise=noise)


@dataclass
class ScaIterate:
    mu: np.ndarray
    q: np.ndarray
    theta: np.ndarray  # SINR surrogate
    rate: np.ndarray  # rate surrogate, at most log2(1 + theta)
    kappa: np.ndarray  # kappa^2 <= mu * rate
    tau: float = 1.0

    def copy(self) -> "ScaIterate":
        return ScaIterate(self.mu.copy(), self.q.copy(), self.theta.copy(), self.rate.copy(),
                          self.kappa.copy(), self.tau)

    @property
    def penalty(self) -> float:
        return float(np.sum(self.mu - self.mu ** 2))


def anchor_iterate(cp: Coupling, q, sinr_targets, max_scheduled, mu=None, tau=1.0) -> ScaIterate:
    """A point satisfying every subproblem constraint for the given receivers.

    ``mu`` is capped at ``sinr / target`` so the QoS coupling holds, then scaled to
    respect the cardinality bound; the auxiliaries are set tight.
    """
    q = np.maximum(np.asarray(q, dtype=float), 0.0)
    sinr = cp.sinr(q)
    gt = np.asarray(sinr_targets, dtype=float)
    mu = np.ones_like(q) if mu is None else np.clip(np.asarray(mu, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        cap = np.where(gt > 0, sinr / gt, 1.0)
    mu = np.minimum(mu, cap)
    if mu.sum() > max_scheduled:
        mu = mu * (max_scheduled / mu.sum())
    rate = np.log2(1.0 + sinr)
    return ScaIterate(mu=mu, q=q, theta=sinr, rate=rate, kappa=np.sqrt(mu * rate), tau=tau)


def tighten(point: ScaIterate, cp: Coupling) -> ScaIterate:
    """Raise the auxiliaries to their largest values allowed by (mu, q)."""
    theta = np.maximum(point.theta, cp.sinr(point.q))
    rate = np.log2(1.0 + theta)
    kappa = np.sqrt(np.maximum(point.mu, 0.0) * rate)
    return replace(point, theta=theta, rate=rate, kappa=kappa)


def surrogate_terms(theta, mu, q, cp: Coupling, sinr_targets) -> dict:
    """Convex/concave split of the SINR and QoS constraints.

    ``psi - phi <= 0`` is equivalent to ``theta <= uplink SINR`` and
    ``psi_mu - phi_mu <= 0`` to ``target * mu <= uplink SINR``.
    """
    theta = np.asarray(theta, dtype=float)
    mu = np.asarray(mu, dtype=float)
    q = np.asarray(q, dtype=float)
    gt = np.asarray(sinr_targets, dtype=float)
    I = cp.interference(q)
    signal = q * cp.direct
    varphi = 0.5 * (theta + I) ** 2
    varphi_mu = 0.5 * (gt * mu + I) ** 2
    return {
        "varphi": varphi,
        "psi": cp.noise * theta - signal + varphi,
        "phi": 0.5 * theta ** 2 + 0.5 * I ** 2,
        "varphi_mu": varphi_mu,
        "psi_mu": gt * cp.noise * mu - signal + varphi_mu,
        "phi_mu": 0.5 * (gt * mu) ** 2 + 0.5 * I ** 2,
    }


def penalized_square_sum(kappa, mu, tau) -> float:
    """``sum kappa^2 + tau * sum mu^2 + tau * (sum mu)^2``, the convex term subtracted in the penalty objective."""
    kappa = np.asarray(kappa, dtype=float)
    mu = np.asarray(mu, dtype=float)
    return float(np.sum(kappa ** 2) + tau * np.sum(mu ** 2) + tau * np.sum(mu) ** 2)


@dataclass(frozen=True)
class Linearization:
    """First-order lower bounds of the convex pieces, tight at ``anchor``."""

    anchor: ScaIterate
    cp: Coupling
    sinr_targets: np.ndarray
    tau: float

    @property
    def interference(self) -> np.ndarray:
        return self.cp.interference(self.anchor.q)

    def rho_gradient(self):
        a = self.anchor
        return 2.0 * a.kappa, 2.0 * self.tau * (a.mu + a.mu.sum())

    def rho(self, kappa, mu) -> float:
        a = self.anchor
        gk, gm = self.rho_gradient()
        return (penalized_square_sum(a.kappa, a.mu, self.tau)
                + float(gk @ (np.asarray(kappa) - a.kappa) + gm @ (np.asarray(mu) - a.mu)))

    def varrho(self, theta, q) -> np.ndarray:
        a = self.anchor
        It = self.interference
        I = self.cp.interference(q)
        return 0.5 * a.theta ** 2 + 0.5 * It ** 2 + a.theta * (theta - a.theta) + It * (I - It)

    def varrho_mu(self, mu, q) -> np.ndarray:
        a = self.anchor
        gt = self.sinr_targets
        It = self.interference
        I = self.cp.interference(q)
        # the slope of 0.5 * (gt * mu)^2 is gt^2 * mu
        return (0.5 * (gt * a.mu) ** 2 + 0.5 * It ** 2 + gt ** 2 * a.mu * (mu - a.mu)
                + It * (I - It))


def linearize(point: ScaIterate, cp: Coupling, sinr_targets, tau=None) -> Linearization:
    return Linearization(point.copy(), cp, np.asarray(sinr_targets, dtype=float),
                         point.tau if tau is None else float(tau))


def surrogate_objective(lin: Linearization, kappa, mu, form="linear") -> float:
    """Value of the convex subproblem objective at (kappa, mu)."""
    mu = np.asarray(mu, dtype=float)
    val = lin.tau * mu.sum() - lin.rho(kappa, mu)
    if form == "penalty":
        val += lin.tau * mu.sum() ** 2
    return float(val)


@dataclass(frozen=True)
class SubproblemLayout:
    mu: np.ndarray
    q: np.ndarray
    theta: np.ndarray
    rate: np.ndarray
    kappa: np.ndarray

    def extract(self, x, tau) -> ScaIterate:
        x = np.asarray(x)
        return ScaIterate(
            mu=np.clip(x[self.mu], 0.0, 1.0),
            q=np.maximum(x[self.q], 0.0),
            theta=np.maximum(x[self.theta], 0.0),
            rate=np.maximum(x[self.rate], 0.0),
            kappa=np.maximum(x[self.kappa], 0.0),
            tau=tau,
        )


def tangent_points(theta_max: float, count: int = 64) -> np.ndarray:
    return np.linspace(0.0, max(theta_max, 1e-6), count)


def build_subproblem(point: ScaIterate, cp: Coupling, sinr_targets, budget_total: float,
                     max_scheduled: float, tau=None, form="linear", exp_cone=True,
                     tangents=64, theta_max=None, dc_scale="balanced"):
    """Convex subproblem around ``point``; returns ``(ConicProblem, SubproblemLayout)``.

    ``form="linear"`` minimizes ``tau * sum(mu) - rho``; ``form="penalty"`` adds
    ``tau * (sum mu)^2`` so the surrogate majorizes ``tau * sum(mu - mu^2) - sum(kappa^2)``.
    Without ``exp_cone`` the rate bound is outer-approximated by ``tangents``
    tangent lines of ``log2(1 + theta)`` on ``[0, theta_max]``.

    ``dc_scale="unit"`` splits each product ``x * I`` as ``(x + I)^2/2 - x^2/2 - I^2/2``;
    ``"balanced"`` uses ``(a x + I/a)^2/2 - a^2 x^2/2 - I^2/(2 a^2)`` with ``a^2`` set to the
    anchor ratio of interference-plus-noise to SINR, and divides each row by the
    anchor denominator. Both are exact at the anchor; the balanced split does not
    depend on the power scale.
    """
    if dc_scale not in ("unit", "balanced"):
        raise ValueError(f"unknown dc_scale {dc_scale!r}")
    if form not in OBJECTIVE_FORMS:
        raise ValueError(f"unknown objective form {form!r}")
    for name in ("mu", "q", "theta", "rate", "kappa"):
        v = getattr(point, name)
        if v.shape != cp.direct.shape or not np.all(np.isfinite(v)):
            raise ValueError(f"malformed expansion point: {name}")
    lin = linearize(point, cp, sinr_targets, tau)
    gt = lin.sinr_targets
    K = len(cp.direct)
    b = ConicBuilder()
    mu = b.var(K, lb=0.0, ub=1.0, name="mu")
    q = b.var(K, lb=0.0, name="q")
    theta = b.var(K, lb=0.0, name="theta")
    rate = b.var(K, lb=0.0, name="rate")
    kappa = b.var(K, lb=0.0, name="kappa")
    one = None
    if exp_cone:
        one = b.var(name="one")
        b.add_eq(Affine.var(one) - 1.0)
    else:
        if theta_max is None:
            theta_max = float(np.max(budget_total * cp.direct / cp.noise)) if K else 1.0
        grid = tangent_points(theta_max, tangents)

    It = lin.interference
    a = lin.anchor
    for k in range(K):
        Ik = Affine.combo(q, cp.cross[k])
        signal = Affine.var(q[k]) * cp.direct[k]
        if dc_scale == "balanced":
            row = cp.noise[k] + It[k]
            w_theta = (It[k] + cp.noise[k]) / (a.theta[k] + 1.0)
            w_mu = (It[k] + cp.noise[k]) / (gt[k] * a.mu[k] + 1.0)
        else:
            row = w_theta = w_mu = 1.0
        # theta_k <= SINR_k, convexified
        _add_bilinear_bound(b, Affine.var(theta[k]), a.theta[k], Ik, It[k],
                            Affine.var(theta[k]) * cp.noise[k] - signal, w_theta, row)
        # target_k * mu_k <= SINR_k, convexified
        _add_bilinear_bound(b, Affine.var(mu[k]) * gt[k], gt[k] * a.mu[k], Ik, It[k],
                            Affine.var(mu[k]) * (gt[k] * cp.noise[k]) - signal, w_mu, row)
        # rate_k <= log2(1 + theta_k)
        if exp_cone:
            b.add_exp(Affine.var(rate[k]) * LN2, Affine.var(one), Affine.var(theta[k]) + 1.0)
        else:
            for t0 in grid:
                slope = 1.0 / ((1.0 + t0) * LN2)
                b.add_le(Affine.var(rate[k]) - Affine.var(theta[k]) * slope
                         - (np.log2(1.0 + t0) - slope * t0))
        # kappa_k^2 <= mu_k * rate_k
        b.add_product_cone(Affine.var(kappa[k]), Affine.var(mu[k]), Affine.var(rate[k]))
    b.add_le(Affine.combo(q, np.ones(K), -float(budget_total)))
    b.add_le(Affine.combo(mu, np.ones(K), -float(max_scheduled)))

    gk, gm = lin.rho_gradient()
    const = -penalized_square_sum(a.kappa, a.mu, lin.tau) + float(gk @ a.kappa + gm @ a.mu)
    obj = Affine.combo(mu, lin.tau - gm) + Affine.combo(kappa, -gk) + const
    if form == "penalty":
        u = b.var(lb=0.0, name="u")
        b.add_square_epigraph(Affine.combo(mu, np.ones(K)), Affine.var(u))
        obj = obj + Affine.var(u) * (2.0 * lin.tau)
    b.minimize(obj)
    return b.build(), SubproblemLayout(mu, q, theta, rate, kappa)


def _add_bilinear_bound(b, x, x_t, I, I_t, linear, weight, row):
    """``linear + x * I <= 0`` with the product replaced by its convex majorant at ``(x_t, I_t)``.

    ``x * I = (a x + I/a)^2/2 - (a^2 x^2 + I^2/a^2)/2`` with ``a^2 = weight``; the
    subtracted convex part is linearized. The row is divided by ``row``.
    """
    a = np.sqrt(weight)
    s = b.var(lb=0.0, name="s")
    b.add_square_epigraph((x * a + I * (1.0 / a)) * (1.0 / np.sqrt(row)), Affine.var(s))
    lin = (x * (weight * x_t) + I * (I_t / weight)
           + (-0.5 * weight * x_t ** 2 - 0.5 * I_t ** 2 / weight))
    b.add_le(linear * (1.0 / row) + Affine.var(s) - lin * (1.0 / row))


def update_tau(tau: float, step: float, mu) -> float:
    """Grow the penalty weight by ``step * sum(mu - mu^2)``; keep it when the candidate is not positive."""
    if step <= 0:
        raise ValueError("step must be positive")
    mu = np.asarray(mu, dtype=float)
    cand = tau + step * float(np.sum(mu - mu ** 2))
    return cand if cand > 0 else tau


@dataclass(frozen=True)
class ScaOptions:
    tau0: float = 1.0
    tau_step: float = 1.0
    delta: float = 1e-3
    max_inner: int = 50
    max_middle: int = 30
    max_outer: int = 20
    lambda_step: float = 0.05
    objective: str = "linear"
    dc_scale: str = "balanced"
    round_threshold: float = 0.5
    init: str = "uplink"
    prune: bool = True
    backend: object = None
    tangents: int = 64
    tolerances: conic.Tolerances = field(default_factory=conic.Tolerances)


def _rel_change(new, old) -> float:
    return abs(new - old) / max(abs(old), 1e-12)


TRACE_FIELDS = ("outer", "iota", "t", "zeta", "upsilon", "tau", "penalty", "sum_mu", "status")


def write_trace(trace, path) -> None:
    """CSV of the per-iteration history (one column per BS weight)."""
    nb = max((len(r["lam"]) for r in trace), default=0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(TRACE_FIELDS) + [f"lam_{b}" for b in range(nb)])
        for r in trace:
            w.writerow([r[f] for f in TRACE_FIELDS] + [repr(float(v)) for v in r["lam"]])


class _Run:
    """Mutable state of one Algorithm-1 run."""

    def __init__(self, H, targets, config, opts: ScaOptions):
        self.H = H
        self.gt = np.where(targets.feasible, targets.sinr, np.inf)
        self.cand = targets.feasible.copy()
        self.config = config
        self.opts = opts
        self.B = config.num_bs
        self.Nt = config.antennas_per_bs
        self.budgets = config.budgets
        self.backend = conic.get_backend(opts.backend)
        self.exp_cone = self.backend.supports_exp
        self.trace = []
        self.caps = {"inner": 0, "middle": 0}
        self.solves = 0

    def coupling(self, W, lam):
        return coupling(self.H, W, lam, self.B)

    def inner(self, point, cp, lam, outer, iota):
        """SCA iterations with fixed receivers; returns the last accepted iterate."""
        o = self.opts
        total = float(lam @ self.budgets)
        gt = np.where(np.isfinite(self.gt), self.gt, 0.0)
        lin = linearize(point, cp, gt)
        zeta_prev = surrogate_objective(lin, point.kappa, point.mu, o.objective)
        for t in range(1, o.max_inner + 1):
            prob, lay = build_subproblem(point, cp, gt, total, self.B * self.Nt, form=o.objective,
                                         exp_cone=self.exp_cone, tangents=o.tangents,
                                         dc_scale=o.dc_scale)
            sol = conic.solve(prob, o.tolerances, self.backend)
            self.solves += 1
            if not sol.ok:
                self.trace.append(self._row(outer, iota, t, np.nan, np.nan, point, lam, sol.status))
                return point
            new = lay.extract(sol.x, point.tau)
            new.mu[~self.cand] = 0.0
            new = tighten(new, cp)
            zeta = sol.objective
            self.trace.append(self._row(outer, iota, t, zeta, np.nan, new, lam, sol.status))
            point = new
            if _rel_change(zeta, zeta_prev) <= o.delta:
                return point
            point.tau = update_tau(point.tau, o.tau_step, point.mu)
            zeta_prev = zeta
        self.caps["inner"] += 1
        return point

    def _row(self, outer, iota, t, zeta, upsilon, point, lam, status):
        return {"outer": outer, "iota": iota, "t": t, "zeta": float(zeta), "upsilon": float(upsilon),
                "tau": float(point.tau), "penalty": point.penalty, "sum_mu": float(point.mu.sum()),
                "status": status, "lam": np.asarray(lam, dtype=float).copy()}

    def middle(self, point, W, lam, outer):
        o = self.opts
        cp = self.coupling(W, lam)
        upsilon_prev = None
        upsilon = 0.0
        for iota in range(o.max_middle):
            point = self.inner(point, cp, lam, outer, iota)
            try:
                W_new = mmse_beamformers(self.H, point.q, lam, self.Nt)
            except np.linalg.LinAlgError:
                W_new = W
            W = W_new
            cp = self.coupling(W, lam)
            point = tighten(point, cp)
            point.tau = o.tau0
            upsilon = float(np.sum(point.mu * np.log2(1.0 + cp.sinr(point.q))))
            self.trace.append(self._row(outer, iota, 0, np.nan, upsilon, point, lam, "refresh"))
            if upsilon_prev is not None and _rel_change(upsilon, upsilon_prev) <= o.delta:
                return point, W, cp, upsilon
            upsilon_prev = upsilon
        self.caps["middle"] += 1
        return point, W, cp, upsilon


def initial_state(H, config, sinr_targets, candidates, mode="uplink"):
    """Starting receivers, weights and uplink powers.

    ``"uplink"`` splits the uplink budget equally over the candidates and uses
    the matching MMSE receivers. ``"mrt"`` starts from MRT with equal downlink
    powers (capped by the tightest BS) and maps them to the uplink; strong users
    that are interference limited under MRT then start with almost no SINR and
    are rarely recovered by the SCA.
    """
    from .duality import uplink_power_from_downlink
    from .phy import downlink_sinr

    if mode not in INIT_MODES:
        raise ValueError(f"unknown init mode {mode!r}")
    K = H.shape[0]
    B = config.num_bs
    lam = np.full(B, 1.0 / B)
    total = lam @ config.budgets
    S = np.asarray(candidates, dtype=int)
    q = np.zeros(K)
    if mode == "uplink":
        if len(S):
            q[S] = total / len(S)
        return mmse_beamformers(H, q, lam, config.antennas_per_bs), lam, q
    norms = np.linalg.norm(H, axis=1)
    W = (H / np.maximum(norms, 1e-300)[:, None]).T
    bp = block_power(W[:, S], B)
    p = np.zeros(K)
    if len(S):
        # equal powers, as large as the tightest BS budget allows
        p[S] = np.min(config.budgets / np.maximum(bp.sum(axis=1), 1e-300))
        sinr = downlink_sinr(H[S], W[:, S], p[S])
        try:
            q[S] = uplink_power_from_downlink(np.arange(len(S)), p[S], W[:, S], lam, H[S], B, sinr)
        except MappingInfeasible:
            q[S] = total / len(S)
    if q.sum() > total:
        q *= total / q.sum()
    return W, lam, q


def run_algorithm1(channels, targets, config, options: ScaOptions | None = None,
                   trace_path=None) -> ScheduleSolution:
    """Penalized SCA scheduler; returns the best feasible rounded solution seen."""
    o = options or ScaOptions()
    start = time.perf_counter()
    H = channels.normalized
    B = config.num_bs
    run = _Run(H, targets, config, o)
    cands = np.flatnonzero(targets.feasible)
    if len(cands) == 0:
        return empty_solution(H, B, algorithm="alg1", converged=True, lam=np.full(B, 1.0 / B))
    gt = np.where(targets.feasible, targets.sinr, 0.0)
    W, lam, q = initial_state(H, config, gt, cands, o.init)
    cp = run.coupling(W, lam)
    mu0 = targets.feasible.astype(float)
    point = anchor_iterate(cp, q, gt, B * config.antennas_per_bs, mu=mu0, tau=o.tau0)

    best = None
    value_prev = None
    converged = False
    for outer in range(o.max_outer):
        point, W, cp, value = run.middle(point, W, lam, outer)
        mask = (point.mu >= o.round_threshold) & targets.feasible
        cand_sol = finalize_downlink(H, mask, point.q, lam, gt, config.budgets, B,
                                     config.antennas_per_bs, priority=point.mu, algorithm="alg1")
        if o.prune:
            cand_sol = prune_schedule(cand_sol, H, point.q, lam, gt, config.budgets, B,
                                      config.antennas_per_bs, algorithm="alg1")
        if best is None or cand_sol.sum_rate > best.sum_rate + 1e-12:
            best = cand_sol
        if value_prev is not None and _rel_change(value, value_prev) <= o.delta:
            converged = True
            break
        value_prev = value
        g = _subgradient(H, mask, point.q, lam, config, cand_sol)
        lam = update_lambda(lam, g, lambda_step(outer, o.lambda_step))
        # keep the uplink budget and the anchor feasible for the new weights
        total = float(lam @ config.budgets)
        q = point.q.copy()
        if q.sum() > total:
            q *= total / q.sum()
        cp = run.coupling(W, lam)
        point = anchor_iterate(cp, q, gt, B * config.antennas_per_bs, mu=point.mu, tau=o.tau0)

    best.converged = converged
    best.trace = run.trace
    best.info.update({"solves": run.solves, "inner_caps": run.caps["inner"],
                      "middle_caps": run.caps["middle"], "relaxed_mu": point.mu.copy(),
                      "relaxed_q": point.q.copy(),
                      "runtime": time.perf_counter() - start, "final_lam": lam.copy()})
    if trace_path is not None:
        write_trace(run.trace, trace_path)
    return best


def _subgradient(H, mask, q, lam, config, fallback: ScheduleSolution):
    """Per-BS budget slack of the downlink powers dual to the rounded uplink state."""
    S = np.flatnonzero(mask)
    budgets = config.budgets
    if len(S) and np.all(q[S] > 0):
        try:
            Ws = mmse_beamformers(H[S], q[S], lam, config.antennas_per_bs)
            p = downlink_power_from_uplink(np.arange(len(S)), q[S], Ws, lam, H[S], config.num_bs)
            return budgets - block_power(Ws, config.num_bs) @ p
        except (MappingInfeasible, np.linalg.LinAlgError):
            pass
    return budgets - fallback.bs_power
