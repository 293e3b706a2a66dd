"""Acceptance criteria, run at their stated tolerances.

Each test tags itself with its criterion number; the terminal summary prints
one PASS/FAIL line per criterion.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from conftest import make_instance, random_channels
from jtsched.bench import ExperimentSpec, run_experiment, summarize, summary_table
from jtsched.duality import downlink_power_from_uplink, mmse_beamformers, uplink_power_from_downlink
from jtsched.exhaustive import enumerate_subsets, run_algorithm2, subset_count
from jtsched.phy import block_power, downlink_sinr, uplink_sinr, validate_solution
from jtsched.sca import run_algorithm1
from jtsched.zfsus import (run_algorithm3, sum_rate_zf, sus_select, zf_beamformers,
                           zf_power_allocation)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
pytestmark = pytest.mark.slow


@pytest.fixture
def report(record_property):
    def tag(num, detail):
        record_property("criterion", num)
        record_property("detail", detail)
        print(f"criterion {num}: {detail}")

    return tag


def duality_instance(rng):
    """B=2, N_t=2, two users, MMSE receivers, random positive weights and uplink powers."""
    H = random_channels(rng, 2, 4, scale=2.0)
    lam = rng.uniform(0.05, 1.0, 2)
    q = rng.uniform(0.05, 2.0, 2)
    W = mmse_beamformers(H, q, lam, 2)
    return H, W, q, lam


def test_uplink_downlink_duality(report):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst_sinr = worst_sum = 0.0
    for _ in range(100):
        H, W, q, lam = duality_instance(rng)
        p = downlink_power_from_uplink([0, 1], q, W, lam, H, 2)
        up = uplink_sinr(H, W, q, lam, 2)
        down = downlink_sinr(H, W, p)
        worst_sinr = max(worst_sinr, float(np.max(np.abs(down - up) / np.maximum(up, 1.0))))
        weighted = lam @ (block_power(W, 2) @ p)
        worst_sum = max(worst_sum, abs(q.sum() - weighted) / max(q.sum(), 1.0))
    elapsed = time.perf_counter() - start
    report(1, f"max SINR mismatch {worst_sinr:.2e}, max power identity gap {worst_sum:.2e}, "
              f"{elapsed:.2f} s")
    assert worst_sinr <= 1e-6
    assert worst_sum <= 1e-8
    assert elapsed < 10.0


def test_power_mapping_round_trip(report):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        H, W, q, lam = duality_instance(rng)
        p = downlink_power_from_uplink([0, 1], q, W, lam, H, 2)
        back = uplink_power_from_downlink([0, 1], p, W, lam, H, 2)
        worst = max(worst, float(np.max(np.abs(back - q) / q)))
    report(2, f"max relative round-trip error {worst:.2e}")
    assert worst <= 1e-6


@pytest.fixture(scope="module")
def sca_runs():
    """30 logged scheduler runs at B=3, N_t=2, K=6, 0 dB."""
    out = []
    for seed in range(30):
        cfg, ch, tg = make_instance(num_bs=3, antennas_per_bs=2, num_users=6, snr_db=0, seed=seed)
        out.append((cfg, ch, tg, run_algorithm1(ch, tg, cfg)))
    return out


def test_rounded_out_users_get_no_power(report, sca_runs):
    worst = 0.0
    for cfg, _, _, sol in sca_runs:
        worst = max(worst, float(sol.p[~sol.mask].sum() / cfg.budgets.sum()))
    report(3, f"max power on unscheduled users {worst:.2e} of total budget over {len(sca_runs)} runs")
    assert worst <= 1e-4


def test_sca_close_to_exhaustive_and_zf_below_it(report):
    start = time.perf_counter()
    r1, r2, gaps = [], [], []
    for seed in range(20):
        cfg, ch, tg = make_instance(num_bs=2, antennas_per_bs=1, num_users=3, snr_db=0, seed=seed)
        a1 = run_algorithm1(ch, tg, cfg).sum_rate
        a2 = run_algorithm2(ch, tg, cfg).sum_rate
        a3 = run_algorithm3(ch, tg, cfg).sum_rate
        r1.append(a1)
        r2.append(a2)
        gaps.append(a3 - a2)
    elapsed = time.perf_counter() - start
    ratio = np.mean(r1) / np.mean(r2)
    report(4, f"alg1/alg2 mean ratio {ratio:.4f}, max alg3 - alg2 {max(gaps):.2e}, {elapsed:.1f} s")
    assert ratio >= 0.9
    assert max(gaps) <= 1e-5
    assert elapsed < 600


def test_all_solutions_satisfy_constraints(report):
    rng = np.random.default_rng(99)
    runners = {"alg1": run_algorithm1, "alg2": run_algorithm2, "alg3": run_algorithm3}
    failures = []
    checked = 0
    for i in range(50):
        cfg, ch, tg = make_instance(num_bs=int(rng.integers(2, 4)), antennas_per_bs=int(rng.integers(1, 3)),
                                    num_users=int(rng.integers(2, 6)), snr_db=float(rng.choice([0, 10, 20])),
                                    seed=int(rng.integers(2**31)))
        for name, run in runners.items():
            rep = validate_solution(run(ch, tg, cfg), ch, tg, cfg)
            checked += 1
            if not rep.ok:
                failures.append(f"instance {i} {name}: {rep}")
    report(5, f"{checked - len(failures)}/{checked} solutions valid")
    assert not failures, failures[:5]


def test_sca_mechanics(report, sca_runs):
    from jtsched.sca import ScaIterate, linearize, penalized_square_sum, surrogate_terms

    increases = 0
    worst = 0.0
    for *_, sol in sca_runs:
        prev = None
        for row in sol.trace:
            if row["status"] != "optimal" or row["t"] == 0:
                prev = None
                continue
            if prev is not None and row["t"] > 1:
                worst = max(worst, row["zeta"] - prev)
                increases += row["zeta"] > prev + 1e-7
            prev = row["zeta"]
    # linearization anchors and gradient at random points
    rng = np.random.default_rng(11)
    anchor_err = grad_err = 0.0
    for _ in range(50):
        cfg, ch, tg = make_instance(num_bs=2, antennas_per_bs=2, num_users=3, seed=int(rng.integers(1000)))
        from jtsched.sca import coupling

        H = ch.normalized
        lam = rng.uniform(0.2, 1.0, 2)
        q = rng.uniform(0.1, 1.0, 3)
        cp = coupling(H, mmse_beamformers(H, q, lam, 2), lam, 2)
        mu = rng.uniform(0, 1, 3)
        rate = rng.uniform(0.1, 3, 3)
        a = ScaIterate(mu=mu, q=q, theta=rng.uniform(0, 5, 3), rate=rate, kappa=np.sqrt(mu * rate),
                       tau=float(rng.uniform(0.5, 3)))
        lin = linearize(a, cp, tg.sinr)
        t = surrogate_terms(a.theta, a.mu, a.q, cp, tg.sinr)
        anchor_err = max(anchor_err,
                         abs(lin.rho(a.kappa, a.mu) - penalized_square_sum(a.kappa, a.mu, a.tau)),
                         float(np.max(np.abs(lin.varrho(a.theta, a.q) - t["phi"]))),
                         float(np.max(np.abs(lin.varrho_mu(a.mu, a.q) - t["phi_mu"]))))
        gk, gm = lin.rho_gradient()
        h = 1e-6
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            fk = (penalized_square_sum(a.kappa + e, a.mu, a.tau)
                  - penalized_square_sum(a.kappa - e, a.mu, a.tau)) / (2 * h)
            fm = (penalized_square_sum(a.kappa, a.mu + e, a.tau)
                  - penalized_square_sum(a.kappa, a.mu - e, a.tau)) / (2 * h)
            grad_err = max(grad_err, abs(fk - gk[i]) / abs(gk[i]), abs(fm - gm[i]) / abs(gm[i]))
    report(6, f"{increases} inner objective increases (largest increase {worst:.2e}); anchor error "
              f"{anchor_err:.2e}; gradient error {grad_err:.2e}")
    assert increases == 0
    assert anchor_err <= 1e-10
    assert grad_err <= 1e-6


def test_zero_forcing_selection(report):
    worst_cross = 0.0
    corr_violations = 0
    kkt_gains = 0
    worst_gain = 0.0
    for seed in range(50):
        cfg, ch, tg = make_instance(num_bs=3, antennas_per_bs=2, num_users=10, snr_db=10, seed=seed)
        H = ch.normalized
        history = []
        order = sus_select(H, tg.sinr, cfg.budgets, 3, 2, threshold=0.4, history=history)
        for i, k in enumerate(order[1:], start=1):
            for rec in history[:i]:
                g = rec["basis"]
                corr = abs(np.vdot(H[k], g)) / (np.linalg.norm(H[k]) * np.linalg.norm(g))
                corr_violations += corr >= 0.4
        zf = zf_beamformers(order, H)
        G = np.abs(H[order].conj() @ zf.W)
        worst_cross = max(worst_cross, float(np.max(G[~np.eye(len(order), dtype=bool)], initial=0.0)))
        p = zf_power_allocation(zf, tg.sinr, cfg.budgets, 3)
        base = sum_rate_zf(p, zf)
        A = block_power(zf.W, 3)
        floor = tg.sinr[order] * zf.column_power
        n = len(order)
        for i in range(n):
            for j in range(n):
                for sign in (1.0, -1.0):
                    d = np.zeros(n)
                    d[i] += sign * 1e-4
                    if j != i:
                        d[j] -= sign * 1e-4
                    cand = p + d
                    if np.all(cand >= floor) and np.all(A @ cand <= cfg.budgets):
                        gain = sum_rate_zf(cand, zf) - base
                        worst_gain = max(worst_gain, gain)
                        kkt_gains += gain > 1e-6
    report(7, f"max cross gain {worst_cross:.2e}; {corr_violations} correlation violations; "
              f"{kkt_gains} improving perturbations (largest gain {worst_gain:.2e})")
    assert worst_cross <= 1e-8
    assert corr_violations == 0
    assert kkt_gains == 0


@pytest.fixture(scope="module")
def trend_results():
    out = {}
    start = time.perf_counter()
    for name in ("users", "snr", "antennas", "runtime"):
        spec = ExperimentSpec.load(CONFIGS / f"{name}.yaml")
        assert spec.trials == 50
        records = run_experiment(spec)
        out[name] = (spec, records, summary_table(summarize(records)))
    out["elapsed"] = time.perf_counter() - start
    return out


def _means(table, alg, values):
    return [table[alg][float(v)].mean_sum_rate for v in values]


def test_trends(report, trend_results):
    lines, ok = [], True
    for name in ("users", "snr", "antennas"):
        spec, records, table = trend_results[name]
        assert all(r.ok for r in records)
        for alg in spec.algorithms:
            m = _means(table, alg, spec.values)
            mono = all(b >= a for a, b in zip(m, m[1:]))
            ok &= mono
            lines.append(f"{name}/{alg} " + "<".join(f"{x:.2f}" for x in m) + ("" if mono else " (!)"))
    table = trend_results["snr"][2]
    a1_20, a3_20 = table["alg1"][20.0].mean_sum_rate, table["alg3"][20.0].mean_sum_rate
    _, records, rt = trend_results["runtime"]
    assert all(r.ok for r in records)
    t = {alg: rt[alg][8.0].mean_runtime for alg in ("alg1", "alg2", "alg3")}
    elapsed = trend_results["elapsed"]
    report(8, "; ".join(lines) + f"; at 20 dB alg1 {a1_20:.2f} vs alg3 {a3_20:.2f}; runtime at K=8 "
              + ", ".join(f"{k} {v:.3f} s" for k, v in t.items()) + f"; total {elapsed / 60:.1f} min")
    assert ok
    assert a1_20 >= a3_20
    assert t["alg2"] > t["alg1"] and t["alg2"] > t["alg3"]
    assert elapsed < 3600


def test_enumeration_counts(report):
    got = {(K, n): len(list(enumerate_subsets(K, n))) for K, n in ((4, 4), (5, 2), (6, 4))}
    expected = {(4, 4): 15, (5, 2): 15, (6, 4): 56}
    report(9, ", ".join(f"K={K}, limit={n}: {c}" for (K, n), c in got.items()))
    assert got == expected
    assert all(subset_count(K, n) == c for (K, n), c in expected.items())
