import numpy as np
import pytest

from jtsched.phy import rate_targets
from jtsched.scenario import NetworkConfig, draw_scenario


def make_instance(num_bs=2, antennas_per_bs=2, num_users=3, snr_db=0.0, seed=0, **kw):
    cfg = NetworkConfig(num_bs=num_bs, antennas_per_bs=antennas_per_bs, num_users=num_users,
                        snr_db=snr_db, seed=seed, **kw)
    channels = draw_scenario(cfg)
    return cfg, channels, rate_targets(channels, cfg)


def random_unit_columns(rng, n, k):
    W = rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k))
    return W / np.linalg.norm(W, axis=0)


def random_channels(rng, k, n, scale=1.0):
    return scale * (rng.standard_normal((k, n)) + 1j * rng.standard_normal((k, n))) / np.sqrt(2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def instance():
    return make_instance


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, in criterion order."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", ()))
            if "criterion" in props and rep.when == "call":
                lines.append((props["criterion"], "PASS" if outcome == "passed" else "FAIL",
                              props.get("detail", "")))
    if lines:
        terminalreporter.section("acceptance criteria")
        for num, verdict, detail in sorted(lines):
            terminalreporter.write_line(f"criterion {num}: {verdict}  {detail}")
