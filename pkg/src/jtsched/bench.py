"""Monte Carlo experiment harness: sweeps, trial records, summaries and files.

An experiment sweeps one axis (number of users, SNR or antennas per BS) and
runs the requested schedulers on independent channel draws. Trial seeds are
derived from the base seed, the sweep value and the trial index, so each
record is reproducible on its own and independent of worker scheduling.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .exhaustive import DEFAULT_MAX_USERS, run_algorithm2
from .phy import rate_targets
from .scenario import NetworkConfig, draw_scenario
from .sca import run_algorithm1
from .zfsus import run_algorithm3

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
AXES = {"users": "num_users", "snr": "snr_db", "antennas": "antennas_per_bs"}
ALGORITHMS = {"alg1": run_algorithm1, "alg2": run_algorithm2, "alg3": run_algorithm3}
DEFAULT_TRIALS = 50

RECORD_COLUMNS = ("axis", "value", "trial", "seed", "algorithm", "ok", "sum_rate",
                  "scheduled_count", "converged", "rates", "bs_power", "error")
TIMING_COLUMNS = ("value", "trial", "algorithm", "runtime_seconds")


@dataclass(frozen=True)
class ExperimentSpec:
    network: NetworkConfig
    axis: str
    values: tuple
    algorithms: tuple = ("alg1", "alg3")
    trials: int = DEFAULT_TRIALS
    seed: int = 0
    output: str | None = None
    workers: int = 1
    max_enum_users: int = DEFAULT_MAX_USERS
    sus_threshold: float = 0.4

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"sweep axis must be one of {sorted(AXES)}, got {self.axis!r}")
        if not self.values:
            raise ValueError("sweep needs at least one value")
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if unknown or not self.algorithms:
            raise ValueError(f"unknown algorithms {sorted(unknown)}; choose from {sorted(ALGORITHMS)}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if not 0 <= int(self.seed) < 2**63:
            raise ValueError("seed must be a non-negative 63-bit integer")
        if not 0 < self.sus_threshold < 1:
            raise ValueError("sus_threshold must lie in (0, 1)")
        if "alg2" in self.algorithms:
            largest = max(self.config_for(v).num_users for v in self.values)
            if largest > self.max_enum_users:
                raise ValueError(f"alg2 needs K <= {self.max_enum_users}, sweep reaches K = {largest}")

    def config_for(self, value) -> NetworkConfig:
        key = AXES[self.axis]
        cast = float if self.axis == "snr" else int
        return self.network.replace(**{key: cast(value)})

    def with_overrides(self, **changes) -> "ExperimentSpec":
        from dataclasses import replace

        return replace(self, **{k: v for k, v in changes.items() if v is not None})

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        data = dict(data)
        known = {f.name for f in fields(NetworkConfig)}
        net = dict(data.pop("network", {}))
        bad = set(net) - known
        if bad:
            raise ValueError(f"unknown network keys {sorted(bad)}")
        if net.get("power_budgets") is not None:
            net["power_budgets"] = tuple(net["power_budgets"])
        sweep = data.pop("sweep", None)
        if not isinstance(sweep, dict) or "axis" not in sweep or "values" not in sweep:
            raise ValueError("config needs a 'sweep' mapping with 'axis' and 'values'")
        allowed = {"algorithms", "trials", "seed", "output", "workers", "max_enum_users", "sus_threshold"}
        bad = set(data) - allowed
        if bad:
            raise ValueError(f"unknown config keys {sorted(bad)}")
        if "algorithms" in data:
            data["algorithms"] = tuple(data["algorithms"])
        return cls(network=NetworkConfig(**net), axis=sweep["axis"], values=tuple(sweep["values"]),
                   **data)

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        with open(path) as fh:
            data = yaml.safe_load(fh)
        if not isinstance(data, dict):
            raise ValueError(f"{path}: expected a mapping at top level")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {"network": self.network.to_dict(), "sweep": {"axis": self.axis, "values": list(self.values)},
                "algorithms": list(self.algorithms), "trials": self.trials, "seed": self.seed,
                "output": self.output, "workers": self.workers, "max_enum_users": self.max_enum_users,
                "sus_threshold": self.sus_threshold}


@dataclass
class TrialRecord:
    axis: str
    value: float
    trial: int
    seed: int
    algorithm: str
    ok: bool
    sum_rate: float
    scheduled_count: int
    runtime_seconds: float
    converged: bool
    rates: tuple = ()
    bs_power: tuple = ()
    error: str = ""


def trial_seed(base_seed: int, axis: str, value, trial: int) -> int:
    """64-bit scenario seed for one trial.

    SNR sweeps key on the trial alone so every SNR point sees the same channel
    draw; other axes change the scenario itself and key on the value too.
    """
    key = (trial,) if axis == "snr" else (int(round(float(value) * 1000)), trial)
    ss = np.random.SeedSequence(entropy=int(base_seed), spawn_key=key)
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _targets_config(spec: ExperimentSpec, cfg: NetworkConfig) -> NetworkConfig:
    """Configuration used for the QoS targets: the worst SNR point of an SNR sweep."""
    if spec.axis != "snr":
        return cfg
    return cfg.replace(snr_db=float(min(spec.values)))


def run_trial(spec: ExperimentSpec, value, trial: int) -> list[TrialRecord]:
    seed = trial_seed(spec.seed, spec.axis, value, trial)
    cfg = spec.config_for(value).replace(seed=seed)
    channels = draw_scenario(cfg)
    targets = rate_targets(channels, _targets_config(spec, cfg))
    out = []
    for name in spec.algorithms:
        start = time.perf_counter()
        try:
            if name == "alg3":
                sol = ALGORITHMS[name](channels, targets, cfg, threshold=spec.sus_threshold)
            else:
                sol = ALGORITHMS[name](channels, targets, cfg)
            runtime = time.perf_counter() - start
            out.append(TrialRecord(spec.axis, float(value), trial, seed, name, True, float(sol.sum_rate),
                                   int(sol.num_scheduled), runtime, bool(sol.converged),
                                   tuple(float(r) for r in sol.rates),
                                   tuple(float(p) for p in sol.bs_power)))
        except Exception as exc:  # a failed trial is recorded, the sweep goes on
            runtime = time.perf_counter() - start
            log.warning("%s failed on %s=%s trial %d: %s", name, spec.axis, value, trial, exc)
            out.append(TrialRecord(spec.axis, float(value), trial, seed, name, False, 0.0, 0, runtime,
                                   False, error=f"{type(exc).__name__}: {exc}"))
    return out


def _run_job(args):
    spec, value, trial = args
    return run_trial(spec, value, trial)


def run_experiment(spec: ExperimentSpec) -> list[TrialRecord]:
    """All trial records, ordered by (sweep value, trial, algorithm) whatever the worker count."""
    jobs = [(spec, v, t) for v in spec.values for t in range(spec.trials)]
    if spec.workers == 1:
        results = []
        for i, job in enumerate(jobs):
            results.append(_run_job(job))
            log.info("trial %d/%d done (%s=%s)", i + 1, len(jobs), spec.axis, job[1])
    else:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_run_job, jobs))
    order = {a: i for i, a in enumerate(spec.algorithms)}
    vindex = {float(v): i for i, v in enumerate(spec.values)}
    records = [r for batch in results for r in batch]
    records.sort(key=lambda r: (vindex[r.value], r.trial, order[r.algorithm]))
    return records


@dataclass
class SummaryRow:
    algorithm: str
    value: float
    trials: int
    failed: int
    mean_sum_rate: float
    std_sum_rate: float
    stderr_sum_rate: float
    mean_scheduled: float
    mean_runtime: float


def summarize(records) -> list[SummaryRow]:
    """Per (algorithm, sweep value) statistics over successful trials; sample std (ddof=1)."""
    records = list(records)
    if not records:
        raise ValueError("nothing to summarize")
    groups: dict = {}
    for r in records:
        groups.setdefault((r.algorithm, r.value), []).append(r)
    rows = []
    for (alg, value), group in groups.items():
        good = [r for r in group if r.ok]
        rates = np.array([r.sum_rate for r in good])
        n = len(good)
        std = float(np.std(rates, ddof=1)) if n > 1 else 0.0
        rows.append(SummaryRow(
            algorithm=alg, value=value, trials=len(group), failed=len(group) - n,
            mean_sum_rate=float(rates.mean()) if n else float("nan"), std_sum_rate=std,
            stderr_sum_rate=std / np.sqrt(n) if n else float("nan"),
            mean_scheduled=float(np.mean([r.scheduled_count for r in good])) if n else float("nan"),
            mean_runtime=float(np.mean([r.runtime_seconds for r in group]))))
    return rows


def summary_table(rows) -> dict:
    """``{algorithm: {value: row}}`` view of summary rows."""
    out: dict = {}
    for r in rows:
        out.setdefault(r.algorithm, {})[r.value] = r
    return out


def _fmt(x: float) -> str:
    return repr(float(x))


def _vec(v) -> str:
    return " ".join(_fmt(x) for x in v)


def write_records(records, path) -> None:
    """Trial CSV: a version comment line, a header, one row per record. Runtimes are excluded."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# jtsched trial records v{FORMAT_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(RECORD_COLUMNS)
        for r in records:
            w.writerow([r.axis, _fmt(r.value), r.trial, r.seed, r.algorithm, int(r.ok), _fmt(r.sum_rate),
                        r.scheduled_count, int(r.converged), _vec(r.rates), _vec(r.bs_power), r.error])


def write_timings(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TIMING_COLUMNS)
        for r in records:
            w.writerow([_fmt(r.value), r.trial, r.algorithm, _fmt(r.runtime_seconds)])


class RecordFormatError(ValueError):
    pass


def read_records(path, timings=None) -> list[TrialRecord]:
    """Parse a trial CSV; runtimes come from ``timings`` (default: ``timings.csv`` next to it)."""
    path = Path(path)
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        expected = f"# jtsched trial records v{FORMAT_VERSION}"
        if first != expected:
            raise RecordFormatError(f"{path}: expected version line {expected!r}, got {first!r}")
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != RECORD_COLUMNS:
            raise RecordFormatError(f"{path}: unexpected header {header}")
        rows = list(reader)
    tpath = path.with_name("timings.csv") if timings is None else Path(timings)
    runtime = {}
    if tpath.exists():
        with open(tpath, newline="") as fh:
            reader = csv.reader(fh)
            if tuple(next(reader, ())) != TIMING_COLUMNS:
                raise RecordFormatError(f"{tpath}: unexpected header")
            for v, t, a, s in reader:
                runtime[(float(v), int(t), a)] = float(s)

    def vec(s):
        return tuple(float(x) for x in s.split()) if s else ()

    out = []
    for i, row in enumerate(rows, start=3):
        if len(row) != len(RECORD_COLUMNS):
            raise RecordFormatError(f"{path}:{i}: expected {len(RECORD_COLUMNS)} fields, got {len(row)}")
        axis, value, trial, seed, alg, ok, rate, count, conv, rates, power, err = row
        value, trial = float(value), int(trial)
        out.append(TrialRecord(axis, value, trial, int(seed), alg, bool(int(ok)), float(rate), int(count),
                               runtime.get((value, trial, alg), float("nan")), bool(int(conv)),
                               vec(rates), vec(power), err))
    return out


def check_records(records) -> list[str]:
    """Problems found in parsed records (empty list when the file is sound)."""
    problems = []
    seen = set()
    for r in records:
        tag = f"{r.algorithm} {r.axis}={r.value} trial {r.trial}"
        key = (r.value, r.trial, r.algorithm)
        if key in seen:
            problems.append(f"{tag}: duplicate record")
        seen.add(key)
        if r.axis not in AXES:
            problems.append(f"{tag}: unknown axis")
        if r.algorithm not in ALGORITHMS:
            problems.append(f"{tag}: unknown algorithm")
        if not np.isfinite(r.sum_rate) or r.sum_rate < 0:
            problems.append(f"{tag}: sum rate {r.sum_rate} is not a non-negative number")
        if r.ok:
            if len(r.rates) and abs(sum(r.rates) - r.sum_rate) > 1e-6 * max(1.0, r.sum_rate):
                problems.append(f"{tag}: per-user rates do not add up to the sum rate")
            if sum(x > 0 for x in r.rates) > r.scheduled_count:
                problems.append(f"{tag}: more users with positive rate than scheduled")
        elif not r.error:
            problems.append(f"{tag}: failed record without an error message")
    return problems


def summary_document(spec: ExperimentSpec | None, rows) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "spec": spec.to_dict() if spec is not None else None,
        "rows": [{k: (None if isinstance(v, float) and not np.isfinite(v) else v)
                  for k, v in asdict(r).items()} for r in rows],
    }


def summary_schema() -> dict:
    return json.loads(resources.files("jtsched").joinpath("summary.schema.json").read_text())


def write_summary(spec, rows, path) -> None:
    with open(path, "w") as fh:
        json.dump(summary_document(spec, rows), fh, indent=2, sort_keys=True)
        fh.write("\n")


def emit(records, rows, out_dir, spec: ExperimentSpec | None = None) -> dict:
    """Write ``records.csv``, ``timings.csv`` and ``summary.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"records": out / "records.csv", "timings": out / "timings.csv", "summary": out / "summary.json"}
    write_records(records, paths["records"])
    write_timings(records, paths["timings"])
    write_summary(spec, rows, paths["summary"])
    return paths
