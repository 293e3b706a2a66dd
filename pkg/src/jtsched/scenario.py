"""Network geometry and the large/small-scale channel model.

All stochastic draws go through :func:`make_rng`, which accepts either an
integer seed or an existing :class:`numpy.random.Generator`, so a trial is
fully determined by ``(config, seed)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

SHADOWING_STD_DB = 8.0


def pathloss(d, shadowing_db=0.0):
    """Linear channel power gain ``10**((-38 log10 d - 34.5 + shadow)/10)``.

    Works elementwise on arrays. ``d`` is in meters and must be positive.
    """
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be strictly positive")
    gain_db = -38.0 * np.log10(d) - 34.5 + np.asarray(shadowing_db, dtype=float)
    out = 10.0 ** (gain_db / 10.0)
    return float(out) if out.ndim == 0 else out


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


@dataclass(frozen=True)
class NetworkConfig:
    """Static parameters of one cooperative cluster.

    Power budgets are derived from ``snr_db`` unless given explicitly. Two
    SNR conventions are supported:

    ``snr_reference="edge"`` (default)
        SNR is the receive SNR at ``reference_distance`` without shadowing,
        ``P_b * pathloss(d_ref) / sigma^2``. With the raw pathloss law a
        transmit-side SNR of 0 dB leaves every link ~125 dB below the noise
        floor, so this is what makes the sweeps meaningful.
    ``snr_reference="transmit"``
        ``P_b = sigma^2 * 10**(snr_db/10)`` literally.

    ``noise_variance=None`` picks ``sigma^2 = pathloss(reference_distance)``
    which keeps normalized channels and powers near unit scale.
    """

    num_bs: int = 3
    antennas_per_bs: int = 2
    num_users: int = 6
    snr_db: float = 0.0
    noise_variance: float | None = None
    power_budgets: tuple[float, ...] | None = None
    cell_radius: float = 300.0
    coop_radius: float = 100.0
    reference_distance: float | None = None
    snr_reference: str = "edge"
    rate_fraction: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.num_bs < 1 or self.antennas_per_bs < 1 or self.num_users < 1:
            raise ValueError("num_bs, antennas_per_bs and num_users must be >= 1")
        if self.coop_radius < 0 or self.cell_radius <= 0:
            raise ValueError("radii must be non-negative (cell radius positive)")
        if self.coop_radius > self.cell_radius:
            raise ValueError("coop_radius must not exceed cell_radius")
        if not 0.0 < self.rate_fraction <= 1.0:
            raise ValueError("rate_fraction must lie in (0, 1]")
        if self.snr_reference not in ("edge", "transmit"):
            raise ValueError(f"unknown snr_reference {self.snr_reference!r}")
        if self.noise_variance is not None and self.noise_variance <= 0:
            raise ValueError("noise_variance must be positive")
        if self.power_budgets is not None:
            if len(self.power_budgets) != self.num_bs:
                raise ValueError("need one power budget per BS")
            if any(p <= 0 for p in self.power_budgets):
                raise ValueError("power budgets must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def num_antennas(self) -> int:
        """Total transmit antennas ``B * N_t`` of the cluster."""
        return self.num_bs * self.antennas_per_bs

    @property
    def ref_distance(self) -> float:
        return self.cell_radius if self.reference_distance is None else self.reference_distance

    @property
    def sigma2(self) -> float:
        if self.noise_variance is not None:
            return float(self.noise_variance)
        return pathloss(self.ref_distance)

    @property
    def budgets(self) -> np.ndarray:
        """Per-BS power budgets ``P_b`` in watts."""
        if self.power_budgets is not None:
            return np.asarray(self.power_budgets, dtype=float)
        p = self.sigma2 * 10.0 ** (self.snr_db / 10.0)
        if self.snr_reference == "edge":
            p /= pathloss(self.ref_distance)
        return np.full(self.num_bs, p)

    def replace(self, **changes) -> "NetworkConfig":
        from dataclasses import replace

        return replace(self, **changes)

    def to_dict(self) -> dict:
        from dataclasses import asdict

        d = asdict(self)
        if d["power_budgets"] is not None:
            d["power_budgets"] = list(d["power_budgets"])
        return d


@dataclass(frozen=True)
class UserPlacement:
    bs_positions: np.ndarray  # (B, 2)
    user_positions: np.ndarray  # (K, 2)
    distances: np.ndarray  # (K, B)
    center: np.ndarray = field(default_factory=lambda: np.zeros(2))


def bs_layout(config: NetworkConfig) -> np.ndarray:
    """BS sites at equal angular spacing, ``cell_radius`` from the center."""
    angles = np.pi / 2 + 2 * np.pi * np.arange(config.num_bs) / config.num_bs
    return config.cell_radius * np.column_stack([np.cos(angles), np.sin(angles)])


def generate_geometry(config: NetworkConfig, rng_seed=None) -> UserPlacement:
    """Drop ``K`` users uniformly in the cooperative disk around the cluster center."""
    rng = make_rng(config.seed if rng_seed is None else rng_seed)
    bs = bs_layout(config)
    k = config.num_users
    r = config.coop_radius * np.sqrt(rng.uniform(size=k))
    phi = rng.uniform(0.0, 2 * np.pi, size=k)
    users = np.column_stack([r * np.cos(phi), r * np.sin(phi)])
    dist = np.linalg.norm(users[:, None, :] - bs[None, :, :], axis=-1)
    return UserPlacement(bs_positions=bs, user_positions=users, distances=dist)


@dataclass(frozen=True)
class ChannelSet:
    """Per-user channels. ``raw`` has shape (K, B, N_t); the rest follow from it."""

    raw: np.ndarray  # h_{k,b}, complex (K, B, Nt)
    fast_fading: np.ndarray  # complex (K, B, Nt), CN(0,1) entries
    shadowing_db: np.ndarray  # (K, B)
    gains: np.ndarray  # linear pathloss incl. shadowing, (K, B)
    sigma: np.ndarray  # per-user noise std, (K,)
    placement: UserPlacement | None = None

    @property
    def num_users(self) -> int:
        return self.raw.shape[0]

    @property
    def num_bs(self) -> int:
        return self.raw.shape[1]

    @property
    def antennas_per_bs(self) -> int:
        return self.raw.shape[2]

    @property
    def cascaded(self) -> np.ndarray:
        """(K, B*Nt) stacked channels, row k is ``h_k``."""
        return self.raw.reshape(self.num_users, -1)

    @property
    def normalized(self) -> np.ndarray:
        """(K, B*Nt) noise-normalized channels ``h_k / sigma_k``."""
        return self.cascaded / self.sigma[:, None]

    def subset(self, users: Sequence[int]) -> "ChannelSet":
        idx = np.asarray(users, dtype=int)
        return ChannelSet(
            raw=self.raw[idx],
            fast_fading=self.fast_fading[idx],
            shadowing_db=self.shadowing_db[idx],
            gains=self.gains[idx],
            sigma=self.sigma[idx],
            placement=None,
        )

    # JSON layout: complex arrays as nested [re, im] pairs.
    def to_json(self) -> dict:
        def cplx(a):
            return np.stack([a.real, a.imag], axis=-1).tolist()

        return {
            "format": "jtsched.channelset/1",
            "shape": list(self.raw.shape),
            "raw": cplx(self.raw),
            "fast_fading": cplx(self.fast_fading),
            "shadowing_db": self.shadowing_db.tolist(),
            "gains": self.gains.tolist(),
            "sigma": self.sigma.tolist(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "ChannelSet":
        def cplx(x):
            a = np.asarray(x, dtype=float)
            return a[..., 0] + 1j * a[..., 1]

        return cls(
            raw=cplx(data["raw"]),
            fast_fading=cplx(data["fast_fading"]),
            shadowing_db=np.asarray(data["shadowing_db"], dtype=float),
            gains=np.asarray(data["gains"], dtype=float),
            sigma=np.asarray(data["sigma"], dtype=float),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "ChannelSet":
        return cls.from_json(json.loads(Path(path).read_text()))


def generate_channels(placement: UserPlacement, config: NetworkConfig, rng_seed=None) -> ChannelSet:
    """Draw shadowing and Rayleigh fading for every (user, BS) pair."""
    rng = make_rng(config.seed if rng_seed is None else rng_seed)
    k, b, nt = config.num_users, config.num_bs, config.antennas_per_bs
    if placement.distances.shape != (k, b):
        raise ValueError("placement does not match config")
    shadow = rng.normal(0.0, SHADOWING_STD_DB, size=(k, b))
    gains = pathloss(placement.distances, shadow)
    fading = (rng.standard_normal((k, b, nt)) + 1j * rng.standard_normal((k, b, nt))) / np.sqrt(2)
    raw = np.sqrt(gains)[:, :, None] * fading
    sigma = np.full(k, np.sqrt(config.sigma2))
    return ChannelSet(raw=raw, fast_fading=fading, shadowing_db=shadow, gains=gains,
                      sigma=sigma, placement=placement)


def draw_scenario(config: NetworkConfig, seed=None) -> ChannelSet:
    """Geometry and channels from independent child streams of one seed."""
    ss = np.random.SeedSequence(int(config.seed if seed is None else seed))
    geo_ss, chan_ss = ss.spawn(2)
    placement = generate_geometry(config, np.random.default_rng(geo_ss))
    return generate_channels(placement, config, np.random.default_rng(chan_ss))
