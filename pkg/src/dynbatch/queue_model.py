"""Queueing primitives for a single batch-service queue with Poisson arrivals.

Units are fixed throughout the package: time in milliseconds, energy in
millijoules, arrival rates in requests per millisecond. Power therefore comes
out in mJ/ms, which is Watts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats


class ConfigError(ValueError):
    """Invalid system configuration or out-of-range argument."""


class StabilityError(ConfigError):
    """Arrival rate is not below the maximum batch service rate."""


class FitError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Service-time distributions. Each is normalised to unit mean and scaled by
# l(b) at the point of use, so the mean always equals l(b).
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Deterministic:
    name = "deterministic"

    def second_moment_factor(self) -> float:
        return 1.0

    def pmf(self, lam: float, mean: float, k_max: int) -> np.ndarray:
        return stats.poisson.pmf(np.arange(k_max + 1), lam * mean)

    def density(self, mean: float):
        return None

    def sample_unit(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.ones(n)

    def to_dict(self) -> dict:
        return {"family": self.name}


@dataclass(frozen=True)
class Exponential:
    name = "exponential"

    def second_moment_factor(self) -> float:
        return 2.0

    def pmf(self, lam: float, mean: float, k_max: int) -> np.ndarray:
        psi = lam * mean / (1.0 + lam * mean)
        k = np.arange(k_max + 1)
        return (1.0 - psi) * psi**k

    def density(self, mean: float):
        return lambda t: math.exp(-t / mean) / mean

    def sample_unit(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.standard_exponential(n)

    def to_dict(self) -> dict:
        return {"family": self.name}


@dataclass(frozen=True)
class Erlang:
    """Sum of ``shape`` exponential phases, each with mean l(b)/shape."""

    shape: int = 2
    name = "erlang"

    def __post_init__(self):
        if int(self.shape) != self.shape or self.shape < 1:
            raise ConfigError(f"Erlang shape must be a positive integer, got {self.shape}")

    def second_moment_factor(self) -> float:
        return (self.shape + 1) / self.shape

    def pmf(self, lam: float, mean: float, k_max: int) -> np.ndarray:
        # Poisson count over a Gamma(k, mean/k) interval is negative binomial.
        phase = mean / self.shape
        success = 1.0 / (1.0 + lam * phase)
        return stats.nbinom.pmf(np.arange(k_max + 1), self.shape, success)

    def density(self, mean: float):
        k, rate = self.shape, self.shape / mean
        return lambda t: rate**k * t ** (k - 1) * math.exp(-rate * t) / math.factorial(k - 1)

    def sample_unit(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.standard_gamma(self.shape, n) / self.shape

    def to_dict(self) -> dict:
        return {"family": self.name, "shape": self.shape}


@dataclass(frozen=True)
class Hyperexponential:
    """Mixture of exponentials; branch i has mean ``scales[i] * l(b)``."""

    weights: tuple[float, ...] = (2.0 / 3.0, 1.0 / 3.0)
    scales: tuple[float, ...] = (0.5, 2.0)
    name = "hyperexponential"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        r = np.asarray(self.scales, dtype=float)
        if w.shape != r.shape or w.ndim != 1 or len(w) == 0:
            raise ConfigError("hyperexponential weights and scales must be equal-length vectors")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ConfigError("hyperexponential weights must be nonnegative and sum to 1")
        if np.any(r <= 0):
            raise ConfigError("hyperexponential scales must be positive")
        if abs(float(w @ r) - 1.0) > 1e-9:
            raise ConfigError("hyperexponential weights @ scales must equal 1 (mean preserved)")

    @classmethod
    def balanced(cls, cov: float) -> "Hyperexponential":
        """Two-branch fit with balanced means for a target CoV > 1."""
        if cov <= 1.0:
            raise ConfigError("balanced hyperexponential needs CoV > 1")
        c2 = cov * cov
        p = 0.5 * (1.0 + math.sqrt((c2 - 1.0) / (c2 + 1.0)))
        return cls(weights=(p, 1.0 - p), scales=(1.0 / (2.0 * p), 1.0 / (2.0 * (1.0 - p))))

    def second_moment_factor(self) -> float:
        return float(sum(2.0 * w * r * r for w, r in zip(self.weights, self.scales)))

    def pmf(self, lam: float, mean: float, k_max: int) -> np.ndarray:
        k = np.arange(k_max + 1)
        out = np.zeros(k_max + 1)
        for w, r in zip(self.weights, self.scales):
            x = lam * r * mean
            psi = x / (1.0 + x)
            out += w * (1.0 - psi) * psi**k
        return out

    def density(self, mean: float):
        pairs = [(w, r * mean) for w, r in zip(self.weights, self.scales)]
        return lambda t: sum(w * math.exp(-t / m) / m for w, m in pairs)

    def sample_unit(self, rng: np.random.Generator, n: int) -> np.ndarray:
        branch = rng.choice(len(self.weights), size=n, p=np.asarray(self.weights))
        return rng.standard_exponential(n) * np.asarray(self.scales)[branch]

    def to_dict(self) -> dict:
        return {"family": self.name, "weights": list(self.weights), "scales": list(self.scales)}


ServiceDistribution = Deterministic | Exponential | Erlang | Hyperexponential


def distribution_from_dict(d: dict) -> ServiceDistribution:
    family = str(d.get("family", "deterministic")).lower()
    if family == "deterministic":
        return Deterministic()
    if family == "exponential":
        return Exponential()
    if family == "erlang":
        return Erlang(int(d.get("shape", 2)))
    if family in ("hyperexponential", "hyperexp"):
        if "cov" in d:
            return Hyperexponential.balanced(float(d["cov"]))
        return Hyperexponential(
            tuple(d.get("weights", (2 / 3, 1 / 3))), tuple(d.get("scales", (0.5, 2.0)))
        )
    raise ConfigError(f"unknown service distribution family {family!r}")


# ---------------------------------------------------------------------------
# Latency and energy as functions of batch size.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BatchFunction:
    """f(b) in one of the forms ``affine`` (slope*b + intercept), ``constant``,
    ``log`` (slope*log_base(b) + intercept) or ``table`` (explicit values
    for b = b_min..b_max, keyed by batch size)."""

    form: str = "affine"
    slope: float = 0.0
    intercept: float = 0.0
    log_base: float = math.e
    table: tuple[tuple[int, float], ...] = ()

    def __call__(self, b: int) -> float:
        if self.form == "affine":
            return self.slope * b + self.intercept
        if self.form == "constant":
            return self.intercept
        if self.form == "log":
            return self.slope * math.log(b) / math.log(self.log_base) + self.intercept
        if self.form == "table":
            for key, value in self.table:
                if key == b:
                    return value
            raise ConfigError(f"batch size {b} missing from table")
        raise ConfigError(f"unknown function form {self.form!r}")

    @classmethod
    def affine(cls, slope: float, intercept: float) -> "BatchFunction":
        return cls("affine", slope, intercept)

    @classmethod
    def constant(cls, value: float) -> "BatchFunction":
        return cls("constant", 0.0, value)

    @classmethod
    def logarithmic(cls, slope: float, intercept: float, base: float = math.e) -> "BatchFunction":
        return cls("log", slope, intercept, base)

    @classmethod
    def tabulated(cls, values: dict[int, float]) -> "BatchFunction":
        return cls("table", table=tuple(sorted((int(k), float(v)) for k, v in values.items())))

    @classmethod
    def from_dict(cls, d: dict) -> "BatchFunction":
        form = d.get("form", "affine")
        if form == "table":
            return cls.tabulated({int(k): v for k, v in d["table"].items()})
        if form == "constant":
            return cls.constant(float(d.get("value", d.get("intercept", 0.0))))
        if form == "log":
            return cls.logarithmic(float(d["slope"]), float(d["intercept"]), float(d.get("base", math.e)))
        return cls.affine(float(d["slope"]), float(d["intercept"]))

    def to_dict(self) -> dict:
        if self.form == "table":
            return {"form": "table", "table": {str(k): v for k, v in self.table}}
        if self.form == "constant":
            return {"form": "constant", "value": self.intercept}
        out = {"form": self.form, "slope": self.slope, "intercept": self.intercept}
        if self.form == "log":
            out["base"] = self.log_base
        return out


@dataclass(frozen=True)
class Weights:
    w1: float = 1.0
    w2: float = 0.0

    def __post_init__(self):
        if not self.w1 > 0:
            raise ConfigError(f"latency weight w1 must be > 0, got {self.w1}")
        if not self.w2 >= 0:
            raise ConfigError(f"power weight w2 must be >= 0, got {self.w2}")


@dataclass(frozen=True)
class SystemConfig:
    lam: float
    b_min: int
    b_max: int
    latency: BatchFunction
    energy: BatchFunction
    dist: ServiceDistribution = field(default_factory=Deterministic)
    validate: bool = True

    def __post_init__(self):
        if self.validate:
            validate_config(self)

    @property
    def batch_sizes(self) -> range:
        return range(self.b_min, self.b_max + 1)

    def with_lambda(self, lam: float) -> "SystemConfig":
        return SystemConfig(lam, self.b_min, self.b_max, self.latency, self.energy, self.dist, self.validate)

    def with_rho(self, rho: float) -> "SystemConfig":
        return self.with_lambda(lambda_for_rho(self, rho))

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "b_min": self.b_min,
            "b_max": self.b_max,
            "latency": self.latency.to_dict(),
            "energy": self.energy.to_dict(),
            "distribution": self.dist.to_dict(),
        }


def validate_config(config: SystemConfig) -> None:
    if config.b_min < 1 or config.b_max < config.b_min:
        raise ConfigError(f"need 1 <= b_min <= b_max, got {config.b_min}, {config.b_max}")
    if not config.lam > 0:
        raise ConfigError("arrival rate must be positive")
    bs = list(config.batch_sizes)
    lat = np.array([config.latency(b) for b in bs])
    en = np.array([config.energy(b) for b in bs])
    if np.any(lat <= 0) or not np.all(np.isfinite(lat)):
        raise ConfigError("mean service time l(b) must be positive and finite")
    if np.any(en <= 0):
        raise ConfigError("batch energy must be positive")
    slack = 1e-12
    if np.any(np.diff(lat) < -slack * np.abs(lat[1:])):
        raise ConfigError("l(b) must be non-decreasing in b")
    theta = np.array(bs) / lat
    if np.any(np.diff(theta) < -slack * theta[1:]):
        raise ConfigError("service rate b/l(b) must be non-decreasing in b")
    eff = np.array(bs) / en
    if np.any(np.diff(eff) < -slack * eff[1:]):
        raise ConfigError("energy efficiency b/energy(b) must be non-decreasing in b")
    r = config.lam * lat[-1] / config.b_max
    if r >= 1.0:
        raise StabilityError(f"rho = {r:.6g} >= 1: arrival rate exceeds the maximum service rate")


def _check_b(config: SystemConfig, b: int) -> None:
    if not config.b_min <= b <= config.b_max:
        raise ConfigError(f"batch size {b} outside [{config.b_min}, {config.b_max}]")


def mean_service_time(config: SystemConfig, b: int) -> float:
    _check_b(config, b)
    return float(config.latency(b))


def second_moment(config: SystemConfig, b: int) -> float:
    lb = mean_service_time(config, b)
    return config.dist.second_moment_factor() * lb * lb


def batch_service_rate(config: SystemConfig, b: int) -> float:
    return b / mean_service_time(config, b)


def energy_efficiency(config: SystemConfig, b: int) -> float:
    _check_b(config, b)
    return b / config.energy(b)


def rho(config: SystemConfig) -> float:
    r = config.lam / batch_service_rate(config, config.b_max)
    if r >= 1.0:
        raise StabilityError(f"rho = {r:.6g} >= 1")
    return r


def lambda_for_rho(config: SystemConfig, target: float) -> float:
    if not 0 < target < 1:
        raise ConfigError(f"rho must lie in (0, 1), got {target}")
    return target * config.b_max / config.latency(config.b_max)


@dataclass(frozen=True)
class ArrivalPmf:
    probs: np.ndarray
    tail_mass: float

    @property
    def warning(self) -> bool:
        return self.tail_mass > 0.5


def arrival_count_pmf(config: SystemConfig, b: int, k_max: int) -> ArrivalPmf:
    """P(k arrivals during one service of a batch of size b), k = 0..k_max."""
    if k_max < 0:
        raise ConfigError("k_max must be >= 0")
    p = config.dist.pmf(config.lam, mean_service_time(config, b), k_max)
    p = np.clip(p, 0.0, 1.0)
    return ArrivalPmf(p, max(0.0, 1.0 - float(p.sum())))


def fit_affine(points: Sequence[tuple[float, float]]) -> tuple[float, float, float]:
    """Least-squares line through (b, value) points.

    Returns ``(slope, intercept, rms_residual)``.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        raise FitError("need at least two (b, value) points")
    if np.ptp(pts[:, 0]) == 0:
        raise FitError("need at least two distinct batch sizes")
    design = np.column_stack([pts[:, 0], np.ones(len(pts))])
    (slope, intercept), *_ = np.linalg.lstsq(design, pts[:, 1], rcond=None)
    resid = pts[:, 1] - design @ np.array([slope, intercept])
    return float(slope), float(intercept), float(np.sqrt(np.mean(resid**2)))


# ---------------------------------------------------------------------------
# Config files and canned scenarios.
# ---------------------------------------------------------------------------

P4_LATENCY = BatchFunction.affine(0.3051, 1.0524)
P4_ENERGY = BatchFunction.affine(19.899, 19.603)


def basic_scenario(rho_value: float = 0.5, b_max: int = 32, dist: ServiceDistribution | None = None) -> SystemConfig:
    """GoogLeNet on a Tesla P4: affine latency/energy, deterministic service."""
    base = SystemConfig(1e-9, 1, b_max, P4_LATENCY, P4_ENERGY, dist or Deterministic())
    return base.with_rho(rho_value)


def config_from_dict(d: dict) -> SystemConfig:
    has_lam, has_rho = "lambda" in d, "rho" in d
    if has_lam == has_rho:
        raise ConfigError("exactly one of 'lambda' or 'rho' must be given")
    try:
        b_min, b_max = int(d["b_min"]), int(d["b_max"])
        latency = BatchFunction.from_dict(d["latency"])
        energy = BatchFunction.from_dict(d["energy"])
    except KeyError as exc:
        raise ConfigError(f"missing config field {exc}") from None
    dist = distribution_from_dict(d.get("distribution", {"family": "deterministic"}))
    if has_lam:
        return SystemConfig(float(d["lambda"]), b_min, b_max, latency, energy, dist)
    probe = SystemConfig(1e-9, b_min, b_max, latency, energy, dist)
    return probe.with_rho(float(d["rho"]))


def load_config(path: str | Path) -> SystemConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))
