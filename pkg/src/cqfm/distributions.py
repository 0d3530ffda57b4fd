"""
Error distributions used by the Monte-Carlo designs.

Skewed families are parameterized by their moments (mean, sd, skewness and,
for the skewed t, excess kurtosis); the underlying shape parameters are
recovered by bisection on the analytic moment maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .rng import make_generator

FAMILIES = (
    "skew-normal",
    "skew-t",
    "asym-laplace",
    "log-normal",
    "mixture-skew-normal",
    "normal",
    "t1",
    "laplace",
    "mixture-normal-9",
    "mixture-normal-100",
)

DEFAULT_PARAMS = {
    "skew-normal": {"mean": 0.0, "sd": 1.0, "skew": 0.99},
    "skew-t": {"mean": 0.0, "sd": 1.0, "skew": 0.99, "kurt": 3.0},
    "asym-laplace": {"location": 0.0, "scale": 0.5, "kappa": 4.0},
    "log-normal": {"mu": 0.0, "sigma": 1.5},
    "mixture-skew-normal": {"weight": 0.9, "sd1": 1.0, "sd2": 3.0, "skew": 0.99},
    "normal": {"mean": 0.0, "sd": 1.0},
    "t1": {},
    "laplace": {"location": 0.0, "scale": 1.0},
    # variances 9 and 100 for the wide component
    "mixture-normal-9": {"weight": 0.9, "sd1": 1.0, "sd2": 3.0},
    "mixture-normal-100": {"weight": 0.9, "sd1": 1.0, "sd2": 10.0},
}

SN_MAX_SKEW = 0.5 * (4 - math.pi) * (2 / math.pi) ** 1.5 / (1 - 2 / math.pi) ** 1.5
_BISECT_STEPS = 200


# ---------------------------------------------------------------------------
# skew-normal
# ---------------------------------------------------------------------------


def skewnorm_skewness(delta: float) -> float:
    """Skewness of the skew-normal with shape ``delta = alpha / sqrt(1 + alpha^2)``."""
    m = delta * math.sqrt(2 / math.pi)
    return 0.5 * (4 - math.pi) * m**3 / (1 - m**2) ** 1.5


def skewnorm_delta(skew: float) -> float:
    """Invert :func:`skewnorm_skewness` by bisection on ``delta`` in [0, 1)."""
    if abs(skew) >= SN_MAX_SKEW:
        raise ValueError(f"skew-normal skewness must lie in (-{SN_MAX_SKEW:.5f}, {SN_MAX_SKEW:.5f}), got {skew}")
    lo, hi = 0.0, 1.0
    target = abs(skew)
    for _ in range(_BISECT_STEPS):
        mid = 0.5 * (lo + hi)
        if skewnorm_skewness(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    return math.copysign(0.5 * (lo + hi), skew)


def _skewnorm_std(rng, delta, size):
    """Standard skew-normal draws via the |U0| representation."""
    u0 = np.abs(rng.standard_normal(size))
    u1 = rng.standard_normal(size)
    return delta * u0 + math.sqrt(1 - delta**2) * u1


def _skewnorm_from_moments(rng, mean, sd, skew, size):
    delta = skewnorm_delta(skew)
    mz = delta * math.sqrt(2 / math.pi)
    omega = sd / math.sqrt(1 - mz**2)
    xi = mean - omega * mz
    return xi + omega * _skewnorm_std(rng, delta, size)


# ---------------------------------------------------------------------------
# skew-t (Azzalini-Capitanio)
# ---------------------------------------------------------------------------


def _b_nu(nu):
    return math.sqrt(nu / math.pi) * math.exp(math.lgamma((nu - 1) / 2) - math.lgamma(nu / 2))


def skewt_moments(delta: float, nu: float):
    """
    Mean, variance, skewness and excess kurtosis of the standard skew-t
    ``Z = SN(delta) / sqrt(V / nu)`` with ``V ~ chi2(nu)``; needs ``nu > 4``.
    """
    mu = _b_nu(nu) * delta
    m2 = nu / (nu - 2)
    m3 = mu * nu * (3 - delta**2) / (nu - 3)
    m4 = 3 * nu**2 / ((nu - 2) * (nu - 4))
    var = m2 - mu**2
    skew = (m3 - 3 * mu * m2 + 2 * mu**3) / var**1.5
    kurt = (m4 - 4 * mu * m3 + 6 * mu**2 * m2 - 3 * mu**4) / var**2 - 3
    return mu, var, skew, kurt


def _skewt_delta_for_skew(nu, skew):
    lo, hi = 0.0, 1.0
    if skewt_moments(hi, nu)[2] < skew:
        return None
    for _ in range(_BISECT_STEPS):
        mid = 0.5 * (lo + hi)
        if skewt_moments(mid, nu)[2] < skew:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14:
            return 0.5 * (lo + hi)
    raise ArithmeticError("skew-t shape bisection did not converge")


def skewt_shape(skew: float, kurt: float):
    """
    Solve for ``(delta, nu)`` matching skewness and excess kurtosis by nested
    bisection: ``delta`` for the skewness at fixed ``nu``, ``nu`` on a log
    scale for the kurtosis.
    """
    if skew < 0:
        d, nu = skewt_shape(-skew, kurt)
        return -d, nu
    lo, hi = math.log(4.0 + 1e-6), math.log(1e6)

    def kurt_at(lognu):
        nu = math.exp(lognu)
        d = _skewt_delta_for_skew(nu, skew)
        return None if d is None else skewt_moments(d, nu)[3]

    k_hi = kurt_at(hi)
    if k_hi is None or k_hi > kurt:
        floor = "undefined" if k_hi is None else f"{k_hi:.4f}"
        raise ValueError(
            f"infeasible skew-t targets (skew={skew}, kurt={kurt}): excess kurtosis must exceed "
            f"the skew-normal limit {floor} for this skewness, and |skew| must be attainable"
        )
    for _ in range(_BISECT_STEPS):
        mid = 0.5 * (lo + hi)
        k = kurt_at(mid)
        # small nu: kurtosis too large or skewness unattainable -> move right
        if k is None or k > kurt:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            nu = math.exp(0.5 * (lo + hi))
            return _skewt_delta_for_skew(nu, skew), nu
    raise ArithmeticError(f"skew-t degrees-of-freedom bisection did not converge in {_BISECT_STEPS} steps")


def _skewt_from_moments(rng, mean, sd, skew, kurt, size):
    delta, nu = skewt_shape(skew, kurt)
    mu, var, _, _ = skewt_moments(delta, nu)
    omega = sd / math.sqrt(var)
    xi = mean - omega * mu
    z = _skewnorm_std(rng, delta, size) / np.sqrt(rng.chisquare(nu, size) / nu)
    return xi + omega * z


# ---------------------------------------------------------------------------
# the error specification
# ---------------------------------------------------------------------------


def _mixture_moments(weights, means, variances, skews):
    """Mean, variance and skewness of a finite mixture from component moments."""
    raw1 = raw2 = raw3 = 0.0
    for w, m, v, g in zip(weights, means, variances, skews):
        s = math.sqrt(v)
        e2 = v + m**2
        e3 = g * s**3 + 3 * m * v + m**3
        raw1 += w * m
        raw2 += w * e2
        raw3 += w * e3
    var = raw2 - raw1**2
    skew = (raw3 - 3 * raw1 * raw2 + 2 * raw1**3) / var**1.5
    return raw1, var, skew


@dataclass(frozen=True)
class ErrorSpec:
    """
    An idiosyncratic error law.

    ``params`` overrides the family defaults; ``center`` subtracts the
    analytic mean (ignored for ``t1``, whose mean does not exist).
    """

    family: str = "normal"
    params: dict = field(default_factory=dict)
    center: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown error family {self.family!r}; choose from {FAMILIES}")
        unknown = set(self.params) - set(DEFAULT_PARAMS[self.family])
        if unknown:
            raise ValueError(f"unknown parameters {sorted(unknown)} for {self.family}")
        merged = {**DEFAULT_PARAMS[self.family], **self.params}
        object.__setattr__(self, "params", merged)
        self._validate()

    def _validate(self):
        p = self.params
        for key in ("sd", "sd1", "sd2", "scale", "sigma", "kappa"):
            if key in p and not p[key] > 0:
                raise ValueError(f"{self.family}: {key} must be positive")
        if "weight" in p and not 0 < p["weight"] < 1:
            raise ValueError(f"{self.family}: weight must lie in (0, 1)")
        if self.family in ("skew-normal", "mixture-skew-normal"):
            skewnorm_delta(p["skew"])
        if self.family == "skew-t":
            skewt_shape(p["skew"], p["kurt"])

    @property
    def has_mean(self) -> bool:
        return self.family != "t1"

    def moments(self) -> Optional[tuple]:
        """Analytic (mean, variance, skewness) before centering; None for t1."""
        p = self.params
        f = self.family
        if f == "t1":
            return None
        if f in ("normal",):
            return p["mean"], p["sd"] ** 2, 0.0
        if f == "skew-normal":
            return p["mean"], p["sd"] ** 2, p["skew"]
        if f == "skew-t":
            return p["mean"], p["sd"] ** 2, p["skew"]
        if f == "asym-laplace":
            s, k = p["scale"], p["kappa"]
            mean = p["location"] + s / math.sqrt(2) * (1 / k - k)
            var = s**2 / 2 * (1 / k**2 + k**2)
            skew = 2 * (1 / k**3 - k**3) / (1 / k**2 + k**2) ** 1.5
            return mean, var, skew
        if f == "log-normal":
            mu, s2 = p["mu"], p["sigma"] ** 2
            mean = math.exp(mu + s2 / 2)
            var = (math.exp(s2) - 1) * math.exp(2 * mu + s2)
            skew = (math.exp(s2) + 2) * math.sqrt(math.exp(s2) - 1)
            return mean, var, skew
        if f == "laplace":
            return p["location"], 2 * p["scale"] ** 2, 0.0
        w = p["weight"]
        g = p.get("skew", 0.0)
        return _mixture_moments([w, 1 - w], [0.0, 0.0], [p["sd1"] ** 2, p["sd2"] ** 2], [g, g])

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        p = self.params
        f = self.family
        if f == "normal":
            x = p["mean"] + p["sd"] * rng.standard_normal(size)
        elif f == "skew-normal":
            x = _skewnorm_from_moments(rng, p["mean"], p["sd"], p["skew"], size)
        elif f == "skew-t":
            x = _skewt_from_moments(rng, p["mean"], p["sd"], p["skew"], p["kurt"], size)
        elif f == "asym-laplace":
            e1 = rng.standard_exponential(size)
            e2 = rng.standard_exponential(size)
            k = p["kappa"]
            x = p["location"] + p["scale"] / math.sqrt(2) * (e1 / k - k * e2)
        elif f == "log-normal":
            x = rng.lognormal(p["mu"], p["sigma"], size)
        elif f == "t1":
            x = rng.standard_cauchy(size)
        elif f == "laplace":
            x = rng.laplace(p["location"], p["scale"], size)
        else:
            wide = rng.random(size) >= p["weight"]
            if f == "mixture-skew-normal":
                x1 = _skewnorm_from_moments(rng, 0.0, p["sd1"], p["skew"], size)
                x2 = _skewnorm_from_moments(rng, 0.0, p["sd2"], p["skew"], size)
            else:
                x1 = p["sd1"] * rng.standard_normal(size)
                x2 = p["sd2"] * rng.standard_normal(size)
            x = np.where(wide, x2, x1)
        if self.center and self.has_mean:
            x = x - self.moments()[0]
        return x


def sample_error(spec: ErrorSpec, n: int, rng_seed: int) -> np.ndarray:
    """``n`` i.i.d. draws from ``spec`` using a Philox stream keyed by ``rng_seed``."""
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    return spec.draw(make_generator(rng_seed), int(n))
