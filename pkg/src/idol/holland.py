"""Holland parametric wind-field relations.

The radial pressure profile of a tropical cyclone is described by

    r^B * ln[(p_n - p_c) / (p_r - p_c)] = A

with ambient pressure ``p_n``, central pressure ``p_c``, pressure ``p_r`` at
radius ``r`` and shape parameters ``A`` and ``B``.  All pressures are in hPa
and all radii in km; computations are float64 throughout.

Besides the closed forms, :func:`bisect_radius` provides a brute-force
root-finding oracle used by the test suite to validate the analytic inverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class HollandDomainError(ValueError):
    """Raised when an argument lies outside the physical domain."""


@dataclass(frozen=True)
class HollandParams:
    """Parameters of the radial pressure profile.

    A, B are dimensionless shape parameters (A paired with km radii);
    p_n and p_c are the ambient and central pressures in hPa.
    """

    A: float
    B: float
    p_n: float
    p_c: float

    def __post_init__(self) -> None:
        if not (self.A > 0 and self.B > 0):
            raise HollandDomainError(
                f"A and B must be positive, got A={self.A}, B={self.B}"
            )
        if not self.p_n > self.p_c:
            raise HollandDomainError(
                f"ambient pressure must exceed central pressure, "
                f"got p_n={self.p_n}, p_c={self.p_c}"
            )

    @property
    def deficit(self) -> float:
        """Central pressure deficit p_n - p_c in hPa."""
        return self.p_n - self.p_c


def pressure_at_radius(params: HollandParams, r: float) -> float:
    """Pressure (hPa) at radius ``r`` km.

    Rearranges the profile equation to p_r = p_c + (p_n - p_c) * exp(-A / r^B).
    The result lies strictly inside (p_c, p_n) for finite r > 0.
    """
    if not r > 0:
        raise HollandDomainError(f"radius must be positive, got r={r}")
    return params.p_c + params.deficit * math.exp(-params.A / r**params.B)


def radius_from_pressure(params: HollandParams, p_r: float) -> float:
    """Radius (km) at which the profile pressure equals ``p_r`` hPa.

    Inverts the profile: r = gamma^(1/B) with
    gamma = A / (ln(p_n - p_c) - ln(p_r - p_c)).  ``p_r`` must lie strictly
    between the central and ambient pressures, otherwise the logarithm is
    undefined or gamma is non-positive.
    """
    if not (params.p_c < p_r < params.p_n):
        raise HollandDomainError(
            f"pressure must lie in ({params.p_c}, {params.p_n}), got p_r={p_r}"
        )
    den = math.log(params.deficit) - math.log(p_r - params.p_c)
    gamma = params.A / den
    return gamma ** (1.0 / params.B)


def wind_profile(params: HollandParams, radii: Sequence[float]) -> np.ndarray:
    """Vectorized pressure profile over ``radii`` (km), returned in hPa."""
    r = np.asarray(radii, dtype=np.float64)
    if r.size == 0:
        return r.copy()
    if np.any(r <= 0):
        raise HollandDomainError("all radii must be positive")
    return params.p_c + params.deficit * np.exp(-params.A / r**params.B)


def bisect_radius(
    params: HollandParams,
    p_r: float,
    lo: float = 1e-6,
    hi: float = 1e6,
    steps: int = 200,
) -> float:
    """Brute-force inverse of :func:`pressure_at_radius` by bisection.

    Deliberately independent of :func:`radius_from_pressure`; serves as the
    oracle against which the closed form is validated.  The profile is
    strictly increasing in r, so plain bisection on the sign of
    ``pressure_at_radius(r) - p_r`` suffices.
    """
    if not (params.p_c < p_r < params.p_n):
        raise HollandDomainError(
            f"pressure must lie in ({params.p_c}, {params.p_n}), got p_r={p_r}"
        )
    f_lo = pressure_at_radius(params, lo) - p_r
    f_hi = pressure_at_radius(params, hi) - p_r
    if f_lo > 0 or f_hi < 0:
        raise HollandDomainError(
            f"root not bracketed by [{lo}, {hi}] for p_r={p_r}"
        )
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if pressure_at_radius(params, mid) - p_r <= 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
