"""Log-log regression used by every asymptotic-rate check."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TowerlabError


@dataclass(frozen=True)
class RateFit:
    """Least-squares line on (log eps, log value).

    `intercept` is the multiplicative prefactor exp(offset), so points lying
    exactly on value = C * eps^gamma give slope = gamma, intercept = C.
    """

    slope: float
    intercept: float
    r_squared: float
    points: tuple

    def __post_init__(self):
        if not (len(self.points) >= 3):
            raise TowerlabError("a rate fit needs at least 3 points")


def rate_regression(points) -> RateFit:
    """Fit value ~ C eps^slope through (eps, value) pairs.

    Absolute values are taken; zero values are rejected since they carry no
    rate information.
    """
    pts = [(float(e), float(v)) for e, v in points]
    if len(pts) < 3:
        raise TowerlabError(f"need at least 3 points for a rate fit, got {len(pts)}")
    eps = np.array([p[0] for p in pts])
    val = np.array([abs(p[1]) for p in pts])
    if np.any(eps <= 0):
        raise TowerlabError("rate regression needs positive epsilon values")
    if np.any(val == 0):
        raise TowerlabError("rate regression got an exactly zero value")
    x = np.log(eps)
    y = np.log(val)
    slope, offset = np.polyfit(x, y, 1)
    fit = slope * x + offset
    ss_res = float(np.sum((y - fit) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 if ss_tot == 0 else max(0.0, 1.0 - ss_res / ss_tot)
    return RateFit(slope=float(slope), intercept=float(np.exp(offset)), r_squared=min(r2, 1.0), points=tuple(pts))
