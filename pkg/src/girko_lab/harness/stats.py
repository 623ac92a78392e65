"""Moment estimators with Monte-Carlo standard errors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

__all__ = ["StreamingMoments", "excess_kurtosis_se", "summarize"]


def excess_kurtosis_se(n: int) -> float:
    """Standard error of the sample excess kurtosis under normality."""
    return math.sqrt(24.0 * n * (n - 1) ** 2 / ((n - 3) * (n - 2) * (n + 3) * (n + 5)))


def summarize(values) -> dict:
    """Aggregate moments of complex samples ``L_1, ..., L_N``.

    Returns a dict with the sample mean, the unbiased variance
    ``E|L - EL|^2``, the pseudo-variance ``E(L - EL)^2``, the excess kurtosis
    of ``Re L`` and ``Im L``, and a standard error ``*_se`` for each.  It
    also includes the 5/50/95% quantiles of ``Re L`` and ``Im L``.

    Raises
    ------
    ValueError
        With fewer than two samples.
    """
    L = np.asarray(values, dtype=complex).ravel()
    N = L.size
    if N < 2:
        raise ValueError("summarize needs at least two rows")
    mean = L.mean()
    c = L - mean
    abs2 = np.abs(c) ** 2
    sq = c * c
    corr = N / (N - 1)
    var = float(abs2.mean() * corr)
    pseudo = complex(sq.mean() * corr)
    out = {
        "count": N,
        "mean_re": float(mean.real),
        "mean_im": float(mean.imag),
        "mean_se": math.sqrt(var / N),
        "variance": var,
        "variance_se": float(abs2.std(ddof=1) / math.sqrt(N)),
        "pseudo_variance_re": pseudo.real,
        "pseudo_variance_im": pseudo.imag,
        "pseudo_variance_se": float(np.sqrt(np.mean(np.abs(sq - sq.mean()) ** 2) * corr / N)),
    }
    for part, x in (("re", L.real), ("im", L.imag)):
        if N >= 4 and np.ptp(x) > 0:
            k = float(sps.kurtosis(x, fisher=True, bias=False))
            se = excess_kurtosis_se(N)
        else:
            k, se = float("nan"), float("nan")
        out[f"kurtosis_{part}"] = k
        out[f"kurtosis_{part}_se"] = se
        q = np.quantile(x, [0.05, 0.5, 0.95])
        out[f"quantiles_{part}"] = [float(v) for v in q]
    return out


@dataclass
class StreamingMoments:
    """One-pass mean, variance, skewness and kurtosis of a real stream.

    The updates are the pairwise-merge formulas of Chan, Golub and LeVeque,
    extended to the fourth central moment.  They agree with two-pass
    estimates to rounding.
    """

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    m3: float = 0.0
    m4: float = 0.0

    def push(self, x: float) -> None:
        self.merge(StreamingMoments(1, float(x)))

    def extend(self, xs) -> None:
        for x in np.asarray(xs, dtype=float).ravel():
            self.push(x)

    def merge(self, other: "StreamingMoments") -> None:
        na, nb = self.count, other.count
        if nb == 0:
            return
        if na == 0:
            self.count, self.mean, self.m2, self.m3, self.m4 = other.count, other.mean, other.m2, other.m3, other.m4
            return
        n = na + nb
        d = other.mean - self.mean
        d_n = d / n
        m2 = self.m2 + other.m2 + d * d_n * na * nb
        m3 = (
            self.m3
            + other.m3
            + d * d_n * d_n * na * nb * (na - nb)
            + 3 * d_n * (na * other.m2 - nb * self.m2)
        )
        m4 = (
            self.m4
            + other.m4
            + d * d_n**3 * na * nb * (na * na - na * nb + nb * nb)
            + 6 * d_n * d_n * (na * na * other.m2 + nb * nb * self.m2)
            + 4 * d_n * (na * other.m3 - nb * self.m3)
        )
        self.count, self.mean, self.m2, self.m3, self.m4 = n, self.mean + d_n * nb, m2, m3, m4

    @property
    def variance(self) -> float:
        """Unbiased sample variance."""
        return self.m2 / (self.count - 1)

    @property
    def excess_kurtosis(self) -> float:
        """Biased (plug-in) excess kurtosis ``n m4 / m2^2 - 3``."""
        return self.count * self.m4 / self.m2**2 - 3.0
