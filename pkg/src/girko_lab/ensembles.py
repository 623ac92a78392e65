"""I.i.d. non-Hermitian ensembles, the Ornstein-Uhlenbeck step and Hermitization.

Matrices are plain ``numpy.ndarray`` objects of dtype ``complex128``.  All
randomness flows through :class:`Seed`, which keys a counter-based Philox
generator, so a given ``(value, stream)`` pair always reproduces the same
matrix irrespective of process, worker count or call order.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DegenerateDimensionError",
    "EnsembleKind",
    "EnsembleSpec",
    "Seed",
    "hermitize",
    "kappa4",
    "ou_evolve",
    "sample_iid",
]

_MASK64 = (1 << 64) - 1


class DegenerateDimensionError(ValueError):
    """Raised when a matrix dimension is too small to be meaningful."""


class EnsembleKind(str, enum.Enum):
    """Entry distributions with analytically known cumulants."""

    COMPLEX_GINIBRE = "complex-ginibre"
    BERNOULLI_PHASE = "bernoulli-phase"
    UNIFORM_DISK = "uniform-disk"


# E|chi|^4 - 2 for each kind; chi has E chi = E chi^2 = 0 and E|chi|^2 = 1.
_KAPPA4 = {
    EnsembleKind.COMPLEX_GINIBRE: 0.0,
    EnsembleKind.BERNOULLI_PHASE: -1.0,
    # chi uniform on the disk of radius sqrt(2): E|chi|^4 = R^4 / 3 = 4/3.
    EnsembleKind.UNIFORM_DISK: 4.0 / 3.0 - 2.0,
}


@dataclass(frozen=True)
class EnsembleSpec:
    """An i.i.d. ensemble with entries ``chi / sqrt(n)``.

    Parameters
    ----------
    kind : EnsembleKind or str
        Law of the unnormalised entry ``chi``.
    n : int
        Matrix dimension.
    """

    kind: EnsembleKind
    n: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", EnsembleKind(self.kind))
        if int(self.n) != self.n or self.n < 0:
            raise ValueError(f"matrix dimension must be a non-negative integer, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))


@dataclass(frozen=True)
class Seed:
    """Key of a counter-based random stream.

    Parameters
    ----------
    value : int
        64-bit base seed shared by an experiment.
    stream : int
        64-bit sub-stream index; distinct streams are statistically independent.
    """

    value: int
    stream: int = 0

    def __post_init__(self) -> None:
        for name in ("value", "stream"):
            v = getattr(self, name)
            if not 0 <= int(v) <= _MASK64:
                raise ValueError(f"{name} must fit in 64 unsigned bits, got {v!r}")
            object.__setattr__(self, name, int(v))

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        return np.random.Generator(np.random.Philox(key=self.value | (self.stream << 64)))

    def spawn(self, label: str) -> "Seed":
        """Derive an independent sub-stream from a text label."""
        h = hashlib.blake2b(digest_size=8)
        h.update(self.stream.to_bytes(8, "little"))
        h.update(label.encode())
        return Seed(self.value, int.from_bytes(h.digest(), "little"))


def _ginibre(rng: np.random.Generator, n: int) -> np.ndarray:
    g = rng.standard_normal((n, n, 2))
    return (g[..., 0] + 1j * g[..., 1]) / np.sqrt(2.0 * n)


def sample_iid(spec: EnsembleSpec, seed: Seed) -> np.ndarray:
    """Draw an ``n x n`` matrix with i.i.d. entries ``chi / sqrt(n)``.

    Raises
    ------
    DegenerateDimensionError
        If ``spec.n < 2``.
    """
    n = spec.n
    if n < 2:
        raise DegenerateDimensionError(f"need n >= 2, got n = {n}")
    rng = seed.generator()
    if spec.kind is EnsembleKind.COMPLEX_GINIBRE:
        return _ginibre(rng, n)
    if spec.kind is EnsembleKind.BERNOULLI_PHASE:
        phases = np.array([1.0, 1.0j, -1.0, -1.0j])
        return phases[rng.integers(0, 4, size=(n, n))] / np.sqrt(n)
    # uniform on the disk of radius sqrt(2), so that E|chi|^2 = 1
    r = np.sqrt(2.0 * rng.random((n, n)))
    theta = 2.0 * np.pi * rng.random((n, n))
    return r * np.exp(1j * theta) / np.sqrt(n)


def kappa4(spec: EnsembleSpec) -> float:
    """Fourth cumulant ``E|chi|^4 - 2`` of the unnormalised entry law."""
    return _KAPPA4[spec.kind]


def ou_evolve(X0: np.ndarray, t: float, seed: Seed) -> np.ndarray:
    """Exact one-step sample of the matrix Ornstein-Uhlenbeck process.

    ``dX = -X/2 dt + dB/sqrt(n)`` started at ``X0`` has the law
    ``exp(-t/2) X0 + sqrt(1 - exp(-t)) * Ginibre`` at time ``t``.
    """
    if not np.isfinite(t):
        raise ValueError("t must be finite")
    if t < 0:
        raise ValueError(f"t must be non-negative, got {t}")
    X0 = np.asarray(X0, dtype=complex)
    if t == 0:
        return X0.copy()
    n = X0.shape[0]
    noise = _ginibre(seed.spawn("ou").generator(), n)
    return np.exp(-0.5 * t) * X0 + np.sqrt(-np.expm1(-t)) * noise


def hermitize(X: np.ndarray, z: complex) -> np.ndarray:
    """Return the ``2n x 2n`` Hermitization ``[[0, X - z], [(X - z)^*, 0]]``."""
    X = np.asarray(X, dtype=complex)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ValueError(f"X must be square, got shape {X.shape}")
    n = X.shape[0]
    Y = X - z * np.eye(n)
    H = np.zeros((2 * n, 2 * n), dtype=complex)
    H[:n, n:] = Y
    H[n:, :n] = Y.conj().T
    return H
