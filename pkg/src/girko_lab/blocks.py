"""Block-constant ``2n x 2n`` matrices represented by ``2 x 2`` complex matrices.

A block-constant matrix has four ``n x n`` blocks, each a multiple of the
identity.  Products, sums and adjoints of such matrices act on the four
scalars exactly as ``2 x 2`` matrix algebra, so nothing larger than ``2 x 2``
is ever stored.  The normalised trace ``<A> = Tr(A) / (2n)`` becomes
``(b11 + b22) / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "BlockConstant",
    "E1",
    "E2",
    "EMINUS",
    "F",
    "FSTAR",
    "IDENTITY",
    "s_op",
]


@dataclass(frozen=True)
class BlockConstant:
    """The block-constant matrix ``[[b11 I, b12 I], [b21 I, b22 I]]``."""

    b11: complex = 0j
    b12: complex = 0j
    b21: complex = 0j
    b22: complex = 0j

    def __post_init__(self) -> None:
        for name in ("b11", "b12", "b21", "b22"):
            object.__setattr__(self, name, complex(getattr(self, name)))

    @classmethod
    def from_matrix(cls, a: np.ndarray) -> "BlockConstant":
        a = np.asarray(a)
        if a.shape != (2, 2):
            raise ValueError(f"expected a 2x2 array, got shape {a.shape}")
        return cls(a[0, 0], a[0, 1], a[1, 0], a[1, 1])

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.b11, self.b12], [self.b21, self.b22]], dtype=complex)

    def __add__(self, other: "BlockConstant") -> "BlockConstant":
        return BlockConstant.from_matrix(self.matrix + other.matrix)

    def __sub__(self, other: "BlockConstant") -> "BlockConstant":
        return BlockConstant.from_matrix(self.matrix - other.matrix)

    def __neg__(self) -> "BlockConstant":
        return BlockConstant.from_matrix(-self.matrix)

    def __mul__(self, c: complex) -> "BlockConstant":
        return BlockConstant.from_matrix(complex(c) * self.matrix)

    __rmul__ = __mul__

    def __truediv__(self, c: complex) -> "BlockConstant":
        return BlockConstant.from_matrix(self.matrix / complex(c))

    def __matmul__(self, other: "BlockConstant") -> "BlockConstant":
        return BlockConstant.from_matrix(self.matrix @ other.matrix)

    @property
    def H(self) -> "BlockConstant":
        """Conjugate transpose."""
        return BlockConstant(np.conj(self.b11), np.conj(self.b21), np.conj(self.b12), np.conj(self.b22))

    def trace(self) -> complex:
        """Normalised trace of the embedded matrix."""
        return 0.5 * (self.b11 + self.b22)

    def norm(self) -> float:
        """Operator norm (equal for the 2x2 form and the embedding)."""
        return float(np.linalg.norm(self.matrix, 2))

    def embed(self, n: int) -> np.ndarray:
        """Return the full ``2n x 2n`` matrix."""
        return np.kron(self.matrix, np.eye(n))

    def allclose(self, other: "BlockConstant", atol: float = 1e-12) -> bool:
        return bool(np.max(np.abs(self.matrix - other.matrix)) <= atol)


IDENTITY = BlockConstant(1, 0, 0, 1)
E1 = BlockConstant(1, 0, 0, 0)
E2 = BlockConstant(0, 0, 0, 1)
EMINUS = BlockConstant(1, 0, 0, -1)
F = BlockConstant(0, 1, 0, 0)
FSTAR = BlockConstant(0, 0, 1, 0)


def s_op(R: BlockConstant) -> BlockConstant:
    """Covariance operator ``S[R] = diag(<R_22>, <R_11>)``."""
    return BlockConstant(R.b22, 0, 0, R.b11)
