"""
Tensor container for the numerics engine.
Holds 64-bit values in row-major order together with an optional gradient buffer.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from src.exceptions import BadArgumentError, NumericFailureError

ArrayLike = Union[np.ndarray, Sequence, float]


@dataclass(eq=False)
class Tensor:
    """
    An n-dimensional float64 array with a gradient slot.

    Attributes:
        data (np.ndarray): Values, always float64 and C-contiguous
        grad (np.ndarray, optional): Gradient buffer with the same shape as data
    """
    data: np.ndarray
    grad: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim == 0:
            self.data = self.data.reshape(1)
        if any(extent <= 0 for extent in self.data.shape):
            raise BadArgumentError(f"Tensor extents must be positive, got shape {self.data.shape}")
        if self.grad is not None:
            self._check_grad(self.grad)

    @classmethod
    def from_values(cls, values: ArrayLike, shape: Optional[Sequence[int]] = None) -> "Tensor":
        """
        Build a tensor from flat or nested values.

        Args:
            values: Numbers in row-major order
            shape (sequence, optional): Target shape; product must equal the value count

        Returns:
            Tensor: The new tensor
        """
        array = np.asarray(values, dtype=np.float64)
        if shape is not None:
            if int(np.prod(shape)) != array.size:
                raise BadArgumentError(
                    f"Cannot reshape {array.size} values into shape {tuple(shape)}"
                )
            array = array.reshape(tuple(shape))
        return cls(array)

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> "Tensor":
        return cls(np.zeros(tuple(shape), dtype=np.float64))

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def set_grad(self, grad: np.ndarray):
        self._check_grad(grad)
        self.grad = np.ascontiguousarray(grad, dtype=np.float64)

    def is_finite(self) -> bool:
        if not np.all(np.isfinite(self.data)):
            return False
        return self.grad is None or bool(np.all(np.isfinite(self.grad)))

    def require_finite(self, name: str = "tensor"):
        if not self.is_finite():
            raise NumericFailureError(f"Non-finite values found in {name}")

    def copy(self) -> "Tensor":
        grad = None if self.grad is None else self.grad.copy()
        return Tensor(self.data.copy(), grad)

    def to_le_bytes(self) -> bytes:
        """Serialize the values as 64-bit little-endian floats."""
        return self.data.astype("<f8").tobytes()

    @classmethod
    def from_le_bytes(cls, payload: bytes, shape: Sequence[int]) -> "Tensor":
        array = np.frombuffer(payload, dtype="<f8").astype(np.float64)
        return cls.from_values(array, shape)

    def _check_grad(self, grad: np.ndarray):
        if tuple(np.shape(grad)) != self.shape:
            raise BadArgumentError(
                f"Gradient shape {tuple(np.shape(grad))} does not match tensor shape {self.shape}"
            )

    def __repr__(self) -> str:
        has_grad = "yes" if self.grad is not None else "no"
        return f"Tensor(shape={self.shape}, grad={has_grad})"
