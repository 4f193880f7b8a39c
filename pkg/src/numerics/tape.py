"""
Dense matrix value type and the reverse-mode tape
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.numerics.errors import NonFiniteError, ShapeError, TapeUsageError

# Maps the upstream gradient of an output to one gradient per recorded input
VectorJacobian = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Matrix:
    """Row-major matrix of 64-bit reals, optionally recorded on a tape"""

    __slots__ = ("data", "tape", "vid")

    def __init__(self, data, tape: Optional["Tape"] = None, vid: Optional[int] = None):
        array = np.asarray(data, dtype=np.float64)
        if array.ndim == 1:
            array = array.reshape(1, -1)
        if array.ndim != 2:
            raise ShapeError(f"Matrix needs 2 dimensions, got shape {array.shape}")
        if not np.isfinite(array).all():
            raise NonFiniteError("Matrix values must be finite")
        self.data = np.ascontiguousarray(array)
        self.tape = tape
        self.vid = vid

    @classmethod
    def _wrap(cls, array: np.ndarray, tape: Optional["Tape"] = None, vid: Optional[int] = None) -> "Matrix":
        matrix = cls.__new__(cls)
        matrix.data = array
        matrix.tape = tape
        matrix.vid = vid
        return matrix

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "Matrix":
        return cls(np.zeros((rows, cols)))

    @classmethod
    def identity(cls, size: int) -> "Matrix":
        return cls(np.eye(size))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        """Return a copy of the values"""
        return self.data.copy()

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 matrix, got {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self) -> str:
        where = f", vid={self.vid}" if self.tape is not None else ""
        return f"Matrix({self.rows}x{self.cols}{where})"


@dataclass
class TapeRecord:
    """One recorded primitive: output id, input ids and its vector-Jacobian product"""

    op: str
    output: int
    inputs: Tuple[Optional[int], ...]
    vjp: VectorJacobian


class Tape:
    """
    Records primitive operations in execution order.

    Records are appended as values are produced, so the record list is already
    a topological order of the computation; replaying it backwards visits
    every consumer of a value before the value itself.
    """

    def __init__(self) -> None:
        self.records: List[TapeRecord] = []
        self.parameters: Dict[str, Matrix] = {}
        self._next_id = 0

    def __len__(self) -> int:
        return len(self.records)

    def _allocate(self) -> int:
        vid = self._next_id
        self._next_id += 1
        return vid

    def parameter(self, name: str, values: np.ndarray) -> Matrix:
        """Register a named leaf; registering the same name again returns the existing leaf"""
        if name in self.parameters:
            return self.parameters[name]
        matrix = Matrix(values, tape=self, vid=self._allocate())
        self.parameters[name] = matrix
        return matrix

    def record(self, op: str, data: np.ndarray, inputs: Sequence[Matrix], vjp: VectorJacobian) -> Matrix:
        output = Matrix._wrap(data, tape=self, vid=self._allocate())
        input_ids = tuple(item.vid if item.tape is self else None for item in inputs)
        self.records.append(TapeRecord(op=op, output=output.vid, inputs=input_ids, vjp=vjp))
        return output


def backward(tape: Tape, loss: Matrix) -> Dict[str, np.ndarray]:
    """
    Reverse-mode sweep from a scalar loss

    Args:
        tape: Tape the loss was recorded on
        loss: 1x1 matrix produced by operations on the tape

    Returns:
        Gradient for every registered parameter, zeros for parameters the loss
        does not depend on

    Raises:
        TapeUsageError: If the loss is not a scalar recorded on this tape
    """
    if loss.tape is not tape or loss.vid is None:
        raise TapeUsageError("Loss was not recorded on this tape")
    if loss.shape != (1, 1):
        raise TapeUsageError(f"Loss must be a 1x1 matrix, got {loss.shape}")

    gradients: Dict[int, np.ndarray] = {loss.vid: np.ones((1, 1))}
    for record in reversed(tape.records):
        upstream = gradients.pop(record.output, None)
        if upstream is None:
            continue
        for vid, gradient in zip(record.inputs, record.vjp(upstream)):
            if vid is None or gradient is None:
                continue
            if vid in gradients:
                gradients[vid] = gradients[vid] + gradient
            else:
                gradients[vid] = gradient

    return {
        name: gradients.get(matrix.vid, np.zeros(matrix.shape))
        for name, matrix in tape.parameters.items()
    }
