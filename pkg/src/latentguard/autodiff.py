"""Reverse-mode differentiation over an explicit operation tape.

A ``Tape`` is an append-only record of executed operations. Every recorded op
keeps references to its input ``Tensor`` objects, a backward closure mapping
the output adjoint to input adjoints, and a replay closure that re-executes
the forward computation from the saved inputs. Because ops are appended in
execution order, the record itself is a valid topological order and
``backward`` is a single reverse sweep with adjoint accumulation at fan-out
points.

Tensors are immutable values by convention: no op writes to its inputs, and
an array that entered the tape must not be mutated until the tape is dropped.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

from .exceptions import ContractError, NumericError, ShapeError

_uid_counter = itertools.count(1)


class Tensor:
    """A dense array value participating in taped computation."""

    __slots__ = ("data", "uid")

    def __init__(self, data: np.ndarray):
        self.data = np.asarray(data)
        self.uid = next(_uid_counter)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(uid={self.uid}, shape={self.data.shape}, dtype={self.data.dtype})"


class Parameter(Tensor):
    """A named, trainable tensor owned by a layer."""

    __slots__ = ("name",)

    def __init__(self, data: np.ndarray, name: str):
        super().__init__(data)
        self.name = name


class _TapeOp:
    __slots__ = ("out", "inputs", "backward_fn", "replay_fn", "label")

    def __init__(self, out, inputs, backward_fn, replay_fn, label):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.replay_fn = replay_fn
        self.label = label


class Tape:
    """Ordered record of executed operations."""

    def __init__(self):
        self._ops: list[_TapeOp] = []
        self._consumed = False

    def __len__(self):
        return len(self._ops)

    def record(
        self,
        out: Tensor,
        inputs: Sequence[Tensor],
        backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
        replay_fn: Callable[[], np.ndarray] | None = None,
        label: str = "",
    ) -> Tensor:
        if self._consumed:
            raise ContractError("tape has already been consumed by backward()")
        self._ops.append(_TapeOp(out, tuple(inputs), backward_fn, replay_fn, label))
        return out

    @property
    def output(self) -> Tensor:
        if not self._ops:
            raise ContractError("tape is empty; nothing was recorded")
        return self._ops[-1].out

    def replay(self) -> np.ndarray:
        """Re-execute every recorded forward from its saved inputs.

        Returns the recomputed final output. With identical saved inputs and
        mode flags the result is bit-identical to the original forward pass.
        """
        if not self._ops:
            raise ContractError("tape is empty; nothing to replay")
        last = None
        for op in self._ops:
            if op.replay_fn is not None:
                last = op.replay_fn()
        return last


class Gradients:
    """Adjoints produced by ``backward``, keyed by tensor identity."""

    def __init__(self, table: dict[int, np.ndarray]):
        self._table = table

    def get(self, tensor: Tensor) -> np.ndarray | None:
        return self._table.get(tensor.uid)

    def __contains__(self, tensor: Tensor) -> bool:
        return tensor.uid in self._table

    def require(self, tensor: Tensor) -> np.ndarray:
        g = self._table.get(tensor.uid)
        if g is None:
            g = np.zeros_like(tensor.data)
        return g


def backward(tape: Tape, seed: np.ndarray | float, output: Tensor | None = None) -> Gradients:
    """Run the reverse sweep and return adjoints for every leaf tensor.

    ``seed`` is the adjoint of ``output`` (the tape's final output by
    default) and must match its shape. Leaves are tensors that no op on this
    tape produced: network inputs, parameters and constants.
    """
    if tape._consumed:
        raise ContractError("tape has already been consumed by backward()")
    if len(tape) == 0:
        raise ContractError("cannot run backward on an empty tape")
    if output is None:
        output = tape.output
    seed_arr = np.asarray(seed, dtype=output.data.dtype)
    if seed_arr.shape != output.data.shape:
        raise ShapeError(
            f"seed shape {seed_arr.shape} does not match output shape {output.data.shape}"
        )
    tape._consumed = True

    produced = {op.out.uid for op in tape._ops}
    table: dict[int, np.ndarray] = {output.uid: seed_arr}
    for op in reversed(tape._ops):
        gout = table.pop(op.out.uid, None)
        if gout is None:
            continue
        gins = op.backward_fn(gout)
        if len(gins) != len(op.inputs):
            raise ContractError(
                f"op {op.label!r} returned {len(gins)} adjoints for {len(op.inputs)} inputs"
            )
        for tensor, gin in zip(op.inputs, gins):
            if gin is None:
                continue
            if gin.shape != tensor.data.shape:
                raise ShapeError(
                    f"op {op.label!r} produced adjoint of shape {gin.shape} "
                    f"for input of shape {tensor.data.shape}"
                )
            prev = table.get(tensor.uid)
            table[tensor.uid] = gin if prev is None else prev + gin
    # Anything still in the table for a produced tensor was a dead branch.
    leaf_table = {uid: g for uid, g in table.items() if uid not in produced}
    return Gradients(leaf_table)


class GradCheckResult:
    """Per-coordinate comparison of tape adjoints against central differences."""

    def __init__(self, entries):
        # entries: list of (tensor_label, flat_index, analytic, numeric, rel_err)
        self.entries = entries

    @property
    def max_rel_error(self) -> float:
        return max((e[4] for e in self.entries), default=0.0)

    @property
    def mean_rel_error(self) -> float:
        if not self.entries:
            return 0.0
        return float(np.mean([e[4] for e in self.entries]))

    def worst(self):
        return max(self.entries, key=lambda e: e[4]) if self.entries else None

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance


def _relative_error(a: float, b: float, floor: float, zero_tol: float) -> float:
    # both effectively zero: catastrophic cancellation noise, not a mismatch
    if max(abs(a), abs(b)) < zero_tol:
        return 0.0
    denom = max(abs(a), abs(b), floor)
    return abs(a - b) / denom


def finite_diff_check(
    loss_fn: Callable[[], tuple[Tape, Tensor]],
    tensors: Sequence[tuple[str, Tensor]],
    step: float = 1e-5,
    max_coords_per_tensor: int | None = None,
    floor: float = 1e-6,
    zero_tol: float = 1e-7,
    seed: int = 0,
) -> GradCheckResult:
    """Compare tape gradients with central finite differences.

    ``loss_fn`` rebuilds the computation from the current ``.data`` of the
    checked tensors and returns ``(tape, scalar_output)``. Run in 64-bit for
    meaningful tolerances. When a tensor has more coordinates than
    ``max_coords_per_tensor``, a seeded subsample is checked.
    """
    tape, out = loss_fn()
    if out.data.size != 1:
        raise ContractError("finite_diff_check requires a scalar loss output")
    grads = backward(tape, np.ones_like(out.data), output=out)

    rng = np.random.default_rng(seed)
    entries = []
    for label, tensor in tensors:
        analytic = grads.require(tensor).reshape(-1)
        flat = tensor.data.reshape(-1)
        n = flat.size
        if max_coords_per_tensor is not None and n > max_coords_per_tensor:
            coords = rng.choice(n, size=max_coords_per_tensor, replace=False)
        else:
            coords = np.arange(n)
        for c in coords:
            c = int(c)
            orig = flat[c]
            flat[c] = orig + step
            _, out_hi = loss_fn()
            flat[c] = orig - step
            _, out_lo = loss_fn()
            flat[c] = orig
            numeric = (float(out_hi.data) - float(out_lo.data)) / (2.0 * step)
            if not np.isfinite(numeric):
                raise NumericError(f"non-finite finite-difference at {label}[{c}]")
            rel = _relative_error(float(analytic[c]), numeric, floor, zero_tol)
            entries.append((label, c, float(analytic[c]), numeric, rel))
    return GradCheckResult(entries)
