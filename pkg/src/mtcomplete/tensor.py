"""Dense tensors, mode-n unfolding and observed-entry projection.

Tensors are plain ``float64`` numpy arrays and masks are ``bool`` arrays of
the same shape (``True`` = observed).  The flat linearization used across the
package, including the on-disk format, is first-index-fastest (Fortran order).

Unfolding along ``mode`` puts that mode on the rows; columns enumerate the
remaining modes in ascending order with the lowest one varying fastest.
"""

from __future__ import annotations

import numpy as np

MAX_ORDER = 8


def as_tensor(data, shape=None) -> np.ndarray:
    """Coerce ``data`` to a float64 tensor.

    If ``shape`` is given, ``data`` is read as a flat first-index-fastest
    sequence of that shape.
    """
    arr = np.asarray(data, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(n) for n in shape)
        if any(n < 1 for n in shape):
            raise ValueError(f"extents must be >= 1, got {shape}")
        if arr.size != int(np.prod(shape)):
            raise ValueError(
                f"data has {arr.size} entries, shape {shape} needs {int(np.prod(shape))}"
            )
        arr = arr.reshape(shape, order="F")
    if arr.ndim < 1 or arr.ndim > MAX_ORDER:
        raise ValueError(f"tensor order must be in [1, {MAX_ORDER}], got {arr.ndim}")
    return arr


def flat(t: np.ndarray) -> np.ndarray:
    """Flat view of ``t`` in the package linearization."""
    return np.asarray(t).ravel(order="F")


def _check_mode(mode: int, order: int) -> int:
    if not isinstance(mode, (int, np.integer)) or not 0 <= mode < order:
        raise ValueError(f"mode {mode} out of range for order-{order} tensor")
    return int(mode)


def unfold(t: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding of ``t`` as an ``(n_mode, N / n_mode)`` matrix."""
    t = np.asarray(t)
    mode = _check_mode(mode, t.ndim)
    return np.reshape(np.moveaxis(t, mode, 0), (t.shape[mode], -1), order="F")


def fold(m: np.ndarray, mode: int, shape) -> np.ndarray:
    """Inverse of :func:`unfold`: rebuild the tensor of ``shape`` from ``m``."""
    m = np.asarray(m)
    shape = tuple(int(n) for n in shape)
    mode = _check_mode(mode, len(shape))
    rest = shape[:mode] + shape[mode + 1:]
    expected = (shape[mode], int(np.prod(rest)))
    if m.ndim != 2 or m.shape != expected:
        raise ValueError(
            f"matrix of shape {m.shape} cannot be folded along mode {mode} "
            f"into {shape} (expected {expected})"
        )
    return np.moveaxis(np.reshape(m, (shape[mode],) + rest, order="F"), 0, mode)


def project_observed(dest: np.ndarray, src: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Return a copy of ``dest`` with the observed entries of ``src`` written in."""
    dest = np.asarray(dest)
    src = np.asarray(src)
    w = np.asarray(w, dtype=bool)
    if not dest.shape == src.shape == w.shape:
        raise ValueError(
            f"shape mismatch: dest {dest.shape}, src {src.shape}, mask {w.shape}"
        )
    return np.where(w, src, dest)


def frobenius_norm(t: np.ndarray) -> float:
    t = np.asarray(t, dtype=np.float64)
    return float(np.sqrt(np.sum(t * t)))
