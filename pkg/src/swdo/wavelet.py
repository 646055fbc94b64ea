"""Single-level orthonormal 2-D Haar transform.

Every 2x2 block ``[[a, b], [c, d]]`` maps to::

    ll = (a + b + c + d) / 2    lh = (a - b + c - d) / 2
    hl = (a + b - c - d) / 2    hh = (a - b - c + d) / 2

The transform is orthonormal, so its inverse is its adjoint and energy is
preserved exactly up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class OddDimensionError(ValueError):
    def __init__(self, axis: str, size: int):
        super().__init__(f"{axis} must be even for the Haar transform, got {size}")
        self.axis = axis
        self.size = size


@dataclass(frozen=True)
class SubbandSet:
    ll: np.ndarray
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray

    def __post_init__(self):
        shapes = {b.shape for b in self.bands()}
        if len(shapes) != 1:
            raise ValueError(f"sub-band shapes differ: {sorted(shapes)}")

    def bands(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.ll, self.lh, self.hl, self.hh

    def energies(self) -> dict[str, float]:
        return {name: float(np.sum(b * b)) for name, b in zip(("ll", "lh", "hl", "hh"), self.bands())}


def as_float(x) -> np.ndarray:
    """Float view of ``x``; float32 and float64 inputs keep their precision."""
    x = np.asarray(x)
    return x if x.dtype in (np.float32, np.float64) else x.astype(float)


def _check_even(x: np.ndarray) -> None:
    h, w = x.shape[-2:]
    if h % 2:
        raise OddDimensionError("height", h)
    if w % 2:
        raise OddDimensionError("width", w)


def haar_blocks(x: np.ndarray) -> np.ndarray:
    """Forward transform over the last two axes; bands stacked on a new axis -3.

    ``(..., H, W) -> (..., 4, H/2, W/2)`` in order ll, lh, hl, hh.
    """
    x = as_float(x)
    _check_even(x)
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    return np.stack([
        (a + b + c + d) * 0.5,
        (a - b + c - d) * 0.5,
        (a + b - c - d) * 0.5,
        (a - b - c + d) * 0.5,
    ], axis=-3)


def haar_blocks_inverse(bands: np.ndarray) -> np.ndarray:
    """Inverse of :func:`haar_blocks` (and its adjoint)."""
    bands = as_float(bands)
    ll, lh, hl, hh = (bands[..., i, :, :] for i in range(4))
    h, w = ll.shape[-2:]
    out = np.empty(ll.shape[:-2] + (2 * h, 2 * w), dtype=bands.dtype)
    out[..., 0::2, 0::2] = (ll + lh + hl + hh) * 0.5
    out[..., 0::2, 1::2] = (ll - lh + hl - hh) * 0.5
    out[..., 1::2, 0::2] = (ll + lh - hl - hh) * 0.5
    out[..., 1::2, 1::2] = (ll - lh - hl + hh) * 0.5
    return out


def dwt2_forward(plane) -> SubbandSet:
    plane = np.asarray(plane, dtype=float)
    if plane.ndim != 2:
        raise ValueError(f"expected a 2-D plane, got shape {plane.shape}")
    ll, lh, hl, hh = haar_blocks(plane)
    return SubbandSet(ll, lh, hl, hh)


def dwt2_inverse(s: SubbandSet) -> np.ndarray:
    return haar_blocks_inverse(np.stack(s.bands()))


def subband_concat(stack) -> np.ndarray:
    """Replace each channel by its four sub-bands.

    ``(C, H, W) -> (4C, H/2, W/2)``; also accepts a leading batch axis.
    Channels come out grouped by band: all ll, then all lh, hl, hh.
    """
    stack = as_float(stack)
    if stack.shape[-3] == 0:
        return stack
    bands = haar_blocks(stack)  # (..., C, 4, h, w)
    bands = np.swapaxes(bands, -4, -3)  # (..., 4, C, h, w)
    return bands.reshape(bands.shape[:-4] + (-1,) + bands.shape[-2:])


def subband_concat_adjoint(grad) -> np.ndarray:
    """Adjoint (= inverse) of :func:`subband_concat`, used in backpropagation."""
    grad = as_float(grad)
    c4 = grad.shape[-3]
    bands = grad.reshape(grad.shape[:-3] + (4, c4 // 4) + grad.shape[-2:])
    return haar_blocks_inverse(np.swapaxes(bands, -4, -3))
