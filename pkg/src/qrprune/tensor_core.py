"""Dense activation/kernel tensors and the CNN primitives built on them.

Activations are ``(H, W, C)`` float32 arrays and convolution kernels are
``(KH, KW, C_in, C_out)`` float32 arrays, both C-contiguous so the last index
varies fastest.  Sums are accumulated in float64 and rounded once.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ChannelIndexError, ShapeError

DTYPE = np.float32


@dataclass(frozen=True)
class ConvParams:
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ValueError(f"padding must be >= 0, got {self.padding}")

    @classmethod
    def valid(cls, stride=1):
        return cls(stride=stride, padding=0)

    @classmethod
    def same_zero(cls, pad, stride=1):
        return cls(stride=stride, padding=pad)

    def output_hw(self, h, w, kh, kw):
        ho = (h + 2 * self.padding - kh) // self.stride + 1
        wo = (w + 2 * self.padding - kw) // self.stride + 1
        return ho, wo


def tensor3(data) -> np.ndarray:
    """Coerce ``data`` to a C-contiguous float32 ``(H, W, C)`` tensor."""
    x = np.ascontiguousarray(data, dtype=DTYPE)
    if x.ndim != 3 or min(x.shape) < 1:
        raise ShapeError(f"expected a non-empty (H, W, C) tensor, got shape {x.shape}")
    return x


def tensor4(data) -> np.ndarray:
    m = np.ascontiguousarray(data, dtype=DTYPE)
    if m.ndim != 4 or min(m.shape) < 1:
        raise ShapeError(f"expected a non-empty (KH, KW, Cin, Cout) kernel, got shape {m.shape}")
    return m


def _pad_hw(x, pad, value=0.0):
    if pad == 0:
        return x
    return np.pad(x, ((pad, pad), (pad, pad), (0, 0)), constant_values=value)


def extract_patches(x: np.ndarray, kh: int, kw: int, params: ConvParams) -> np.ndarray:
    """Return the receptive fields of every output position, shape (Ho, Wo, KH, KW, C)."""
    ho, wo = params.output_hw(x.shape[0], x.shape[1], kh, kw)
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"kernel {kh}x{kw} with padding {params.padding} does not fit input {x.shape[:2]}"
        )
    xp = _pad_hw(x, params.padding)
    win = sliding_window_view(xp, (kh, kw), axis=(0, 1))  # (H', W', C, KH, KW)
    win = win[: (ho - 1) * params.stride + 1 : params.stride, : (wo - 1) * params.stride + 1 : params.stride]
    return win.transpose(0, 1, 3, 4, 2)


def conv2d(x, kernel, bias=None, params: ConvParams = ConvParams()) -> np.ndarray:
    x = tensor3(x)
    kernel = tensor4(kernel)
    kh, kw, cin, cout = kernel.shape
    if x.shape[2] != cin:
        raise ShapeError(f"input has {x.shape[2]} channels but kernel expects {cin}")
    if bias is not None and np.shape(bias) != (cout,):
        raise ShapeError(f"bias shape {np.shape(bias)} does not match cout={cout}")
    patches = extract_patches(x, kh, kw, params)
    ho, wo = patches.shape[:2]
    cols = patches.reshape(ho * wo, kh * kw * cin).astype(np.float64)
    out = cols @ kernel.reshape(kh * kw * cin, cout).astype(np.float64)
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)
    return out.reshape(ho, wo, cout).astype(DTYPE)


def pool2d(x, kind: str, window: int, stride: int, padding: int = 0) -> np.ndarray:
    """Channelwise max/avg pooling.  Padded cells never win a max and are
    excluded from an average."""
    x = tensor3(x)
    if kind not in ("max", "avg"):
        raise ValueError(f"unknown pooling kind {kind!r}")
    h, w, _ = x.shape
    if window > h + 2 * padding or window > w + 2 * padding:
        raise ShapeError(f"pool window {window} larger than input {x.shape[:2]}")
    params = ConvParams(stride=stride, padding=padding)
    if kind == "max":
        xp = _pad_hw(x, padding, -np.inf)
        win = extract_patches(xp, window, window, ConvParams(stride=stride))
        return np.ascontiguousarray(win.max(axis=(2, 3)), dtype=DTYPE)
    total = extract_patches(x.astype(np.float64), window, window, params).sum(axis=(2, 3))
    ones = np.ones((h, w, 1))
    count = extract_patches(ones, window, window, params).sum(axis=(2, 3))
    return (total / count).astype(DTYPE)


def relu(x) -> np.ndarray:
    x = tensor3(x)
    return np.maximum(x, DTYPE(0))


def add(a, b) -> np.ndarray:
    a, b = tensor3(a), tensor3(b)
    if a.shape != b.shape:
        raise ShapeError(f"cannot add tensors of shape {a.shape} and {b.shape}")
    return a + b


def channel_gather(x, indices) -> np.ndarray:
    x = tensor3(x)
    idx = check_channel_indices(indices, x.shape[2])
    return np.ascontiguousarray(x[:, :, idx])


def check_channel_indices(indices, n_channels: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        raise ChannelIndexError("at least one channel index is required")
    if idx.min() < 0 or idx.max() >= n_channels:
        raise ChannelIndexError(f"channel index out of range [0, {n_channels}): {idx.tolist()}")
    if np.unique(idx).size != idx.size:
        raise ChannelIndexError(f"duplicate channel indices: {idx.tolist()}")
    return idx


def channel_affine(x, scale, shift) -> np.ndarray:
    x = tensor3(x)
    scale = np.asarray(scale, dtype=DTYPE)
    shift = np.asarray(shift, dtype=DTYPE)
    if scale.shape != (x.shape[2],) or shift.shape != (x.shape[2],):
        raise ShapeError(f"affine of length {scale.shape} applied to {x.shape[2]} channels")
    return x * scale + shift
