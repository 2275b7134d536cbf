"""NCHW tensor primitives and bit-exact file I/O.

Feature maps are plain ``numpy.ndarray`` values of shape (n, c, h, w),
dtype float32 or float64, row-major.  Every function here is a pure
function of its inputs; given identical inputs it returns bit-identical
outputs across runs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

SUPPORTED_DTYPES = (np.float32, np.float64)

_FTEN_MAGIC = b"FTEN"
_FTEN_VERSION = 1
_FTEN_DTYPE_CODE = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_FTEN_CODE_DTYPE = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


class ShapeError(ValueError):
    """Dims or channel counts violate an operation's contract."""


class FormatError(ValueError):
    """Malformed tensor file: bad magic, version, dtype code, or truncation."""


def check_nchw(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    if not isinstance(x, np.ndarray) or x.ndim != 4:
        raise ShapeError(f"{name} must be a rank-4 (n, c, h, w) array")
    if x.dtype.type not in SUPPORTED_DTYPES:
        raise ShapeError(f"{name} must be float32 or float64, got {x.dtype}")
    if min(x.shape) < 1:
        raise ShapeError(f"{name} has a non-positive dim: {x.shape}")
    return x


@dataclass(frozen=True)
class PadSpec:
    """Independent zero-fill pads for the four sides of the spatial plane."""

    top: int
    bottom: int
    left: int
    right: int

    def __post_init__(self):
        if min(self.top, self.bottom, self.left, self.right) < 0:
            raise ShapeError(f"negative padding: {self}")

    @classmethod
    def same(cls, p: int) -> "PadSpec":
        return cls(p, p, p, p)


@dataclass
class ConvWeights:
    """Dense convolution weights (out, in, k, k) with optional per-out bias.

    The weight array may be swapped for an autograd node during training;
    only shapes are validated here.
    """

    weights: object  # (out, in, k, k) ndarray or autograd node
    bias: object = None  # (out,) or None

    def __post_init__(self):
        if len(self.weights.shape) != 4:
            raise ShapeError("conv weights must be rank-4 (out, in, k, k)")
        o, i, kh, kw = self.weights.shape
        if kh != kw or kh % 2 == 0:
            raise ShapeError(f"kernel must be square with odd side, got {kh}x{kw}")
        if self.bias is not None and self.bias.shape != (o,):
            raise ShapeError("bias length must equal out_channels")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def k(self) -> int:
        return self.weights.shape[2]


@dataclass
class DepthwiseWeights:
    """One k x k kernel per channel: weights (c, k, k), optional bias (c,)."""

    weights: object
    bias: object = None

    def __post_init__(self):
        if len(self.weights.shape) != 3:
            raise ShapeError("depthwise weights must be rank-3 (c, k, k)")
        c, kh, kw = self.weights.shape
        if kh != kw or kh % 2 == 0:
            raise ShapeError(f"kernel must be square with odd side, got {kh}x{kw}")
        if self.bias is not None and self.bias.shape != (c,):
            raise ShapeError("bias length must equal channel count")

    @property
    def channels(self) -> int:
        return self.weights.shape[0]

    @property
    def k(self) -> int:
        return self.weights.shape[1]


def _out_dim(size: int, pad_lo: int, pad_hi: int, k: int, stride: int) -> int:
    out = (size + pad_lo + pad_hi - k) // stride + 1
    if out < 1:
        raise ShapeError(
            f"non-positive output dim: size={size} pads=({pad_lo},{pad_hi}) "
            f"k={k} stride={stride}"
        )
    return out


def im2col(x: np.ndarray, k: int, stride: int, pad: PadSpec) -> np.ndarray:
    """Unfold k x k windows into an (n, c, k, k, oh, ow) array.

    Shared by the dense/depthwise convolutions, their gradients, and the
    kernel-reassembly operator.
    """
    n, c, h, w = x.shape
    oh = _out_dim(h, pad.top, pad.bottom, k, stride)
    ow = _out_dim(w, pad.left, pad.right, k, stride)
    xp = np.pad(x, ((0, 0), (0, 0), (pad.top, pad.bottom), (pad.left, pad.right)))
    cols = np.empty((n, c, k, k, oh, ow), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[
                :, :, i : i + stride * oh : stride, j : j + stride * ow : stride
            ]
    return cols


def col2im(
    cols: np.ndarray, spatial: tuple, k: int, stride: int, pad: PadSpec
) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add windows back onto the plane."""
    n, c, _, _, oh, ow = cols.shape
    h, w = spatial
    acc = np.zeros(
        (n, c, h + pad.top + pad.bottom, w + pad.left + pad.right), dtype=cols.dtype
    )
    for i in range(k):
        for j in range(k):
            acc[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += (
                cols[:, :, i, j]
            )
    return acc[:, :, pad.top : pad.top + h, pad.left : pad.left + w]


def conv_cols_matmul(cols: np.ndarray, w4: np.ndarray) -> np.ndarray:
    """Contract unfolded windows (n,c,k,k,oh,ow) with weights (o,c,k,k)."""
    n, c, k, _, oh, ow = cols.shape
    o = w4.shape[0]
    out = np.matmul(w4.reshape(o, c * k * k), cols.reshape(n, c * k * k, oh * ow))
    return out.reshape(n, o, oh, ow)


def conv2d(
    x: np.ndarray, w: ConvWeights, stride: int = 1, pad: PadSpec | None = None
) -> np.ndarray:
    """Cross-correlation with zero-fill padding (no kernel flip).

    ``pad=None`` means k//2 on every side ("same" at stride 1).
    """
    check_nchw(x, "conv2d input")
    if pad is None:
        pad = PadSpec.same(w.k // 2)
    if x.shape[1] != w.in_channels:
        raise ShapeError(
            f"conv2d channel mismatch: input has {x.shape[1]}, "
            f"weights expect {w.in_channels}"
        )
    cols = im2col(x, w.k, stride, pad)
    out = conv_cols_matmul(cols, w.weights)
    if w.bias is not None:
        out = out + w.bias[None, :, None, None]
    return out


def conv2d_depthwise(
    x: np.ndarray, w: DepthwiseWeights, stride: int = 1, pad: PadSpec | None = None
) -> np.ndarray:
    """Per-channel convolution: channel c is filtered by kernel c only."""
    check_nchw(x, "depthwise input")
    if pad is None:
        pad = PadSpec.same(w.k // 2)
    if x.shape[1] != w.channels:
        raise ShapeError(
            f"depthwise channel mismatch: input has {x.shape[1]}, "
            f"weights expect {w.channels}"
        )
    cols = im2col(x, w.k, stride, pad)
    out = np.einsum("ncijhw,cij->nchw", cols, w.weights, optimize=True)
    if w.bias is not None:
        out = out + w.bias[None, :, None, None]
    return out


def conv1x1(x: np.ndarray, w: ConvWeights) -> np.ndarray:
    """Per-pixel linear map over channels; spatial dims unchanged."""
    if w.k != 1:
        raise ShapeError(f"conv1x1 requires k=1 weights, got k={w.k}")
    return conv2d(x, w, stride=1, pad=PadSpec.same(0))


def interp_nearest_x2(x: np.ndarray) -> np.ndarray:
    """x2 nearest-neighbour: output (i, j) copies input (i//2, j//2)."""
    check_nchw(x)
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def _bilinear_axis(size: int, align_corners: bool, dtype) -> tuple:
    """Source indices and blend weights for one doubled axis."""
    out = 2 * size
    idx = np.arange(out, dtype=dtype)
    if align_corners:
        src = idx * ((size - 1) / (out - 1)) if out > 1 else np.zeros(1, dtype)
    else:
        src = np.clip((idx + 0.5) / 2.0 - 0.5, 0.0, size - 1)
    lo = np.floor(src).astype(np.int64)
    lo = np.clip(lo, 0, size - 1)
    hi = np.minimum(lo + 1, size - 1)
    t = (src - lo).astype(dtype)
    return lo, hi, t


def interp_bilinear_x2(x: np.ndarray, align_corners: bool = False) -> np.ndarray:
    """x2 bilinear resize; half-pixel centers unless align_corners."""
    check_nchw(x)
    n, c, h, w = x.shape
    y0, y1, ty = _bilinear_axis(h, align_corners, x.dtype)
    x0, x1, tx = _bilinear_axis(w, align_corners, x.dtype)
    rows = x[:, :, :, x0] * (1 - tx) + x[:, :, :, x1] * tx
    out = rows[:, :, y0, :] * (1 - ty)[None, None, :, None] + rows[:, :, y1, :] * ty[
        None, None, :, None
    ]
    return out.astype(x.dtype, copy=False)


def maxpool2x2(x: np.ndarray) -> np.ndarray:
    """Non-overlapping 2x2 max; spatial dims must be even."""
    check_nchw(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
    return x.reshape(n, c, h // 2, 2, w // 2, 2).max(axis=(3, 5))


def softmax_channel(x: np.ndarray) -> np.ndarray:
    """Softmax over the channel axis, max-subtracted for stability."""
    check_nchw(x)
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Elementwise logistic, computed branch-wise so exp never overflows."""
    pos = x >= 0
    out = np.empty_like(x)
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def pixel_shuffle_x2(x: np.ndarray) -> np.ndarray:
    """Depth-to-space: out(co, 2y+r, 2x+s) = in(4*co + 2*r + s, y, x)."""
    check_nchw(x)
    n, c, h, w = x.shape
    if c % 4:
        raise ShapeError(f"pixel_shuffle_x2 needs channels divisible by 4, got {c}")
    return (
        x.reshape(n, c // 4, 2, 2, h, w)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(n, c // 4, 2 * h, 2 * w)
    )


def pixel_unshuffle_x2(x: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`pixel_shuffle_x2`."""
    check_nchw(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"pixel_unshuffle_x2 needs even spatial dims, got {h}x{w}")
    return (
        x.reshape(n, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, 4 * c, h // 2, w // 2)
    )


# ---------------------------------------------------------------------------
# FTEN v1 file format
#
# bytes 0-3   magic "FTEN"
# byte  4     version (= 1)
# byte  5     dtype code (1 = f32, 2 = f64)
# bytes 6-7   reserved, written as zero
# bytes 8-23  four uint32 little-endian dims (n, c, h, w)
# payload     n*c*h*w little-endian reals, row-major n -> c -> h -> w
# ---------------------------------------------------------------------------

_FTEN_HEADER = struct.Struct("<4sBBH4I")


def write_ften(path, x: np.ndarray) -> None:
    check_nchw(x, "FTEN tensor")
    code = _FTEN_DTYPE_CODE[x.dtype]
    header = _FTEN_HEADER.pack(_FTEN_MAGIC, _FTEN_VERSION, code, 0, *x.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(x, dtype=x.dtype.newbyteorder("<")).tobytes())


def ften_bytes(x: np.ndarray) -> bytes:
    check_nchw(x, "FTEN tensor")
    code = _FTEN_DTYPE_CODE[x.dtype]
    header = _FTEN_HEADER.pack(_FTEN_MAGIC, _FTEN_VERSION, code, 0, *x.shape)
    return header + np.ascontiguousarray(x, dtype=x.dtype.newbyteorder("<")).tobytes()


def ften_from_bytes(blob: bytes) -> np.ndarray:
    if len(blob) < _FTEN_HEADER.size:
        raise FormatError("truncated FTEN header")
    magic, version, code, _reserved, n, c, h, w = _FTEN_HEADER.unpack_from(blob)
    if magic != _FTEN_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_FTEN_MAGIC!r}")
    if version != _FTEN_VERSION:
        raise FormatError(f"unsupported FTEN version {version}")
    if code not in _FTEN_CODE_DTYPE:
        raise FormatError(f"unknown dtype code {code}")
    if min(n, c, h, w) < 1:
        raise FormatError(f"non-positive dim in header: {(n, c, h, w)}")
    dtype = _FTEN_CODE_DTYPE[code]
    expected = _FTEN_HEADER.size + n * c * h * w * dtype.itemsize
    if len(blob) != expected:
        raise FormatError(
            f"payload size mismatch: file has {len(blob)} bytes, expected {expected}"
        )
    data = np.frombuffer(blob, dtype=dtype, offset=_FTEN_HEADER.size)
    return data.reshape(n, c, h, w).astype(dtype.newbyteorder("="), copy=True)


def read_ften(path) -> np.ndarray:
    with open(path, "rb") as f:
        return ften_from_bytes(f.read())


def write_pgm(path, x: np.ndarray) -> None:
    """Dump a single-channel map as binary PGM (P5, 8-bit, min-max scaled)."""
    check_nchw(x, "PGM tensor")
    if x.shape[0] != 1 or x.shape[1] != 1:
        raise ShapeError(f"PGM export needs a 1x1xHxW tensor, got {x.shape}")
    plane = x[0, 0].astype(np.float64)
    lo, hi = plane.min(), plane.max()
    if hi > lo:
        scaled = (plane - lo) / (hi - lo)
    else:
        scaled = np.zeros_like(plane)
    pixels = np.round(scaled * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{plane.shape[1]} {plane.shape[0]}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())
