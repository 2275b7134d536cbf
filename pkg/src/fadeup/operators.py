"""Complete x2 upsampling operators behind a uniform interface.

Variants cover the gated encoder-decoder operator (``fade``), its
depthwise ``fade_lite`` version, the ungated ``fade_g1`` mode, the
decoder-only ``carafe`` baseline, plain ``nearest``/``bilinear``, and
the six ablation variants b1-b6.  ``b6_full`` is an alias of ``fade``
and ``b2_decoder_only`` of ``carafe``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import assemble, gate, kernelgen
from .autograd import Node, value_of
from .rng import ShuffledLcg
from .tensor import FormatError, ShapeError, check_nchw

VARIANTS = (
    "fade",
    "fade_lite",
    "fade_g1",
    "carafe",
    "nearest",
    "bilinear",
    "b1_encoder_only",
    "b2_decoder_only",
    "b3_naive",
    "b4_semishift_nogate",
    "b5_semishift_skip",
    "b6_full",
)

WEIGHTLESS_VARIANTS = ("nearest", "bilinear")

# variants whose forward does not take an encoder guide
DECODER_ONLY_VARIANTS = ("nearest", "bilinear", "carafe", "b2_decoder_only")

_GATE_MODES = ("learned", "one", "none")

_DEFAULT_GATE = {
    "fade": "learned",
    "fade_lite": "learned",
    "b6_full": "learned",
    "fade_g1": "one",
    "b5_semishift_skip": "one",
}

# kernel source per variant: semishift (selectable form), lite, carafe,
# encoder_only, naive
_KERNEL_SOURCE = {
    "fade": "semishift",
    "fade_g1": "semishift",
    "b4_semishift_nogate": "semishift",
    "b5_semishift_skip": "semishift",
    "b6_full": "semishift",
    "fade_lite": "lite",
    "carafe": "carafe",
    "b2_decoder_only": "carafe",
    "b1_encoder_only": "encoder_only",
    "b3_naive": "naive",
}

_DTYPES = {"f32": np.float32, "f64": np.float64}


@dataclass
class OperatorConfig:
    variant: str
    channels: int = 0
    compressed: int = 64
    kernel_size: int = 5
    window: int = 3
    seed: int = 0
    precision: str = "f32"
    gate_mode: str | None = None  # None -> variant default
    encoder_channels: int | None = None  # adds a 1x1 alignment adapter

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ShapeError(f"unknown variant {self.variant!r}; pick one of {VARIANTS}")
        if self.precision not in _DTYPES:
            raise ShapeError(f"precision must be f32 or f64, got {self.precision!r}")
        if self.window != 3:
            raise ShapeError("generator window is fixed at 3")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ShapeError(f"kernel size must be odd, got {self.kernel_size}")
        if self.variant not in WEIGHTLESS_VARIANTS:
            if self.channels < 1:
                raise ShapeError(f"variant {self.variant!r} needs channels >= 1")
            if self.compressed < 1:
                raise ShapeError("compressed channel count must be >= 1")
        if self.gate_mode is not None and self.gate_mode not in _GATE_MODES:
            raise ShapeError(f"gate_mode must be one of {_GATE_MODES}")
        if self.gate_mode is not None and self.variant in WEIGHTLESS_VARIANTS:
            raise ShapeError(f"variant {self.variant!r} carries no gate")
        if self.encoder_channels is not None and self.variant in DECODER_ONLY_VARIANTS:
            raise ShapeError(f"variant {self.variant!r} takes no encoder guide")

    @property
    def dtype(self):
        return _DTYPES[self.precision]


def effective_gate_mode(cfg: OperatorConfig) -> str:
    if cfg.gate_mode is not None:
        return cfg.gate_mode
    return _DEFAULT_GATE.get(cfg.variant, "none")


@dataclass
class _Slot:
    """One named parameter tensor: owner object, attribute, and bucket.

    bucket is "counted" for tensors the standard parameter formulas count,
    "bias" for the bias extras they omit, "adapter" for the optional
    channel-alignment adapter.
    """

    name: str
    owner: object
    attr: str
    bucket: str


class UpsampleOperator:
    """Config plus owned parameters; forward is pure given the parameters."""

    def __init__(self, config: OperatorConfig):
        self.config = config
        self.impl = "l2h"  # default semi-shift form; "direct" is the test oracle
        self._slots: list[_Slot] = []
        self._build()

    # -- construction -------------------------------------------------------

    def _build(self):
        cfg = self.config
        dtype = cfg.dtype
        rng = ShuffledLcg(cfg.seed)
        self.kernel_params = None
        self.gate_params = None
        self.adapter = None
        source = _KERNEL_SOURCE.get(cfg.variant)
        if source == "semishift":
            p = kernelgen.make_semishift_params(
                rng, cfg.channels, cfg.compressed, cfg.kernel_size, dtype
            )
            self.kernel_params = p
            self._slots += [
                _Slot("compressor_en.weights", p.compressor_en, "weights", "counted"),
                _Slot("compressor_de.weights", p.compressor_de, "weights", "counted"),
                _Slot("compressor_de.bias", p.compressor_de, "bias", "bias"),
                _Slot("generator.weights", p.generator, "weights", "counted"),
                _Slot("generator.bias", p.generator, "bias", "bias"),
            ]
        elif source == "lite":
            p = kernelgen.make_semishift_lite_params(
                rng, cfg.channels, cfg.kernel_size, dtype
            )
            self.kernel_params = p
            self._slots += [
                _Slot("compressor_en.weights", p.compressor_en, "weights", "counted"),
                _Slot("compressor_de.weights", p.compressor_de, "weights", "counted"),
                _Slot("compressor_de.bias", p.compressor_de, "bias", "bias"),
                _Slot("generator.weights", p.generator, "weights", "counted"),
                _Slot("generator.bias", p.generator, "bias", "bias"),
            ]
        elif source == "carafe":
            p = kernelgen.make_carafe_params(
                rng, cfg.channels, cfg.compressed, cfg.kernel_size, dtype
            )
            self.kernel_params = p
            self._slots += [
                _Slot("compressor.weights", p.compressor, "weights", "counted"),
                _Slot("content_encoder.weights", p.content_encoder, "weights", "counted"),
                _Slot("content_encoder.bias", p.content_encoder, "bias", "bias"),
            ]
        elif source == "encoder_only":
            p = kernelgen.make_encoder_only_params(
                rng, cfg.channels, cfg.compressed, cfg.kernel_size, dtype
            )
            self.kernel_params = p
            self._slots += [
                _Slot("compressor.weights", p.compressor, "weights", "counted"),
                _Slot("generator.weights", p.generator, "weights", "counted"),
                _Slot("generator.bias", p.generator, "bias", "bias"),
            ]
        elif source == "naive":
            p = kernelgen.make_naive_params(
                rng, cfg.channels, cfg.compressed, cfg.kernel_size, dtype
            )
            self.kernel_params = p
            self._slots += [
                _Slot("compressor.weights", p.compressor, "weights", "counted"),
                _Slot("compressor.bias", p.compressor, "bias", "bias"),
                _Slot("generator.weights", p.generator, "weights", "counted"),
                _Slot("generator.bias", p.generator, "bias", "bias"),
            ]
        if effective_gate_mode(cfg) == "learned":
            gp = gate.make_gate_params(rng, cfg.channels, dtype)
            self.gate_params = gp
            self._slots += [
                _Slot("gate.weights", gp.projector, "weights", "counted"),
                _Slot("gate.bias", gp.projector, "bias", "bias"),
            ]
        if cfg.encoder_channels is not None and cfg.encoder_channels != cfg.channels:
            self.adapter = kernelgen.make_channel_adapter(
                rng, cfg.encoder_channels, cfg.channels, dtype
            )
            self._slots += [
                _Slot("adapter.weights", self.adapter, "weights", "adapter"),
                _Slot("adapter.bias", self.adapter, "bias", "adapter"),
            ]

    # -- parameter access ----------------------------------------------------

    def named_parameters(self):
        return [(s.name, getattr(s.owner, s.attr)) for s in self._slots]

    def parameter_counts(self) -> dict:
        """Element counts per bucket plus a per-tensor breakdown."""
        out = {"counted": 0, "bias": 0, "adapter": 0, "tensors": {}}
        for s in self._slots:
            size = int(np.prod(value_of(getattr(s.owner, s.attr)).shape))
            out[s.bucket] += size
            out["tensors"][s.name] = (s.bucket, size)
        return out

    def wrap_parameters(self) -> list:
        """Swap every parameter array for an autograd Node, in place."""
        nodes = []
        for s in self._slots:
            cur = getattr(s.owner, s.attr)
            if not isinstance(cur, Node):
                setattr(s.owner, s.attr, Node(cur, name=s.name))
            nodes.append(getattr(s.owner, s.attr))
        return nodes

    def install_parameters(self, values) -> None:
        """Install arrays or Nodes as the parameters, in slot order."""
        values = list(values)
        if len(values) != len(self._slots):
            raise ShapeError(
                f"expected {len(self._slots)} parameter tensors, got {len(values)}"
            )
        for s, v in zip(self._slots, values):
            if value_of(v).shape != value_of(getattr(s.owner, s.attr)).shape:
                raise ShapeError(f"shape mismatch for parameter {s.name}")
            setattr(s.owner, s.attr, v)

    def state_dict(self) -> dict:
        return {name: np.array(value_of(v)) for name, v in self.named_parameters()}

    def load_state(self, state: dict) -> None:
        names = [s.name for s in self._slots]
        missing = [n for n in names if n not in state]
        extra = [n for n in state if n not in names]
        if missing or extra:
            raise FormatError(
                f"state mismatch: missing {missing or 'none'}, unexpected {extra or 'none'}"
            )
        for s in self._slots:
            cur = value_of(getattr(s.owner, s.attr))
            new = np.asarray(state[s.name])
            if new.shape != cur.shape:
                raise ShapeError(
                    f"checkpoint tensor {s.name} has shape {new.shape}, expected {cur.shape}"
                )
            setattr(s.owner, s.attr, new.astype(cur.dtype, copy=True))

    # -- forward -------------------------------------------------------------

    def _check_inputs(self, x_en, x_de):
        cfg = self.config
        check_nchw(value_of(x_de), "decoder feature")
        if value_of(x_de).dtype != cfg.dtype:
            raise ShapeError(
                f"decoder dtype {value_of(x_de).dtype} does not match operator "
                f"precision {cfg.precision}"
            )
        needs_encoder = cfg.variant not in DECODER_ONLY_VARIANTS
        if needs_encoder:
            if x_en is None:
                raise ShapeError(
                    f"variant {cfg.variant!r} requires the high-res encoder guide"
                )
            check_nchw(value_of(x_en), "encoder feature")
            kernelgen.check_x2_pair(x_en, x_de)
            expect_c = (
                cfg.encoder_channels if cfg.encoder_channels is not None else cfg.channels
            )
            if value_of(x_en).shape[1] != expect_c:
                raise ShapeError(
                    f"encoder has {value_of(x_en).shape[1]} channels, expected {expect_c}"
                )
        if cfg.variant not in WEIGHTLESS_VARIANTS:
            if value_of(x_de).shape[1] != cfg.channels:
                raise ShapeError(
                    f"decoder has {value_of(x_de).shape[1]} channels, expected {cfg.channels}"
                )
        return needs_encoder

    def forward_parts(self, x_en, x_de, impl: str | None = None):
        """Run the pipeline and return (output, intermediates dict)."""
        cfg = self.config
        needs_encoder = self._check_inputs(x_en, x_de)
        if cfg.variant == "nearest":
            return assemble.upsample_nearest(x_de), {}
        if cfg.variant == "bilinear":
            return assemble.upsample_bilinear(x_de), {}
        guide = x_en
        if needs_encoder and self.adapter is not None:
            guide = kernelgen.apply_channel_adapter(x_en, self.adapter)

        source = _KERNEL_SOURCE[cfg.variant]
        if source == "semishift":
            form = kernelgen.SEMISHIFT_FORMS[impl or self.impl]
            kernels = form(guide, x_de, self.kernel_params)
        elif source == "lite":
            kernels = kernelgen.semishift_lite(guide, x_de, self.kernel_params)
        elif source == "carafe":
            kernels = kernelgen.carafe_kernelgen(x_de, self.kernel_params)
        elif source == "encoder_only":
            kernels = kernelgen.encoder_only_kernelgen(guide, self.kernel_params)
        else:  # naive
            kernels = kernelgen.naive_kernelgen(guide, x_de, self.kernel_params)

        normalized = kernelgen.normalize_kernels(kernels)
        upsampled = assemble.reassemble(x_de, normalized)
        parts = {"kernels": normalized}

        mode = effective_gate_mode(cfg)
        if mode == "learned":
            g = gate.generate_gate(x_de, self.gate_params)
            out = gate.fuse_gated(guide, upsampled, g)
            parts["gate"] = g
            parts["upsampled"] = upsampled
        elif mode == "one":
            g = gate.fixed_gate(guide, 1.0)
            out = gate.fuse_gated(guide, upsampled, g)
            parts["gate"] = g
            parts["upsampled"] = upsampled
        else:
            out = upsampled
        return out, parts

    def forward(self, x_en, x_de, impl: str | None = None):
        out, _ = self.forward_parts(x_en, x_de, impl)
        return out


def build_operator(cfg: OperatorConfig) -> UpsampleOperator:
    return UpsampleOperator(cfg)


def compose_iterative(ops, x_en_list, x_de, impl: str | None = None):
    """Chain x2 operators; stage i's guide must sit at twice the running size."""
    ops = list(ops)
    guides = list(x_en_list)
    if len(guides) != len(ops):
        raise ShapeError(f"{len(ops)} stages need {len(ops)} guides, got {len(guides)}")
    x = x_de
    for i, (op, guide) in enumerate(zip(ops, guides)):
        h, w = value_of(x).shape[2], value_of(x).shape[3]
        if guide is not None:
            gh, gw = value_of(guide).shape[2], value_of(guide).shape[3]
            if (gh, gw) != (2 * h, 2 * w):
                raise ShapeError(
                    f"stage {i}: guide is {gh}x{gw}, expected {2 * h}x{2 * w}"
                )
        x = op.forward(guide, x, impl=impl)
    return x


# ---------------------------------------------------------------------------
# checkpoint container: little-endian manifest header, then FTEN blobs
#
# bytes 0-3  magic "FCKP"; byte 4 version (=1); bytes 5-7 reserved zero
# bytes 8-11 uint32 entry count
# entries:   uint16 name length, ASCII name, four uint32 dims of the
#            rank-4 FTEN blob, uint64 byte offset of the blob from the
#            start of the file
# blobs:     FTEN v1 images (rank-4; rank-1 biases are stored as
#            (len, 1, 1, 1) and depthwise (c, k, k) as (c, 1, k, k))
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"FCKP"
_CKPT_VERSION = 1
_CKPT_HEAD = struct.Struct("<4sBBHI")
_CKPT_ENTRY_DIMS = struct.Struct("<4IQ")

from . import tensor as T  # noqa: E402  (file helpers only)


def _as_rank4(a: np.ndarray) -> np.ndarray:
    if a.ndim == 4:
        return a
    if a.ndim == 3:
        return a[:, None]
    if a.ndim == 1:
        return a[:, None, None, None]
    raise ShapeError(f"cannot store rank-{a.ndim} tensor in a checkpoint")


def save_checkpoint(op: UpsampleOperator, path) -> None:
    entries = [(name, _as_rank4(np.array(value_of(v)))) for name, v in op.named_parameters()]
    blobs = [T.ften_bytes(a) for _, a in entries]
    head_size = _CKPT_HEAD.size
    manifest_size = sum(
        2 + len(name.encode("ascii")) + _CKPT_ENTRY_DIMS.size for name, _ in entries
    )
    offset = head_size + manifest_size
    with open(path, "wb") as f:
        f.write(_CKPT_HEAD.pack(_CKPT_MAGIC, _CKPT_VERSION, 0, 0, len(entries)))
        for (name, a), blob in zip(entries, blobs):
            nb = name.encode("ascii")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(_CKPT_ENTRY_DIMS.pack(*a.shape, offset))
            offset += len(blob)
        for blob in blobs:
            f.write(blob)


def read_checkpoint(path) -> dict:
    """Read a checkpoint into an ordered name -> rank-4 array mapping."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _CKPT_HEAD.size:
        raise FormatError("truncated checkpoint header")
    magic, version, _, _, count = _CKPT_HEAD.unpack_from(raw)
    if magic != _CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    if version != _CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    pos = _CKPT_HEAD.size
    manifest = []
    for _ in range(count):
        if pos + 2 > len(raw):
            raise FormatError("truncated checkpoint manifest")
        (nlen,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos : pos + nlen].decode("ascii")
        pos += nlen
        if pos + _CKPT_ENTRY_DIMS.size > len(raw):
            raise FormatError("truncated checkpoint manifest")
        *dims, offset = _CKPT_ENTRY_DIMS.unpack_from(raw, pos)
        pos += _CKPT_ENTRY_DIMS.size
        manifest.append((name, tuple(dims), offset))
    out = {}
    ends = [offset for _, _, offset in manifest[1:]] + [len(raw)]
    for (name, dims, offset), end in zip(manifest, ends):
        arr = T.ften_from_bytes(raw[offset:end])
        if arr.shape != dims:
            raise FormatError(f"checkpoint blob {name} shape {arr.shape} != manifest {dims}")
        out[name] = arr
    return out


def load_checkpoint(op: UpsampleOperator, path) -> None:
    """Load weights saved by :func:`save_checkpoint` into ``op`` (strict)."""
    stored = read_checkpoint(path)
    state = {}
    for name, v in op.named_parameters():
        if name not in stored:
            raise FormatError(f"checkpoint is missing tensor {name}")
        state[name] = stored[name].reshape(value_of(v).shape)
    unexpected = [n for n in stored if n not in state]
    if unexpected:
        raise FormatError(f"checkpoint holds unexpected tensors: {unexpected}")
    op.load_state(state)
