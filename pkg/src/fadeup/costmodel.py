"""Closed-form FLOPs and parameter counts for the upsampling operators.

Per-position multiply-accumulate (MAC) polynomials are tabulated per
operator and stage; total FLOPs = 2 * MACs * H * W, where H, W are the
DECODER feature dims and the factor 2 converts MACs to FLOPs (it is the
unique integer factor that reproduces the published GFLOPs figures from
the same polynomials).  Parameter formulas count weights only; the bias
terms this implementation carries on top are reported separately as
"extras" so the headline numbers stay formula-exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import value_of
from .operators import OperatorConfig, UpsampleOperator, effective_gate_mode

MAC_TO_FLOP = 2

ROWS = ("carafe", "indexnet_hin", "indexnet_m2o", "a2u", "sapa", "fade", "fade_lite")

GATED_ROWS = ("fade", "fade_lite")


class UnknownRowError(ValueError):
    """Cost query names an operator row that is not tabulated."""


class CostMismatchError(ValueError):
    """Live parameter count disagrees with the closed-form value."""


@dataclass(frozen=True)
class CostQuery:
    row: str
    channels: int  # C, of both encoder and decoder features
    compressed: int = 64  # d; ignored by rows without a compressor
    kernel_size: int = 5  # K
    height: int = 1  # H, decoder resolution
    width: int = 1  # W
    gate: bool = True  # only meaningful for gated rows

    def __post_init__(self):
        if self.row not in ROWS:
            raise UnknownRowError(f"unknown row {self.row!r}; known rows: {ROWS}")
        for name in ("channels", "compressed", "kernel_size", "height", "width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")


@dataclass
class CostReport:
    row: str
    gate: bool
    stage_macs: dict  # per-stage MACs per decoder position
    macs_total: int
    height: int
    width: int
    flops: int
    params_counted: int
    extras: dict = field(default_factory=dict)  # bias terms outside the formulas

    @property
    def gflops(self) -> float:
        return self.flops / 1e9

    @property
    def extras_total(self) -> int:
        return sum(self.extras.values())


def _stages(q: CostQuery):
    """(stage -> (MACs, params)) plus the bias extras for rows built here."""
    C, d, K = q.channels, q.compressed, q.kernel_size
    K2 = K * K
    if q.row == "carafe":
        stages = {
            "kernel generation": (C * d + 36 * K2 * d, C * d + 36 * K2 * d),
            "feature assembly": (4 * K2 * C, 0),
        }
        extras = {"content_encoder.bias": 4 * K2}
    elif q.row == "indexnet_hin":
        stages = {
            "kernel generation": (32 * C * C + 8 * C, 32 * C * C + 8 * C),
            "feature assembly": (4 * C, 0),
        }
        extras = {}
    elif q.row == "indexnet_m2o":
        stages = {
            "kernel generation": (68 * C * C, 68 * C * C),
            "feature assembly": (4 * C, 0),
        }
        extras = {}
    elif q.row == "a2u":
        stages = {
            "kernel generation": (73 * C + 4 * K2, 4 * K2 * C + 2 * C),
            "feature assembly": (4 * K2 * C, 0),
        }
        extras = {}
    elif q.row == "sapa":
        stages = {
            "kernel generation": (5 * C * d + 4 * K2 * d, 2 * C * d),
            "feature assembly": (4 * K2 * C, 0),
        }
        extras = {}
    elif q.row == "fade":
        stages = {
            "kernel generation": (5 * C * d + 45 * K2 * d, 2 * C * d + 9 * K2 * d),
            "feature assembly": (4 * K2 * C, 0),
        }
        extras = {"compressor_de.bias": d, "generator.bias": K2}
        if q.gate:
            stages["gated fusion"] = (9 * C, C)
            extras["gate.bias"] = 1
    elif q.row == "fade_lite":
        stages = {
            "kernel generation": (5 * C * K2 + 45 * K2, 2 * C * K2 + 9 * K2),
            "feature assembly": (4 * K2 * C, 0),
        }
        extras = {"compressor_de.bias": K2, "generator.bias": K2}
        if q.gate:
            stages["gated fusion"] = (9 * C, C)
            extras["gate.bias"] = 1
    else:  # pragma: no cover - guarded by CostQuery
        raise UnknownRowError(q.row)
    return stages, extras


def flops_of(q: CostQuery) -> CostReport:
    stages, extras = _stages(q)
    stage_macs = {name: macs for name, (macs, _) in stages.items()}
    macs_total = sum(stage_macs.values())
    params = sum(p for _, p in stages.values())
    return CostReport(
        row=q.row,
        gate=q.gate if q.row in GATED_ROWS else False,
        stage_macs=stage_macs,
        macs_total=macs_total,
        height=q.height,
        width=q.width,
        flops=MAC_TO_FLOP * macs_total * q.height * q.width,
        params_counted=params,
        extras=extras,
    )


def _variant_counted(cfg: OperatorConfig) -> int:
    C, d, K = cfg.channels, cfg.compressed, cfg.kernel_size
    K2 = K * K
    gated = effective_gate_mode(cfg) == "learned"
    base = {
        "fade": 2 * C * d + 9 * K2 * d,
        "fade_g1": 2 * C * d + 9 * K2 * d,
        "b4_semishift_nogate": 2 * C * d + 9 * K2 * d,
        "b5_semishift_skip": 2 * C * d + 9 * K2 * d,
        "b6_full": 2 * C * d + 9 * K2 * d,
        "fade_lite": 2 * C * K2 + 9 * K2,
        "carafe": C * d + 36 * K2 * d,
        "b2_decoder_only": C * d + 36 * K2 * d,
        "b1_encoder_only": C * d + 9 * K2 * d,
        "b3_naive": 2 * C * d + 9 * K2 * d,
        "nearest": 0,
        "bilinear": 0,
    }[cfg.variant]
    return base + (C if gated else 0)


def params_of(q) -> int:
    """Counted parameters for a Table row query or a built operator config."""
    if isinstance(q, OperatorConfig):
        return _variant_counted(q)
    if isinstance(q, CostQuery):
        stages, _ = _stages(q)
        return sum(p for _, p in stages.values())
    raise TypeError("params_of takes a CostQuery or an OperatorConfig")


@dataclass
class ReconcileReport:
    variant: str
    counted: int
    expected: int
    extras: dict  # tensor name -> element count (biases)
    adapter: dict  # tensor name -> element count (alignment adapter)

    @property
    def ok(self) -> bool:
        return self.counted == self.expected


def reconcile(op: UpsampleOperator) -> ReconcileReport:
    """Compare a built operator's live weight counts with the formulas."""
    counts = op.parameter_counts()
    expected = params_of(op.config)
    extras = {n: s for n, (b, s) in counts["tensors"].items() if b == "bias"}
    adapter = {n: s for n, (b, s) in counts["tensors"].items() if b == "adapter"}
    report = ReconcileReport(
        variant=op.config.variant,
        counted=counts["counted"],
        expected=expected,
        extras=extras,
        adapter=adapter,
    )
    if not report.ok:
        lines = [
            f"parameter mismatch for {op.config.variant}: live counted "
            f"{report.counted} != formula {report.expected}"
        ]
        for name, v in op.named_parameters():
            bucket, size = counts["tensors"][name]
            shape = tuple(value_of(v).shape)
            lines.append(f"  {name}: shape {shape} size {size} bucket {bucket}")
        raise CostMismatchError("\n".join(lines))
    return report


def format_gflops(flops: int) -> str:
    """Three significant figures, e.g. 2498363392 -> '2.50'."""
    return f"{flops / 1e9:#.3g}"
