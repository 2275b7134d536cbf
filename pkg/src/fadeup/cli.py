"""Command-line surface: run operators on tensor files, verify the
property suites, compute cost tables, train toy tasks, dump figures.

Option precedence: command-line flags > ``FADEUP_*`` environment
variables > ``--config`` file (key=value lines, ``#`` comments) >
built-in defaults.  Every command writes a JSON run manifest beside its
outputs; identical manifests reproduce byte-identical output files.

Exit codes: 0 success, 1 property-suite failure, 2 I/O or file-format
error, 3 shape or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import __version__, assemble, costmodel, gate, kernelgen
from . import autograd as ag
from . import operators as ops
from . import tensor as T
from . import toy
from .rng import ShuffledLcg
from .tensor import FormatError, ShapeError

ENV_PREFIX = "FADEUP_"


class CliConfigError(ValueError):
    """Bad flags or config values (exit code 3)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliConfigError(message)


def _parse_bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise CliConfigError(f"not a boolean: {s!r}")


def _read_config_file(path) -> dict:
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise CliConfigError(f"{path}:{lineno}: expected key=value")
                key, value = line.split("=", 1)
                values[key.strip()] = value.strip()
    except OSError as e:
        raise FormatError(f"cannot read config file {path}: {e}") from e
    return values


def _resolve(args, name: str, default, convert):
    """flags > environment > config file > default."""
    flag = getattr(args, name, None)
    if flag is not None:
        return flag
    env = os.environ.get(ENV_PREFIX + name.upper())
    if env is not None:
        return convert(env)
    if getattr(args, "_config_values", None) and name in args._config_values:
        return convert(args._config_values[name])
    return default


def _write_manifest(path, command: str, config: dict, inputs, outputs) -> None:
    manifest = {
        "command": command,
        "config": {k: v for k, v in sorted(config.items())},
        "seed": config.get("seed"),
        "inputs": list(inputs),
        "outputs": list(outputs),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "version": __version__,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# upsample
# ---------------------------------------------------------------------------


def _cmd_upsample(args) -> int:
    variant = _resolve(args, "variant", "fade", str)
    seed = _resolve(args, "seed", 0, int)
    impl = _resolve(args, "impl", "l2h", str)
    compressed = _resolve(args, "d", 64, int)
    kernel_size = _resolve(args, "K", 5, int)
    precision = _resolve(args, "precision", None, str)
    if impl not in kernelgen.SEMISHIFT_FORMS:
        raise CliConfigError(f"--impl must be one of {tuple(kernelgen.SEMISHIFT_FORMS)}")

    x_de = T.read_ften(args.decoder)
    x_en = T.read_ften(args.encoder) if args.encoder else None
    if precision is None:
        precision = "f64" if x_de.dtype == np.float64 else "f32"

    cfg = ops.OperatorConfig(
        variant,
        channels=x_de.shape[1],
        compressed=compressed,
        kernel_size=kernel_size,
        seed=seed,
        precision=precision,
        gate_mode=args.gate,
    )
    op = ops.build_operator(cfg)
    if args.weights:
        ops.load_checkpoint(op, args.weights)
    if variant not in ops.DECODER_ONLY_VARIANTS and x_en is None:
        raise ShapeError(f"variant {variant!r} needs --encoder (the x2 guide feature)")
    out = ag.value_of(op.forward(x_en, x_de, impl=impl))
    T.write_ften(args.out, out)
    config = {
        "variant": variant,
        "seed": seed,
        "impl": impl,
        "d": compressed,
        "K": kernel_size,
        "precision": precision,
        "gate": args.gate,
    }
    inputs = [args.decoder] + ([args.encoder] if args.encoder else [])
    if args.weights:
        inputs.append(args.weights)
    _write_manifest(str(args.out) + ".manifest.json", "upsample", config, inputs, [args.out])
    return 0


# ---------------------------------------------------------------------------
# verify suites
# ---------------------------------------------------------------------------


def _rel_dev(a: np.ndarray, b: np.ndarray) -> float:
    return float(
        np.max(np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b))))
    )


def _suite_equivalence(seeds: int):
    lines = []
    worst = {"f64": 0.0, "f32": 0.0}
    for case in range(seeds):
        rng = np.random.default_rng(case)
        c = int(rng.integers(1, 9))
        h = int(rng.integers(1, 9))
        w = int(rng.integers(1, 9))
        n = int(rng.integers(1, 3))
        d = int(rng.integers(1, 9))
        for prec, tol_key in ((np.float64, "f64"), (np.float32, "f32")):
            p = kernelgen.make_semishift_params(ShuffledLcg(case), c, d, 5, prec)
            x_en = rng.normal(size=(n, c, 2 * h, 2 * w)).astype(prec)
            x_de = rng.normal(size=(n, c, h, w)).astype(prec)
            ref = kernelgen.semishift_direct(x_en, x_de, p).data
            for form in (kernelgen.semishift_h2l, kernelgen.semishift_l2h):
                dev = _rel_dev(ref, ag.value_of(form(x_en, x_de, p).data))
                worst[tol_key] = max(worst[tol_key], dev)
    ok = worst["f64"] <= 1e-10 and worst["f32"] <= 1e-5
    lines.append(
        f"semi-shift equivalence over {seeds} cases: worst rel dev "
        f"f64={worst['f64']:.3e} (tol 1e-10), f32={worst['f32']:.3e} (tol 1e-5)"
    )
    return ok, lines


def _gradcheck_battery(seed: int):
    """(name, max-rel-error) for every differentiable op at small shapes."""
    rng = np.random.default_rng(seed)
    results = []

    def check(name, fn, arrays):
        results.append((name, ag.gradcheck(fn, arrays)))

    x = rng.normal(size=(1, 2, 4, 4))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    check("conv2d/s1", lambda X, W, B: ag.sum_all(ag.conv2d(X, W, B)), [x, w, b])
    check(
        "conv2d/s2-asym",
        lambda X, W, B: ag.sum_all(ag.conv2d(X, W, B, stride=2, pad=T.PadSpec(1, 0, 1, 0))),
        [x, w, b],
    )
    w1 = rng.normal(size=(3, 2, 1, 1))
    check("conv1x1", lambda X, W: ag.sum_all(ag.conv1x1(X, W)), [x, w1])
    wd = rng.normal(size=(2, 3, 3))
    check(
        "conv2d_depthwise",
        lambda X, W: ag.sum_all(ag.conv2d_depthwise(X, W)),
        [x, wd],
    )
    check("interp_nearest_x2", lambda X: ag.sum_all(ag.interp_nearest_x2(X)), [x])
    check(
        "interp_bilinear_x2/half",
        lambda X: ag.sum_all(ag.interp_bilinear_x2(X, False)),
        [x],
    )
    check(
        "interp_bilinear_x2/corners",
        lambda X: ag.sum_all(ag.interp_bilinear_x2(X, True)),
        [x],
    )
    # strict maxima: a fixed ramp breaks ties so the subgradient is unique
    ramp = np.arange(32, dtype=np.float64).reshape(1, 2, 4, 4)
    xm = ramp + 0.25 * rng.normal(size=(1, 2, 4, 4)).round(1)
    check("maxpool2x2", lambda X: ag.sum_all(ag.maxpool2x2(X)), [xm])
    probe = rng.normal(size=(1, 4, 2, 2))
    check(
        "softmax_channel",
        lambda X: ag.sum_all(ag.mul(ag.softmax_channel(X), probe)),
        [rng.normal(size=(1, 4, 2, 2))],
    )
    check("sigmoid", lambda X: ag.sum_all(ag.sigmoid(X)), [x])
    shuffle_probe = rng.normal(size=(1, 1, 4, 4))
    check(
        "pixel_shuffle_x2",
        lambda X: ag.sum_all(ag.mul(ag.pixel_shuffle_x2(X), shuffle_probe)),
        [rng.normal(size=(1, 4, 2, 2))],
    )
    xd = rng.normal(size=(1, 2, 2, 3))
    kraw = rng.normal(size=(1, 9, 4, 6))
    check(
        "reassemble(+softmax)",
        lambda X, K: ag.sum_all(ag.reassemble(X, ag.softmax_channel(K), 3)),
        [xd, kraw],
    )
    fe = rng.normal(size=(1, 2, 4, 4))
    fu = rng.normal(size=(1, 2, 4, 4))
    gr = rng.normal(size=(1, 1, 4, 4))
    check(
        "fuse_gated",
        lambda A, B, G: ag.sum_all(ag.blend(A, B, ag.sigmoid(G))),
        [fe, fu, gr],
    )
    # semi-shift composites and full operator forwards
    x_en = rng.normal(size=(1, 2, 4, 4))
    x_de = rng.normal(size=(1, 2, 2, 2))
    p = kernelgen.make_semishift_params(ShuffledLcg(seed), 2, 3, 3, np.float64)
    flat = [
        p.compressor_en.weights,
        p.compressor_de.weights,
        p.compressor_de.bias,
        p.generator.weights,
        p.generator.bias,
    ]

    def rebuild(we, wde, bde, wg, bg):
        return kernelgen.SemiShiftParams(
            T.ConvWeights(we), T.ConvWeights(wde, bde), T.ConvWeights(wg, bg)
        )

    check(
        "semishift_h2l",
        lambda XE, XD, *ps: ag.sum_all(kernelgen.semishift_h2l(XE, XD, rebuild(*ps)).data),
        [x_en, x_de] + flat,
    )
    check(
        "semishift_l2h",
        lambda XE, XD, *ps: ag.sum_all(kernelgen.semishift_l2h(XE, XD, rebuild(*ps)).data),
        [x_en, x_de] + flat,
    )
    for variant in ("fade", "fade_lite"):
        op = ops.build_operator(
            ops.OperatorConfig(
                variant, channels=2, compressed=3, kernel_size=3, seed=seed, precision="f64"
            )
        )
        arrays = [np.array(v) for _, v in op.named_parameters()]

        def fwd(XE, XD, *params, _op=op):
            _op.install_parameters(list(params))
            return ag.sum_all(_op.forward(XE, XD))

        check(f"{variant} forward", fwd, [x_en, x_de] + arrays)
    return results


def _suite_gradcheck(seeds: int):
    lines = []
    worst = 0.0
    worst_name = ""
    for seed in range(seeds):
        for name, err in _gradcheck_battery(seed):
            if err > worst:
                worst, worst_name = err, f"{name} (seed {seed})"
    ok = worst < 1e-6
    lines.append(
        f"gradcheck over {seeds} seeds: worst rel err {worst:.3e} at {worst_name} (tol 1e-6)"
    )
    return ok, lines


def _suite_identities(_seeds: int):
    lines = []
    failures = []
    rng = np.random.default_rng(0)

    def expect(cond, label):
        lines.append(("PASS " if cond else "FAIL ") + label)
        if not cond:
            failures.append(label)

    x = rng.normal(size=(2, 3, 4, 5))
    k = 5
    onehot = np.zeros((2, k * k, 8, 10))
    onehot[:, (k * k - 1) // 2] = 1.0
    kmap = kernelgen.KernelMap(onehot, k, normalized=True)
    out = assemble.reassemble(x, kmap)
    expect(
        np.array_equal(out, T.interp_nearest_x2(x)),
        "center-one-hot reassembly == nearest upsampling (bit-exact)",
    )
    f_en = rng.normal(size=(1, 3, 4, 4))
    f_up = rng.normal(size=(1, 3, 4, 4))
    ones = np.ones((1, 1, 4, 4))
    expect(
        np.array_equal(gate.fuse_gated(f_en, f_up, ones), f_en),
        "G=1 fusion == encoder feature (bit-exact)",
    )
    expect(
        np.array_equal(gate.fuse_gated(f_en, f_up, np.zeros((1, 1, 4, 4))), f_up),
        "G=0 fusion == upsampled feature (bit-exact)",
    )
    raw = kernelgen.KernelMap(rng.normal(size=(1, 25, 4, 4)), 5)
    norm = kernelgen.normalize_kernels(raw)
    sums = ag.value_of(norm.data).sum(axis=1)
    expect(
        float(np.abs(sums - 1.0).max()) < 1e-6, "normalized kernels sum to 1 (1e-6)"
    )
    z = rng.normal(size=(1, 6, 3, 3))
    shift = z + rng.normal(size=(1, 1, 3, 3))
    expect(
        float(np.abs(T.softmax_channel(z) - T.softmax_channel(shift)).max()) < 1e-12,
        "softmax is invariant to per-position channel shifts",
    )
    y = rng.normal(size=(1, 2, 3, 3))
    expect(
        np.array_equal(T.interp_nearest_x2(y)[:, :, ::2, ::2], y),
        "NN x2 then stride-2 subsampling is the identity (bit-exact)",
    )
    s = rng.normal(size=(1, 8, 3, 3))
    expect(
        np.array_equal(T.pixel_unshuffle_x2(T.pixel_shuffle_x2(s)), s),
        "pixel shuffle round trip (bit-exact)",
    )
    return not failures, lines


_GOLDEN = (
    # row, gate, gflops string, exact flops, exact params
    ("carafe", True, "2.50", 2498363392, 73984),
    ("fade", True, "4.56", 4561600512, 47424),
    ("fade_lite", True, "1.53", 1531095552, 13281),
)


def _suite_cost(_seeds: int):
    lines = []
    ok = True
    for row, gate_flag, gstr, flops, params in _GOLDEN:
        q = costmodel.CostQuery(
            row, channels=256, compressed=64, kernel_size=5, height=112, width=112,
            gate=gate_flag,
        )
        rep = costmodel.flops_of(q)
        pcount = costmodel.params_of(q)
        got = costmodel.format_gflops(rep.flops)
        good = got == gstr and rep.flops == flops and pcount == params
        ok = ok and good
        lines.append(
            f"{'PASS' if good else 'FAIL'} {row}: {got} GFLOPs ({rep.flops} FLOPs), "
            f"{pcount} params (~{round(pcount / 1000)}K), extras {rep.extras_total}"
        )
    return ok, lines


_SUITES = {
    "equivalence": (_suite_equivalence, 100),
    "gradcheck": (_suite_gradcheck, 5),
    "identities": (_suite_identities, 1),
    "cost": (_suite_cost, 1),
}


def _cmd_verify(args) -> int:
    suite_fn, default_seeds = _SUITES[args.suite]
    seeds = _resolve(args, "seeds", default_seeds, int)
    ok, lines = suite_fn(seeds)
    for line in lines:
        print(line)
    print(f"suite {args.suite}: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# train / ablate
# ---------------------------------------------------------------------------

_TASK_ALIASES = {
    "binary_shapes": ("binary_shapes_segmentation", 2),
    "multiclass_shapes": ("multiclass_shapes_segmentation", 3),
    "texture_recon": ("texture_reconstruction", 2),
}


def _history_csv(path, history) -> None:
    columns = ["epoch", "loss"]
    for row in history:
        for key in row:
            if key not in columns:
                columns.append(key)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in history:
            writer.writerow([repr(row[c]) if c in row else "" for c in columns])


def _labels_to_plane(labels: np.ndarray, classes: int) -> np.ndarray:
    return (labels.astype(np.float64) / max(classes - 1, 1))[None, None]


def _dump_run_figures(outdir: str, result: toy.TrainResult, cfg: toy.TrainConfig) -> list:
    """PGM dumps of the first validation prediction (and gate maps)."""
    written = []
    task = result.task
    val_task = replace(task, seed=task.seed + toy._VAL_SEED_OFFSET, count=1)
    x, y = toy.make_toy_task(val_task)
    dtype = np.float32 if cfg.precision == "f32" else np.float64
    xin = (x - 0.5).astype(dtype)
    out, parts = result.net.forward(xin, want_parts=True)
    out = ag.value_of(out)
    if task.is_segmentation:
        pred = out.argmax(axis=1)
        pred_path = os.path.join(outdir, "prediction.pgm")
        T.write_pgm(pred_path, _labels_to_plane(pred[0], task.classes))
        target_path = os.path.join(outdir, "target.pgm")
        T.write_pgm(target_path, _labels_to_plane(y[0], task.classes))
        written += [pred_path, target_path]
    else:
        pred_path = os.path.join(outdir, "reconstruction.pgm")
        T.write_pgm(pred_path, np.clip(out[:1], 0.0, 1.0).astype(np.float64))
        target_path = os.path.join(outdir, "target.pgm")
        T.write_pgm(target_path, y[:1])
        written += [pred_path, target_path]
    input_path = os.path.join(outdir, "input.pgm")
    T.write_pgm(input_path, x[:1])
    written.append(input_path)
    for stage in ("stage1", "stage2"):
        g = parts.get(stage, {}).get("gate")
        if g is not None:
            gpath = os.path.join(outdir, f"gate_{stage}.pgm")
            T.write_pgm(gpath, ag.value_of(g)[:1].astype(np.float64))
            written.append(gpath)
    return written


def _cmd_train(args) -> int:
    kind, default_classes = _TASK_ALIASES[args.task]
    seed = _resolve(args, "seed", 0, int)
    epochs = _resolve(args, "epochs", 60, int)
    lr = _resolve(args, "lr", 0.1, float)
    size = _resolve(args, "size", 48, int)
    classes = _resolve(args, "classes", default_classes, int)
    count = _resolve(args, "count", 16, int)
    variant = _resolve(args, "variant", "fade", str)
    impl = _resolve(args, "impl", "l2h", str)

    task = toy.ToyTask(kind, size=size, classes=classes, seed=seed, count=count)
    cfg = toy.TrainConfig(variant, epochs=epochs, lr=lr, seed=seed, impl=impl)
    os.makedirs(args.outdir, exist_ok=True)
    result = toy.train_toy(cfg, task)
    csv_path = os.path.join(args.outdir, "metrics.csv")
    _history_csv(csv_path, result.history)
    outputs = [csv_path] + _dump_run_figures(args.outdir, result, cfg)
    config = {
        "task": args.task,
        "variant": variant,
        "epochs": epochs,
        "lr": lr,
        "size": size,
        "classes": classes,
        "count": count,
        "seed": seed,
        "impl": impl,
    }
    _write_manifest(
        os.path.join(args.outdir, "manifest.json"), "train", config, [], outputs
    )
    final = " ".join(f"{k}={v:.4f}" for k, v in result.final.items())
    print(f"{variant} on {args.task}: {final}")
    return 0


ABLATION_VARIANTS = (
    ("b1_encoder_only", "encoder-only"),
    ("b2_decoder_only", "decoder-only (CARAFE)"),
    ("b3_naive", "encoder-decoder naive"),
    ("b4_semishift_nogate", "encoder-decoder semi-shift"),
    ("b5_semishift_skip", "semi-shift + skipping"),
    ("b6_full", "semi-shift + gating (full)"),
)


def _cmd_ablate(args) -> int:
    seeds = _resolve(args, "seeds", 5, int)
    epochs = _resolve(args, "epochs", 60, int)
    size = _resolve(args, "size", 48, int)
    count = _resolve(args, "count", 16, int)
    os.makedirs(args.outdir, exist_ok=True)
    table = {}
    for variant, _label in ABLATION_VARIANTS:
        row = []
        for seed in range(seeds):
            task = toy.ToyTask(
                "multiclass_shapes_segmentation", size=size, classes=3, seed=seed,
                count=count,
            )
            cfg = toy.TrainConfig(variant, epochs=epochs, seed=seed)
            try:
                result = toy.train_toy(cfg, task)
                miou = result.final["miou"]
                cell_csv = os.path.join(args.outdir, f"{variant}_seed{seed}.csv")
                _history_csv(cell_csv, result.history)
            except ag.DivergenceError:
                miou = None
            row.append(miou)
        table[variant] = row
    summary_path = os.path.join(args.outdir, "summary.csv")
    with open(summary_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["variant", "label"] + [f"seed{i}" for i in range(seeds)] + ["mean"])
        for variant, label in ABLATION_VARIANTS:
            row = table[variant]
            cells = ["diverged" if v is None else repr(v) for v in row]
            valid = [v for v in row if v is not None]
            mean = repr(sum(valid) / len(valid)) if valid else "diverged"
            writer.writerow([variant, label] + cells + [mean])
    widths = max(len(label) for _, label in ABLATION_VARIANTS)
    print(f"mIoU over {seeds} seeds (multiclass shapes, size {size}):")
    for variant, label in ABLATION_VARIANTS:
        row = table[variant]
        cells = " ".join("   div" if v is None else f"{v:.4f}" for v in row)
        print(f"  {label:<{widths}}  {cells}")
    config = {"seeds": seeds, "epochs": epochs, "size": size, "count": count, "seed": 0}
    _write_manifest(
        os.path.join(args.outdir, "manifest.json"), "ablate", config, [], [summary_path]
    )
    return 0


# ---------------------------------------------------------------------------
# cost
# ---------------------------------------------------------------------------


def _cmd_cost(args) -> int:
    C = _resolve(args, "C", 256, int)
    d = _resolve(args, "d", 64, int)
    K = _resolve(args, "K", 5, int)
    H = _resolve(args, "H", 112, int)
    W = _resolve(args, "W", 112, int)
    gate_flag = not args.no_gate
    rows = args.rows.split(",") if args.rows else list(costmodel.ROWS)
    reports = []
    for row in rows:
        q = costmodel.CostQuery(
            row.strip(), channels=C, compressed=d, kernel_size=K, height=H, width=W,
            gate=gate_flag,
        )
        reports.append(costmodel.flops_of(q))
    name_w = max(len(r.row) for r in reports)
    print(f"C={C} d={d} K={K} H={H} W={W} gate={'on' if gate_flag else 'off'}")
    print(f"{'row':<{name_w}}  {'GFLOPs':>8}  {'params':>10}  {'extras':>7}")
    for r in reports:
        print(
            f"{r.row:<{name_w}}  {costmodel.format_gflops(r.flops):>8}  "
            f"{r.params_counted:>10}  {r.extras_total:>7}"
        )
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["row", "gflops", "flops", "params", "extras"])
            for r in reports:
                writer.writerow(
                    [r.row, costmodel.format_gflops(r.flops), r.flops,
                     r.params_counted, r.extras_total]
                )
        config = {"C": C, "d": d, "K": K, "H": H, "W": W, "gate": gate_flag,
                  "rows": ",".join(rows), "seed": 0}
        _write_manifest(str(args.csv) + ".manifest.json", "cost", config, [], [args.csv])
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="fadeup", description=__doc__)
    parser.add_argument("--config", help="key=value config file", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("upsample", help="run an upsampling operator on FTEN files")
    p.add_argument("--variant", choices=ops.VARIANTS, default=None)
    p.add_argument("--decoder", required=True, help="low-res FTEN input")
    p.add_argument("--encoder", default=None, help="x2 guide FTEN input")
    p.add_argument("--weights", default=None, help="checkpoint to load")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--impl", choices=("direct", "h2l", "l2h"), default=None)
    p.add_argument("--d", type=int, default=None, help="compressed channels")
    p.add_argument("--K", type=int, default=None, help="kernel size")
    p.add_argument("--precision", choices=("f32", "f64"), default=None)
    p.add_argument("--gate", choices=("learned", "one", "none"), default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(run=_cmd_upsample)

    p = sub.add_parser("verify", help="run a property suite")
    p.add_argument("--suite", choices=tuple(_SUITES), required=True)
    p.add_argument("--seeds", type=int, default=None)
    p.set_defaults(run=_cmd_verify)

    p = sub.add_parser("train", help="train a toy task with a chosen upsampler")
    p.add_argument("--task", choices=tuple(_TASK_ALIASES), required=True)
    p.add_argument("--variant", choices=ops.VARIANTS, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--impl", choices=("direct", "h2l", "l2h"), default=None)
    p.add_argument("--outdir", required=True)
    p.set_defaults(run=_cmd_train)

    p = sub.add_parser("ablate", help="run the six-variant ablation study")
    p.add_argument("--seeds", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--outdir", required=True)
    p.set_defaults(run=_cmd_ablate)

    p = sub.add_parser("cost", help="closed-form FLOPs/parameter table")
    p.add_argument("--C", type=int, default=None)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--K", type=int, default=None)
    p.add_argument("--H", type=int, default=None)
    p.add_argument("--W", type=int, default=None)
    p.add_argument("--rows", default=None, help="comma-separated row names")
    p.add_argument("--no-gate", action="store_true")
    p.add_argument("--csv", default=None, help="also write the table as CSV")
    p.set_defaults(run=_cmd_cost)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        args._config_values = _read_config_file(args.config) if args.config else {}
        return args.run(args)
    except (FormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ShapeError, CliConfigError, costmodel.UnknownRowError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
