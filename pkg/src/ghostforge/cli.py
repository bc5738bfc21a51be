"""Command-line entry point.

Subcommands: build, convert, cost, ratios, stage-ratios, train, eval,
bench, analyze-pairs, similarity, dump-features. Domain errors exit 1;
usage errors exit 2.
"""

import argparse
import sys
import time

import numpy as np

from . import analysis, arch, checkpoint, config, costs, train as train_mod, zoo
from .errors import GhostforgeError
from .network import Network
from .rng import GaussianStream


def _shape(text: str):
    try:
        c, h, w = (int(v) for v in text.lower().split("x"))
        return (c, h, w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected CxHxW, got {text!r}") from None


def _int_list(text: str):
    return [int(v) for v in text.split(",") if v]


def _float_list(text: str):
    return [float(v) for v in text.split(",") if v]


def _load_spec(args) -> arch.ArchSpec:
    if getattr(args, "spec_file", None):
        return arch.load(args.spec_file)
    if getattr(args, "arch", None):
        return zoo.build(args.arch, getattr(args, "width", 1.0) or 1.0,
                         getattr(args, "classes", None),
                         getattr(args, "small_input", False))
    raise GhostforgeError("need --arch or --spec-file")


def _add_spec_args(p, require=True):
    p.add_argument("--arch", choices=zoo.BUILDERS, help="built-in architecture")
    p.add_argument("--spec-file", help="architecture JSON file")
    p.add_argument("--width", type=float, default=1.0, help="width multiplier")
    p.add_argument("--classes", type=int, default=None, help="classifier width")
    p.add_argument("--small-input", action="store_true",
                   help="32x32 variant (stem stride 1)")


def _add_data_args(p):
    p.add_argument("--data-classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--data-shape", type=_shape, default=(3, 32, 32))
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=0.3)


def _dataset(args):
    return train_mod.synth_dataset(args.data_classes, args.per_class,
                                   args.data_shape, args.data_seed, args.sigma)


def _out(text: str, path=None):
    if path:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text if text.endswith("\n") else text + "\n")
    else:
        print(text)


def cmd_build(args) -> int:
    spec = _load_spec(args)
    _out(spec.to_json(), args.out)
    return 0


def cmd_convert(args) -> int:
    spec = _load_spec(args)
    if args.mode == "c_ghost":
        spec = zoo.c_ghostify(spec, args.s, args.d)
    else:
        spec = zoo.g_ghostify(spec, args.lam, args.cheap, args.mix == "on")
    _out(spec.to_json(), args.out)
    return 0


def cmd_cost(args) -> int:
    spec = _load_spec(args)
    report = costs.count_costs(spec, args.input)
    if args.csv:
        _out(report.render_csv(), args.csv if args.csv != "-" else None)
    else:
        print(report.render_text())
    return 0


def cmd_ratios(args) -> int:
    rs = costs.speedup_ratio_rs(args.c, args.k, args.d, args.s)
    rc = costs.compression_ratio_rc(args.c, args.k, args.d, args.s, args.n)
    print("# ratios of ordinary conv over ghost module (MACs / parameters)")
    print(f"r_s={rs:.4f}")
    print(f"r_c={rc:.4f}")
    return 0


def cmd_stage_ratios(args) -> int:
    rf, rp = zoo_stage_ratios(args)
    print("# stage cost reduction ratios (FLOPs / parameters)")
    print(f"r_f={rf:.4f}")
    print(f"r_p={rp:.4f}")
    return 0


def zoo_stage_ratios(args):
    from .gghost import stage_reduction_ratios

    return stage_reduction_ratios(args.flops, args.params, args.lam,
                                  args.cheap_flops, args.cheap_params)


def cmd_train(args) -> int:
    spec = _load_spec(args)
    ds = _dataset(args)
    cfg = train_mod.TrainConfig(lr=args.lr, steps=args.steps, seed=args.seed,
                                momentum=args.momentum,
                                weight_decay=args.wd, batch_size=args.batch)
    ckpt, curve = train_mod.train(spec, ds, cfg)
    if args.out_ckpt:
        checkpoint.save(ckpt, args.out_ckpt)
    if args.loss_csv:
        _out(train_mod.loss_curve_csv(curve), args.loss_csv)
    acc = train_mod.evaluate(ckpt, ds)
    last = curve[-1][1] if curve else float("nan")
    print(f"steps={args.steps} final_loss={last:.6f} train_accuracy={acc:.4f}")
    return 0


def cmd_eval(args) -> int:
    spec = _load_spec(args)
    ckpt = checkpoint.load(args.ckpt, arch=spec)
    acc = train_mod.evaluate(ckpt, _dataset(args))
    print(f"accuracy={acc:.4f}")
    return 0


def cmd_bench(args) -> int:
    from . import kernels

    spec = _load_spec(args)
    net = Network(spec, args.input)
    store = net.init_params(args.seed)
    shape = (args.batch,) + tuple(args.input or spec.input_shape)
    x = GaussianStream(args.seed + 1).normal(shape, dtype=config.DTYPE)
    net.forward(store, x)  # warmup (JIT, caches)
    times = []
    for _ in range(args.repeat):
        t0 = time.perf_counter()
        net.forward(store, x)
        times.append(time.perf_counter() - t0)
    mean = float(np.mean(times))
    std = float(np.std(times))
    print(f"# backend={kernels.BACKEND} dtype={config.DTYPE_NAME} "
          f"threads={config.THREADS} (FLOPs counted as multiply-accumulates)")
    print(f"{spec.name}: batch={args.batch} repeat={args.repeat} "
          f"mean={mean * 1e3:.2f}ms std={std * 1e3:.2f}ms")
    return 0


def cmd_analyze_pairs(args) -> int:
    src = analysis.read_pgm(args.src)
    dst = analysis.read_pgm(args.dst)
    rows = []
    for d in args.d:
        fit = analysis.fit_cheap_map(src, dst, d)
        rows.append((d, fit.mse, fit.regularized))
    _out(analysis.mse_vs_kernel_csv(rows), args.out)
    return 0


def cmd_similarity(args) -> int:
    spec = _load_spec(args)
    net = Network(spec)
    if args.ckpt:
        store = checkpoint.load(args.ckpt, arch=spec).to_store()
    else:
        store = net.init_params(args.seed)
    ds = _dataset(args)
    rows = analysis.stage_similarity_report(spec, store, ds.x[:args.batch],
                                            args.stage)
    _out(analysis.similarity_csv(rows), args.out)
    return 0


def cmd_dump_features(args) -> int:
    spec = _load_spec(args)
    net = Network(spec)
    if args.ckpt:
        store = checkpoint.load(args.ckpt, arch=spec).to_store()
    else:
        store = net.init_params(args.seed)
    ds = _dataset(args)
    paths = analysis.dump_feature_maps(spec, store, ds.x[:1], args.node,
                                       args.out)
    print("\n".join(paths))
    return 0


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ghostforge",
                                description="ghost-architecture toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="emit an architecture JSON")
    _add_spec_args(b)
    b.add_argument("--out", help="output path (default stdout)")
    b.set_defaults(fn=cmd_build)

    c = sub.add_parser("convert", help="apply a ghost conversion pass")
    _add_spec_args(c)
    c.add_argument("--mode", choices=("c_ghost", "g_ghost"), required=True)
    c.add_argument("--s", type=int, default=2, help="ghost expansion ratio")
    c.add_argument("--d", type=int, default=3, help="cheap depthwise kernel")
    c.add_argument("--lambda", dest="lam", type=float, default=0.5,
                   help="ghost channel fraction")
    c.add_argument("--cheap", choices=("conv1x1", "conv3x3", "conv5x5",
                                       "identity", "none"), default="conv1x1")
    c.add_argument("--mix", choices=("on", "off"), default="on")
    c.add_argument("--out", help="output path (default stdout)")
    c.set_defaults(fn=cmd_convert)

    co = sub.add_parser("cost", help="count params / FLOPs / activations")
    _add_spec_args(co)
    co.add_argument("--input", type=_shape, default=None, help="CxHxW override")
    co.add_argument("--csv", nargs="?", const="-", default=None,
                    help="CSV output (path, or stdout if bare)")
    co.set_defaults(fn=cmd_cost)

    r = sub.add_parser("ratios", help="closed-form conv-vs-ghost ratios")
    r.add_argument("--c", type=int, required=True)
    r.add_argument("--k", type=int, required=True)
    r.add_argument("--d", type=int, required=True)
    r.add_argument("--s", type=int, required=True)
    r.add_argument("--n", type=int, default=1)
    r.set_defaults(fn=cmd_ratios)

    sr = sub.add_parser("stage-ratios", help="closed-form stage reduction ratios")
    sr.add_argument("--flops", type=_float_list, required=True,
                    help="per-block FLOPs, comma separated")
    sr.add_argument("--params", type=_float_list, required=True)
    sr.add_argument("--lambda", dest="lam", type=float, required=True)
    sr.add_argument("--cheap-flops", type=float, default=0.0)
    sr.add_argument("--cheap-params", type=float, default=0.0)
    sr.set_defaults(fn=cmd_stage_ratios)

    t = sub.add_parser("train", help="train on the synthetic dataset")
    _add_spec_args(t)
    _add_data_args(t)
    t.add_argument("--steps", type=int, required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--wd", type=float, default=0.0)
    t.add_argument("--batch", type=int, default=32)
    t.add_argument("--out-ckpt", help="checkpoint output path")
    t.add_argument("--loss-csv", help="loss curve CSV output path")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_spec_args(e)
    _add_data_args(e)
    e.add_argument("--ckpt", required=True)
    e.set_defaults(fn=cmd_eval)

    be = sub.add_parser("bench", help="forward wall-clock")
    _add_spec_args(be)
    be.add_argument("--input", type=_shape, default=None)
    be.add_argument("--batch", type=int, default=8)
    be.add_argument("--repeat", type=int, default=10)
    be.add_argument("--seed", type=int, default=0)
    be.set_defaults(fn=cmd_bench)

    ap = sub.add_parser("analyze-pairs", help="fit cheap maps between two PGMs")
    ap.add_argument("--src", required=True)
    ap.add_argument("--dst", required=True)
    ap.add_argument("--d", type=_int_list, default=[1, 3, 5, 7],
                    help="comma-separated odd kernel sizes")
    ap.add_argument("--out", help="CSV path (default stdout)")
    ap.set_defaults(fn=cmd_analyze_pairs)

    si = sub.add_parser("similarity", help="first-vs-last block channel MSE")
    _add_spec_args(si)
    _add_data_args(si)
    si.add_argument("--stage", type=int, required=True)
    si.add_argument("--ckpt")
    si.add_argument("--seed", type=int, default=0)
    si.add_argument("--batch", type=int, default=4)
    si.add_argument("--out", help="CSV path (default stdout)")
    si.set_defaults(fn=cmd_similarity)

    df = sub.add_parser("dump-features", help="write a node's channels as PGMs")
    _add_spec_args(df)
    _add_data_args(df)
    df.add_argument("--node", required=True)
    df.add_argument("--ckpt")
    df.add_argument("--seed", type=int, default=0)
    df.add_argument("--out", required=True, help="output directory")
    df.set_defaults(fn=cmd_dump_features)
    return p


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.fn(args)
    except GhostforgeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
