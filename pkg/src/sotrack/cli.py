"""Command line: ``sotrack {pretrain,track,eval,gradcheck,synth-seq,config}``.

Exit codes: 0 success, 1 runtime or check failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from sotrack import bench
from sotrack.config import RunConfig, load_config
from sotrack.nnet import NetError, build_network, grad_check, tiny_spec
from sotrack.objectness import pretrain, read_manifest
from sotrack.synthetic import moving_square
from sotrack.tracker import track_sequence

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
GRADCHECK_TOLERANCE = 1e-4


class UsageError(Exception):
    pass


def _config(path) -> RunConfig:
    try:
        return load_config(path)
    except ValidationError as exc:
        keys = ", ".join(".".join(str(p) for p in e["loc"]) for e in exc.errors())
        raise UsageError(f"invalid configuration ({keys}):\n{exc}") from None
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read configuration: {exc}") from None


def cmd_pretrain(args) -> int:
    cfg = _config(args.config)
    pre = cfg.pretrain
    if args.dataset_size is not None:
        if args.dataset_size < 1:
            raise UsageError("--dataset-size must be positive")
        pre = pre.model_copy(update={"dataset_size": args.dataset_size})
    if args.epochs is not None:
        if args.epochs < 1:
            raise UsageError("--epochs must be positive")
        pre = pre.model_copy(update={"epochs": args.epochs})
    try:
        images = read_manifest(args.manifest) if args.manifest else None
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_suffix(out.suffix + ".log")
    lines = []

    def on_epoch(rec):
        lines.append(rec.line())
        print(f"epoch {rec.epoch} lr {rec.learning_rate:.6g} loss {rec.mean_loss:.4f}",
              flush=True)

    result = pretrain(cfg.net, pre, seed=args.seed, out=out, images=images, on_epoch=on_epoch)
    log_path.write_text("# epoch lr mean_loss\n" + "\n".join(lines) + "\n")
    print(f"wrote {out} ({result.positives} positives, {result.negatives} negatives)")
    return EXIT_OK


def cmd_track(args) -> int:
    cfg = _config(args.config)
    try:
        seq = bench.load_sequence(args.seq)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if not Path(args.weights).is_file():
        raise UsageError(f"weights file not found: {args.weights}")
    results = track_sequence(seq.frames(), seq.boxes[0], args.weights, cfg.tracker,
                             cfg.net.to_spec(), seed=args.seed)
    bench.write_results(args.out, results)
    conf = float(np.mean([r.confidence for r in results]))
    missing = sum(r.missing for r in results)
    print(f"frames={len(results)} mean_confidence={conf:.4f} missing={missing}")
    return EXIT_OK


def _run_names(paths) -> list[str]:
    names, seen = [], {}
    for p in paths:
        stem = Path(p).stem
        seen[stem] = seen.get(stem, 0) + 1
        names.append(stem if seen[stem] == 1 else f"{stem}-{seen[stem]}")
    return names


def cmd_eval(args) -> int:
    if len(args.results) != len(args.seq):
        raise UsageError(f"{len(args.results)} result files for {len(args.seq)} sequences")
    out = Path(args.curves_out)
    out.mkdir(parents=True, exist_ok=True)
    aucs, attrs = {}, {}
    status = EXIT_OK
    print(f"{'run':<24} {'AUC':>8} {'P@20':>8}")
    for name, res_path, seq_dir in zip(_run_names(args.results), args.results, args.seq):
        try:
            seq = bench.load_sequence(seq_dir)
            preds = bench.read_results(res_path)
            success = bench.success_curve(preds, seq.boxes)
            precision = bench.precision_curve(preds, seq.boxes)
        except (OSError, ValueError) as exc:
            print(f"{name}: {exc}", file=sys.stderr)
            status = EXIT_FAIL
            continue
        success.write_csv(out / f"{name}_success.csv")
        precision.write_csv(out / f"{name}_precision.csv")
        print(f"{name:<24} {success.summary:>8.4f} {precision.summary:>8.4f}")
        aucs[name] = success.summary
        attrs[name] = seq.attributes
    table = bench.attribute_summary(aucs, attrs)
    if table:
        print("attribute  mean_AUC")
        for tag, value in table.items():
            print(f"{tag:<10} {value:.4f}")
    return status


def cmd_gradcheck(args) -> int:
    spec = tiny_spec()
    net = build_network(spec, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    x = rng.random((2,) + spec.input_shape).astype(np.float32)
    t = (rng.random((2, spec.map_size, spec.map_size)) > 0.5).astype(np.float32)
    err = grad_check(net, (x, t))
    ok = err < GRADCHECK_TOLERANCE
    print(f"max_relative_error={err:.3e} {'ok' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_synth_seq(args) -> int:
    if args.frames < 2:
        raise UsageError("--frames must be at least 2")
    seq = moving_square(args.seed, n_frames=args.frames, distractor=args.distractor)
    bench.write_sequence(args.out, seq.frames, seq.boxes, seq.attributes)
    print(f"wrote {seq.name} ({len(seq.frames)} frames) to {args.out}")
    return EXIT_OK


def cmd_config(args) -> int:
    sys.stdout.write(_config(args.config).dump())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sotrack", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("pretrain", help="objectness pre-training")
    s.add_argument("--config")
    s.add_argument("--out", required=True, help="weight file to write")
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--dataset-size", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--manifest", help="train on listed images instead of synthetic ones")
    s.add_argument("--log", help="training log path (default: <out>.log)")
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("track", help="track one sequence")
    s.add_argument("--config")
    s.add_argument("--weights", required=True)
    s.add_argument("--seq", required=True, help="sequence directory")
    s.add_argument("--out", required=True, help="result file to write")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("eval", help="success and precision curves")
    s.add_argument("--results", nargs="+", required=True)
    s.add_argument("--seq", nargs="+", required=True)
    s.add_argument("--curves-out", required=True, help="directory for the CSV curves")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference gradient check")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("synth-seq", help="write a synthetic test sequence")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--frames", type=int, default=100)
    s.add_argument("--distractor", action="store_true")
    s.set_defaults(func=cmd_synth_seq)

    s = sub.add_parser("config", help="print the effective configuration as YAML")
    s.add_argument("--config")
    s.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NetError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
