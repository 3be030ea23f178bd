"""Command line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
``DHI_THREADS`` caps the numeric library thread pools; it is applied before
the numeric stack is imported, so all heavy imports stay inside ``main``.
Every command takes an explicit ``--seed`` and is deterministic given one.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _apply_thread_cap():
    cap = os.environ.get("DHI_THREADS")
    if not cap:
        return
    if not cap.isdigit() or int(cap) < 1:
        raise _UsageError(f"DHI_THREADS must be a positive integer, got {cap!r}")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ[var] = cap


def _build_parser() -> _Parser:
    parser = _Parser(prog="dhinet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic RGB-D dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--test-count", type=int, default=0)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-objects", type=int, default=1)
    p.add_argument("--max-objects", type=int, default=2)

    p = sub.add_parser("train", help="train a detector from scratch")
    p.add_argument("--data", required=True, help="manifest path")
    p.add_argument("--out", required=True, help="weight file to write")
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--lr", type=float, default=0.0005)
    p.add_argument("--lr-drop-epoch", type=int)
    p.add_argument("--lr-drop-factor", type=float, default=0.25)
    p.add_argument("--batch-size", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="key=value config file (flags win)")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="evaluate a trained detector")
    p.add_argument("--data", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--confidence-threshold", type=float, default=0.05)
    p.add_argument("--out", help="directory for the report and PR curves")

    p = sub.add_parser("profile", help="parameter and FLOP tables")
    p.add_argument("--out", help="directory for CSV outputs")
    p.add_argument("--config", help="key=value config file (flags win)")
    _add_config_flags(p)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=5, help="number of seeds per op")
    p.add_argument("--inject-fault", action="store_true",
                   help="corrupt one backward pass to prove the audit catches it")
    return parser


def _add_config_flags(p):
    p.add_argument("--input-size", type=int)
    p.add_argument("--kernel-size", type=int)
    p.add_argument("--groups", type=int)
    p.add_argument("--weighting")
    p.add_argument("--gamma", type=float)
    p.add_argument("--generator-mode")
    p.add_argument("--channels", help="13 comma-separated backbone widths")
    p.add_argument("--anchors", help="w:h,w:h,... normalized anchor extents")
    p.add_argument("--nms-iou", type=float)


_FLAG_TO_KEY = {
    "input_size": "input_size", "kernel_size": "kernel_size", "groups": "groups",
    "weighting": "weighting", "gamma": "gamma", "generator_mode": "generator_mode",
    "channels": "channels", "anchors": "anchors", "nms_iou": "nms_iou",
}


def _resolve_config(args, base=None, **extra):
    """Defaults, then config file pairs, then explicit flags."""
    from .detector import ModelConfig, apply_config_pairs, config_from_text

    cfg = base if base is not None else ModelConfig()
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        cfg = config_from_text(path.read_text(), base=cfg)
    pairs = {}
    for attr, key in _FLAG_TO_KEY.items():
        value = getattr(args, attr, None)
        if value is not None:
            pairs[key] = str(value)
    pairs.update({k: str(v) for k, v in extra.items()})
    return apply_config_pairs(cfg, pairs)


def _cmd_gen_data(args) -> int:
    from .synthdata import generate_dataset

    manifest = generate_dataset(
        args.out, count=args.count, num_classes=args.classes, seed=args.seed,
        size=args.size, test_count=args.test_count,
        min_objects=args.min_objects, max_objects=args.max_objects)
    print(f"wrote {args.count} train / {args.test_count} test samples; manifest {manifest}")
    return EXIT_OK


def _cmd_train(args) -> int:
    from .detector import config_to_text
    from .synthdata import load_split
    from .training import train_model, write_loss_csv
    from .weights_io import save_tensors

    samples, manifest = load_split(args.data, "train")
    if not samples:
        raise FileNotFoundError("train split is empty")
    extra = {"num_classes": manifest["num_classes"]}
    if args.input_size is None:
        extra["input_size"] = manifest["image_size"]
    cfg = _resolve_config(args, **extra)
    result = train_model(cfg, samples, epochs=args.epochs, lr=args.lr,
                         seed=args.seed, batch_size=args.batch_size,
                         lr_drop_epoch=args.lr_drop_epoch,
                         lr_drop_factor=args.lr_drop_factor,
                         log=lambda e, v: print(f"epoch {e:4d}  loss {v:.6f}"))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_tensors(out, result.model.state_dict())
    Path(f"{out}.cfg").write_text(config_to_text(result.cfg))
    write_loss_csv(f"{out}.losses.csv", result.losses)
    print(f"wrote {out}, {out}.cfg, {out}.losses.csv")
    return EXIT_OK


def _load_model(weights_path: str):
    from .detector import Detector, config_from_text
    from .weights_io import load_tensors

    weights_path = Path(weights_path)
    cfg_path = Path(f"{weights_path}.cfg")
    if not weights_path.is_file():
        raise FileNotFoundError(f"weights not found: {weights_path}")
    if not cfg_path.is_file():
        raise FileNotFoundError(f"config not found next to weights: {cfg_path}")
    cfg = config_from_text(cfg_path.read_text())
    import numpy as np

    model = Detector(cfg, np.random.default_rng(0))
    model.load_state_dict(load_tensors(weights_path))
    return model


def _cmd_eval(args) -> int:
    from .metrics import export_pr_csv
    from .synthdata import load_split
    from .training import evaluate_model

    if not 0.0 < args.iou < 1.0:
        raise _UsageError(f"--iou must lie strictly between 0 and 1, got {args.iou}")
    model = _load_model(args.weights)
    samples, _ = load_split(args.data, args.split)
    if not samples:
        raise FileNotFoundError(f"split {args.split!r} is empty; nothing to evaluate")
    result = evaluate_model(model, samples, iou_threshold=args.iou,
                            confidence_threshold=args.confidence_threshold)
    lines = [f"images evaluated: {result.num_images}",
             f"mAP@{args.iou:g}: {result.mean_ap:.4f}"]
    for cls, ap in sorted(result.per_class.items()):
        lines.append(f"  class {cls}: AP {ap:.4f}")
    report = "\n".join(lines)
    print(report)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(report + "\n")
        import csv

        with open(out / "ap_table.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["class", "ap"])
            for cls, ap in sorted(result.per_class.items()):
                writer.writerow([cls, f"{ap:.6f}"])
        for cls, (recalls, precisions) in result.pr_curves.items():
            export_pr_csv(out / f"pr_class{cls}.csv", recalls, precisions)
    return EXIT_OK


def _cmd_profile(args) -> int:
    import numpy as np

    from .detector import Detector
    from .profiler import (REFERENCE_GFLOPS, comparison_rows, format_report,
                           profile_detector, total_flops, total_params,
                           write_comparison_csv, write_layer_csv)

    cfg = _resolve_config(args)
    model = Detector(cfg, np.random.default_rng(0))
    reports = profile_detector(model)
    print(format_report(reports))
    gflops = total_flops(reports) / 1e9
    print(f"\ntotal parameters: {total_params(reports)}")
    print(f"total cost at {cfg.input_size}: {gflops:.2f} GFLOPs "
          f"(reference model: {REFERENCE_GFLOPS:.2f})")
    print("\noperator parameter comparison (reference totals at 8 filters):")
    for row in comparison_rows():
        ref = f"  reference {row['reference']} (delta {row['delta']})" if row["reference"] != "" else ""
        print(f"  {row['operator']} ch{row['in_channels']} F={row['kernel_size']}: "
              f"{row['params']}{ref}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_layer_csv(out / "layers.csv", reports)
        write_comparison_csv(out / "operator_params.csv")
        print(f"wrote {out / 'layers.csv'} and {out / 'operator_params.csv'}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    seeds = [args.seed + i for i in range(max(args.seeds, 1))]
    results = run_suite(seeds, inject_fault=args.inject_fault)
    failures = [r for r in results if not r.ok]
    by_name: dict = {}
    for r in results:
        entry = by_name.setdefault(r.name, [0, 0.0])
        entry[0] += not r.ok
        entry[1] = max(entry[1], r.error)
    for name, (fails, worst) in by_name.items():
        status = "ok" if not fails else f"FAIL({fails})"
        print(f"{name:<28} {status:<8} worst rel err {worst:.3e}")
    print(f"\n{len(results) - len(failures)}/{len(results)} checks passed "
          f"({len(by_name)} ops x {len(seeds)} seeds)")
    return EXIT_OK if not failures else EXIT_NUMERIC


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "profile": _cmd_profile,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        _apply_thread_cap()
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # numerical failures surface with diagnostics
        from .training import NumericalError

        if isinstance(exc, NumericalError):
            print(f"numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        raise


if __name__ == "__main__":
    sys.exit(main())
