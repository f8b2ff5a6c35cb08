"""Command-line entry point: train, eval, sweep, visualize, report.

Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

import argparse
import contextlib
import csv
import fcntl
import json
import logging
import sys
from pathlib import Path

import numpy as np

from mtd2nn import plotting
from mtd2nn.config import ConfigError, load_config, load_task_datasets
from mtd2nn.dataio import (CheckpointError, Encoding, IdxError, config_hash, encode_input,
                           export_heatmap, export_trace, load_checkpoint, save_checkpoint)
from mtd2nn.detector import decide, read
from mtd2nn.field import set_fft_workers
from mtd2nn.metrics import PUBLISHED, acc_hw, efficiency_report
from mtd2nn.network import build_model, forward_trace
from mtd2nn.noise import noise_sweep
from mtd2nn.train import evaluate, train

log = logging.getLogger("mtd2nn")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class ValidationError(Exception):
    pass


@contextlib.contextmanager
def locked_dir(path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / ".lock", "w") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            yield path
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _config(args, need_data=True):
    if not args.config:
        raise ValidationError("--config is required")
    cfg = load_config(args.config, check_paths=need_data)
    if need_data and not cfg.data:
        raise ValidationError("config has no data blocks")
    if args.seed is not None:
        cfg.architecture.seed = args.seed
        cfg.training.seed = args.seed
    return cfg


def _out_dir(args, cfg=None):
    if args.out:
        return Path(args.out)
    if cfg is not None:
        return Path(cfg.output_dir)
    raise ValidationError("--out is required")


def _task_names(cfg, n):
    names = [t.name for t in cfg.data] if cfg is not None else []
    return [n_ or f"task{i + 1}" for i, n_ in enumerate(names)] + \
        [f"task{i + 1}" for i in range(len(names), n)]


def _encoding(meta, cfg):
    if "encoding" in meta:
        return Encoding(**meta["encoding"])
    return cfg.encoding if cfg is not None else Encoding()


def _checkpoint(args):
    if not args.checkpoint:
        raise ValidationError("--checkpoint is required")
    if not Path(args.checkpoint).exists():
        raise ValidationError(f"checkpoint not found: {args.checkpoint}")
    return load_checkpoint(args.checkpoint)


def cmd_train(args):
    cfg = _config(args)
    model = build_model(cfg.architecture)
    train_sets, test_sets = load_task_datasets(cfg)
    names = _task_names(cfg, model.n_tasks)
    with locked_dir(_out_dir(args, cfg)) as out:
        metric_log = out / "metrics.jsonl"
        metric_log.write_text("")
        meta = {"config_hash": config_hash(cfg.to_dict()), "update_rule": cfg.training.update_rule,
                "encoding": cfg.encoding.to_dict(), "tasks": names,
                "training": cfg.training.to_dict(), "epochs": 0}

        def on_epoch(epoch, model, state, record):
            meta["epochs"] = epoch + 1
            save_checkpoint(model, out / "checkpoint.d2nn", state, meta)

        result = train(model, train_sets, test_sets, cfg.training, cfg.encoding,
                       metric_log=metric_log, callback=on_epoch)
        save_checkpoint(result.model, out / "checkpoint.d2nn", result.optimizer_state, meta)
        summary = {"tasks": names, "epochs": len(result.metrics), "n_masks":
                   len(result.model.masks()), "update_rule": cfg.training.update_rule,
                   "final_test_accuracy": result.metrics[-1]["test_accuracy"]
                   if result.metrics else None}
        _write_json(out / "summary.json", summary)
        if result.metrics:
            plotting.training_curves(result.metrics, names, out / "training_curves.png")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_eval(args):
    cfg = _config(args)
    model, _, meta = _checkpoint(args)
    _, test_sets = load_task_datasets(cfg)
    if len(test_sets) != model.n_tasks:
        raise ValidationError(f"checkpoint has {model.n_tasks} tasks, config {len(test_sets)}")
    for d in test_sets:
        if len(d) == 0:
            raise ValidationError(f"test set for task {d.task_id + 1} is empty")
    enc = _encoding(meta, cfg)
    names = _task_names(cfg, model.n_tasks)
    accs = [evaluate(model, d, c, enc) for d, c in zip(test_sets, model.codecs)]
    result = {"tasks": names, "accuracy": accs, "n_test": [len(d) for d in test_sets],
              "detectors": model.layout.n_regions}
    with locked_dir(_out_dir(args, cfg)) as out:
        _write_json(out / "eval.json", result)
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def _grid_image(sweep, task, row_axis, col_axis, out, stem, title):
    rv, cv, means = sweep.table(task, row_axis, col_axis)
    gray = np.nan_to_num(means)
    export_heatmap(gray, out / f"{stem}.pgm")
    plotting.accuracy_heatmap(rv, cv, means, out / f"{stem}.png", row_axis, col_axis, title)
    return means.shape


def cmd_sweep(args):
    cfg = _config(args)
    model, _, meta = _checkpoint(args)
    _, test_sets = load_task_datasets(cfg)
    enc = _encoding(meta, cfg)
    names = _task_names(cfg, model.n_tasks)
    axes = {"detector_device": ("detector_sigma", "device_sigma"),
            "detector_splitter": ("detector_sigma", "splitter_epsilon"),
            "device_splitter": ("device_sigma", "splitter_epsilon")}
    grids = cfg.noise.grids()
    if args.grid:
        grids = {k: v for k, v in grids.items() if k in args.grid}
    with locked_dir(_out_dir(args, cfg)) as out:
        shapes = {}
        for gname, grid in grids.items():
            sweep = noise_sweep(model, test_sets, grid, cfg.noise.repeats, cfg.noise.seed, enc,
                                per_region=cfg.noise.per_region)
            sweep.write_csv(out / f"sweep_{gname}.csv")
            sweep.write_summary_csv(out / f"sweep_{gname}_summary.csv")
            row_axis, col_axis = axes[gname]
            for t, name in enumerate(names):
                shapes[f"{gname}/{name}"] = _grid_image(
                    sweep, t, row_axis, col_axis, out, f"heatmap_{gname}_task{t + 1}",
                    f"{name}: accuracy")
    print(json.dumps({k: list(v) for k, v in shapes.items()}, sort_keys=True))
    return EXIT_OK


def cmd_visualize(args):
    cfg = _config(args)
    model, _, meta = _checkpoint(args)
    _, test_sets = load_task_datasets(cfg)
    task = args.task - 1
    if not 0 <= task < model.n_tasks:
        raise ValidationError(f"--task must lie in 1..{model.n_tasks}")
    data = test_sets[task]
    if not 0 <= args.sample < len(data):
        raise ValidationError(f"--sample must lie in 0..{len(data) - 1}")
    enc = _encoding(meta, cfg)
    x = encode_input(data.images[args.sample], model.spec, enc)
    trace = forward_trace(model, x)
    reading = read(trace.intensity, model.layout)
    codec = model.codecs[task]
    pred = int(decide(reading, codec))
    with locked_dir(_out_dir(args, cfg)) as out:
        paths = export_trace(trace, out / "stages", phase=args.phase)
        with open(out / "reading.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cell", "value"])
            for i, v in enumerate(reading):
                w.writerow([i, f"{v:.9g}"])
        plotting.trace_montage(trace, reading, out / "trace.png",
                               f"task {task + 1}: label {int(data.labels[args.sample])}, "
                               f"predicted {pred} ({codec.polarity})")
    print(json.dumps({"label": int(data.labels[args.sample]), "predicted": pred,
                      "polarity": codec.polarity, "stages": len(paths)}, sort_keys=True))
    return EXIT_OK


def _report_from_inputs(spec):
    multi = spec["multi"]
    single = spec["single"]
    return efficiency_report(spec.get("tasks", [f"task{i + 1}" for i in
                                                range(len(multi["accuracy"]))]),
                             multi["accuracy"], single["accuracy"], multi["detectors"],
                             det_single_total=single["detectors_total"])


def _load_eval(path):
    return json.loads(Path(path).read_text())


def cmd_report(args):
    rows = []
    if args.published:
        for table, entries in PUBLISHED.items():
            for task, am, as_, dm, ds, reported in entries:
                rows.append({"table": table, "task": task, "acc_multi": am, "acc_single": as_,
                             "det_multi": dm, "det_single_total": ds,
                             "acc_hw": acc_hw(am, as_, dm, ds), "reported": reported})
    elif args.multi_eval:
        if not args.single_eval:
            raise ValidationError("--single-eval is required with --multi-eval")
        multi = _load_eval(args.multi_eval)
        singles = [_load_eval(p) for p in args.single_eval]
        acc_single = [a for s in singles for a in s["accuracy"]]
        if len(acc_single) != len(multi["accuracy"]):
            raise ValidationError("need one single-task accuracy per multi-task task")
        det_single = sum(s["detectors"] for s in singles)
        report = efficiency_report(multi["tasks"], multi["accuracy"], acc_single,
                                   multi["detectors"], det_single_total=det_single)
        rows = [dict(r, table="measured") for r in report.rows()]
    elif args.config:
        report = _report_from_inputs(json.loads(Path(args.config).read_text()))
        rows = [dict(r, table="input") for r in report.rows()]
    else:
        raise ValidationError("report needs --published, --multi-eval/--single-eval or --config")
    out = Path(args.out) if args.out else None
    if out is not None:
        with locked_dir(out):
            fields = list(rows[0])
            with open(out / "acc_hw.csv", "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
                w.writeheader()
                w.writerows(rows)
    for r in rows:
        print(f"{r['table']:<22} {r['task']:<14} acc_hw={r['acc_hw']:.4f}")
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--checkpoint", help="model checkpoint (.d2nn)")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, help="override architecture and training seeds")
    common.add_argument("--threads", type=int, default=1, help="FFT worker threads")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mtd2nn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train a model from a config")
    sub.add_parser("eval", parents=[common], help="clean test accuracy per task")
    p = sub.add_parser("sweep", parents=[common], help="noise robustness sweeps")
    p.add_argument("--grid", action="append",
                   choices=["detector_device", "detector_splitter", "device_splitter"],
                   help="restrict to these sweeps (repeatable)")
    p = sub.add_parser("visualize", parents=[common], help="export every propagation stage")
    p.add_argument("--sample", type=int, default=0, help="test-set index")
    p.add_argument("--task", type=int, default=1, help="1-based task whose test set to use")
    p.add_argument("--phase", action="store_true", help="export phase instead of magnitude")
    p = sub.add_parser("report", parents=[common], help="Acc-HW efficiency report")
    p.add_argument("--published", action="store_true",
                   help="recompute Acc-HW from the published accuracy tables")
    p.add_argument("--multi-eval", help="eval.json of the multi-task model")
    p.add_argument("--single-eval", action="append", help="eval.json of a single-task model")
    return parser


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep,
            "visualize": cmd_visualize, "report": cmd_report}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    set_fft_workers(args.threads)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (CheckpointError, IdxError, ValueError, FloatingPointError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
