"""Command-line entry point: synth, build-dataset, train, eval, serve, replay, plot.

Option values resolve as: command-line flag, then ``WIP_<NAME>`` environment
variable (e.g. ``WIP_EPOCHS``, ``WIP_BIND_ADDR``), then the JSON file given by
``--config``, then the built-in default. The config file is one JSON object;
top-level keys apply to every command and a nested object keyed by the command
name (``{"train": {"epochs": 20}}``) overrides them for that command. Keys are
the long flag names with dashes replaced by underscores.

Every command writes a run manifest (JSON) recording the resolved
configuration, seed, paths, SHA-256 hashes of written artifacts and the
wall-clock time.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import Checkpoint, atomic_write_text, file_digest, load_checkpoint, save_checkpoint
from .dataset import (
    SampleSet,
    WindowConfig,
    compute_norm_stats,
    read_archive,
    segment_windows,
    split_from_sets,
    write_archive,
)
from .gestures import LABELS
from .model import ModelConfig
from .synthgen import GestureScript, default_script, generate_dataset, load_recordings, write_recording
from .trainer import TrainConfig, fit

log = logging.getLogger("wipgest")


class CliError(Exception):
    """User-facing failure: printed without a traceback, exit status 1."""


# ---------------------------------------------------------------------------
# option layering
# ---------------------------------------------------------------------------


def _to_bool(raw) -> bool:
    if isinstance(raw, bool):
        return raw
    text = str(raw).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise CliError(f"cannot read {raw!r} as a boolean")


# command -> {dest: (type, default)}
OPTIONS: dict[str, dict[str, tuple]] = {
    "synth": {"subjects": (int, 14), "seed": (int, 0), "out": (str, None), "script": (str, None)},
    "build-dataset": {
        "data": (str, None),
        "out": (str, None),
        "window": (int, 6),
        "step": (int, None),
    },
    "train": {
        "data": (str, None),
        "target": (str, None),
        "mode": (str, "mcd"),
        "epochs": (int, 250),
        "learning_rate": (float, 0.001),
        "weight_decay": (float, 0.0001),
        "batch_size": (int, 64),
        "seed": (int, 0),
        "window": (int, 6),
        "step": (int, None),
        "augment": (_to_bool, True),
        "schedule": (str, "per-batch"),
        "lr_schedule": (str, "none"),
        "generator_steps": (int, 1),
        "out": (str, None),
        "loss_csv": (str, None),
    },
    "eval": {
        "ckpt": (str, None),
        "data": (str, None),
        "loso": (_to_bool, False),
        "window_study": (_to_bool, False),
        "sizes": (str, "3,6,10,16"),
        "subjects": (str, None),
        "workers": (int, 1),
        "mode": (str, "mcd"),
        "epochs": (int, 250),
        "learning_rate": (float, 0.001),
        "weight_decay": (float, 0.0001),
        "batch_size": (int, 64),
        "seed": (int, 0),
        "window": (int, 6),
        "augment": (_to_bool, True),
        "latency_trials": (int, 100),
        "out": (str, None),
        "csv": (str, None),
    },
    "serve": {"ckpt": (str, None), "bind_addr": (str, "127.0.0.1:8000")},
    "replay": {
        "recording": (str, None),
        "address": (str, "127.0.0.1:8000"),
        "submit_every": (int, 6),
        "realtime": (_to_bool, False),
        "retries": (int, 3),
        "out": (str, None),
    },
    "plot": {"report": (str, None), "out": (str, None)},
}

REQUIRED = {
    "synth": ["out"],
    "build-dataset": ["data", "out"],
    "train": ["data", "target", "out"],
    "eval": ["data", "out"],
    "serve": ["ckpt"],
    "replay": ["recording", "out"],
    "plot": ["report", "out"],
}


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CliError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise CliError(f"config file {path} must hold a JSON object")
    return data


def resolve_options(command: str, args: argparse.Namespace, environ=None) -> dict:
    """Layer flag > WIP_* environment > config file > default for ``command``."""
    environ = os.environ if environ is None else environ
    file_cfg = _load_config_file(getattr(args, "config", None))
    section = file_cfg.get(command, {})
    if not isinstance(section, dict):
        raise CliError(f"config section {command!r} must be a JSON object")
    flat = {k: v for k, v in file_cfg.items() if not isinstance(v, dict)}
    resolved = {}
    for dest, (kind, default) in OPTIONS[command].items():
        flag = getattr(args, dest, None)
        env = environ.get(f"WIP_{dest.upper()}")
        if flag is not None:
            value = flag
        elif env is not None:
            value = env
        elif dest in section:
            value = section[dest]
        elif dest in flat:
            value = flat[dest]
        else:
            value = default
        if value is not None:
            try:
                value = kind(value)
            except (TypeError, ValueError):
                raise CliError(f"option {dest}: cannot convert {value!r}") from None
        resolved[dest] = value
    missing = [d for d in REQUIRED[command] if resolved.get(d) is None]
    if missing:
        raise CliError(f"{command}: missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return resolved


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------


def write_manifest(path, command: str, options: dict, inputs: list, outputs: list, started: float, extra=None) -> dict:
    manifest = {
        "command": command,
        "config": options,
        "seed": options.get("seed"),
        "inputs": [str(p) for p in inputs],
        "outputs": {str(p): file_digest(p) for p in outputs},
        "started_utc": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "wall_clock_s": time.time() - started,
        "version": __version__,
        "python": platform.python_version(),
    }
    if extra:
        manifest.update(extra)
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _manifest_path(args, default) -> Path:
    return Path(args.manifest) if getattr(args, "manifest", None) else Path(default)


# ---------------------------------------------------------------------------
# data loading
# ---------------------------------------------------------------------------


def _window(opts) -> WindowConfig:
    size = opts["window"]
    step = opts.get("step")
    try:
        return WindowConfig(size, step) if step else WindowConfig.for_size(size)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _load_windows(data_dir, window: WindowConfig) -> tuple[dict[str, SampleSet], WindowConfig]:
    """Per-subject windows from a recording directory or a built dataset archive."""
    root = Path(data_dir)
    if not root.is_dir():
        raise CliError(f"data directory {root} does not exist")
    if (root / "meta.json").exists():
        sets, _, archived = read_archive(root)
        if archived.window_frames != window.window_frames:
            log.info("using the archive's window of %d frames", archived.window_frames)
        return sets, archived
    try:
        recordings = load_recordings(root)
    except FileNotFoundError as exc:
        raise CliError(str(exc)) from None
    sets: dict[str, list] = {}
    for r in recordings:
        sets.setdefault(r.subject_id, []).append(segment_windows(r, window))
    return {s: SampleSet.concatenate(v) for s, v in sets.items()}, window


def _recordings(data_dir):
    root = Path(data_dir)
    if (root / "meta.json").exists():
        raise CliError("--loso and --window-study need a directory of recordings, not a dataset archive")
    try:
        return load_recordings(root)
    except FileNotFoundError as exc:
        raise CliError(str(exc)) from None


def _train_config(opts, mode=None) -> TrainConfig:
    try:
        return TrainConfig(
            learning_rate=opts["learning_rate"],
            weight_decay=opts["weight_decay"],
            batch_size=opts["batch_size"],
            epochs=opts["epochs"],
            seed=opts["seed"],
            mode=mode or opts["mode"],
            augment=opts["augment"],
            schedule=opts.get("schedule", "per-batch"),
            lr_schedule=opts.get("lr_schedule", "none"),
            generator_steps_per_batch=opts.get("generator_steps", 1),
        )
    except ValueError as exc:
        raise CliError(str(exc)) from None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    started = time.time()
    opts = resolve_options("synth", args)
    if opts["subjects"] < 2:
        raise CliError(
            f"--subjects {opts['subjects']}: leave-one-subject-out evaluation needs at least 2 subjects"
        )
    script = default_script()
    inputs = []
    if opts["script"]:
        inputs.append(opts["script"])
        try:
            pairs = json.loads(Path(opts["script"]).read_text(encoding="utf-8"))
            script = GestureScript.from_pairs(pairs)
        except (OSError, json.JSONDecodeError, ValueError, TypeError) as exc:
            raise CliError(f"cannot read gesture script {opts['script']}: {exc}") from None
    out = Path(opts["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create {out}: {exc}") from None
    written = []
    for rec in generate_dataset(opts["subjects"], script, seed=opts["seed"]):
        path = out / f"{rec.subject_id}.csv"
        write_recording(rec, path)
        written.append(path)
    write_manifest(_manifest_path(args, out / "manifest.json"), "synth", opts, inputs, written, started)
    print(f"wrote {len(written)} recordings to {out}")
    return 0


def cmd_build_dataset(args) -> int:
    started = time.time()
    opts = resolve_options("build-dataset", args)
    window = _window(opts)
    sets, window = _load_windows(opts["data"], window)
    stats = compute_norm_stats(SampleSet.concatenate(list(sets.values())))
    written = write_archive(opts["out"], sets, stats, window)
    counts = {s: len(v) for s, v in sets.items()}
    write_manifest(
        _manifest_path(args, Path(opts["out"]) / "manifest.json"),
        "build-dataset",
        opts,
        [opts["data"]],
        written,
        started,
        {"windows_per_subject": counts},
    )
    print(f"wrote {sum(counts.values())} windows for {len(sets)} subjects to {opts['out']}")
    return 0


def cmd_train(args) -> int:
    started = time.time()
    opts = resolve_options("train", args)
    config = _train_config(opts)
    sets, window = _load_windows(opts["data"], _window(opts))
    try:
        split = split_from_sets(sets, opts["target"], window, seed=config.seed)
    except ValueError as exc:
        raise CliError(str(exc)) from None

    def progress(report):
        log.info("epoch %d class_loss=%.4f disc_loss=%s", report.epoch, report.classification_loss, report.discrepancy_loss)

    result = fit(split, ModelConfig(), config, on_epoch=progress)
    ckpt_path = Path(opts["out"])
    loss_path = Path(opts["loss_csv"] or ckpt_path.with_suffix(".losses.csv"))
    info = {
        "target_subject": split.target_subject,
        "train_config": config.to_dict(),
        "n_source": len(split.source),
        "n_target_train": len(split.target_train),
        "n_target_test": len(split.target_test),
    }
    save_checkpoint(ckpt_path, Checkpoint(result.model, result.stats, window, info))
    atomic_write_text(loss_path, result.history_csv())
    load_checkpoint(ckpt_path)  # validate what was written
    write_manifest(
        _manifest_path(args, ckpt_path.with_suffix(".manifest.json")),
        "train",
        opts,
        [opts["data"]],
        [ckpt_path, loss_path],
        started,
    )
    print(f"wrote {ckpt_path} and {loss_path}")
    return 0


def _evaluate_checkpoint(opts) -> dict:
    from .evaluator import evaluate, latency_benchmark, nearest_neighbor_baseline

    ckpt = load_checkpoint(opts["ckpt"])
    target = ckpt.info.get("target_subject")
    if target is None:
        raise CliError("checkpoint does not record its target subject")
    seed = ckpt.info.get("train_config", {}).get("seed", 0)
    sets, window = _load_windows(opts["data"], ckpt.window)
    try:
        split = split_from_sets(sets, target, window, seed=seed)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    report, _ = evaluate(ckpt.model, split.target_test, ckpt.stats)
    report.latency_ms = latency_benchmark(ckpt.model, opts["latency_trials"], window, ckpt.stats).to_dict()
    out = {"kind": "metrics", "subject": target, "labels": list(LABELS), **report.to_dict()}
    out["nn"] = nearest_neighbor_baseline(split, ckpt.stats).to_dict()
    return out


def _metrics_csv(report: dict) -> str:
    def fmt(v):
        return "" if v is None else f"{100 * v:.1f}"

    head = ",".join(["subject", *LABELS, "mean", "overall"])
    row = ",".join(
        [report["subject"], *map(fmt, report["per_class_accuracy"]), fmt(report["mean_class_accuracy"]), fmt(report["overall_accuracy"])]
    )
    return head + "\n" + row + "\n"


def cmd_eval(args) -> int:
    from .evaluator import loso_suite, window_size_study, window_study_to_csv, window_study_to_dict

    started = time.time()
    opts = resolve_options("eval", args)
    if not (opts["loso"] or opts["window_study"]) and not opts["ckpt"]:
        raise CliError("eval needs --ckpt, or --loso / --window-study")
    inputs = [opts["data"]] + ([opts["ckpt"]] if opts["ckpt"] else [])
    subjects = opts["subjects"].split(",") if opts["subjects"] else None
    config = _train_config(opts)

    if opts["window_study"]:
        try:
            sizes = [int(s) for s in opts["sizes"].split(",")]
        except ValueError:
            raise CliError(f"--sizes must be comma-separated integers, got {opts['sizes']!r}") from None
        rows = window_size_study(_recordings(opts["data"]), sizes, ModelConfig(), config, subjects, opts["workers"])
        report, csv_text = window_study_to_dict(rows), window_study_to_csv(rows)
    elif opts["loso"]:
        recs = _recordings(opts["data"])
        try:
            loso = loso_suite(recs, _window(opts), ModelConfig(), config, subjects, workers=opts["workers"])
        except ValueError as exc:
            raise CliError(str(exc)) from None
        report, csv_text = loso.to_dict(), loso.to_csv()
    else:
        report = _evaluate_checkpoint(opts)
        csv_text = _metrics_csv(report)

    out = Path(opts["out"])
    atomic_write_text(out, json.dumps(report, indent=2) + "\n")
    outputs = [out]
    if opts["csv"]:
        atomic_write_text(opts["csv"], csv_text)
        outputs.append(Path(opts["csv"]))
    write_manifest(_manifest_path(args, out.with_suffix(".manifest.json")), "eval", opts, inputs, outputs, started)
    print(csv_text, end="")
    return 0


def cmd_serve(args) -> int:
    from .stream_service import parse_bind, serve

    started = time.time()
    opts = resolve_options("serve", args)
    if not Path(opts["ckpt"]).is_file():
        raise CliError(f"checkpoint {opts['ckpt']} not found")
    try:
        parse_bind(opts["bind_addr"])
    except ValueError as exc:
        raise CliError(str(exc)) from None
    write_manifest(
        _manifest_path(args, Path(opts["ckpt"]).with_suffix(".serve.manifest.json")),
        "serve",
        opts,
        [opts["ckpt"]],
        [],
        started,
        {"model_id": file_digest(opts["ckpt"], 12)},
    )
    serve(opts["ckpt"], opts["bind_addr"])
    return 0


def cmd_replay(args) -> int:
    from .stream_service import ReplayConfig, replay, write_session

    started = time.time()
    opts = resolve_options("replay", args)
    if not Path(opts["recording"]).is_file():
        raise CliError(f"recording {opts['recording']} not found")
    config = ReplayConfig(submit_every_frames=opts["submit_every"], realtime=opts["realtime"], retries=opts["retries"])
    try:
        report = replay(opts["recording"], opts["address"], config)
    except ConnectionError as exc:
        raise CliError(str(exc)) from None
    out = Path(opts["out"])
    write_session(report, out)
    latencies = [w.latency_ms for w in report.windows]
    summary = {
        "windows": len(report.windows),
        "accuracy": report.accuracy,
        "median_latency_ms": float(np.median(latencies)) if latencies else None,
        "model_id": report.model_id,
    }
    write_manifest(
        _manifest_path(args, out.with_suffix(".manifest.json")),
        "replay",
        opts,
        [opts["recording"]],
        [out],
        started,
        {"summary": summary},
    )
    print(json.dumps(summary))
    return 0


def cmd_plot(args) -> int:
    from .plotting import MalformedReport, render_report

    started = time.time()
    opts = resolve_options("plot", args)
    try:
        report = json.loads(Path(opts["report"]).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CliError(f"report {opts['report']} not found") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"report {opts['report']} is not valid JSON: {exc}") from None
    try:
        render_report(report, opts["out"])
    except MalformedReport as exc:
        raise CliError(f"malformed report {opts['report']}: {exc}") from None
    out = Path(opts["out"])
    write_manifest(_manifest_path(args, out.with_suffix(".manifest.json")), "plot", opts, [opts["report"]], [out], started)
    print(f"wrote {out}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "build-dataset": cmd_build_dataset,
    "train": cmd_train,
    "eval": cmd_eval,
    "serve": cmd_serve,
    "replay": cmd_replay,
    "plot": cmd_plot,
}


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add(p, *names, **kw):
    kw.setdefault("default", None)
    p.add_argument(*names, **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wipgest", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--manifest", help="where to write the run manifest")
        return p

    p = command("synth", "generate synthetic subject recordings")
    _add(p, "--subjects", type=int, help="number of subjects (>= 2; default 14)")
    _add(p, "--seed", type=int)
    _add(p, "--out", help="output directory")
    _add(p, "--script", help="JSON list of [gesture, seconds] pairs")

    p = command("build-dataset", "window recordings into a dataset archive")
    _add(p, "--data", help="directory of recordings")
    _add(p, "--out", help="archive directory")
    _add(p, "--window", type=int, help="window length in frames (default 6)")
    _add(p, "--step", type=int, help="window step in frames (default half the window)")

    def training_flags(p, full=True):
        _add(p, "--mode", choices=["mcd", "source-only"])
        _add(p, "--epochs", type=int)
        _add(p, "--learning-rate", "--lr", dest="learning_rate", type=float)
        _add(p, "--weight-decay", type=float)
        _add(p, "--batch-size", type=int)
        _add(p, "--seed", type=int)
        _add(p, "--window", type=int)
        _add(p, "--augment", action=argparse.BooleanOptionalAction)
        if full:
            _add(p, "--step", type=int)
            _add(p, "--schedule", choices=["per-batch", "per-epoch"])
            _add(p, "--lr-schedule", choices=["none", "cosine"])
            _add(p, "--generator-steps", type=int)

    p = command("train", "train one model for a held-out target subject")
    _add(p, "--data", help="recording directory or dataset archive")
    _add(p, "--target", help="held-out subject id")
    training_flags(p)
    _add(p, "--out", help="checkpoint path")
    _add(p, "--loss-csv", help="loss history path (default: <checkpoint>.losses.csv)")

    p = command("eval", "evaluate a checkpoint or run the LOSO / window-size studies")
    _add(p, "--ckpt")
    _add(p, "--data")
    _add(p, "--loso", action=argparse.BooleanOptionalAction)
    _add(p, "--window-study", action=argparse.BooleanOptionalAction)
    _add(p, "--sizes", help="window sizes for --window-study (default 3,6,10,16)")
    _add(p, "--subjects", help="comma-separated subset of held-out subjects")
    _add(p, "--workers", type=int, help="parallel fold trainings")
    _add(p, "--latency-trials", type=int)
    training_flags(p, full=False)
    _add(p, "--out", help="JSON report path")
    _add(p, "--csv", help="also write a CSV table here")

    p = command("serve", "host a checkpoint over HTTP")
    _add(p, "--ckpt")
    _add(p, "--bind-addr", "--bind", dest="bind_addr", help="HOST:PORT (env WIP_BIND_ADDR)")

    p = command("replay", "stream a recording through a running service")
    _add(p, "--recording")
    _add(p, "--address", help="service HOST:PORT or URL")
    _add(p, "--submit-every", type=int, help="frames between submissions (6 = 180 ms, 3 = 90 ms)")
    _add(p, "--realtime", action=argparse.BooleanOptionalAction)
    _add(p, "--retries", type=int)
    _add(p, "--out", help="session report (JSON lines)")

    p = command("plot", "render a report as an image")
    _add(p, "--report")
    _add(p, "--out")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"wipgest {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"wipgest {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
