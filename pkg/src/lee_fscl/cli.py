"""Command-line driver: ``lee synth | pretrain | fscl | report``.

Settings come from an optional JSON config file (sections ``data``, ``synth``,
``pretrain``, ``fscl``, ``report``); command-line flags override the file.
Exit codes: 0 ok, 1 internal error, 2 config error, 3 data error, 4 empty input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .data import export_canonical
from .errors import CheckpointError, ConfigError, DataError, EmptyInputError, LeeError
from .experiment import (
    ALPHA_SWEEP,
    GridConfig,
    SynthSpec,
    default_excluded,
    execute_run,
    expand_grid,
    load_trials,
    prepare_target,
    pretrain_pipeline,
    read_results_csv,
    results_csv_text,
    synth_trials,
    write_json_atomic,
)
from .metrics import aggregate_runs
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .pretrain import PretrainConfig

log = logging.getLogger("lee")

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_DATA, EXIT_EMPTY = 0, 1, 2, 3, 4

DEFAULTS = {
    "synth": {"source_classes": 20, "source_subjects": 8, "source_reps": 10, "target_classes": 6,
              "target_reps": 8, "target_subjects": 1, "raw_length": 64, "seed": 0},
    "pretrain": {"excluded_subject": None, "gestures": None, "n_gestures": 16, "epochs": 50, "batch_size": 32,
                 "lr": 1e-3, "seed": 0, "hidden": 64, "embed": 14, "length": 50, "dropout": 0.5,
                 "scaler": "mean", "strategy": "mean", "preserved_subjects": None, "preserved_gestures": None,
                 "dtype": "<f8", "target_gestures": None},
    "fscl": {"modes": ["lee"], "shots": [5], "alpha": 0.5, "alpha_sweep": False,
             "orders": ["order1", "order2", "order3", "order4", "order5"], "repeats": 2, "seed": 0,
             "participants": None, "epochs": 15, "lr": 1e-3, "workers": 1, "frozen_dropout": False,
             "scaler_fit": "source"},
    "report": {},
}


def _csv_list(text, cast=str):
    return [cast(x.strip()) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lee", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", help="JSON config file")
        if data:
            sp.add_argument("--data", help="data path (CSV file or dataset root; relative to $LEE_DATA_ROOT)")
            sp.add_argument("--format", choices=["canonical", "smartwatch", "motion", "synth"])

    sp = sub.add_parser("synth", help="write synthetic source+target trials as canonical CSV")
    common(sp, data=False)
    sp.add_argument("--out", required=True)
    for name in DEFAULTS["synth"]:
        sp.add_argument("--" + name.replace("_", "-"), dest=name, type=int)

    sp = sub.add_parser("pretrain", help="pretrain on the source domain and store checkpoint + z_c")
    common(sp)
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.add_argument("--excluded-subject")
    sp.add_argument("--gestures", type=_csv_list)
    sp.add_argument("--target-gestures", type=_csv_list)
    sp.add_argument("--preserved-subjects", type=_csv_list)
    sp.add_argument("--preserved-gestures", type=_csv_list)
    for name in ("n_gestures", "epochs", "batch_size", "seed", "hidden", "embed", "length"):
        sp.add_argument("--" + name.replace("_", "-"), dest=name, type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--dropout", type=float)
    sp.add_argument("--scaler", choices=["mean", "median"])
    sp.add_argument("--strategy", choices=["mean", "class_mean"])
    sp.add_argument("--dtype", choices=["<f8", "<f4"])

    sp = sub.add_parser("fscl", help="run the few-shot continual learning grid")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True, help="results directory")
    sp.add_argument("--modes", type=_csv_list)
    sp.add_argument("--shots", type=lambda t: _csv_list(t, int))
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--alpha-sweep", action="store_true", default=None)
    sp.add_argument("--orders", type=_csv_list)
    sp.add_argument("--participants", type=_csv_list)
    sp.add_argument("--repeats", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--frozen-dropout", action="store_true", default=None)
    sp.add_argument("--scaler-fit", choices=["source", "target"])

    sp = sub.add_parser("report", help="aggregate a results directory into tables and SVG charts")
    sp.add_argument("results", help="results directory written by `lee fscl`")
    sp.add_argument("--out", help="report directory (default: <results>/report)")
    return p


def resolve_settings(args, command: str) -> tuple[dict, dict | None]:
    """Merge defaults, the config-file section and explicit flags, in that order."""
    file_cfg = {}
    if getattr(args, "config", None):
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {args.config} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
    section = file_cfg.get(command, {})
    unknown = set(section) - set(DEFAULTS[command])
    if unknown:
        raise ConfigError(f"unknown {command} settings: {sorted(unknown)}")
    settings = {**DEFAULTS[command], **section}
    for key in DEFAULTS[command]:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value

    data = file_cfg.get("data")
    if getattr(args, "format", None) or getattr(args, "data", None):
        data = dict(data or {})
        if args.format:
            data["format"] = args.format
        if args.data:
            data["path"] = args.data
        data.setdefault("format", "canonical")
    return settings, data


# subcommands ------------------------------------------------------------------------

def cmd_synth(args) -> int:
    settings, _ = resolve_settings(args, "synth")
    spec = SynthSpec(**settings)
    trials = synth_trials(spec)
    out = Path(args.out)
    tmp = out.with_name(out.name + ".tmp")
    export_canonical(trials, tmp)
    tmp.replace(out)
    log.info("wrote %d trials to %s", len(trials), out)
    return EXIT_OK


def _require_data(data):
    if data is None:
        raise ConfigError("no data source given (use --data/--format or a 'data' config section)")
    return data


def cmd_pretrain(args) -> int:
    s, data = resolve_settings(args, "pretrain")
    trials = load_trials(_require_data(data), "source")
    excluded = s["excluded_subject"] or default_excluded(trials)
    if excluded not in {t.subject for t in trials}:
        raise ConfigError(f"excluded subject {excluded!r} is not in the source data")
    target = s["target_gestures"]
    if target is None:
        try:
            target = sorted({t.gesture for t in load_trials(data, "target")})
        except DataError:
            target = []
    model = ModelConfig(hidden=s["hidden"], embed=s["embed"], length=s["length"], dropout=s["dropout"])
    pcfg = PretrainConfig(gestures=s["gestures"], n_gestures=s["n_gestures"], excluded_subject=excluded,
                          target_gestures=target, epochs=s["epochs"], batch_size=s["batch_size"], lr=s["lr"],
                          seed=s["seed"], model=model)
    ckpt, report, _ = pretrain_pipeline(trials, pcfg, length=s["length"], scaler_method=s["scaler"],
                                        strategy=s["strategy"], preserved_subjects=s["preserved_subjects"],
                                        preserved_gestures=s["preserved_gestures"])
    log.info("excluded subject %s; training batches drew subjects %s", excluded,
             sorted(report.batch_subjects_seen))
    out = Path(args.out)
    save_checkpoint(ckpt, out, dtype=s["dtype"])
    write_json_atomic({
        "settings": s,
        "epoch_loss": report.epoch_loss,
        "heldout_accuracy": report.heldout_accuracy,
        "heldout_subject": report.heldout_subject,
        "train_subjects": report.train_subjects,
        "batch_subjects_seen": sorted(report.batch_subjects_seen),
        "gestures": report.gestures,
        "z_c": ckpt.preserved.z_c.tolist(),
        "preserved_subjects": ckpt.preserved.subjects,
        "preserved_gestures": ckpt.preserved.gestures,
    }, out.with_name(out.name + ".json"))
    return EXIT_OK


_WORKER = {}


def _init_worker(checkpoint, samples, options):
    _WORKER.update(checkpoint=checkpoint, samples=samples, options=options)


def _run_cell(spec):
    return spec, execute_run(spec, _WORKER["checkpoint"], _WORKER["samples"], **_WORKER["options"])


def cmd_fscl(args) -> int:
    s, data = resolve_settings(args, "fscl")
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise DataError(f"checkpoint {args.checkpoint} not found") from None
    samples = prepare_target(ckpt, load_trials(_require_data(data), "target"), s["scaler_fit"])
    participants = s["participants"] or sorted({x.subject for x in samples})
    unknown = set(participants) - {x.subject for x in samples}
    if unknown:
        raise ConfigError(f"unknown participants {sorted(unknown)}")
    alphas = list(ALPHA_SWEEP) if s["alpha_sweep"] else [s["alpha"]]
    grid = GridConfig(modes=s["modes"], shots=s["shots"], alphas=alphas, orders=s["orders"],
                      repeats=s["repeats"], master_seed=s["seed"])
    specs = expand_grid(grid, participants)

    out = Path(args.out)
    runs_dir = out / "runs"
    runs_dir.mkdir(parents=True, exist_ok=True)
    write_json_atomic({"settings": s, "data": data, "checkpoint": str(args.checkpoint)}, out / "fscl_config.json")
    todo = [sp for sp in specs if not (runs_dir / sp.filename).exists()]
    log.info("%d grid cells, %d already complete", len(specs), len(specs) - len(todo))
    options = {"epochs": s["epochs"], "lr": s["lr"], "frozen_dropout": s["frozen_dropout"]}
    if s["workers"] > 1 and len(todo) > 1:
        with ProcessPoolExecutor(s["workers"], initializer=_init_worker,
                                 initargs=(ckpt, samples, options)) as pool:
            for spec, run_log in pool.map(_run_cell, todo):
                write_json_atomic(run_log, runs_dir / spec.filename)
    else:
        _init_worker(ckpt, samples, options)
        for spec in todo:
            spec, run_log = _run_cell(spec)
            write_json_atomic(run_log, runs_dir / spec.filename)
            log.info("%s final accuracy %.3f", spec.run_id, run_log["sessions"][-1]["accuracy"])

    logs = [json.loads((runs_dir / sp.filename).read_text()) for sp in specs]
    tmp = out / "results.csv.tmp"
    tmp.write_text(results_csv_text(logs))
    tmp.replace(out / "results.csv")
    return EXIT_OK


# report -------------------------------------------------------------------------------

def summarize(rows) -> dict:
    """Mean and population std per (participant, mode, alpha, k) and session, from results rows."""
    groups = defaultdict(list)
    for r in rows:
        groups[(r["participant"], r["mode"], r["alpha"], r["k"])].append(r)
    summary = {}
    for key, grp in sorted(groups.items()):
        by_run = defaultdict(dict)
        final_session = max(r["session"] for r in grp)
        for r in grp:
            by_run[r["run"]][("accuracy", r["n_classes"])] = r["accuracy"]
            by_run[r["run"]][("macro_f1", r["n_classes"])] = r["macro_f1"]
            if r["session"] == final_session:
                for c, v in r["forgetting"].items():
                    by_run[r["run"]][("forgetting", c)] = v
        summary[key] = aggregate_runs(list(by_run.values()))
    return summary


def _fmt(cell):
    mean, std, _ = cell
    return f"{100 * mean:.1f} ± {100 * std:.1f}"


def render_tables(summary) -> str:
    lines = []
    for (participant, mode, alpha, k), agg in summary.items():
        lines.append(f"## {participant} / {mode} / alpha={alpha:g} / k={k}\n")
        sizes = sorted({n for (metric, n) in agg if metric == "accuracy"})
        lines.append("| gestures | accuracy (%) | macro F1 (%) | runs |")
        lines.append("|---|---|---|---|")
        for n in sizes:
            acc = agg[("accuracy", n)]
            lines.append(f"| {n} | {_fmt(acc)} | {_fmt(agg[('macro_f1', n)])} | {acc[2]} |")
        forget = sorted((c, v) for (metric, c), v in agg.items() if metric == "forgetting")
        if forget:
            lines.append("\nforgetting (F1 at introduction minus final F1): "
                         + ", ".join(f"{c}: {v[0]:.3f} ± {v[1]:.3f}" for c, v in forget))
        lines.append("")
    return "\n".join(lines)


def _slug(text) -> str:
    return "".join(ch if ch.isalnum() or ch in "-._" else "_" for ch in str(text))


def render_charts(rows, summary, out: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "lee-report"
    written = []
    panels = defaultdict(list)
    for (participant, mode, alpha, k), agg in summary.items():
        panels[(participant, k)].append((mode, alpha, agg))
    for (participant, k), series in sorted(panels.items()):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for mode, alpha, agg in series:
            sizes = sorted({n for (metric, n) in agg if metric == "accuracy"})
            means = np.array([agg[("accuracy", n)][0] for n in sizes])
            stds = np.array([agg[("accuracy", n)][1] for n in sizes])
            label = mode if mode != "lee" else f"lee (alpha={alpha:g})"
            ax.errorbar(sizes, 100 * means, yerr=100 * stds, marker="o", capsize=3, label=label)
        ax.set_xlabel("number of gestures")
        ax.set_ylabel("accuracy (%)")
        ax.set_title(f"{participant}, k={k}")
        ax.legend(fontsize=7)
        fig.tight_layout()
        path = out / f"accuracy_{_slug(participant)}_k{k}.svg"
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(path)

    last = defaultdict(int)
    for r in rows:
        last[r["run"]] = max(last[r["run"]], r["session"])
    confusions = defaultdict(list)
    for r in rows:
        if r["session"] == last[r["run"]]:
            confusions[(r["participant"], r["mode"], r["alpha"], r["k"])].append(np.array(r["confusion"]))
    for (participant, mode, alpha, k), mats in sorted(confusions.items()):
        total = np.sum(mats, axis=0)
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.imshow(total, cmap="Blues")
        for (i, j), v in np.ndenumerate(total):
            ax.text(j, i, str(v), ha="center", va="center", fontsize=7)
        ax.set_xlabel("predicted (session order)")
        ax.set_ylabel("true (session order)")
        ax.set_title(f"{mode} a={alpha:g} k={k}, {len(mats)} runs", fontsize=9)
        fig.tight_layout()
        path = out / f"confusion_{_slug(participant)}_{_slug(mode)}_a{alpha:g}_k{k}.svg"
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(path)
    return written


def cmd_report(args) -> int:
    results = Path(args.results)
    csv_path = results / "results.csv"
    if not csv_path.exists():
        raise EmptyInputError(f"no results.csv in {results}")
    rows = read_results_csv(csv_path)
    if not rows:
        raise EmptyInputError(f"{csv_path} holds no runs")
    out = Path(args.out) if args.out else results / "report"
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize(rows)
    (out / "tables.md").write_text(render_tables(summary))
    write_json_atomic([{"participant": p, "mode": m, "alpha": a, "k": k,
                        "cells": [{"metric": metric, "key": key, "mean": v[0], "std": v[1], "n": v[2]}
                                  for (metric, key), v in agg.items()]}
                       for (p, m, a, k), agg in summary.items()], out / "summary.json")
    render_charts(rows, summary, out)
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "pretrain": cmd_pretrain, "fscl": cmd_fscl, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EmptyInputError as exc:
        print(f"empty input: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except LeeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
