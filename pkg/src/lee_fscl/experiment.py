"""Experiment plumbing shared by the command line, the scripts and the acceptance suite.

Covers data-source resolution, the synthetic benchmark recipe, seed derivation,
grid expansion and the results CSV.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import (
    MOTION_GESTURES,
    NAMED_ORDERS,
    adapt_motion_gestures,
    adapt_smartwatch_layout,
    fit_robust_scaler,
    ingest_canonical,
    scale_samples,
    synth_generate,
    to_samples,
)
from .engine import MODES, LeeConfig, run_single
from .errors import ConfigError, DatasetError
from .metrics import forgetting
from .model import Checkpoint, ModelConfig
from .pretrain import PretrainConfig, compute_preserved_embedding, train_source

ALPHA_SWEEP = (0.01, 0.05, 0.1, 0.5, 0.9)
CSV_COLUMNS = ["run", "seed", "order", "session", "n_classes", "k", "mode", "alpha",
               "accuracy", "macro_f1", "forgetting_json", "confusion_json"]
DATA_ROOT_ENV = "LEE_DATA_ROOT"


@dataclass
class SynthSpec:
    source_classes: int = 20
    source_subjects: int = 8
    source_reps: int = 10
    target_classes: int = 6
    target_reps: int = 8
    target_subjects: int = 1
    raw_length: int = 64
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, int) or isinstance(v, bool):
                raise ConfigError(f"synth.{f.name} must be an integer")
        if self.source_classes < 2 or self.target_classes < 2:
            raise ConfigError("synthetic domains need at least two classes each")
        if min(self.source_subjects, self.source_reps, self.target_reps, self.target_subjects) < 1:
            raise ConfigError("synthetic subject and repetition counts must be positive")
        if self.raw_length < 2:
            raise ConfigError("synth.raw_length must be at least 2")
        if self.target_classes > len(MOTION_GESTURES):
            raise ConfigError(f"at most {len(MOTION_GESTURES)} named target classes")


def synth_trials(spec: SynthSpec) -> list:
    """Source trials (classes g00..) followed by target trials named after the motion gestures.

    Target templates are indexed after the source ones so the two vocabularies never share a shape.
    """
    rng = np.random.default_rng(spec.seed)
    src = synth_generate(spec.source_classes, spec.source_reps, "source", rng,
                         subjects=[f"U{i + 1:02d}" for i in range(spec.source_subjects)],
                         raw_length=spec.raw_length)
    tgt = synth_generate(spec.target_classes, spec.target_reps, "target", rng,
                         class_offset=spec.source_classes,
                         class_names=list(MOTION_GESTURES[:spec.target_classes]),
                         subjects=[f"T{i + 1:02d}" for i in range(spec.target_subjects)],
                         raw_length=spec.raw_length)
    return src + tgt


def resolve_path(path) -> Path:
    p = Path(path)
    root = os.environ.get(DATA_ROOT_ENV)
    if not p.is_absolute() and root:
        p = Path(root) / p
    return p


def load_trials(source: dict, domain: str) -> list:
    """Trials of one domain from a data-source description.

    ``{"format": "canonical", "path": ...}``, ``{"format": "smartwatch"|"motion", "path": ...}``
    or ``{"format": "synth", "synth": {...}}``. Relative paths resolve against ``$LEE_DATA_ROOT``.
    """
    if not isinstance(source, dict) or "format" not in source:
        raise ConfigError("data source must be an object with a 'format' key")
    fmt = source["format"]
    if fmt == "synth":
        try:
            spec = SynthSpec(**source.get("synth", {}))
        except TypeError as exc:
            raise ConfigError(f"bad synth spec: {exc}") from None
        trials = synth_trials(spec)
    elif fmt in ("canonical", "smartwatch", "motion"):
        if not source.get("path"):
            raise ConfigError(f"data source {fmt!r} needs a path")
        path = resolve_path(source["path"])
        if not path.exists():
            raise DatasetError(f"data path {path} does not exist")
        if fmt == "canonical":
            trials = ingest_canonical(path)
        elif fmt == "smartwatch":
            trials = adapt_smartwatch_layout(path)
        else:
            trials = adapt_motion_gestures(path)
    else:
        raise ConfigError(f"unknown data format {fmt!r}")
    chosen = [t for t in trials if t.domain == domain]
    if not chosen:
        raise DatasetError(f"no {domain} trials in the data source")
    return chosen


def default_excluded(trials) -> str:
    return sorted({t.subject for t in trials})[-1]


def pretrain_pipeline(source_trials, config: PretrainConfig, *, length: int = 50, scaler_method: str = "mean",
                      strategy: str = "mean", preserved_subjects=None, preserved_gestures=None):
    """Interpolate, fit the scaler on the source domain, pretrain, then attach scaler and z_c.

    The scaler sees every source trial so its statistics, and hence the target
    preprocessing, do not depend on which subject is held out.
    Returns the checkpoint, the pretraining report and the scaled source samples.
    """
    samples = to_samples(source_trials, length)
    if not any(s.subject != config.excluded_subject for s in samples):
        raise DatasetError("no source trials left after excluding the held-out subject")
    stats = fit_robust_scaler(samples, method=scaler_method)
    samples = scale_samples(stats, samples)
    ckpt, report = train_source(samples, config)
    ckpt.scaler = stats
    subjects = preserved_subjects if preserved_subjects is not None else report.train_subjects
    gestures = preserved_gestures if preserved_gestures is not None else report.gestures
    ckpt.preserved = compute_preserved_embedding(ckpt, samples, subjects=subjects, gestures=gestures,
                                                 strategy=strategy)
    return ckpt, report, samples


def prepare_target(checkpoint: Checkpoint, target_trials, scaler_fit: str = "source") -> list:
    """Interpolate and scale target trials.

    ``scaler_fit="source"`` reuses the checkpoint's source statistics. ``"target"``
    refits on the whole target pool (test trials included), for comparison only.
    """
    samples = to_samples(target_trials, checkpoint.config.length)
    if scaler_fit == "target":
        method = checkpoint.scaler.method if checkpoint.scaler is not None else "mean"
        return scale_samples(fit_robust_scaler(samples, method=method), samples)
    if scaler_fit != "source":
        raise ConfigError(f"scaler_fit must be 'source' or 'target', not {scaler_fit!r}")
    if checkpoint.scaler is None:
        raise ConfigError("checkpoint carries no scaler statistics")
    return scale_samples(checkpoint.scaler, samples)


def derive_seed(master_seed: int, order_index: int, repeat_index: int) -> int:
    """64-bit seed from (master seed, order index, repeat index)."""
    msg = f"{master_seed}:{order_index}:{repeat_index}".encode()
    return int.from_bytes(hashlib.blake2b(msg, digest_size=8).digest(), "little")


def resolve_order(order) -> tuple[str, list]:
    if isinstance(order, str):
        if order not in NAMED_ORDERS:
            raise ConfigError(f"unknown named order {order!r}")
        return order, list(NAMED_ORDERS[order])
    order = list(order)
    return "|".join(order), order


@dataclass(frozen=True)
class RunSpec:
    participant: str
    mode: str
    alpha: float
    k: int
    order_index: int
    order_name: str
    order: tuple
    repeat: int
    seed: int

    @property
    def run_id(self) -> str:
        return f"{self.participant}/{self.mode}/a{self.alpha:g}/k{self.k}/{self.order_name}/r{self.repeat}"

    @property
    def filename(self) -> str:
        return self.run_id.replace("/", "__").replace(" ", "_").replace("|", "-") + ".json"


@dataclass
class GridConfig:
    modes: list = field(default_factory=lambda: ["lee"])
    shots: list = field(default_factory=lambda: [5])
    alphas: list = field(default_factory=lambda: [0.5])
    orders: list = field(default_factory=lambda: list(NAMED_ORDERS))
    repeats: int = 2
    master_seed: int = 0
    participants: list | None = None

    def __post_init__(self):
        bad = [m for m in self.modes if m not in MODES]
        if bad:
            raise ConfigError(f"unknown modes {bad}")
        if self.repeats < 1:
            raise ConfigError("repeats must be at least 1")


def expand_grid(grid: GridConfig, participants) -> list[RunSpec]:
    specs = []
    for p in participants:
        for mode in grid.modes:
            # alpha does not enter the loss of the CE-only modes and the fixed ablations
            alphas = grid.alphas if mode == "lee" else [grid.alphas[0] if len(grid.alphas) == 1 else 0.5]
            for alpha in alphas:
                for k in grid.shots:
                    for oi, order in enumerate(grid.orders):
                        name, classes = resolve_order(order)
                        for r in range(grid.repeats):
                            specs.append(RunSpec(p, mode, float(alpha), int(k), oi, name, tuple(classes), r,
                                                 derive_seed(grid.master_seed, oi, r)))
    return specs


def execute_run(spec: RunSpec, checkpoint: Checkpoint, samples, *, epochs: int = 15, lr: float = 1e-3,
                frozen_dropout: bool = False) -> dict:
    """Run one grid cell and return its JSON-ready log."""
    mine = [s for s in samples if s.subject == spec.participant]
    missing = set(spec.order) - {s.label for s in mine}
    if missing:
        raise ConfigError(f"participant {spec.participant} has no data for {sorted(missing)}")
    cfg = LeeConfig(alpha=spec.alpha, shots=spec.k, epochs=epochs, lr=lr, mode=spec.mode,
                    frozen_dropout=frozen_dropout, model=checkpoint.config)
    z_c = checkpoint.preserved.z_c if (cfg.uses_embeddings and checkpoint.preserved is not None) else None
    result = run_single(checkpoint, z_c, mine, list(spec.order), cfg, spec.seed)
    sessions = []
    for i, rec in enumerate(result.records):
        f = forgetting(result.records[:i + 1], rec.classes)  # forgetting as of this session
        sessions.append({
            "session": rec.session,
            "classes": list(rec.classes),
            "accuracy": rec.accuracy,
            "macro_f1": rec.macro_f1,
            "f1": rec.f1,
            "confusion": rec.confusion.counts.tolist(),
            "forgetting": f.forgetting,
            "pairs": [list(p) for p in rec.pairs],
        })
    return {
        "run": spec.run_id,
        "participant": spec.participant,
        "seed": spec.seed,
        "order": spec.order_name,
        "classes": list(spec.order),
        "repeat": spec.repeat,
        "mode": spec.mode,
        "alpha": spec.alpha,
        "k": spec.k,
        "sessions": sessions,
        "final_loss": [[l.total, l.ci, l.ii, l.cls] for l in (s[-1] for s in result.loss_log)],
    }


def write_json_atomic(obj, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")
    os.replace(tmp, path)


def csv_rows(run_logs) -> list[dict]:
    rows = []
    for log in sorted(run_logs, key=lambda r: r["run"]):
        for s in log["sessions"]:
            rows.append({
                "run": log["run"], "seed": log["seed"], "order": log["order"], "session": s["session"],
                "n_classes": len(s["classes"]), "k": log["k"], "mode": log["mode"], "alpha": repr(log["alpha"]),
                "accuracy": repr(s["accuracy"]), "macro_f1": repr(s["macro_f1"]),
                "forgetting_json": json.dumps(s["forgetting"], sort_keys=True),
                "confusion_json": json.dumps(s["confusion"]),
            })
    return rows


def results_csv_text(run_logs) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(csv_rows(run_logs))
    return buf.getvalue()


def read_results_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["session"], r["n_classes"], r["k"] = int(r["session"]), int(r["n_classes"]), int(r["k"])
        r["alpha"], r["accuracy"], r["macro_f1"] = float(r["alpha"]), float(r["accuracy"]), float(r["macro_f1"])
        r["forgetting"] = json.loads(r["forgetting_json"])
        r["confusion"] = json.loads(r["confusion_json"])
        r["participant"] = r["run"].split("/", 1)[0]
    return rows


# synthetic distribution-shift benchmark ------------------------------------------------

@dataclass
class BenchmarkConfig:
    synth: SynthSpec = field(default_factory=lambda: SynthSpec(source_classes=16))
    pretrain_epochs: int = 15
    shots: int = 5
    repeats: int = 2
    master_seed: int = 0
    modes: tuple = ("lee", "vanilla_ft", "lee_no_preserved", "lee_no_temporary")
    alpha: float = 0.5
    frozen_dropout: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)


def synthetic_checkpoint(cfg: BenchmarkConfig):
    trials = synth_trials(cfg.synth)
    source = [t for t in trials if t.domain == "source"]
    target = [t for t in trials if t.domain == "target"]
    pcfg = PretrainConfig(excluded_subject=default_excluded(source), epochs=cfg.pretrain_epochs,
                          target_gestures=sorted({t.gesture for t in target}), model=cfg.model,
                          n_gestures=min(16, cfg.synth.source_classes))
    ckpt, report, _ = pretrain_pipeline(source, pcfg, length=cfg.model.length)
    return ckpt, report, prepare_target(ckpt, target)


def run_benchmark(cfg: BenchmarkConfig, checkpoint=None, samples=None) -> dict:
    """Mean final-session accuracy per mode over 5 named orders x ``repeats`` seeds."""
    if checkpoint is None:
        checkpoint, _, samples = synthetic_checkpoint(cfg)
    grid = GridConfig(modes=list(cfg.modes), shots=[cfg.shots], alphas=[cfg.alpha], repeats=cfg.repeats,
                      master_seed=cfg.master_seed)
    participants = sorted({s.subject for s in samples})
    final = {m: [] for m in cfg.modes}
    for spec in expand_grid(grid, participants):
        log = execute_run(spec, checkpoint, samples, frozen_dropout=cfg.frozen_dropout)
        final[spec.mode].append(log["sessions"][-1]["accuracy"])
    return {m: {"mean": float(np.mean(v)), "std": float(np.std(v)), "runs": v} for m, v in final.items()}


def config_dict(obj) -> dict:
    return asdict(obj)


# real-data reproduction -------------------------------------------------------------------

def public_dataset_accuracy(smartwatch_root, motion_root, participants, shots=(1, 3, 5), repeats: int = 2,
                       pretrain_epochs: int = 50, master_seed: int = 0) -> dict:
    """LEE final accuracy (6 gestures) per participant and shot count on the two public datasets.

    Returns ``{participant: {k: mean accuracy}}``.
    """
    source = adapt_smartwatch_layout(smartwatch_root)
    target = adapt_motion_gestures(motion_root)
    pcfg = PretrainConfig(excluded_subject=default_excluded(source), epochs=pretrain_epochs,
                          target_gestures=sorted({t.gesture for t in target}))
    ckpt, _, _ = pretrain_pipeline(source, pcfg)
    samples = prepare_target(ckpt, target)
    grid = GridConfig(modes=["lee"], shots=list(shots), repeats=repeats, master_seed=master_seed)
    out = {p: {k: [] for k in shots} for p in participants}
    for spec in expand_grid(grid, participants):
        log = execute_run(spec, ckpt, samples)
        out[spec.participant][spec.k].append(log["sessions"][-1]["accuracy"])
    return {p: {k: float(np.mean(v)) for k, v in ks.items()} for p, ks in out.items()}
