"""Per-participant experiment harness, grid runner and report emission.

One fold is one participant: that participant's windows are split into
train/validation/test, transforms are fit on the training partition
only, a fusion model is trained, and test metrics are computed.  A
configuration aggregates fold metrics as mean and sample SD over
participants.  Grid runs persist each fold as one JSON line so an
interrupted run resumes instead of recomputing.

Every fold derives its own seed from the run seed and participant id,
so results are independent of execution order and identical reruns are
byte-identical down to the emitted report.csv.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .corpus import Corpus, label_frames
from .fusion import (
    ModelConfig,
    build_model,
    predict,
    save_checkpoint,
    train_model,
)
from .metrics import METRIC_NAMES, MetricSet, aggregate, confusion, metric_set
from .preprocess import FrameNormalizer, PrincipalComponents, Window, make_windows
from .rng import derive_seed
from .splits import SCHEMES, SplitError, SplitPlan, split

SCHEME_DISPLAY = {
    "error_detection": "Error Detection",
    "multiple_error_detection": "Multiple Error Detection",
    "first_to_successive": "First to Successive Errors",
    "successive_discrimination": "Successive Error Discrimination",
}

REPORT_COLUMNS = (
    "model",
    "classification",
    "modalities",
    "representation",
    "fusion",
    "accuracy",
    "precision",
    "recall",
    "f1",
)


class HarnessError(RuntimeError):
    """A run-level failure, e.g. every fold of a configuration skipped."""


@dataclass
class FoldResult:
    participant_id: str
    config: ModelConfig  # fold-level config (seed = fold seed)
    metrics: MetricSet
    best_epoch: dict[str, int]
    wall_time: float
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]
    test_class_counts: dict[int, int]
    transform_checksum: str


@dataclass
class SkippedFold:
    participant_id: str
    reason: str


@dataclass
class ConfigResult:
    config: ModelConfig  # run-level config (seed = run seed)
    config_id: str
    folds: list[FoldResult] = field(default_factory=list)
    skipped: list[SkippedFold] = field(default_factory=list)

    def aggregate(self) -> dict[str, tuple[float, float]]:
        if not self.folds:
            raise HarnessError(
                f"every fold of configuration {self.config_id} was skipped"
            )
        return aggregate([f.metrics for f in self.folds])


@dataclass
class GridReport:
    results: list[ConfigResult]


def config_id(cfg: ModelConfig) -> str:
    """Stable short identifier for a configuration."""
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.blake2b(blob.encode("utf-8"), digest_size=8).hexdigest()


def fold_seed(run_seed: int, participant_id: str) -> int:
    return derive_seed(run_seed, "fold", participant_id)


def fit_transforms(cfg: ModelConfig, windows: list[Window], train_idx) -> dict:
    """Fit the configured representation per modality on training windows."""
    transforms = {}
    for m in cfg.modalities:
        if cfg.representation == "raw":
            transforms[m] = None
            continue
        train = np.stack([windows[i].features[m] for i in train_idx])
        if cfg.representation == "normalized":
            transforms[m] = FrameNormalizer().fit(train)
        else:
            transforms[m] = PrincipalComponents(variance_target=cfg.pca_variance).fit(train)
    return transforms


def apply_transforms(cfg: ModelConfig, transforms: dict, windows: list[Window],
                     idx) -> dict[str, np.ndarray] | None:
    """Stack and transform the selected windows; None when idx is empty."""
    idx = list(idx)
    if not idx:
        return None
    out = {}
    for m in cfg.modalities:
        stacked = np.stack([windows[i].features[m] for i in idx])
        t = transforms[m]
        out[m] = stacked if t is None else t.transform(stacked)
    return out


def transform_checksum(cfg: ModelConfig, transforms: dict) -> str:
    """Digest of all fitted transform parameters, for leakage re-assertion."""
    h = hashlib.sha256()
    for m in cfg.modalities:
        h.update(m.encode("utf-8"))
        t = transforms[m]
        if t is None:
            h.update(b"raw")
        elif isinstance(t, FrameNormalizer):
            h.update(b"normalized")
            h.update(np.ascontiguousarray(t.mean_, dtype="<f8").tobytes())
            h.update(np.ascontiguousarray(t.scale_, dtype="<f8").tobytes())
        else:
            h.update(b"pca")
            h.update(np.ascontiguousarray(t.mean_, dtype="<f8").tobytes())
            h.update(np.ascontiguousarray(t.components_, dtype="<f8").tobytes())
    return h.hexdigest()


def _labels_for(plan: SplitPlan, idx) -> np.ndarray:
    return np.asarray([plan.class_of[i] for i in idx], dtype=np.int64)


def run_fold(corpus: Corpus, participant_id: str, cfg: ModelConfig,
             checkpoint_path=None) -> FoldResult:
    """Label, window, split, fit transforms, train and evaluate one fold.

    Raises SplitError when the participant's windows cannot satisfy the
    scheme (callers record that as a skipped fold).
    """
    started = time.perf_counter()
    session = corpus.session(participant_id)
    missing = [m for m in cfg.modalities if m not in session.features]
    if missing:
        raise SplitError(f"participant {participant_id} lacks modalities {missing}")
    labels = label_frames(session)
    windows = make_windows(session, labels, cfg.window, cfg.stride)
    if not windows:
        raise SplitError(
            f"participant {participant_id} has no complete window of length {cfg.window}"
        )
    seed = fold_seed(cfg.seed, participant_id)
    fold_cfg = replace(cfg, seed=seed)
    plan = split(windows, cfg.scheme, seed)
    if not plan.test:
        raise SplitError(f"participant {participant_id} yields an empty test set")
    transforms = fit_transforms(fold_cfg, windows, plan.train)
    X_train = apply_transforms(fold_cfg, transforms, windows, plan.train)
    X_val = apply_transforms(fold_cfg, transforms, windows, plan.val)
    X_test = apply_transforms(fold_cfg, transforms, windows, plan.test)
    y_train = _labels_for(plan, plan.train)
    y_val = _labels_for(plan, plan.val) if plan.val else None
    y_test = _labels_for(plan, plan.test)
    dims = {m: X_train[m].shape[2] for m in fold_cfg.modalities}
    model = build_model(fold_cfg, dims)
    history = train_model(model, X_train, y_train, X_val, y_val)
    preds = predict(model, X_test)
    ms = metric_set(confusion(preds, y_test, fold_cfg.num_classes))
    if checkpoint_path is not None:
        Path(checkpoint_path).parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(checkpoint_path, model)
    counts = {}
    for c in y_test:
        counts[int(c)] = counts.get(int(c), 0) + 1
    return FoldResult(
        participant_id=participant_id,
        config=fold_cfg,
        metrics=ms,
        best_epoch={sub: h["best_epoch"] for sub, h in history.items()},
        wall_time=time.perf_counter() - started,
        train=plan.train,
        val=plan.val,
        test=plan.test,
        test_class_counts=counts,
        transform_checksum=transform_checksum(fold_cfg, transforms),
    )


def run_config(corpus: Corpus, cfg: ModelConfig, checkpoint_dir=None) -> ConfigResult:
    """Run every participant as one fold; split failures become skips."""
    cfg.validate()
    cid = config_id(cfg)
    result = ConfigResult(config=cfg, config_id=cid)
    for pid in corpus.participant_ids():
        ckpt = None
        if checkpoint_dir is not None:
            ckpt = Path(checkpoint_dir) / cid / f"{pid}.ckpt"
        try:
            result.folds.append(run_fold(corpus, pid, cfg, checkpoint_path=ckpt))
        except SplitError as e:
            result.skipped.append(SkippedFold(participant_id=pid, reason=str(e)))
    if not result.folds:
        raise HarnessError(f"every fold of configuration {cid} was skipped")
    return result


GRID_KEYS = (
    "scheme",
    "cell",
    "modalities",
    "representation",
    "fusion",
    "window",
    "stride",
    "hidden",
    "epochs",
    "lr",
    "batch",
    "seed",
    "pca_variance",
    "clip",
)


def _modalities_axis(value) -> list[tuple[str, ...]]:
    if isinstance(value, (list, tuple)) and value and all(
        isinstance(v, (list, tuple)) for v in value
    ):
        return [tuple(v) for v in value]
    return [tuple(value)]


def expand_grid(spec: dict) -> list[ModelConfig]:
    """Cartesian product of a config file's swept keys, in stable order.

    Scalar values fix a key; arrays sweep it.  ``modalities`` is a list
    of names for a single set, or a list of lists to sweep sets.
    """
    unknown = sorted(set(spec) - set(GRID_KEYS))
    if unknown:
        raise ValueError(f"unknown config keys {unknown}")
    if "scheme" not in spec:
        raise ValueError("config must set 'scheme'")
    axes = []
    for key in GRID_KEYS:
        if key not in spec:
            continue
        value = spec[key]
        if key == "modalities":
            axes.append((key, _modalities_axis(value)))
        elif isinstance(value, (list, tuple)):
            if not value:
                raise ValueError(f"empty sweep for key {key!r}")
            axes.append((key, list(value)))
        else:
            axes.append((key, [value]))
    configs = []
    names = [k for k, _ in axes]
    for combo in itertools.product(*(vals for _, vals in axes)):
        cfg = ModelConfig(**dict(zip(names, combo)))
        cfg.validate()
        configs.append(cfg)
    return configs


def _metrics_dict(ms: MetricSet) -> dict:
    return {name: getattr(ms, name) for name in METRIC_NAMES}


def fold_record(cid: str, run_cfg: ModelConfig, fr: FoldResult) -> dict:
    return {
        "config_id": cid,
        "participant_id": fr.participant_id,
        "config": run_cfg.to_dict(),
        "metrics": _metrics_dict(fr.metrics),
        "best_epoch": fr.best_epoch,
        "wall_time": fr.wall_time,
        "indices": {
            "train": list(fr.train),
            "val": list(fr.val),
            "test": list(fr.test),
        },
        "test_class_counts": {str(k): v for k, v in sorted(fr.test_class_counts.items())},
        "transform_checksum": fr.transform_checksum,
    }


def skip_record(cid: str, run_cfg: ModelConfig, sk: SkippedFold) -> dict:
    return {
        "config_id": cid,
        "participant_id": sk.participant_id,
        "config": run_cfg.to_dict(),
        "skipped": sk.reason,
    }


def _fold_from_record(rec: dict) -> FoldResult:
    cfg = ModelConfig.from_dict(rec["config"])
    seed = fold_seed(cfg.seed, rec["participant_id"])
    return FoldResult(
        participant_id=rec["participant_id"],
        config=replace(cfg, seed=seed),
        metrics=MetricSet(**rec["metrics"]),
        best_epoch=dict(rec.get("best_epoch", {})),
        wall_time=float(rec.get("wall_time", 0.0)),
        train=tuple(rec["indices"]["train"]),
        val=tuple(rec["indices"]["val"]),
        test=tuple(rec["indices"]["test"]),
        test_class_counts={int(k): v for k, v in rec.get("test_class_counts", {}).items()},
        transform_checksum=rec.get("transform_checksum", ""),
    )


def _load_records(folds_path: Path) -> dict[tuple[str, str], dict]:
    records = {}
    if folds_path.exists():
        with open(folds_path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                records[(rec["config_id"], rec["participant_id"])] = rec
    return records


def run_grid(corpus: Corpus, configs: list[ModelConfig], out_dir,
             save_checkpoints: bool = True, progress=None) -> GridReport:
    """Run all configurations over all participants with resume support.

    Completed folds are read back from ``folds.jsonl`` in out_dir and
    not recomputed; new folds are appended one line at a time.
    """
    if not configs:
        raise ValueError("no configurations to run")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    folds_path = out_dir / "folds.jsonl"
    records = _load_records(folds_path)
    results = []
    with open(folds_path, "a", encoding="utf-8") as sink:
        for cfg in configs:
            cfg.validate()
            cid = config_id(cfg)
            result = ConfigResult(config=cfg, config_id=cid)
            for pid in corpus.participant_ids():
                key = (cid, pid)
                rec = records.get(key)
                if rec is None:
                    ckpt = out_dir / "checkpoints" / cid / f"{pid}.ckpt" if save_checkpoints else None
                    try:
                        fr = run_fold(corpus, pid, cfg, checkpoint_path=ckpt)
                        rec = fold_record(cid, cfg, fr)
                    except SplitError as e:
                        rec = skip_record(cid, cfg, SkippedFold(pid, str(e)))
                    sink.write(json.dumps(rec, sort_keys=True) + "\n")
                    sink.flush()
                    records[key] = rec
                if "skipped" in rec:
                    result.skipped.append(SkippedFold(pid, rec["skipped"]))
                else:
                    result.folds.append(_fold_from_record(rec))
            if not result.folds:
                raise HarnessError(f"every fold of configuration {cid} was skipped")
            results.append(result)
            if progress is not None:
                agg = result.aggregate()
                progress(result, agg)
    return GridReport(results=results)


def report_from_folds(out_dir) -> GridReport:
    """Rebuild a GridReport from a previous run's folds.jsonl."""
    folds_path = Path(out_dir) / "folds.jsonl"
    if not folds_path.exists():
        raise FileNotFoundError(f"no folds.jsonl under {out_dir}")
    records = _load_records(folds_path)
    by_config: dict[str, ConfigResult] = {}
    order: list[str] = []
    for (cid, pid), rec in records.items():
        if cid not in by_config:
            by_config[cid] = ConfigResult(
                config=ModelConfig.from_dict(rec["config"]), config_id=cid
            )
            order.append(cid)
        result = by_config[cid]
        if "skipped" in rec:
            result.skipped.append(SkippedFold(pid, rec["skipped"]))
        else:
            result.folds.append(_fold_from_record(rec))
    report = GridReport(results=[by_config[cid] for cid in order])
    if not report.results:
        raise HarnessError("folds.jsonl holds no fold records")
    return report


def _sort_key(result: ConfigResult):
    cfg = result.config
    return (
        SCHEMES.index(cfg.scheme),
        cfg.cell,
        "+".join(cfg.modalities),
        cfg.representation,
        cfg.fusion,
        cfg.window,
        cfg.stride,
        cfg.hidden,
        cfg.epochs,
        cfg.lr,
        cfg.batch,
        cfg.pca_variance,
        cfg.seed,
    )


def format_msd(mean: float, sd: float) -> str:
    return f"{mean:.3f} ± {sd:.3f}"


def _report_rows(report: GridReport) -> list[dict]:
    results = sorted(report.results, key=_sort_key)
    best: dict[tuple[str, str], tuple[float, str]] = {}
    aggregates = {}
    for r in results:
        agg = r.aggregate()
        aggregates[r.config_id] = agg
        group = (r.config.scheme, r.config.cell)
        mean_acc = agg["accuracy"][0]
        if group not in best or mean_acc > best[group][0]:
            best[group] = (mean_acc, r.config_id)
    rows = []
    for r in results:
        cfg = r.config
        agg = aggregates[r.config_id]
        row = {
            "model": cfg.cell.upper(),
            "classification": SCHEME_DISPLAY[cfg.scheme],
            "modalities": "+".join(cfg.modalities),
            "representation": cfg.representation,
            "fusion": cfg.fusion,
            "scheme": cfg.scheme,
            "best": best[(cfg.scheme, cfg.cell)][1] == r.config_id,
        }
        for name in METRIC_NAMES:
            row[name] = format_msd(*agg[name])
        rows.append(row)
    return rows


def render_csv(report: GridReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(REPORT_COLUMNS) + ["best"])
    for row in _report_rows(report):
        writer.writerow([row[c] for c in REPORT_COLUMNS] + ["yes" if row["best"] else ""])
    return buf.getvalue()


def render_markdown(report: GridReport) -> str:
    lines = [
        "| " + " | ".join(c.capitalize() if c != "f1" else "F1" for c in REPORT_COLUMNS) + " |",
        "|" + "---|" * len(REPORT_COLUMNS),
    ]
    current_scheme = None
    for row in _report_rows(report):
        if row["scheme"] != current_scheme:
            current_scheme = row["scheme"]
            group = [f"*{SCHEME_DISPLAY[current_scheme]}*"] + [""] * (len(REPORT_COLUMNS) - 1)
            lines.append("| " + " | ".join(group) + " |")
        cells = [row[c] for c in REPORT_COLUMNS]
        if row["best"]:
            cells[0] = f"**{cells[0]}**"
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def emit_report(report: GridReport, fmt: str, out_path) -> Path:
    """Write the aggregated table as report.csv or report.md."""
    out_path = Path(out_path)
    if fmt == "csv":
        text = render_csv(report)
    elif fmt == "markdown":
        text = render_markdown(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8", newline="") as f:
        f.write(text)
    return out_path
