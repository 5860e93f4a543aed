"""Command-line interface: gen-data, train, unlearn, eval, probe, diag, report.

Every artifact-producing command writes ``<artifact>.manifest.json`` next to its
output with the full config echo, seed, paths, version and phase timings.
Artifacts themselves carry no timestamps, so re-running on identical inputs
reproduces them byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import click
import numpy as np

from . import __version__, baselines
from .data import SplitDataset, generate_blobs, load_manifest, save_csv, split_by_classes, split_random, write_manifest
from .esc import EscConfig, FeatureTransform, esc_fit, esc_fit_after, load_sidecar, merge_projectors, save_esc_sidecar, save_transform
from .esc_t import EscTConfig, esc_t_fit, save_esc_t_sidecar
from .metrics import (
    CSV_COLUMNS,
    REPORT_VERSION,
    EvalReport,
    ProbeConfig,
    accuracy,
    class_cosine_matrix,
    evaluate,
    features_by_class,
    kr_probe,
    recovery_rate,
    weight_diff,
)
from .model import CheckpointError, TrainConfig, TrainingDiverged, atomic_write, forward_features, load_checkpoint, save_checkpoint, train
from .pipeline import METHODS, random_reference

logger = logging.getLogger(__name__)

SEED_ENV = "UNLEARN_SEED"


# --- helpers ---------------------------------------------------------------------


def _int_list(ctx, param, value):
    if value is None:
        return None
    try:
        items = [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {value!r}") from None
    if not items:
        raise click.BadParameter("must list at least one integer")
    return tuple(items)


def _manifest_path(artifact: Path) -> Path:
    artifact = Path(artifact)
    return artifact.with_name(artifact.stem + ".manifest.json")


def _write_run_manifest(artifact: Path, command: str, config: dict, seed: int, inputs: dict, outputs: dict, timings: dict) -> None:
    doc = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {k: str(v) for k, v in inputs.items() if v is not None},
        "outputs": {k: str(v) for k, v in outputs.items()},
        "version": __version__,
        "timings": timings,
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    atomic_write(_manifest_path(artifact), json.dumps(doc, indent=2, default=str) + "\n")


def _method_seconds(artifact: Path) -> float | None:
    """Method-phase time recorded by ``unlearn`` for this artifact, if any."""
    path = _manifest_path(artifact)
    if not path.exists():
        return None
    try:
        return json.loads(path.read_text(encoding="utf-8"))["timings"]["method"]
    except (KeyError, TypeError, json.JSONDecodeError):
        return None


def _dataset_identity(manifest_path: Path, manifest: dict) -> dict:
    digest = hashlib.sha256()
    for key in ("train", "test"):
        digest.update((manifest_path.parent / manifest[key]).read_bytes())
    return {
        "classes": manifest["classes"],
        "input_dim": manifest["input_dim"],
        "seed": manifest.get("seed"),
        "sha256": digest.hexdigest(),
    }


def _load_split(data: Path, forget_classes, forget_fraction, seed: int) -> tuple[dict, SplitDataset]:
    if (forget_classes is None) == (forget_fraction is None):
        raise click.UsageError("give exactly one of --forget-classes or --forget-fraction")
    manifest, train_set, test_set = load_manifest(data)
    if forget_classes is not None:
        split = split_by_classes(train_set, test_set, forget_classes, manifest["classes"])
        forget = {"classes": list(split.forget_classes)}
    else:
        split = split_random(train_set, test_set, forget_fraction, seed)
        forget = {"fraction": forget_fraction, "seed": seed}
    identity = _dataset_identity(Path(data), manifest)
    identity["forget"] = forget
    return identity, split


def _load_transform(model, sidecars) -> FeatureTransform | None:
    """Compose sidecars in the given order; every one must match the model's feature dim."""
    out = None
    for path in sidecars:
        t = load_sidecar(path)
        if t.d != model.feature_dim:
            raise click.ClickException(
                f"sidecar {path} has feature dimension {t.d}, model features have {model.feature_dim}"
            )
        out = t if out is None else merge_projectors(out, t)
    return out


def _csv_text(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: "" if row.get(k) is None else row[k] for k in columns})
    return buf.getvalue()


def _matrix_csv(matrix: np.ndarray, row_labels, col_labels) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", *col_labels])
    for label, row in zip(row_labels, matrix):
        w.writerow([label, *(repr(float(v)) for v in row)])
    return buf.getvalue()


def _report_json(report: EvalReport) -> str:
    return json.dumps(report.to_dict(), indent=2) + "\n"


class _Group(click.Group):
    """Map library errors to exit code 1; click keeps 2 for usage errors."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except (click.exceptions.ClickException, click.exceptions.Exit, click.exceptions.Abort):
            raise
        except (ValueError, OSError, FloatingPointError, CheckpointError, TrainingDiverged) as exc:
            raise click.ClickException(str(exc)) from exc


seed_option = click.option(
    "--seed", type=int, default=0, envvar=SEED_ENV, show_default=True, help=f"Random seed (falls back to ${SEED_ENV})."
)
data_option = click.option(
    "--data", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True, help="Dataset manifest JSON."
)
model_option = click.option(
    "--model", "model_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True, help="Model checkpoint."
)
sidecar_option = click.option(
    "--sidecar", "sidecars", multiple=True, type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Erasure sidecar; repeat to compose in order.",
)


def forget_options(fn):
    fn = click.option("--forget-fraction", type=click.FloatRange(0, 1, min_open=True, max_open=True), default=None,
                      help="Forget a random fraction of training rows.")(fn)
    fn = click.option("--forget-classes", callback=_int_list, default=None, help="Comma-separated classes to forget.")(fn)
    return fn


@click.group(cls=_Group)
@click.version_option(__version__)
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool):
    """Feature-space knowledge deletion on small classifiers."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


# --- commands --------------------------------------------------------------------


@main.command("gen-data")
@click.option("--classes", type=click.IntRange(min=2), default=10, show_default=True)
@click.option("--per-class", type=click.IntRange(min=1), default=500, show_default=True, help="Training samples per class.")
@click.option("--per-class-test", type=click.IntRange(min=1), default=100, show_default=True)
@click.option("--dim", type=click.IntRange(min=1), default=20, show_default=True)
@click.option("--separation", type=click.FloatRange(min=0, min_open=True), default=8.0, show_default=True)
@seed_option
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), required=True, help="Output directory.")
def gen_data(classes, per_class, per_class_test, dim, separation, seed, out):
    """Generate Gaussian blobs as train/test CSVs plus a dataset manifest."""
    t0 = time.perf_counter()
    train_set, test_set = generate_blobs(classes, per_class, per_class_test, dim, separation, seed)
    t1 = time.perf_counter()
    out.mkdir(parents=True, exist_ok=True)
    save_csv(train_set, out / "train.csv")
    save_csv(test_set, out / "test.csv")
    write_manifest(out / "dataset.json", classes, dim, "train.csv", "test.csv", seed)
    config = dict(classes=classes, per_class=per_class, per_class_test=per_class_test, dim=dim, separation=separation)
    _write_run_manifest(
        out / "dataset.json", "gen-data", config, seed, {},
        {"manifest": out / "dataset.json", "train": out / "train.csv", "test": out / "test.csv"},
        {"generate": t1 - t0, "write": time.perf_counter() - t1},
    )
    click.echo(str(out / "dataset.json"))


@main.command("train")
@data_option
@click.option("--arch", callback=_int_list, default="64,32", show_default=True, help="Hidden layer widths; the last is d.")
@click.option("--epochs", type=click.IntRange(min=1), default=30, show_default=True)
@click.option("--lr", type=click.FloatRange(min=0), default=0.01, show_default=True)
@click.option("--momentum", type=click.FloatRange(0, 1, max_open=True), default=0.9, show_default=True)
@click.option("--batch-size", type=click.IntRange(min=1), default=64, show_default=True)
@seed_option
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True, help="Checkpoint path.")
def train_cmd(data, arch, epochs, lr, momentum, batch_size, seed, out):
    """Train the original classifier on the full training set."""
    t0 = time.perf_counter()
    manifest, train_set, _ = load_manifest(data)
    cfg = TrainConfig(epochs=epochs, batch_size=batch_size, learning_rate=lr, momentum=momentum, seed=seed)
    t1 = time.perf_counter()
    model, history = train(train_set, [manifest["input_dim"], *arch], cfg, classes=manifest["classes"])
    t2 = time.perf_counter()
    save_checkpoint(model, out)
    _write_run_manifest(
        out, "train", {**cfg.__dict__, "arch": list(arch), "train_accuracy": history["train_accuracy"]}, seed,
        {"data": data}, {"checkpoint": out}, {"load": t1 - t0, "train": t2 - t1, "write": time.perf_counter() - t2},
    )
    click.echo(f"train accuracy {history['train_accuracy']:.2f}%")


@main.command("unlearn")
@data_option
@model_option
@click.option("--method", type=click.Choice(METHODS), required=True)
@forget_options
@click.option("--p", "p", type=click.FloatRange(0, 100, max_open=True), default=3.0, show_default=True,
              help="Percent of principal directions to prune (esc).")
@click.option("--center", is_flag=True, help="Center forget features before the SVD (esc, esc-t).")
@click.option("--tau", type=click.FloatRange(0, 1, min_open=True, max_open=True), default=0.75, show_default=True,
              help="Mask binarization threshold (esc-t).")
@click.option("--lr", type=click.FloatRange(min=0), default=None, help="Learning rate; method default if omitted.")
@click.option("--epochs", type=click.IntRange(min=1), default=None, help="Epochs; method default if omitted.")
@click.option("--batch-size", type=click.IntRange(min=1), default=None)
@click.option("--prior", "priors", multiple=True, type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Earlier sidecars (esc only): fit on erased features and emit the merged transform.")
@seed_option
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True,
              help="Sidecar path (esc, esc-t) or checkpoint path (baselines).")
def unlearn_cmd(data, model_path, method, forget_classes, forget_fraction, p, center, tau, lr, epochs, batch_size, priors, seed, out):
    """Unlearn the forget set; emits an erasure sidecar or a new checkpoint."""
    t0 = time.perf_counter()
    identity, split = _load_split(data, forget_classes, forget_fraction, seed)
    model = load_checkpoint(model_path)
    if model.input_dim != identity["input_dim"]:
        raise click.ClickException(f"model expects {model.input_dim} inputs, dataset has {identity['input_dim']}")
    if priors and method != "esc":
        raise click.UsageError("--prior is only supported with --method esc")
    prior = _load_transform(model, priors)
    config: dict = {"method": method, "forget": identity["forget"]}

    t1 = time.perf_counter()
    if method == "esc":
        cfg = EscConfig(p=p, center=center, seed=seed)
        if prior is None:
            basis = esc_fit(model, split.forget_train.inputs, cfg)
            merged = None
        else:
            basis, merged = esc_fit_after(model, prior, split.forget_train.inputs, cfg)
        t2 = time.perf_counter()
        if merged is None:
            save_esc_sidecar(basis, out)
        else:
            save_transform(merged, out)
        config.update(cfg.__dict__, k=basis.k, priors=[str(x) for x in priors])
    elif method == "esc-t":
        kw = {k: v for k, v in (("learning_rate", lr), ("epochs", epochs), ("batch_size", batch_size)) if v is not None}
        cfg = EscTConfig(tau=tau, seed=seed, **kw)
        basis, state = esc_t_fit(model, split.forget_train, cfg, center=center)
        t2 = time.perf_counter()
        save_esc_t_sidecar(basis, tau, out)
        config.update(cfg.__dict__, center=center, epochs_run=state.epochs_run, steps=state.steps,
                      stopped_early=state.stopped_early, zeroed=int((basis.M_R == 0).sum()))
    elif method == "retrain":
        cfg = TrainConfig(
            epochs=epochs or 30, learning_rate=baselines.DEFAULT_LR["retrain"] if lr is None else lr,
            batch_size=batch_size or 64, seed=seed,
        )
        new, history = baselines.retrain(split.remain_train, model.layer_sizes, cfg, model.classes)
        t2 = time.perf_counter()
        save_checkpoint(new, out)
        config.update(cfg.__dict__, arch=model.layer_sizes)
    else:
        cfg = baselines.BaselineConfig(method, epochs=epochs, learning_rate=lr, batch_size=batch_size or 64, seed=seed)
        fn = {"ng": baselines.negative_gradient, "rl": baselines.random_label, "finetune": baselines.finetune}[method]
        new, history = fn(model, split.remain_train if method == "finetune" else split.forget_train, cfg)
        t2 = time.perf_counter()
        save_checkpoint(new, out)
        config.update(cfg.__dict__, diverged=history["diverged"])

    _write_run_manifest(
        out, "unlearn", config, seed, {"data": data, "model": model_path}, {"artifact": out},
        {"load": t1 - t0, "method": t2 - t1, "write": time.perf_counter() - t2},
    )
    click.echo(f"{method}: method phase {t2 - t1:.4f}s -> {out}")


def _evaluate_one(data, model_path, sidecars, forget_classes, forget_fraction, seed, label, probe_cfg):
    identity, split = _load_split(data, forget_classes, forget_fraction, seed)
    model = load_checkpoint(model_path)
    transform = _load_transform(model, sidecars)
    seconds = _method_seconds(sidecars[-1] if sidecars else model_path)
    report = evaluate(model, split, transform, label, random_reference(model, seed), probe_cfg, seconds, seed)
    report.extra["dataset"] = identity
    return report


@main.command("eval")
@data_option
@model_option
@sidecar_option
@forget_options
@click.option("--label", default=None, help="Method name in the report; defaults to the artifact stem.")
@click.option("--probe/--no-probe", default=True, show_default=True, help="Include the KR linear probe.")
@click.option("--json/--no-json", "as_json", default=True, show_default=True, help="Write the JSON report.")
@click.option("--csv/--no-csv", "as_csv", default=True, show_default=True, help="Write the CSV row.")
@seed_option
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True,
              help="Report path prefix; writes <out>.json and/or <out>.csv.")
def eval_cmd(data, model_path, sidecars, forget_classes, forget_fraction, label, probe, as_json, as_csv, seed, out):
    """Accuracy on all four splits, HM, MIA, ZRF and (optionally) KR."""
    if not (as_json or as_csv):
        raise click.UsageError("nothing to write: both --no-json and --no-csv given")
    t0 = time.perf_counter()
    label = label or (Path(sidecars[-1]).stem if sidecars else Path(model_path).stem)
    report = _evaluate_one(
        data, model_path, sidecars, forget_classes, forget_fraction, seed, label,
        ProbeConfig(seed=seed) if probe else None,
    )
    elapsed = time.perf_counter() - t0
    # render everything before touching the filesystem so failures leave no partial output
    outputs = {}
    if as_json:
        outputs["json"] = (out.with_suffix(".json"), _report_json(report))
    if as_csv:
        outputs["csv"] = (out.with_suffix(".csv"), _csv_text([report.csv_row()], CSV_COLUMNS))
    for path, text in outputs.values():
        atomic_write(path, text)
    _write_run_manifest(
        out.with_suffix(".json") if as_json else out.with_suffix(".csv"), "eval",
        {"label": label, "probe": probe, "forget": report.extra["dataset"]["forget"]}, seed,
        {"data": data, "model": model_path, **{f"sidecar{i}": s for i, s in enumerate(sidecars)}},
        {k: v[0] for k, v in outputs.items()}, {"eval": elapsed},
    )
    click.echo(f"{label}: acc_f {report.acc_f:.2f} acc_r {report.acc_r:.2f} hm {report.hm:.2f}")


@main.command("probe")
@data_option
@model_option
@sidecar_option
@forget_options
@click.option("--original", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None,
              help="Original checkpoint; adds the recovery rate against its forget accuracy.")
@click.option("--epochs", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--lr", type=click.FloatRange(min=0, min_open=True), default=0.001, show_default=True)
@click.option("--batch-size", type=click.IntRange(min=1), default=64, show_default=True)
@seed_option
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True, help="KR report JSON path.")
def probe_cmd(data, model_path, sidecars, forget_classes, forget_fraction, original, epochs, lr, batch_size, seed, out):
    """Train a fresh linear head on frozen (erased) features and report its accuracy."""
    t0 = time.perf_counter()
    identity, split = _load_split(data, forget_classes, forget_fraction, seed)
    model = load_checkpoint(model_path)
    transform = _load_transform(model, sidecars)
    cfg = ProbeConfig(epochs=epochs, learning_rate=lr, batch_size=batch_size, seed=seed)
    report = kr_probe(model, split, transform, cfg)
    report.seed = seed
    report.extra["dataset"] = identity
    if original is not None:
        ori_acc = accuracy(load_checkpoint(original), split.forget_train)
        report.extra["original_acc_f"] = ori_acc
        report.extra["recovery_rate"] = recovery_rate(report.acc_f, ori_acc) if ori_acc is not None else None
    atomic_write(out, _report_json(report))
    _write_run_manifest(
        out, "probe", {**cfg.__dict__, "forget": identity["forget"]}, seed,
        {"data": data, "model": model_path, "original": original, **{f"sidecar{i}": s for i, s in enumerate(sidecars)}},
        {"report": out}, {"probe": time.perf_counter() - t0},
    )
    click.echo(f"kr: acc_f {report.acc_f:.2f} acc_r {report.acc_r:.2f}")


@main.command("diag")
@data_option
@model_option
@sidecar_option
@click.option("--original", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None,
              help="Original checkpoint for weight differences and original-vs-erased cosines.")
@seed_option
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), required=True)
def diag_cmd(data, model_path, sidecars, original, seed, out_dir):
    """Class-mean cosine matrices, per-layer weight differences and a raw feature export."""
    t0 = time.perf_counter()
    _, train_set, _ = load_manifest(data)
    model = load_checkpoint(model_path)
    transform = _load_transform(model, sidecars)
    by_class = features_by_class(model, train_set, transform)
    labels = sorted(by_class)
    written = {}

    def emit(name, text):
        atomic_write(out_dir / name, text)
        written[name] = out_dir / name

    emit("cosine.csv", _matrix_csv(class_cosine_matrix(by_class), labels, labels))
    if original is not None:
        ori = load_checkpoint(original)
        ori_by_class = features_by_class(ori, train_set)
        emit("cosine_cross.csv", _matrix_csv(class_cosine_matrix(ori_by_class, by_class), labels, labels))
        diffs = weight_diff(ori, model)
        emit("weight_diff.csv", _csv_text([{"layer": k, "value": repr(v)} for k, v in diffs.items()], ["layer", "value"]))

    Z = forward_features(model, train_set.inputs)
    if transform is not None:
        Z = transform.matrix @ Z
    rows = [{**{f"z{j}": repr(float(v)) for j, v in enumerate(z)}, "label": int(y)} for z, y in zip(Z.T, train_set.labels)]
    emit("features.csv", _csv_text(rows, [f"z{j}" for j in range(Z.shape[0])] + ["label"]))
    _write_run_manifest(
        out_dir / "diag.json", "diag", {"sidecars": [str(s) for s in sidecars]}, seed,
        {"data": data, "model": model_path, "original": original}, written, {"diag": time.perf_counter() - t0},
    )
    click.echo(f"wrote {', '.join(sorted(written))} to {out_dir}")


TABLE_METRICS = ["acc_f", "acc_r", "acc_ft", "acc_rt", "hm", "hm_t", "mia", "zrf", "kr_acc_f", "seconds"]


def _metric(report: EvalReport, name: str):
    if name.startswith("kr_"):
        return getattr(report.kr, name[3:]) if report.kr is not None else None
    return getattr(report, name)


def render_table(reports: list[EvalReport]) -> tuple[str, list[str]]:
    """Markdown table grouped and sorted by method; returns (table, warnings)."""
    warnings = []
    identities = {json.dumps(r.extra.get("dataset"), sort_keys=True) for r in reports}
    if len(identities) > 1:
        warnings.append(f"reports come from {len(identities)} different dataset manifests")
    groups: dict[str, list[EvalReport]] = {}
    for r in reports:
        groups.setdefault(r.method, []).append(r)
    with_std = any(len(g) > 1 for g in groups.values())

    header = ["method", "n"]
    for m in TABLE_METRICS:
        header += [m, f"{m} std"] if with_std else [m]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for method in sorted(groups):
        group = groups[method]
        cells = [method, str(len(group))]
        for m in TABLE_METRICS:
            vals = [v for v in (_metric(r, m) for r in group) if v is not None]
            fmt = ".4f" if m == "seconds" else ".2f"
            mean = format(float(np.mean(vals)), fmt) if vals else "-"
            cells.append(mean)
            if with_std:
                cells.append(format(float(np.std(vals)), fmt) if len(vals) > 1 else "-")
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n", warnings


@main.command("report")
@click.argument("reports", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None, help="Markdown path; stdout if omitted.")
def report_cmd(reports, out):
    """Merge report JSONs into a Markdown table (mean and std across seeds)."""
    loaded = []
    for path in reports:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("version") != REPORT_VERSION:
            raise click.ClickException(f"{path}: report version {doc.get('version')!r}, expected {REPORT_VERSION}")
        loaded.append(EvalReport.from_dict(doc))
    table, warnings = render_table(loaded)
    for w in warnings:
        click.echo(f"warning: {w}", err=True)
    if out is None:
        click.echo(table, nl=False)
    else:
        atomic_write(out, table)
        _write_run_manifest(out, "report", {}, 0, {f"report{i}": p for i, p in enumerate(reports)}, {"table": out}, {})


if __name__ == "__main__":
    sys.exit(main())
