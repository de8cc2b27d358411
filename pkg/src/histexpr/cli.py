"""Command-line pipeline: preprocess, aggregate, train, predict, evaluate,
subtype, survival, benchmark.

Every subcommand is deterministic for a fixed ``--seed`` (measured wall
clock excepted); outputs are CSV/JSON plus static SVG plots. Exit codes: 0
success, 1 statistical/validation failure, 2 I/O or usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import expression as expr_mod
from . import features as feat_mod
from . import imageprep
from . import metrics
from . import regressor
from . import subtype as subtype_mod
from . import survival as surv_mod
from . import svgplot
from .errors import (
    AnalysisError,
    DatasetTooSmall,
    EmptyIntersection,
    HistexprError,
    ParseError,
    UsageError,
)

DEFAULT_SEED = 0


# ---------------------------------------------------------------- config

def load_config(path) -> dict:
    """Flat key=value file; '#' starts a comment, values are coerced."""
    settings: dict = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected key=value, got {raw!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        settings[key.replace("-", "_")] = _coerce(value.strip("\"'"))
    return settings


def _coerce(value: str):
    low = value.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        pass
    return value


class Settings:
    """Flag > config-file > default resolution for one invocation."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config = load_config(args.config) if args.config else {}

    def get(self, key: str, default=None):
        flag = getattr(self.args, key, None)
        if flag is not None:
            return flag
        return self.config.get(key, default)

    @property
    def seed(self) -> int:
        return int(self.get("seed", DEFAULT_SEED))

    @property
    def strict(self) -> bool:
        return bool(self.args.strict or self.config.get("strict", False))

    @property
    def output_dir(self) -> Path:
        out = Path(self.get("output_dir", "."))
        out.mkdir(parents=True, exist_ok=True)
        return out


def _write_json(payload, path) -> None:
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def _load_panel(settings: Settings) -> expr_mod.GenePanel:
    path = settings.get("panel")
    if path:
        return expr_mod.load_panel(path)
    return expr_mod.default_panel()


# ---------------------------------------------------------------- preprocess

def cmd_preprocess(settings: Settings) -> int:
    images_dir = Path(settings.args.images)
    if not images_dir.is_dir():
        raise UsageError(f"images directory not found: {images_dir}")
    masks_dir = Path(settings.args.masks) if settings.args.masks else None
    alpha = float(settings.get("alpha", imageprep.DEFAULT_ALPHA))
    beta = float(settings.get("beta", imageprep.DEFAULT_BETA))
    threshold = float(settings.get("tissue_threshold", imageprep.DEFAULT_TISSUE_THRESHOLD))
    ref_path = settings.get("reference_profile")
    reference = imageprep.StainProfile.load(ref_path) if ref_path else None

    out_root = settings.output_dir / "patches"
    out_root.mkdir(parents=True, exist_ok=True)
    processed = []
    errors = {}
    image_files = sorted(
        p for p in images_dir.iterdir()
        if p.suffix.lower() in (".png", ".ppm")
    )
    if not image_files:
        raise UsageError(f"no .png or .ppm images in {images_dir}")

    for path in image_files:
        patient = path.stem
        try:
            image = imageprep.load_rgb_image(path)
            mask = None
            if masks_dir is not None:
                mask_path = masks_dir / f"{patient}.png"
                if mask_path.exists():
                    mask = imageprep.load_mask(mask_path)
            if reference is not None:
                source = imageprep.estimate_stains_from_image(image, alpha, beta)
                image = imageprep.normalize_to_reference(image, source, reference)
            grid, patches = imageprep.tile(image, mask, threshold)
            patient_dir = out_root / patient
            patient_dir.mkdir(parents=True, exist_ok=True)
            names = []
            for (row, col), patch in zip(grid.origins, patches):
                name = f"{patient}_{row}_{col}.png"
                imageprep.save_png(patch, patient_dir / name)
                names.append(name)
            manifest = {
                "patient": patient,
                "patch_size": grid.patch_size,
                "tissue_threshold": grid.tissue_fraction_threshold,
                "origins": [list(o) for o in grid.origins],
                "patches": names,
                "retained": len(grid.origins),
                "total": grid.total_cells,
            }
            _write_json(manifest, patient_dir / "manifest.json")
            processed.append(patient)
        except (HistexprError, OSError, ValueError) as exc:
            if settings.strict:
                raise UsageError(f"{path.name}: {exc}") from exc
            errors[path.name] = str(exc)
    _write_json(
        {"processed": processed, "errors": errors},
        settings.output_dir / "preprocess_summary.json",
    )
    print(f"preprocess: {len(processed)} image(s), {len(errors)} error(s)")
    return 0


# ---------------------------------------------------------------- aggregate

def write_slide_features_csv(features: list[feat_mod.SlideFeature], path) -> None:
    width = len(features[0].z)
    lines = ["patient_id," + ",".join(f"f{i}" for i in range(width))]
    for sf in sorted(features, key=lambda s: s.patient_id):
        lines.append(sf.patient_id + "," + ",".join(repr(float(v)) for v in sf.z))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_slide_features_csv(path) -> list[feat_mod.SlideFeature]:
    features = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "patient_id":
            raise ParseError("slide feature header must start with patient_id", 1)
        width = len(header) - 1
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != width + 1:
                raise ParseError(f"expected {width + 1} fields", lineno)
            features.append(feat_mod.SlideFeature(
                row[0], np.array([float(v) for v in row[1:]], dtype=np.float64)
            ))
    if not features:
        raise UsageError(f"no rows in {path}")
    return features


def cmd_aggregate(settings: Settings) -> int:
    feature_dir = Path(settings.args.features)
    if not feature_dir.is_dir():
        raise UsageError(f"feature directory not found: {feature_dir}")
    files = sorted(feature_dir.glob("*.h2rf"))
    if not files:
        raise EmptyIntersection(f"no .h2rf files in {feature_dir}")
    slide_features = []
    skipped = {}
    width = None
    for path in files:
        try:
            patch_set = feat_mod.read_features(path)
            if width is None:
                width = patch_set.n_features
            elif patch_set.n_features != width:
                raise UsageError(
                    f"feature width {patch_set.n_features} != {width} of earlier files"
                )
            slide_features.append(feat_mod.aggregate(patch_set))
        except (HistexprError, OSError) as exc:
            if settings.strict:
                raise UsageError(f"{path.name}: {exc}") from exc
            skipped[path.name] = str(exc)
            print(f"warning: skipping {path.name}: {exc}", file=sys.stderr)
    if not slide_features:
        raise EmptyIntersection(f"no readable .h2rf files in {feature_dir}")
    out_csv = settings.output_dir / "slide_features.csv"
    write_slide_features_csv(slide_features, out_csv)
    _write_json(
        {
            "aggregated": sorted(sf.patient_id for sf in slide_features),
            "skipped": skipped,
            "n_features": width,
        },
        settings.output_dir / "aggregate_summary.json",
    )
    print(f"aggregate: {len(slide_features)} patient(s) -> {out_csv}")
    return 0


# ---------------------------------------------------------------- train

def _train_config(settings: Settings) -> regressor.TrainConfig:
    return regressor.TrainConfig(
        learning_rate=float(settings.get("learning_rate", 1e-3)),
        batch_size=int(settings.get("batch_size", 12)),
        patience=int(settings.get("patience", 4)),
        max_epochs=int(settings.get("max_epochs", 150)),
        seed=settings.seed,
        validation_fraction=float(settings.get("validation_fraction", 0.1)),
    )


def cmd_train(settings: Settings) -> int:
    panel = _load_panel(settings)
    slide_features = read_slide_features_csv(settings.args.features)
    matrix, rejected = expr_mod.load_expression(settings.args.expression, panel)
    dataset = feat_mod.assemble_dataset(slide_features, matrix.transform())
    config = _train_config(settings)
    result = regressor.train(dataset, config)

    model_path = settings.output_dir / "model.h2rm"
    regressor.save_model(result.model, model_path, panel.content_hash())
    regressor.write_history_csv(result.history, settings.output_dir / "history.csv")
    _write_json(
        {
            "patients_trained": len(dataset),
            "rejected_expression_rows": rejected,
            "dropped_feature_only": dataset.dropped_features,
            "dropped_expression_only": dataset.dropped_expression,
            "best_epoch": result.best_epoch,
            "best_val_mse": result.best_val_mse,
            "epochs_run": len(result.history),
            "config": {
                "learning_rate": config.learning_rate,
                "batch_size": config.batch_size,
                "patience": config.patience,
                "max_epochs": config.max_epochs,
                "seed": config.seed,
                "validation_fraction": config.validation_fraction,
            },
        },
        settings.output_dir / "train_summary.json",
    )
    print(f"train: best epoch {result.best_epoch}, "
          f"val mse {result.best_val_mse:.6g} -> {model_path}")
    return 0


# ---------------------------------------------------------------- predict

def cmd_predict(settings: Settings) -> int:
    panel = _load_panel(settings)
    model = regressor.load_model(settings.args.model, panel.content_hash())
    slide_features = read_slide_features_csv(settings.args.features)
    slide_features.sort(key=lambda s: s.patient_id)
    width = len(slide_features[0].z)
    if width != model.n_features:
        raise UsageError(f"model expects F={model.n_features}, features have F={width}")
    z = np.stack([sf.z for sf in slide_features])
    preds = regressor.forward_batch(model, z)
    matrix = expr_mod.ExpressionMatrix(
        [sf.patient_id for sf in slide_features], preds, transformed=True
    )
    out_path = settings.output_dir / "predictions.csv"
    expr_mod.save_expression(matrix, panel, out_path)
    print(f"predict: {len(slide_features)} patient(s) -> {out_path}")
    return 0


# ---------------------------------------------------------------- evaluate

def cmd_evaluate(settings: Settings) -> int:
    panel = _load_panel(settings)
    pred_matrix, _ = expr_mod.load_expression(settings.args.predictions, panel)
    truth_matrix, _ = expr_mod.load_expression(settings.args.expression, panel)
    truth_matrix = truth_matrix.transform()

    common = sorted(set(pred_matrix.patient_ids) & set(truth_matrix.patient_ids))
    if not common:
        raise EmptyIntersection("no shared patients between predictions and expression")
    p_row = {pid: i for i, pid in enumerate(pred_matrix.patient_ids)}
    t_row = {pid: i for i, pid in enumerate(truth_matrix.patient_ids)}
    pred = np.stack([pred_matrix.values[p_row[pid]] for pid in common])
    truth = np.stack([truth_matrix.values[t_row[pid]] for pid in common])

    report = metrics.evaluate(pred, truth, gene_names=panel.symbols, patient_ids=common)
    out = settings.output_dir
    metrics.write_gene_csv(report, out / "eval_genes.csv")
    metrics.write_patient_csv(report, out / "eval_patients.csv")
    metrics.write_summary_json(report, out / "eval_summary.json",
                               pam50_symbols=panel.pam50_symbols)

    summary = metrics.summary_dict(report, panel.pam50_symbols)
    panels = []
    gene_index = {g: j for j, g in enumerate(panel.symbols)}
    for entry in summary["top_genes_by_rho"]:
        j = gene_index[entry["symbol"]]
        panels.append((
            f"{entry['symbol']} rho={entry['rho']:.2f}",
            list(truth[:, j]), list(pred[:, j]), entry["pam50"],
        ))
    if panels:
        svgplot.scatter_grid(panels, out / "scatter_top20.svg")
    print(
        f"evaluate: median rho across patients "
        f"{report.median_patient_rho:.4f}, across genes {report.median_gene_rho:.4f}, "
        f"{report.n_significant}/{len(report.gene_names)} genes significant"
    )
    return 0


# ---------------------------------------------------------------- subtype

def _read_labels_csv(path) -> dict[str, str]:
    labels = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["patient_id", "subtype"]:
            raise ParseError("labels header must be patient_id,subtype", 1)
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) < 2:
                raise ParseError("expected patient_id,subtype", lineno)
            labels[row[0]] = row[1]
    return labels


def _write_subtype_csv(path, ids, calls, scores, classes) -> None:
    header = "patient_id,subtype," + ",".join(f"p_{c.lower()}" for c in classes)
    lines = [header]
    for pid, call, row in zip(ids, calls, scores):
        lines.append(f"{pid},{call}," + ",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_subtype(settings: Settings) -> int:
    panel = _load_panel(settings)
    matrix, _ = expr_mod.load_expression(settings.args.expression, panel)
    if settings.args.raw:
        matrix = matrix.transform()
    pam50_idx = panel.pam50_indices()
    if not pam50_idx:
        raise UsageError("panel has no pam50-flagged genes")
    values = matrix.values[:, pam50_idx]
    gene_order = [panel.symbols[j] for j in pam50_idx]
    out = settings.output_dir

    if settings.args.labels:
        label_map = _read_labels_csv(settings.args.labels)
        keep = [i for i, pid in enumerate(matrix.patient_ids) if pid in label_map]
        if not keep:
            raise EmptyIntersection("no labeled patients found in expression rows")
        fit_values = values[keep]
        fit_labels = [label_map[matrix.patient_ids[i]] for i in keep]
        centroid_model = subtype_mod.fit_centroids(fit_values, fit_labels, gene_order)
        centroid_model.save(out / "centroids.json")
        if settings.args.voting:
            voting = subtype_mod.fit_voting(fit_values, fit_labels, seed=settings.seed)
            pred_labels, simplices = subtype_mod.predict_voting(voting, fit_values)
            report = subtype_mod.classification_report(
                fit_labels, pred_labels, simplices, classes=voting.classes
            )
            _write_json(
                {
                    "classes": list(report.classes),
                    "accuracy": report.accuracy,
                    "macro_f1": report.macro_f1,
                    "per_class_f1": report.per_class_f1,
                    "per_class_auroc": report.per_class_auroc,
                },
                out / "voting_report.json",
            )
            _write_subtype_csv(
                out / "voting_predictions.csv",
                [matrix.patient_ids[i] for i in keep],
                pred_labels, simplices, voting.classes,
            )
    elif settings.args.centroids:
        centroid_model = subtype_mod.CentroidModel.load(settings.args.centroids)
    else:
        raise UsageError("provide --labels (fit) or --centroids (call)")

    calls = []
    scores = []
    for row in values:
        call, sims = subtype_mod.call_subtype(centroid_model, row)
        calls.append(call)
        scores.append(sims)
    _write_subtype_csv(out / "subtype_predictions.csv", matrix.patient_ids,
                       calls, scores, centroid_model.subtypes)
    print(f"subtype: {len(calls)} patient(s) -> {out / 'subtype_predictions.csv'}")
    return 0


# ---------------------------------------------------------------- survival

TABLE1_ROWS = [
    ("Tumour Grade", "1 & 2 vs. 3", "grade_1_2"),
    ("Tumour Size", ">20 vs. <=20 (mm)", "size_gt20mm"),
    ("Age", ">55 vs. <=55", "age_gt55"),
    ("LN status", "pos. vs. neg.", "ln_positive"),
    ("Predicted subtype", "LumB vs. LumA", "subtype_lumb"),
]


def _table1_design(records, subtype_of):
    columns = {
        "grade_1_2": np.array([1.0 if r.grade <= 2 else 0.0 for r in records]),
        "size_gt20mm": np.array([1.0 if r.size_mm > 20 else 0.0 for r in records]),
        "age_gt55": np.array([1.0 if r.age_years > 55 else 0.0 for r in records]),
        "ln_positive": np.array([1.0 if r.ln_positive else 0.0 for r in records]),
        "subtype_lumb": np.array(
            [1.0 if subtype_of[r.patient_id] == "LumB" else 0.0 for r in records]
        ),
    }
    return columns


def _read_subtype_calls(path) -> dict[str, str]:
    calls = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["patient_id", "subtype"]:
            raise ParseError("subtype file header must start patient_id,subtype", 1)
        for row in reader:
            if row:
                calls[row[0]] = row[1]
    return calls


def cmd_survival(settings: Settings) -> int:
    records = surv_mod.load_clinical(settings.args.clinical)
    subtype_of = _read_subtype_calls(settings.args.subtypes)

    cohort = []
    dropped = {}
    for rec in records:
        call = subtype_of.get(rec.patient_id)
        if call not in ("LumA", "LumB"):
            dropped[rec.patient_id] = f"subtype {call!r} outside LumA/LumB"
            continue
        if None in (rec.grade, rec.size_mm, rec.age_years, rec.ln_positive):
            dropped[rec.patient_id] = "missing covariate"
            continue
        cohort.append(rec)
    if not cohort:
        raise UsageError("no usable patients (need LumA/LumB call and full covariates)")

    columns = _table1_design(cohort, subtype_of)
    rows = []
    for display, cutoff_label, key in TABLE1_ROWS:
        indicator = columns[key]
        n_first = int(indicator.sum())
        uni = surv_mod.cox_fit(cohort, indicator[:, None], names=[key])
        rows.append({
            "parameter": display,
            "cutoff": cutoff_label,
            "n_groups": [n_first, len(cohort) - n_first],
            "univariate": {
                "hr": float(uni.hr[0]),
                "ci_low": float(uni.ci_low[0]),
                "ci_high": float(uni.ci_high[0]),
                "p": float(uni.p[0]),
                "c_index": surv_mod.c_index(
                    indicator * float(uni.coefficients[0]), cohort
                ),
            },
        })

    names = [key for _, _, key in TABLE1_ROWS]
    design = np.column_stack([columns[k] for k in names])
    multi = surv_mod.cox_fit(cohort, design, names=names)
    risk = design @ multi.coefficients
    for i, row in enumerate(rows):
        row["multivariate"] = {
            "hr": float(multi.hr[i]),
            "ci_low": float(multi.ci_low[i]),
            "ci_high": float(multi.ci_high[i]),
            "p": float(multi.p[i]),
        }

    lum_a = [r for r in cohort if subtype_of[r.patient_id] == "LumA"]
    lum_b = [r for r in cohort if subtype_of[r.patient_id] == "LumB"]
    out = settings.output_dir
    curves = []
    for label, group in (("LumA", lum_a), ("LumB", lum_b)):
        if group:
            curve = surv_mod.kaplan_meier(group)
            surv_mod.write_km_csv(curve, out / f"km_{label.lower()}.csv", len(group))
            curves.append((label, list(curve.event_times), list(curve.survival_prob)))
    logrank_result = None
    if lum_a and lum_b:
        chi2, p = surv_mod.logrank(lum_a, lum_b)
        logrank_result = {"chi2": chi2, "p": p}
        svgplot.km_plot(curves, out / "km.svg",
                        caption=f"log-rank p = {p:.3g}")
    elif curves:
        svgplot.km_plot(curves, out / "km.svg")

    _write_json(
        {
            "n": len(cohort),
            "n_events": int(sum(r.event for r in cohort)),
            "dropped": dropped,
            "rows": rows,
            "multivariate_c_index": surv_mod.c_index(risk, cohort),
            "logrank_luma_vs_lumb": logrank_result,
        },
        out / "survival_report.json",
    )
    print(f"survival: n={len(cohort)}, report -> {out / 'survival_report.json'}")
    return 0


# ---------------------------------------------------------------- benchmark

def energy_kwh(watts: float, hours: float, devices: int = 1) -> float:
    """devices x hours x watts / 1000, the report's energy formula."""
    return devices * hours * watts / 1000.0


def _synthetic_patch_data(n_patients, n_patches, width, genes, seed):
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    mapping = rng.normal(size=(genes, width)) / np.sqrt(width)
    sets = []
    targets = np.empty((n_patients, genes))
    for i in range(n_patients):
        center = rng.normal(size=width)
        patches = center + rng.normal(scale=1.0, size=(n_patches, width))
        sets.append(feat_mod.PatchFeatureSet(
            f"SYN{i:04d}", patches.astype(np.float32), extractor_tag="synthetic"
        ))
        mean_feature = patches.mean(axis=0)
        targets[i] = mapping @ mean_feature + rng.normal(scale=0.01, size=genes)
    return sets, targets


def cmd_benchmark(settings: Settings) -> int:
    epochs = int(settings.get("benchmark_epochs", 1))
    watts = float(settings.get("watts", 300.0))
    devices = int(settings.get("devices", 1))

    if settings.args.synthetic:
        sets, targets = _synthetic_patch_data(
            int(settings.args.patients), int(settings.args.patches),
            int(settings.args.width), int(settings.args.genes), settings.seed,
        )
        ids = [s.patient_id for s in sets]
    else:
        if not settings.args.features or not settings.args.expression:
            raise UsageError("benchmark needs --synthetic or --features + --expression")
        panel = _load_panel(settings)
        feature_dir = Path(settings.args.features)
        files = sorted(feature_dir.glob("*.h2rf"))
        if not files:
            raise EmptyIntersection(f"no .h2rf files in {feature_dir}")
        all_sets = [feat_mod.read_features(p) for p in files]
        matrix, _ = expr_mod.load_expression(settings.args.expression, panel)
        sets, targets, ids, _, _ = feat_mod.align_patch_sets(all_sets, matrix.transform())
    if len(sets) < 2 * 12:
        raise DatasetTooSmall(
            f"benchmark needs at least 24 patients, got {len(sets)}; refusing"
        )

    config = regressor.TrainConfig(
        learning_rate=float(settings.get("learning_rate", 1e-3)),
        batch_size=int(settings.get("batch_size", 12)),
        patience=max(epochs, 1),
        max_epochs=epochs,
        seed=settings.seed,
        validation_fraction=float(settings.get("validation_fraction", 0.1)),
    )

    aggregated = feat_mod.AlignedDataset(
        patient_ids=ids,
        features=regressor.aggregate_sets(sets),
        targets=np.asarray(targets, dtype=np.float64),
    )
    agg_result = regressor.train(aggregated, config)
    patch_result = regressor.train_patchwise(sets, np.asarray(targets), config)

    agg_seconds = [rec.seconds for rec in agg_result.history]
    patch_seconds = [rec.seconds for rec in patch_result.history]
    agg_mean = float(np.mean(agg_seconds))
    patch_mean = float(np.mean(patch_seconds))
    ratio = patch_mean / agg_mean if agg_mean > 0 else float("inf")

    reference_kwh = energy_kwh(300.0, 8.48, 4)
    payload = {
        "config": {
            "patients": len(sets),
            "mean_patches_per_patient": float(np.mean([s.n_patches for s in sets])),
            "feature_width": sets[0].n_features,
            "genes": int(np.asarray(targets).shape[1]),
            "epochs_timed": epochs,
            "watts": watts,
            "devices": devices,
            "seed": settings.seed,
        },
        "reference_check": {
            "description": "4 devices x 8.48 h x 300 W / 1000 = 10.176 kWh",
            "devices": 4,
            "hours": 8.48,
            "watts": 300.0,
            "kwh": reference_kwh,
            "expected_kwh": 10.176,
            "exact": reference_kwh == 10.176,
        },
        "timing": {
            "aggregated_epoch_seconds": agg_seconds,
            "patchwise_epoch_seconds": patch_seconds,
            "aggregated_mean_seconds": agg_mean,
            "patchwise_mean_seconds": patch_mean,
            "speedup_ratio": ratio,
            "aggregated_kwh_per_epoch": energy_kwh(watts, agg_mean / 3600.0, devices),
            "patchwise_kwh_per_epoch": energy_kwh(watts, patch_mean / 3600.0, devices),
        },
    }
    out_path = settings.output_dir / "benchmark.json"
    _write_json(payload, out_path)
    print(f"benchmark: aggregated {agg_mean:.3f}s/epoch, patchwise "
          f"{patch_mean:.3f}s/epoch, speedup {ratio:.1f}x -> {out_path}")
    return 0


# ---------------------------------------------------------------- entry

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="histexpr",
        description="Histology-to-expression pipeline toolkit",
    )
    parser.add_argument("--config", help="flat key=value settings file")
    parser.add_argument("--seed", type=int, default=None, help="global RNG seed")
    parser.add_argument("--output-dir", dest="output_dir", default=None)
    parser.add_argument("--strict", action="store_true",
                        help="fail on the first per-file error instead of skipping")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="tile region images into patches")
    p.add_argument("--images", required=True)
    p.add_argument("--masks", default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--tissue-threshold", dest="tissue_threshold", type=float, default=None)
    p.add_argument("--reference-profile", dest="reference_profile", default=None)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("aggregate", help="mean-pool .h2rf patch features per patient")
    p.add_argument("--features", required=True, help="directory of .h2rf files")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("train", help="train the regression head")
    p.add_argument("--features", required=True, help="slide_features.csv")
    p.add_argument("--expression", required=True, help="raw expression CSV")
    p.add_argument("--panel", default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--max-epochs", dest="max_epochs", type=int, default=None)
    p.add_argument("--validation-fraction", dest="validation_fraction",
                   type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict expression for slide features")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True, help="slide_features.csv")
    p.add_argument("--panel", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="correlation report for predictions")
    p.add_argument("--predictions", required=True)
    p.add_argument("--expression", required=True, help="raw expression CSV")
    p.add_argument("--panel", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("subtype", help="centroid subtype calls / voting classifier")
    p.add_argument("--expression", required=True,
                   help="expression or predictions CSV (already log-space unless --raw)")
    p.add_argument("--panel", default=None)
    p.add_argument("--labels", default=None, help="patient_id,subtype CSV enables fitting")
    p.add_argument("--centroids", default=None, help="existing centroid model JSON")
    p.add_argument("--voting", action="store_true",
                   help="also fit the four-learner soft-voting classifier")
    p.add_argument("--raw", action="store_true",
                   help="apply the log2(1+x) transform before use")
    p.set_defaults(func=cmd_subtype)

    p = sub.add_parser("survival", help="KM curves, log-rank, Cox tables")
    p.add_argument("--clinical", required=True)
    p.add_argument("--subtypes", required=True, help="subtype_predictions.csv")
    p.set_defaults(func=cmd_survival)

    p = sub.add_parser("benchmark", help="aggregated vs patch-based epoch timing")
    p.add_argument("--features", default=None, help="directory of .h2rf files")
    p.add_argument("--expression", default=None)
    p.add_argument("--panel", default=None)
    p.add_argument("--synthetic", action="store_true")
    p.add_argument("--patients", type=int, default=300)
    p.add_argument("--patches", type=int, default=100)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--genes", type=int, default=8)
    p.add_argument("--benchmark-epochs", dest="benchmark_epochs", type=int, default=None)
    p.add_argument("--watts", type=float, default=None)
    p.add_argument("--devices", type=int, default=None)
    p.set_defaults(func=cmd_benchmark)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = Settings(args)
        return args.func(settings)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except AnalysisError as exc:
        print(f"analysis error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
