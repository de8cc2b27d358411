"""Subcommand flows, exit codes, and output determinism."""

import json
import re

import numpy as np
import pytest
from PIL import Image

from histexpr import cli
from histexpr import expression as E
from histexpr.features import PatchFeatureSet, write_features


def run(argv):
    try:
        return cli.main(argv)
    except SystemExit as exc:  # argparse usage errors
        return exc.code


def small_panel_json(path, genes=8, pam50=5):
    entries = [{"symbol": f"G{i:02d}", "assays": ["PAM50"] if i < pam50 else [],
                "pam50": i < pam50} for i in range(genes)]
    path.write_text(json.dumps(entries, indent=2) + "\n", encoding="utf-8")
    return path


def h2rf_dir(root, n_patients=30, n_patches=4, width=16, seed=0):
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    ids = []
    for i in range(n_patients):
        pid = f"PT{i:03d}"
        values = rng.normal(size=(n_patches, width)).astype(np.float32)
        write_features(PatchFeatureSet(pid, values, extractor_tag="fixture"),
                       root / f"{pid}.h2rf")
        ids.append(pid)
    return ids


def expression_csv(path, ids, genes=8, seed=1):
    rng = np.random.default_rng(seed)
    header = "patient_id," + ",".join(f"G{i:02d}" for i in range(genes))
    lines = [header]
    for pid in ids:
        vals = rng.uniform(0, 500, size=genes)
        lines.append(pid + "," + ",".join(f"{v:.4f}" for v in vals))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture()
def pipeline(tmp_path):
    features = tmp_path / "features"
    ids = h2rf_dir(features)
    panel = small_panel_json(tmp_path / "panel.json")
    expr = expression_csv(tmp_path / "expr.csv", ids)
    out = tmp_path / "out"
    return {"features": features, "panel": panel, "expr": expr,
            "out": out, "ids": ids, "tmp": tmp_path}


def train_args(p, extra=()):
    return ["--output-dir", str(p["out"]), "--seed", "7", "train",
            "--features", str(p["out"] / "slide_features.csv"),
            "--expression", str(p["expr"]), "--panel", str(p["panel"]),
            "--max-epochs", "3", "--patience", "3", *extra]


class TestAggregate:
    def test_happy_path(self, pipeline):
        p = pipeline
        rc = run(["--output-dir", str(p["out"]), "aggregate",
                  "--features", str(p["features"])])
        assert rc == 0
        csv_text = (p["out"] / "slide_features.csv").read_text()
        assert csv_text.startswith("patient_id,f0")
        assert len(csv_text.strip().splitlines()) == 31

    def test_empty_dir(self, tmp_path):
        empty = tmp_path / "none"
        empty.mkdir()
        rc = run(["--output-dir", str(tmp_path / "o"), "aggregate",
                  "--features", str(empty)])
        assert rc == 2

    def test_missing_dir(self, tmp_path):
        rc = run(["aggregate", "--features", str(tmp_path / "nope")])
        assert rc == 2

    def test_corrupt_file_skipped_without_strict(self, pipeline):
        p = pipeline
        (p["features"] / "broken.h2rf").write_bytes(b"garbage")
        rc = run(["--output-dir", str(p["out"]), "aggregate",
                  "--features", str(p["features"])])
        assert rc == 0
        summary = json.loads((p["out"] / "aggregate_summary.json").read_text())
        assert "broken.h2rf" in summary["skipped"]
        assert len(summary["aggregated"]) == 30

    def test_corrupt_file_fails_with_strict(self, pipeline):
        p = pipeline
        (p["features"] / "broken.h2rf").write_bytes(b"garbage")
        rc = run(["--output-dir", str(p["out"]), "--strict", "aggregate",
                  "--features", str(p["features"])])
        assert rc == 2


def snapshot_tree(root):
    return {path: path.read_bytes() for path in sorted(root.rglob("*"))
            if path.is_file()}


class TestTrainPredictEvaluate:
    def test_full_flow_and_reports(self, pipeline):
        p = pipeline
        inputs_before = snapshot_tree(p["tmp"] / "features")
        inputs_before[p["expr"]] = p["expr"].read_bytes()
        assert run(["--output-dir", str(p["out"]), "aggregate",
                    "--features", str(p["features"])]) == 0
        assert run(train_args(p)) == 0
        assert (p["out"] / "model.h2rm").exists()
        history = (p["out"] / "history.csv").read_text().splitlines()
        assert history[0] == "epoch,train_mse,val_mse,wall_clock_seconds"
        assert len(history) == 4

        assert run(["--output-dir", str(p["out"]), "predict",
                    "--model", str(p["out"] / "model.h2rm"),
                    "--features", str(p["out"] / "slide_features.csv"),
                    "--panel", str(p["panel"])]) == 0
        predictions = p["out"] / "predictions.csv"
        assert predictions.exists()

        # evaluating predictions against their own inverse transform gives
        # perfect correlation on both axes
        panel = E.load_panel(p["panel"])
        pred_matrix, _ = E.load_expression(predictions, panel)
        shifted = pred_matrix.values - pred_matrix.values.min()
        raw = E.inverse_transform(shifted)
        truth_path = p["tmp"] / "perfect.csv"
        E.save_expression(
            E.ExpressionMatrix(pred_matrix.patient_ids, raw), panel, truth_path
        )
        pred_path = p["tmp"] / "pred_shifted.csv"
        E.save_expression(
            E.ExpressionMatrix(pred_matrix.patient_ids, shifted, transformed=True),
            panel, pred_path,
        )
        assert run(["--output-dir", str(p["out"]), "evaluate",
                    "--predictions", str(pred_path),
                    "--expression", str(truth_path),
                    "--panel", str(p["panel"])]) == 0
        summary = json.loads((p["out"] / "eval_summary.json").read_text())
        assert summary["median_rho_across_patients"] == 1.0
        assert summary["median_rho_across_genes"] == 1.0
        assert (p["out"] / "scatter_top20.svg").exists()
        assert len(summary["top_genes_by_rho"]) <= 20

        # report CSV cells must parse back as plain floats
        for name in ("eval_genes.csv", "eval_patients.csv"):
            rows = (p["out"] / name).read_text().splitlines()[1:]
            for row in rows:
                for cell in row.split(",")[1:]:
                    float(cell)

        # no subcommand mutates its inputs
        inputs_after = snapshot_tree(p["tmp"] / "features")
        inputs_after[p["expr"]] = p["expr"].read_bytes()
        assert inputs_after == inputs_before

    def test_train_rerun_same_seed_identical_model(self, pipeline):
        p = pipeline
        run(["--output-dir", str(p["out"]), "aggregate",
             "--features", str(p["features"])])
        assert run(train_args(p)) == 0
        first = (p["out"] / "model.h2rm").read_bytes()
        assert run(train_args(p)) == 0
        assert (p["out"] / "model.h2rm").read_bytes() == first

    def test_too_few_patients(self, pipeline, tmp_path):
        p = pipeline
        small = tmp_path / "small"
        ids = h2rf_dir(small, n_patients=5)
        expr = expression_csv(tmp_path / "small.csv", ids)
        out = tmp_path / "so"
        run(["--output-dir", str(out), "aggregate", "--features", str(small)])
        rc = run(["--output-dir", str(out), "train",
                  "--features", str(out / "slide_features.csv"),
                  "--expression", str(expr), "--panel", str(p["panel"])])
        assert rc == 2

    def test_missing_model_file(self, pipeline):
        p = pipeline
        run(["--output-dir", str(p["out"]), "aggregate",
             "--features", str(p["features"])])
        rc = run(["--output-dir", str(p["out"]), "predict",
                  "--model", str(p["out"] / "missing.h2rm"),
                  "--features", str(p["out"] / "slide_features.csv"),
                  "--panel", str(p["panel"])])
        assert rc == 2


def region_image(path, left_white=True):
    rng = np.random.default_rng(3)
    img = (rng.uniform(40, 160, size=(448, 448, 3))).astype(np.uint8)
    if left_white:
        img[:, :224] = 255
    Image.fromarray(img).save(path)
    return path


class TestPreprocess:
    def test_two_ppm_images(self, tmp_path):
        images = tmp_path / "imgs"
        images.mkdir()
        for name in ("s1", "s2"):
            rng = np.random.default_rng(4)
            arr = rng.integers(30, 150, size=(448, 448, 3)).astype(np.uint8)
            Image.fromarray(arr).save(images / f"{name}.ppm")
        out = tmp_path / "o"
        assert run(["--output-dir", str(out), "preprocess",
                    "--images", str(images)]) == 0
        for name in ("s1", "s2"):
            manifest = json.loads(
                (out / "patches" / name / "manifest.json").read_text())
            assert manifest["retained"] == 4 and manifest["total"] == 4

    def test_white_half_excluded(self, tmp_path):
        images = tmp_path / "imgs"
        images.mkdir()
        region_image(images / "half.png", left_white=True)
        out = tmp_path / "o"
        assert run(["--output-dir", str(out), "preprocess",
                    "--images", str(images)]) == 0
        manifest = json.loads(
            (out / "patches" / "half" / "manifest.json").read_text())
        assert manifest["origins"] == [[0, 224], [224, 224]]
        assert manifest["retained"] == 2 and manifest["total"] == 4
        for name in manifest["patches"]:
            assert (out / "patches" / "half" / name).exists()

    def test_missing_dir_exit_2(self, tmp_path):
        assert run(["preprocess", "--images", str(tmp_path / "nope")]) == 2

    def test_corrupt_image_isolated(self, tmp_path):
        images = tmp_path / "imgs"
        images.mkdir()
        region_image(images / "good.png", left_white=False)
        (images / "bad.png").write_bytes(b"not an image")
        out = tmp_path / "o"
        assert run(["--output-dir", str(out), "preprocess",
                    "--images", str(images)]) == 0
        summary = json.loads((out / "preprocess_summary.json").read_text())
        assert summary["processed"] == ["good"]
        assert "bad.png" in summary["errors"]

    def test_corrupt_image_strict(self, tmp_path):
        images = tmp_path / "imgs"
        images.mkdir()
        (images / "bad.png").write_bytes(b"not an image")
        assert run(["--strict", "--output-dir", str(tmp_path / "o"),
                    "preprocess", "--images", str(images)]) == 2

    def test_normalization_against_reference(self, tmp_path):
        from histexpr import imageprep as IP
        h = np.array([0.65, 0.70, 0.29])
        e = np.array([0.07, 0.99, 0.11])
        h, e = h / np.linalg.norm(h), e / np.linalg.norm(e)
        profile = IP.StainProfile(np.stack([h, e], axis=1), np.array([1.0, 0.8]))
        ref_path = tmp_path / "ref.json"
        profile.save(ref_path)
        images = tmp_path / "imgs"
        images.mkdir()
        rng = np.random.default_rng(5)
        c = rng.uniform(0, 1.0, size=(448 * 448, 2))
        od = (c @ np.stack([h, e])).reshape(448, 448, 3)
        Image.fromarray(IP.od_to_rgb(od)).save(images / "t.png")
        out = tmp_path / "o"
        assert run(["--output-dir", str(out), "preprocess",
                    "--images", str(images),
                    "--reference-profile", str(ref_path)]) == 0
        manifest = json.loads((out / "patches" / "t" / "manifest.json").read_text())
        assert manifest["retained"] >= 1


def subtype_labels_csv(path, ids, seed=2):
    rng = np.random.default_rng(seed)
    names = ["LumA", "LumB", "Basal", "HER2"]
    lines = ["patient_id,subtype"]
    for i, pid in enumerate(ids):
        lines.append(f"{pid},{names[i % 4]}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


class TestSubtypeCommand:
    def test_fit_and_call(self, pipeline):
        p = pipeline
        labels = subtype_labels_csv(p["tmp"] / "labels.csv", p["ids"])
        run(["--output-dir", str(p["out"]), "aggregate",
             "--features", str(p["features"])])
        rc = run(["--output-dir", str(p["out"]), "subtype",
                  "--expression", str(p["expr"]), "--raw",
                  "--panel", str(p["panel"]), "--labels", str(labels)])
        assert rc == 0
        assert (p["out"] / "centroids.json").exists()
        lines = (p["out"] / "subtype_predictions.csv").read_text().splitlines()
        assert lines[0] == "patient_id,subtype,p_luma,p_lumb,p_basal,p_her2"
        assert len(lines) == 31

        rc = run(["--output-dir", str(p["out"]), "subtype",
                  "--expression", str(p["expr"]), "--raw",
                  "--panel", str(p["panel"]),
                  "--centroids", str(p["out"] / "centroids.json")])
        assert rc == 0

    def test_voting_report(self, pipeline):
        p = pipeline
        labels = subtype_labels_csv(p["tmp"] / "labels.csv", p["ids"])
        rc = run(["--output-dir", str(p["out"]), "--seed", "5", "subtype",
                  "--expression", str(p["expr"]), "--raw",
                  "--panel", str(p["panel"]), "--labels", str(labels),
                  "--voting"])
        assert rc == 0
        report = json.loads((p["out"] / "voting_report.json").read_text())
        assert set(report["per_class_f1"]) == {"LumA", "LumB", "Basal", "HER2"}

    def test_requires_labels_or_centroids(self, pipeline):
        p = pipeline
        rc = run(["--output-dir", str(p["out"]), "subtype",
                  "--expression", str(p["expr"]), "--panel", str(p["panel"])])
        assert rc == 2


def clinical_csv(path, n=80, seed=6, with_events=True):
    rng = np.random.default_rng(seed)
    header = ("patient_id,time_months,event,grade,size_mm,age_years,"
              "ln_positive,er,pr,her2,ki67_percent")
    lines = [header]
    for i in range(n):
        lumb = i % 4 == 0
        hazard = 0.02 * (2.2 if lumb else 1.0)
        t = max(0.5, rng.exponential(1 / hazard))
        event = int(rng.random() < 0.65) if with_events else 0
        grade = int(rng.integers(1, 4))
        size = round(float(rng.uniform(8, 38)), 1)
        age = round(float(rng.uniform(35, 80)), 1)
        ln = int(rng.random() < 0.5)
        lines.append(f"C{i:03d},{t:.2f},{event},{grade},{size},{age},{ln},"
                     f"pos,neg,NA,{rng.uniform(1, 60):.1f}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def subtype_calls_csv(path, n=80):
    lines = ["patient_id,subtype,p_luma,p_lumb,p_basal,p_her2"]
    for i in range(n):
        name = "LumB" if i % 4 == 0 else "LumA"
        lines.append(f"C{i:03d},{name},0.5,0.3,0.1,0.1")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


class TestSurvivalCommand:
    def test_report_structure(self, tmp_path):
        clinical = clinical_csv(tmp_path / "clin.csv")
        calls = subtype_calls_csv(tmp_path / "subs.csv")
        out = tmp_path / "o"
        rc = run(["--output-dir", str(out), "survival",
                  "--clinical", str(clinical), "--subtypes", str(calls)])
        assert rc == 0
        report = json.loads((out / "survival_report.json").read_text())
        assert report["n"] == 80
        assert len(report["rows"]) == 5
        for row in report["rows"]:
            for block in ("univariate", "multivariate"):
                hr = row[block]["hr"]
                assert row[block]["ci_low"] < hr < row[block]["ci_high"]
        assert report["logrank_luma_vs_lumb"]["p"] <= 1.0
        assert (out / "km_luma.csv").exists() and (out / "km_lumb.csv").exists()

    def test_km_svg_steps_non_increasing(self, tmp_path):
        clinical = clinical_csv(tmp_path / "clin.csv")
        calls = subtype_calls_csv(tmp_path / "subs.csv")
        out = tmp_path / "o"
        run(["--output-dir", str(out), "survival",
             "--clinical", str(clinical), "--subtypes", str(calls)])
        svg = (out / "km.svg").read_text()
        paths = re.findall(r'<path d="([^"]+)"', svg)
        assert len(paths) == 2
        for d in paths:
            ys = [float(tok.split()[-1]) for tok in re.findall(r"[ML] [\d.]+ [\d.]+", d)]
            # SVG y grows downward, so survival steps never move up
            assert all(b >= a - 1e-9 for a, b in zip(ys, ys[1:]))

    def test_no_events_exit_1(self, tmp_path):
        clinical = clinical_csv(tmp_path / "clin.csv", with_events=False)
        calls = subtype_calls_csv(tmp_path / "subs.csv")
        rc = run(["--output-dir", str(tmp_path / "o"), "survival",
                  "--clinical", str(clinical), "--subtypes", str(calls)])
        assert rc == 1


class TestBenchmarkCommand:
    def test_synthetic_report(self, tmp_path):
        out = tmp_path / "o"
        rc = run(["--output-dir", str(out), "--seed", "3", "benchmark",
                  "--synthetic", "--patients", "26", "--patches", "6",
                  "--width", "8", "--genes", "3"])
        assert rc == 0
        report = json.loads((out / "benchmark.json").read_text())
        assert report["reference_check"]["exact"] is True
        assert report["reference_check"]["kwh"] == 10.176
        assert report["timing"]["speedup_ratio"] > 1.0

    def test_single_patient_refused(self, tmp_path):
        rc = run(["--output-dir", str(tmp_path / "o"), "benchmark",
                  "--synthetic", "--patients", "1"])
        assert rc == 2


class TestConfigFile:
    def test_config_supplies_defaults_and_flags_win(self, pipeline):
        p = pipeline
        config = p["tmp"] / "run.conf"
        config.write_text("seed = 11\nmax_epochs = 2\npatience = 2\n",
                          encoding="utf-8")
        run(["--output-dir", str(p["out"]), "aggregate",
             "--features", str(p["features"])])
        rc = run(["--config", str(config), "--output-dir", str(p["out"]),
                  "train",
                  "--features", str(p["out"] / "slide_features.csv"),
                  "--expression", str(p["expr"]), "--panel", str(p["panel"])])
        assert rc == 0
        summary = json.loads((p["out"] / "train_summary.json").read_text())
        assert summary["config"]["seed"] == 11
        assert summary["config"]["max_epochs"] == 2

        rc = run(["--config", str(config), "--seed", "99",
                  "--output-dir", str(p["out"]), "train",
                  "--features", str(p["out"] / "slide_features.csv"),
                  "--expression", str(p["expr"]), "--panel", str(p["panel"])])
        assert rc == 0
        summary = json.loads((p["out"] / "train_summary.json").read_text())
        assert summary["config"]["seed"] == 99
