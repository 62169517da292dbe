import json

import numpy as np
import pytest

from segsynth import read_nifti, write_nifti
from segsynth.cli import main

from conftest import make_labels, make_scalar

SMALL_CONFIG = """
[generation]
target_shape = [20, 20, 16]
target_spacing = [1.5, 1.5, 1.5]
deformation_grid = 4
bias_grid = 3
arm_label_ids = [3]

[clustering]
k_foreground_choices = [1, 2]
k_background_choices = [2, 3]
"""


@pytest.fixture
def subject_dirs(tmp_path, rng):
    ct_dir = tmp_path / "ct"
    labels_dir = tmp_path / "labels"
    ct_dir.mkdir()
    labels_dir.mkdir()
    labels = rng.integers(0, 4, (14, 14, 14)).astype(np.int32)
    ct = rng.normal(80, 20, (14, 14, 14)) + 30.0 * labels
    write_nifti(make_scalar(ct, (1.5, 1.5, 1.5)), ct_dir / "case0.nii.gz")
    write_nifti(make_labels(labels, (1.5, 1.5, 1.5)), labels_dir / "case0.nii.gz")
    config = tmp_path / "config.toml"
    config.write_text(SMALL_CONFIG)
    return ct_dir, labels_dir, config


def test_cluster_writes_bank(tmp_path, subject_dirs):
    ct_dir, labels_dir, config = subject_dirs
    out = tmp_path / "cache"
    rc = main(
        [
            "cluster",
            "--ct-dir", str(ct_dir),
            "--labels-dir", str(labels_dir),
            "--config", str(config),
            "--out-dir", str(out),
        ]
    )
    assert rc == 0
    bank = json.loads((out / "case0.clusters.json").read_text())
    assert "labels" in bank
    assert set(bank["labels"]["1"]["fits"]) == {"1", "2"}


def test_generate_is_reproducible_and_uses_cache(tmp_path, subject_dirs):
    ct_dir, labels_dir, config = subject_dirs
    cache = tmp_path / "cache"
    main(
        [
            "cluster",
            "--ct-dir", str(ct_dir),
            "--labels-dir", str(labels_dir),
            "--config", str(config),
            "--out-dir", str(cache),
        ]
    )
    outs = []
    for name in ("g1", "g2"):
        out = tmp_path / name
        rc = main(
            [
                "generate",
                "--labels-dir", str(labels_dir),
                "--ct-dir", str(ct_dir),
                "--cluster-cache", str(cache),
                "--config", str(config),
                "--seed", "7",
                "--count", "2",
                "--out-dir", str(out),
            ]
        )
        assert rc == 0
        outs.append(out)
    for name in (
        "pair_000000_img.nii.gz",
        "pair_000000_seg.nii.gz",
        "pair_000001_img.nii.gz",
        "pair_000001_seg.nii.gz",
        "pair_000000_params.json",
    ):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    img, geom = read_nifti(outs[0] / "pair_000000_img.nii.gz")
    assert geom.shape == (20, 20, 16)
    assert img.values.min() >= 0.0 and img.values.max() <= 1.0
    seg, _ = read_nifti(outs[0] / "pair_000000_seg.nii.gz")
    assert set(np.unique(seg.labels)) <= {0, 1, 2, 3}
    params = json.loads((outs[0] / "pair_000000_params.json").read_text())
    assert params["pair_index"] == 0
    assert params["source"] == "case0"


def test_evaluate_stats_report_flow(tmp_path, rng):
    gt_arr = np.zeros((10, 10, 10), dtype=np.int32)
    gt_arr[2:6, 2:6, 2:6] = 1
    pred_arr = np.zeros_like(gt_arr)
    pred_arr[3:7, 2:6, 2:6] = 5
    write_nifti(make_labels(gt_arr), tmp_path / "gt.nii.gz")
    write_nifti(make_labels(pred_arr), tmp_path / "pred.nii.gz")
    (tmp_path / "map.toml").write_text(
        '[regions]\nliver = 1\n[gt]\n1 = "liver"\n[pred]\n5 = "liver"\n'
    )
    manifest = tmp_path / "manifest.csv"
    manifest.write_text(
        "dataset,subject,sequence,method,region_map,gt,pred\n"
        "demo,s0,t1,methodA,map.toml,gt.nii.gz,pred.nii.gz\n"
    )
    out = tmp_path / "eval"
    assert main(["evaluate", "--manifest", str(manifest), "--out-dir", str(out)]) == 0
    records_csv = out / "records.csv"
    assert records_csv.exists()
    assert main(["stats", "--records", str(records_csv), "--out", str(out / "summary.csv")]) == 0
    summary = (out / "summary.csv").read_text().splitlines()
    assert len(summary) == 2
    assert main(["report", "--records", str(records_csv), "--out-dir", str(out / "report")]) == 0
    assert (out / "report" / "summary.csv").exists()
