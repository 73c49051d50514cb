"""Contract tests: SGF1 output consumed by the engine's loader."""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from sagenet.io import load_features

EXTRACTOR = [sys.executable, "-m", "extract_features"]


@pytest.fixture(scope="module")
def image_workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("imgs")
    img_dir = root / "images"
    img_dir.mkdir()
    rng = np.random.default_rng(0)

    solid = Image.new("RGB", (96, 80), color=(200, 30, 30))
    solid.save(img_dir / "solid.png")
    solid.save(img_dir / "solid_copy.png")  # byte-identical content
    textured = Image.fromarray(rng.integers(0, 255, size=(80, 96, 3), dtype=np.uint8))
    textured.save(img_dir / "textured.png")
    grey = Image.new("L", (64, 64), color=128)  # non-RGB mode exercises conversion
    grey.save(img_dir / "grey.jpg")

    manifest = root / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8") as fh:
        for rid in ("solid", "solid_copy", "textured", "grey"):
            fh.write(json.dumps({"id": rid, "properties": {}, "labels": {}}) + "\n")
    return root, img_dir, manifest


def _run_extract(img_dir, manifest, out, *extra):
    return subprocess.run(
        EXTRACTOR
        + ["--images", str(img_dir), "--manifest", str(manifest), "--out", str(out),
           "--weights", "none", *map(str, extra)],
        capture_output=True, text=True,
    )


def test_output_loads_in_engine_with_dim_512(image_workspace):
    root, img_dir, manifest = image_workspace
    out = root / "features.sgf"
    proc = _run_extract(img_dir, manifest, out)
    assert proc.returncode == 0, proc.stderr
    fm = load_features(out)
    assert fm.dim == 512
    assert fm.ids == ["solid", "solid_copy", "textured", "grey"]
    assert np.isfinite(fm.data).all()


def test_identical_images_identical_rows(image_workspace):
    root, img_dir, manifest = image_workspace
    out = root / "features.sgf"
    if not out.exists():
        assert _run_extract(img_dir, manifest, out).returncode == 0
    fm = load_features(out)
    np.testing.assert_array_equal(
        fm.data[fm.id_to_row["solid"]], fm.data[fm.id_to_row["solid_copy"]]
    )


def test_solid_vs_textured_have_positive_cosine_distance(image_workspace):
    root, img_dir, manifest = image_workspace
    out = root / "features.sgf"
    if not out.exists():
        assert _run_extract(img_dir, manifest, out).returncode == 0
    fm = load_features(out)
    a = fm.data[fm.id_to_row["solid"]]
    b = fm.data[fm.id_to_row["textured"]]
    cos = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
    assert 1.0 - cos > 0.0


def test_byte_identical_across_runs(image_workspace, tmp_path):
    root, img_dir, manifest = image_workspace
    out1 = tmp_path / "run1.sgf"
    out2 = tmp_path / "run2.sgf"
    assert _run_extract(img_dir, manifest, out1).returncode == 0
    assert _run_extract(img_dir, manifest, out2).returncode == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_missing_image_is_listed_and_fails_without_flag(image_workspace, tmp_path):
    root, img_dir, manifest = image_workspace
    bad_manifest = tmp_path / "manifest.jsonl"
    lines = Path(manifest).read_text().splitlines()
    lines.append(json.dumps({"id": "ghost", "properties": {}, "labels": {}}))
    bad_manifest.write_text("\n".join(lines) + "\n")

    out = tmp_path / "f.sgf"
    proc = _run_extract(img_dir, bad_manifest, out)
    assert proc.returncode != 0
    assert "ghost" in proc.stderr

    proc = _run_extract(img_dir, bad_manifest, out, "--allow-missing")
    assert proc.returncode == 0, proc.stderr
    fm = load_features(out)
    assert "ghost" not in fm.ids
    assert len(fm.ids) == 4


def test_corrupt_image_reported(image_workspace, tmp_path):
    root, img_dir, manifest = image_workspace
    corrupt_dir = tmp_path / "images"
    corrupt_dir.mkdir()
    for f in img_dir.iterdir():
        (corrupt_dir / f.name).write_bytes(f.read_bytes())
    (corrupt_dir / "solid.png").write_bytes(b"not an image at all")
    out = tmp_path / "f.sgf"
    proc = _run_extract(corrupt_dir, manifest, out)
    assert proc.returncode != 0
    assert "solid" in proc.stderr
