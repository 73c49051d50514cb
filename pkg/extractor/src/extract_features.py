"""Convert a directory of images plus a manifest into an SGF1 feature file.

A frozen pretrained residual network is truncated after its last
convolutional stage and global-average-pooled, giving one 512-d float32
row per record.  Inference runs in evaluation mode with plain
resize/center-crop preprocessing, so output is deterministic across
runs.

The SGF1 layout (little-endian): magic "SGF1", u64 row count, u64 dim,
4-byte dtype tag "f32\\0", per-row id entries (u32 byte length + UTF-8),
then the row-major float32 payload.
"""

from __future__ import annotations

import argparse
import json
import struct
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
from PIL import Image
from torchvision import models, transforms

FEATURE_MAGIC = b"SGF1"
_F32_TAG = b"f32\x00"

FEATURE_DIM = 512

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".webp")

_BACKBONES = {
    "resnet34": (models.resnet34, "IMAGENET1K_V1"),
    "resnet18": (models.resnet18, "IMAGENET1K_V1"),
}


@dataclass
class ExtractorConfig:
    image_dir: Path
    manifest: Path
    out: Path
    backbone: str = "resnet34"
    batch_size: int = 16
    weights: str = "imagenet"  # "imagenet", "none", or a state-dict path
    allow_missing: bool = False


def build_backbone(name: str, weights: str) -> nn.Module:
    """Frozen trunk ending in global average pooling (N, 512) output."""
    if name not in _BACKBONES:
        raise ValueError(f"unknown backbone {name!r}, expected one of {sorted(_BACKBONES)}")
    ctor, weight_tag = _BACKBONES[name]
    if weights == "imagenet":
        model = ctor(weights=weight_tag)
    elif weights == "none":
        # seeded random init keeps offline runs reproducible byte-for-byte
        torch.manual_seed(0)
        model = ctor(weights=None)
    else:
        model = ctor(weights=None)
        state = torch.load(weights, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    trunk = nn.Sequential(*list(model.children())[:-1])  # drop the classifier, keep GAP
    trunk.eval()
    for p in trunk.parameters():
        p.requires_grad_(False)
    return trunk


_PREPROCESS = transforms.Compose(
    [
        transforms.Resize(256),
        transforms.CenterCrop(224),
        transforms.ToTensor(),
        transforms.Normalize(mean=[0.485, 0.456, 0.406], std=[0.229, 0.224, 0.225]),
    ]
)


def manifest_ids(path: Path) -> list[str]:
    ids = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}: malformed JSON on line {lineno}: {e}") from None
            rid = str(obj.get("id", ""))
            if not rid:
                raise ValueError(f"{path}: line {lineno} has no id")
            if rid in seen:
                raise ValueError(f"{path}: duplicate id {rid!r} on line {lineno}")
            seen.add(rid)
            ids.append(rid)
    return ids


def find_image(image_dir: Path, record_id: str) -> Path | None:
    direct = image_dir / record_id
    if direct.suffix and direct.is_file():
        return direct
    for suffix in IMAGE_SUFFIXES:
        candidate = image_dir / f"{record_id}{suffix}"
        if candidate.is_file():
            return candidate
    return None


def load_image(path: Path) -> torch.Tensor:
    with Image.open(path) as img:
        return _PREPROCESS(img.convert("RGB"))


def write_feature_file(path: Path, ids, data: np.ndarray) -> None:
    data = np.ascontiguousarray(data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<QQ", data.shape[0], data.shape[1]))
        fh.write(_F32_TAG)
        for rid in ids:
            raw = rid.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        fh.write(data.tobytes())


def extract(config: ExtractorConfig):
    """Run the backbone over every manifest image; returns (ids, failures).

    Rows are written to config.out in manifest order, skipping failed
    records.  `failures` maps record id to the reason.
    """
    ids = manifest_ids(config.manifest)
    trunk = build_backbone(config.backbone, config.weights)

    kept_ids: list[str] = []
    rows: list[np.ndarray] = []
    failures: dict[str, str] = {}
    batch_ids: list[str] = []
    batch_tensors: list[torch.Tensor] = []

    def flush():
        if not batch_tensors:
            return
        with torch.no_grad():
            out = trunk(torch.stack(batch_tensors))
        feats = out.reshape(out.shape[0], -1).numpy().astype(np.float32)
        if feats.shape[1] != FEATURE_DIM:
            raise ValueError(
                f"backbone produced dim {feats.shape[1]}, expected {FEATURE_DIM}"
            )
        rows.extend(feats)
        kept_ids.extend(batch_ids)
        batch_ids.clear()
        batch_tensors.clear()

    for rid in ids:
        path = find_image(config.image_dir, rid)
        if path is None:
            failures[rid] = "image not found"
            continue
        try:
            tensor = load_image(path)
        except Exception as e:  # corrupt or unreadable file
            failures[rid] = f"unreadable image: {e}"
            continue
        batch_ids.append(rid)
        batch_tensors.append(tensor)
        if len(batch_tensors) >= config.batch_size:
            flush()
    flush()

    data = (
        np.stack(rows) if rows else np.empty((0, FEATURE_DIM), dtype=np.float32)
    )
    write_feature_file(config.out, kept_ids, data)
    return kept_ids, failures


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="extract-features",
        description="Extract pooled CNN feature vectors for every manifest record.",
    )
    parser.add_argument("--images", required=True, type=Path, help="image directory")
    parser.add_argument("--manifest", required=True, type=Path, help="JSON-lines manifest")
    parser.add_argument("--out", required=True, type=Path, help="output .sgf path")
    parser.add_argument("--backbone", default="resnet34", choices=sorted(_BACKBONES))
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument(
        "--weights", default="imagenet",
        help="'imagenet', 'none' (seeded random init, offline), or a state-dict path",
    )
    parser.add_argument(
        "--allow-missing", action="store_true",
        help="skip unreadable/missing images instead of failing",
    )
    args = parser.parse_args(argv)

    config = ExtractorConfig(
        image_dir=args.images,
        manifest=args.manifest,
        out=args.out,
        backbone=args.backbone,
        batch_size=args.batch_size,
        weights=args.weights,
        allow_missing=args.allow_missing,
    )
    try:
        kept, failures = extract(config)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    for rid, reason in failures.items():
        print(f"skipped {rid}: {reason}", file=sys.stderr)
    print(f"wrote {config.out}: {len(kept)} rows x {FEATURE_DIM}")
    if failures and not config.allow_missing:
        print(f"error: {len(failures)} records had no usable image", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
