"""Synthetic endoscopy-like datasets for tests, demos and benchmarks.

Images are smooth pink fields with low-frequency texture. Positive samples
carry a darker, redder lesion and per-expert LL/HL delineations around it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .core import (
    DatasetManifest,
    DelineationRef,
    SampleRecord,
    Split,
    Tier,
    load_binary_mask,
    resize_bicubic,
    save_binary_mask,
    save_image,
    save_manifest,
    save_soft_mask,
)

BASE_COLOUR = np.array([0.64, 0.361, 0.313])


def _smooth_field(rng, size, grid=6, amplitude=0.08):
    coarse = rng.normal(0.0, amplitude, size=(grid, grid, 3))
    return cv2.resize(coarse, (size, size), interpolation=cv2.INTER_CUBIC)


def _ellipse(size, cx, cy, a, b, theta):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    u = (xx - cx) * math.cos(theta) + (yy - cy) * math.sin(theta)
    v = -(xx - cx) * math.sin(theta) + (yy - cy) * math.cos(theta)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


@dataclass
class Lesion:
    cx: float
    cy: float
    a: float
    b: float
    theta: float

    def mask(self, size, grow=1.0, dx=0.0, dy=0.0):
        return _ellipse(size, self.cx + dx, self.cy + dy, self.a * grow, self.b * grow, self.theta)


def synthetic_image(rng: np.random.Generator, size: int = 256, positive: bool = False):
    """One image and, for positives, the lesion geometry."""
    img = BASE_COLOUR + _smooth_field(rng, size)
    lesion = None
    if positive:
        lesion = Lesion(cx=rng.uniform(0.3, 0.7) * size, cy=rng.uniform(0.3, 0.7) * size,
                        a=rng.uniform(0.12, 0.2) * size, b=rng.uniform(0.08, 0.15) * size,
                        theta=rng.uniform(0, math.pi))
        soft = cv2.GaussianBlur(lesion.mask(size).astype(np.float64), (0, 0), size / 60)
        tint = np.array([0.05, -0.12, -0.08]) + _smooth_field(rng, size, grid=12, amplitude=0.03)
        img = img + soft[..., None] * tint
    return np.clip(img, 0.0, 1.0), lesion


def expert_delineation(lesion: Lesion, size: int, rng: np.random.Generator):
    """LL and HL masks of one simulated expert; HL always lies inside LL."""
    jitter = size * 0.03
    dx, dy = rng.normal(0, jitter, size=2)
    ll = lesion.mask(size, grow=rng.uniform(1.0, 1.3), dx=dx, dy=dy)
    hdx, hdy = rng.normal(0, jitter, size=2)
    hl = lesion.mask(size, grow=rng.uniform(0.45, 0.7), dx=hdx, dy=hdy) & ll
    return ll, hl


def make_dataset(out_dir, n: int = 12, seed: int = 0, size: int = 256, n_experts: int = 2,
                 positive_fraction: float = 0.5, name: str = "synthetic",
                 split: Split = Split.TEST) -> Path:
    """Write images, delineations and ``manifest.jsonl`` under ``out_dir``; returns the manifest path."""
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    n_pos = int(round(n * positive_fraction))
    records = []
    for i in range(n):
        sid = f"s{i:04d}"
        positive = i < n_pos
        img, lesion = synthetic_image(rng, size, positive)
        save_image(out_dir / "images" / f"{sid}.png", img)
        dels = []
        if positive:
            for e in range(n_experts):
                ll, hl = expert_delineation(lesion, size, rng)
                ll_rel = f"masks/{sid}_e{e + 1}_ll.png"
                hl_rel = f"masks/{sid}_e{e + 1}_hl.png"
                save_binary_mask(out_dir / ll_rel, ll)
                save_binary_mask(out_dir / hl_rel, hl)
                dels.append(DelineationRef(f"e{e + 1}", ll_rel, hl_rel))
        records.append(SampleRecord(id=sid, patient_id=f"p{i // 2:04d}", label=int(positive),
                                    tier=Tier.IMAGE, image_path=f"images/{sid}.png",
                                    delineations=tuple(dels)))
    manifest = DatasetManifest(name=name, split=split, records=tuple(records), root=out_dir)
    path = out_dir / "manifest.jsonl"
    save_manifest(path, manifest)
    return path


def fabricate_predictions(manifest: DatasetManifest, out_csv, seed: int = 0, skill: float = 0.7,
                          map_size: int = 64) -> Path:
    """Write a prediction CSV with segmentation maps that loosely follow the lesions.

    ``skill`` in [0, 1] moves scores from noise towards the true label.
    Only intended for demos and tests.
    """
    out_csv = Path(out_csv)
    rng = np.random.default_rng(seed)
    rows = []
    for rec in manifest.records:
        noise = rng.uniform(0, 1)
        cls = float(np.clip(skill * rec.label + (1 - skill) * noise, 0, 1))
        offset = rng.uniform(0, 1 - skill)
        seg = np.clip(rng.normal(0.1 + offset, 0.05, size=(map_size, map_size)), 0, 1)
        if rec.label and rec.delineations:
            ll = load_binary_mask(manifest.resolve(rec.delineations[0].ll_path)).astype(np.float64)
            ll = resize_bicubic(ll, map_size, map_size)
            seg = np.clip(seg + ll * skill * rng.uniform(0.3, 0.9), 0, 1)
        seg_rel = f"{out_csv.stem}_maps/{rec.id}.png"
        save_soft_mask(out_csv.parent / seg_rel, seg)
        rows.append({"id": rec.id, "cls_score": f"{cls:.6f}",
                     "seg_max": f"{np.floor(seg.max() * 255 + 0.5) / 255:.6f}", "seg_path": seg_rel})
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    with open(out_csv, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["id", "cls_score", "seg_max", "seg_path"])
        w.writeheader()
        w.writerows(rows)
    return out_csv
