"""Synthetic segmentation corpus: noisy renderings of simple shapes.

Each foreground class has its own intensity level; objects are disks,
rectangles, annuli and thin curves, painted in order so later objects
occlude earlier ones (classes stay mutually exclusive per pixel).  With
probability ``small_object_rate`` a sample also receives one object whose
area is below 1% of the image, placed on background.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .fileio import hdt_read, hdt_write

KINDS = ("disk", "rectangle", "annulus", "curve")
SMALL_FRACTION = 0.01


@dataclass
class SyntheticDataset:
    images: np.ndarray  # (N, H, W) float32
    masks: np.ndarray  # (N, H, W, C) uint8
    meta: list[dict]
    params: dict

    def __len__(self) -> int:
        return len(self.images)

    @property
    def classes(self) -> int:
        return self.masks.shape[-1]

    def has_small_object(self) -> np.ndarray:
        return np.array([any(o["small"] for o in m["objects"]) for m in self.meta], dtype=bool)

    def save(self, out_dir) -> None:
        os.makedirs(out_dir, exist_ok=True)
        hdt_write(os.path.join(out_dir, "images.hdt"), self.images.astype(np.float32))
        hdt_write(os.path.join(out_dir, "masks.hdt"), self.masks.astype(np.uint8))
        index = {"params": self.params, "samples": self.meta}
        with open(os.path.join(out_dir, "index.json"), "w", encoding="utf-8") as fh:
            json.dump(index, fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, in_dir) -> "SyntheticDataset":
        path = os.path.join(in_dir, "index.json")
        if not os.path.exists(path):
            raise FileNotFoundError(f"no dataset index at {path}")
        with open(path, encoding="utf-8") as fh:
            index = json.load(fh)
        images = hdt_read(os.path.join(in_dir, "images.hdt"))
        masks = hdt_read(os.path.join(in_dir, "masks.hdt"))
        if len(images) != len(masks) or len(images) != len(index["samples"]):
            raise ValueError(f"inconsistent dataset in {in_dir}")
        return cls(images, masks, index["samples"], index["params"])

    def subset(self, idx) -> "SyntheticDataset":
        idx = np.asarray(idx)
        return SyntheticDataset(self.images[idx], self.masks[idx], [self.meta[i] for i in idx], dict(self.params))


def _shape_mask(kind: str, yy, xx, rng: np.random.Generator, size: int) -> tuple[np.ndarray, dict]:
    cy, cx = rng.uniform(0.2 * size, 0.8 * size, 2)
    s = size / 32.0
    if kind == "disk":
        r = rng.uniform(3.0, 7.0) * s
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r, {"cy": cy, "cx": cx, "r": r}
    if kind == "rectangle":
        hy, hx = rng.uniform(2.0, 6.0, 2) * s
        return (np.abs(yy - cy) <= hy) & (np.abs(xx - cx) <= hx), {"cy": cy, "cx": cx, "hy": hy, "hx": hx}
    if kind == "annulus":
        r_out = rng.uniform(5.0, 8.0) * s
        r_in = r_out - rng.uniform(2.0, 3.0) * s
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        return (d2 <= r_out**2) & (d2 >= r_in**2), {"cy": cy, "cx": cx, "r_out": r_out, "r_in": r_in}
    # thin sinusoidal curve spanning part of the width
    amp = rng.uniform(1.0, 4.0) * s
    freq = rng.uniform(0.15, 0.4) / s
    phase = rng.uniform(0, 2 * np.pi)
    x0, x1 = sorted(rng.uniform(0.1 * size, 0.9 * size, 2))
    x1 = max(x1, x0 + 8 * s)
    m = (np.abs(yy - (cy + amp * np.sin(freq * xx + phase))) <= 0.9) & (xx >= x0) & (xx <= x1)
    return m, {"cy": cy, "amp": amp, "freq": freq, "phase": phase, "x0": x0, "x1": x1}


def _small_mask(yy, xx, free: np.ndarray, rng: np.random.Generator, size: int):
    limit = SMALL_FRACTION * size * size
    # (kind, radius-or-side); areas 9, 5, 4, 1
    options = [("disk", 1.6, 9), ("disk", 1.0, 5), ("square", 2, 4), ("square", 1, 1)]
    options = [o for o in options if o[2] < limit]
    kind, extent, _ = options[rng.integers(len(options))]
    for _ in range(50):
        cy, cx = rng.integers(2, size - 2, 2)
        if kind == "disk":
            m = (yy - cy) ** 2 + (xx - cx) ** 2 <= extent * extent
        else:
            m = (yy >= cy) & (yy < cy + extent) & (xx >= cx) & (xx < cx + extent)
        # keep a one-pixel background margin around the object
        grown = np.zeros_like(m)
        ys, xs = np.nonzero(m)
        grown[np.clip(ys[:, None] + np.array([-1, 0, 1]), 0, size - 1)[:, :, None],
              np.clip(xs[:, None] + np.array([-1, 0, 1]), 0, size - 1)[:, None, :]] = True
        if free[grown].all():
            break
    return m, {"cy": int(cy), "cx": int(cx), "shape": kind, "extent": float(extent)}


def class_intensity(c: int, classes: int) -> float:
    return 0.5 + (0.35 * c / (classes - 1) if classes > 1 else 0.3)


def render_sample(size: int, classes: int, small_object_rate: float, noise_level: float, seed):
    """Return (image, clean, mask, meta) for one sample drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    label = np.zeros((size, size), dtype=np.int64)  # 0 = background, c+1 = class c
    clean = np.full((size, size), rng.uniform(0.05, 0.2))
    objects = []
    for _ in range(rng.integers(1, 4)):
        kind = KINDS[rng.integers(len(KINDS))]
        c = int(rng.integers(classes))
        m, params = _shape_mask(kind, yy, xx, rng, size)
        level = class_intensity(c, classes) + rng.uniform(-0.05, 0.05)
        label[m] = c + 1
        clean[m] = level
        objects.append({"kind": kind, "class": c, "params": params, "mask": m})
    if rng.random() < small_object_rate:
        c = int(rng.integers(classes))
        m, params = _small_mask(yy, xx, label == 0, rng, size)
        label[m] = c + 1
        clean[m] = class_intensity(c, classes) + rng.uniform(-0.05, 0.05)
        objects.append({"kind": "small", "class": c, "params": params, "mask": m})
    clean = clean * rng.uniform(0.9, 1.1)
    image = clean + (rng.normal(0.0, noise_level, clean.shape) if noise_level > 0 else 0.0)
    mask = np.stack([label == c + 1 for c in range(classes)], axis=-1).astype(np.uint8)

    limit = SMALL_FRACTION * size * size
    meta_objects = []
    for o in objects:
        area = int(np.sum(o["mask"] & (label == o["class"] + 1)))
        params = {k: (round(float(v), 6) if isinstance(v, float) else v) for k, v in o["params"].items()}
        meta_objects.append({"kind": o["kind"], "class": o["class"], "area": area,
                             "small": bool(0 < area < limit), "params": params})
    return image.astype(np.float32), clean.astype(np.float32), mask, {"objects": meta_objects}


def gen_synthetic(n: int, size: int = 32, classes: int = 2, small_object_rate: float = 0.5,
                  noise_level: float = 0.1, seed: int = 0) -> SyntheticDataset:
    """Deterministic synthetic corpus; sample i uses the i-th child of ``SeedSequence(seed)``."""
    if n < 1 or size < 16 or classes < 1:
        raise ValueError("need n >= 1, size >= 16, classes >= 1")
    if not 0.0 <= small_object_rate <= 1.0 or noise_level < 0:
        raise ValueError("small_object_rate must lie in [0, 1] and noise_level >= 0")
    children = np.random.SeedSequence(seed).spawn(n)
    images, masks, meta = [], [], []
    for i, child in enumerate(children):
        img, _, mask, m = render_sample(size, classes, small_object_rate, noise_level, child)
        m["index"] = i
        images.append(img)
        masks.append(mask)
        meta.append(m)
    params = {"n": n, "size": size, "classes": classes, "small_object_rate": small_object_rate,
              "noise_level": noise_level, "seed": seed}
    return SyntheticDataset(np.stack(images), np.stack(masks), meta, params)
