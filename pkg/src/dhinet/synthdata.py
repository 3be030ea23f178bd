"""Procedural RGB-D scenes: colored primitives over simple backgrounds.

Each sample draws 1..N primitives (rectangle, disc, triangle) at distinct
depth planes over a gradient, noise or checker background. Rendering is
painter's order from far to near, so nearer objects overwrite farther ones
in both color and depth. An object is annotated only if at least a quarter
of its analytic area survives clipping and occlusion; the stored box is the
tight bounds of its visible pixels. Colors encode the class (a fixed hue per
class id) and the primitive kind cycles with the class id, so classes stay
recognizable from RGB alone.

Files per sample: 8-bit RGB PNG, 16-bit single-channel depth PNG holding
millimeters (value 1234 loads as 1.234), and a text file of
"class cx cy w h" rows in normalized coordinates. A manifest JSON lists the
splits. Sample i derives its RNG from (seed, i), so datasets are
reproducible file-for-file.
"""

from __future__ import annotations

import colorsys
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

BACKGROUND_KINDS = ("gradient", "noise", "checker")
SHAPE_KINDS = ("rect", "disc", "triangle")


@dataclass
class SceneObject:
    shape: str
    class_id: int
    cx: float  # pixels
    cy: float
    w: float
    h: float
    depth: float  # meters
    color: tuple


@dataclass
class SceneSpec:
    size: int
    background: str
    bg_colors: tuple
    bg_depth: float
    lighting: float
    objects: list


def _class_color(class_id: int, num_classes: int, rng) -> tuple:
    hue = (class_id / max(num_classes, 1) + rng.uniform(-0.04, 0.04)) % 1.0
    sat = rng.uniform(0.8, 1.0)
    val = rng.uniform(0.75, 1.0)
    return colorsys.hsv_to_rgb(hue, sat, val)


def sample_scene(rng: np.random.Generator, size: int, num_classes: int,
                 min_objects: int = 1, max_objects: int = 2) -> SceneSpec:
    background = BACKGROUND_KINDS[rng.integers(len(BACKGROUND_KINDS))]
    bg_colors = (rng.uniform(0.05, 0.45, 3), rng.uniform(0.05, 0.45, 3))
    count = int(rng.integers(min_objects, max_objects + 1))
    depths = np.sort(rng.uniform(1.0, 6.0, count))[::-1]  # far to near
    objects = []
    for oi in range(count):
        class_id = int(rng.integers(num_classes))
        shape = SHAPE_KINDS[class_id % len(SHAPE_KINDS)]
        w = rng.uniform(0.28, 0.5) * size
        h = w if shape == "disc" else rng.uniform(0.28, 0.5) * size
        objects.append(SceneObject(
            shape=shape, class_id=class_id,
            cx=rng.uniform(0.15, 0.85) * size, cy=rng.uniform(0.15, 0.85) * size,
            w=w, h=h, depth=float(depths[oi]),
            color=_class_color(class_id, num_classes, rng)))
    return SceneSpec(size=size, background=background, bg_colors=bg_colors,
                     bg_depth=float(rng.uniform(8.0, 12.0)),
                     lighting=float(rng.uniform(0.75, 1.0)), objects=objects)


def _shape_mask(obj: SceneObject, xx: np.ndarray, yy: np.ndarray) -> np.ndarray:
    if obj.shape == "rect":
        return (np.abs(xx - obj.cx) <= obj.w / 2) & (np.abs(yy - obj.cy) <= obj.h / 2)
    if obj.shape == "disc":
        return (xx - obj.cx) ** 2 + (yy - obj.cy) ** 2 <= (obj.w / 2) ** 2
    # upward triangle: apex on top, base at the bottom edge of the box
    t = (yy - (obj.cy - obj.h / 2)) / obj.h
    half = np.clip(t, 0.0, 1.0) * obj.w / 2
    return (t >= 0) & (t <= 1) & (np.abs(xx - obj.cx) <= half)


def _analytic_area(obj: SceneObject) -> float:
    if obj.shape == "rect":
        return obj.w * obj.h
    if obj.shape == "disc":
        return np.pi * (obj.w / 2) ** 2
    return obj.w * obj.h / 2


def _background(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    s = spec.size
    a, b = spec.bg_colors
    if spec.background == "gradient":
        t = np.linspace(0.0, 1.0, s)[:, None, None]
        return np.broadcast_to(a * (1 - t) + b * t, (s, s, 3)).copy()
    if spec.background == "checker":
        block = max(s // 8, 4)
        yy, xx = np.mgrid[0:s, 0:s]
        cells = ((yy // block + xx // block) % 2).astype(np.float64)[..., None]
        return a * (1 - cells) + b * cells
    base = np.broadcast_to(a, (s, s, 3)).copy()
    return np.clip(base + rng.normal(0.0, 0.05, (s, s, 3)), 0.0, 1.0)


def render_scene(spec: SceneSpec, rng: np.random.Generator | None = None):
    """Returns (rgb uint8, depth float64 meters, annotations).

    Annotations are (class_id, cx, cy, w, h) with normalized coordinates,
    derived from each object's visible pixel mask.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    s = spec.size
    yy, xx = np.mgrid[0:s, 0:s]
    rgb = _background(spec, rng)
    depth = np.full((s, s), spec.bg_depth)
    owner = np.full((s, s), -1)
    for oi, obj in enumerate(spec.objects):  # objects arrive sorted far to near
        mask = _shape_mask(obj, xx, yy)
        rgb[mask] = obj.color
        depth[mask] = obj.depth
        owner[mask] = oi
    annotations = []
    for oi, obj in enumerate(spec.objects):
        visible = owner == oi
        count = int(visible.sum())
        if count == 0 or count < 0.25 * _analytic_area(obj):
            continue
        ys, xs = np.nonzero(visible)
        x0, x1 = xs.min(), xs.max()
        y0, y1 = ys.min(), ys.max()
        annotations.append((obj.class_id,
                            (x0 + x1 + 1) / 2 / s, (y0 + y1 + 1) / 2 / s,
                            (x1 - x0 + 1) / s, (y1 - y0 + 1) / s))
    rgb = np.clip(rgb * spec.lighting, 0.0, 1.0)
    return (np.round(rgb * 255.0).astype(np.uint8), depth, annotations)


def _write_rgb(path: Path, rgb: np.ndarray):
    Image.fromarray(rgb, mode="RGB").save(path, format="PNG")


def _write_depth(path: Path, depth_m: np.ndarray):
    mm = np.round(depth_m * 1000.0)
    if np.any(mm < 0) or np.any(mm > 65535):
        raise ValueError("depth out of the 16-bit millimeter range")
    Image.fromarray(mm.astype(np.uint16)).save(path, format="PNG")


def _read_rgb(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def _read_depth(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img, dtype=np.float64) / 1000.0


def generate_dataset(out_dir, count: int, num_classes: int = 3, seed: int = 0,
                     size: int = 96, test_count: int = 0, min_objects: int = 1,
                     max_objects: int = 2) -> Path:
    """Write a dataset under ``out_dir`` and return the manifest path."""
    if count < 1:
        raise ValueError("count must be positive")
    if not 1 <= min_objects <= max_objects:
        raise ValueError("object counts must satisfy 1 <= min <= max")
    out_dir = Path(out_dir)
    for sub in ("images", "depth", "labels"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    splits = {"train": [], "test": []}
    plan = [("train", i) for i in range(count)] + [("test", i) for i in range(test_count)]
    for ordinal, (split, local) in enumerate(plan):
        rng = np.random.default_rng((seed, ordinal))
        spec = sample_scene(rng, size, num_classes, min_objects, max_objects)
        rgb, depth, annotations = render_scene(spec, rng)
        stem = f"{split}_{local:05d}"
        record = {"image": f"images/{stem}.png", "depth": f"depth/{stem}.png",
                  "labels": f"labels/{stem}.txt"}
        _write_rgb(out_dir / record["image"], rgb)
        _write_depth(out_dir / record["depth"], depth)
        lines = [f"{cid} {cx:.8f} {cy:.8f} {w:.8f} {h:.8f}"
                 for cid, cx, cy, w, h in annotations]
        (out_dir / record["labels"]).write_text("\n".join(lines) + ("\n" if lines else ""))
        splits[split].append(record)
    manifest = {"image_size": size, "num_classes": num_classes, "seed": seed,
                "splits": splits}
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=1) + "\n")
    return manifest_path


@dataclass
class Sample:
    rgb: np.ndarray    # (H,W,3) float64 in [0,1]
    depth: np.ndarray  # (H,W) float64 meters
    annotations: list  # (class_id, cx, cy, w, h)


def load_split(manifest_path, split: str) -> tuple[list[Sample], dict]:
    """Load one split; returns (samples, manifest dict)."""
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if split not in manifest.get("splits", {}):
        raise ValueError(f"split {split!r} not present in {manifest_path}")
    root = manifest_path.parent
    samples = []
    for record in manifest["splits"][split]:
        rgb = _read_rgb(root / record["image"])
        depth = _read_depth(root / record["depth"])
        if rgb.shape[:2] != depth.shape:
            raise ValueError(
                f"{record['image']}: rgb extents {rgb.shape[:2]} != depth {depth.shape}")
        annotations = []
        for line in (root / record["labels"]).read_text().splitlines():
            if not line.strip():
                continue
            cid, cx, cy, w, h = line.split()
            annotations.append((int(cid), float(cx), float(cy), float(w), float(h)))
        samples.append(Sample(rgb=rgb, depth=depth, annotations=annotations))
    return samples, manifest


def resize_nearest(sample: Sample, size: int) -> Sample:
    """Nearest-neighbor resize of one sample; normalized boxes are unchanged."""
    h, w = sample.depth.shape
    if (h, w) == (size, size):
        return sample
    rows = (np.arange(size) * h // size).clip(0, h - 1)
    cols = (np.arange(size) * w // size).clip(0, w - 1)
    return Sample(rgb=sample.rgb[rows][:, cols], depth=sample.depth[rows][:, cols],
                  annotations=sample.annotations)
