"""Procedural stick-figure scenes with exact keypoint labels.

Each sample is addressed by (seed, index): the generator re-derives its RNG
from both, so samples are reproducible bitwise and can be created in any
order or from any process. Figures span a configurable fraction of the image
height, which is the scale-variation knob the multi-scale stems target.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import PlacementFailure
from .pose import Keypoints
from .tensor import Tensor, dump_tensor

__all__ = [
    "KEYPOINT_NAMES", "SceneSpec", "Sample", "generate",
    "SyntheticDataset", "split_indices", "export_samples",
]

KEYPOINT_NAMES = ("head", "neck", "elbow_l", "elbow_r",
                  "wrist_l", "wrist_r", "ankle_l", "ankle_r")

# canonical skeleton, unit height, y grows downward
_CANON = np.array([
    (0.00, -0.50),   # head
    (0.00, -0.30),   # neck
    (-0.18, -0.10),  # elbow_l
    (0.18, -0.10),   # elbow_r
    (-0.30, 0.08),   # wrist_l
    (0.30, 0.08),    # wrist_r
    (-0.12, 0.50),   # ankle_l
    (0.12, 0.50),    # ankle_r
])
_LIMBS = ((0, 1), (1, 2), (2, 4), (1, 3), (3, 5), (1, 6), (1, 7))


@dataclass
class SceneSpec:
    extent: tuple = (64, 64)               # (H, W)
    scale_range: tuple = (0.2, 0.9)        # figure height as fraction of H
    rotation_deg: float = 30.0
    noise: float = 0.05
    seed: int = 0

    def validate(self) -> None:
        lo, hi = self.scale_range
        if lo > hi or lo <= 0:
            raise ValueError(f"bad scale range {self.scale_range}")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")


@dataclass
class Sample:
    image: Tensor                          # [3, H, W] in [0, 1]
    keypoints: Keypoints
    meta: dict = field(default_factory=dict)


def _paint_segment(canvas: np.ndarray, a, b, half_width: float, level: float) -> None:
    """Max-composite an anti-aliased capsule from a to b onto the canvas."""
    H, W = canvas.shape
    pad = half_width + 1.5
    x0 = max(int(np.floor(min(a[0], b[0]) - pad)), 0)
    x1 = min(int(np.ceil(max(a[0], b[0]) + pad)) + 1, W)
    y0 = max(int(np.floor(min(a[1], b[1]) - pad)), 0)
    y1 = min(int(np.ceil(max(a[1], b[1]) + pad)) + 1, H)
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    ab = np.asarray(b, dtype=np.float64) - a
    denom = float(ab @ ab)
    px = xs - a[0]
    py = ys - a[1]
    t = np.clip((px * ab[0] + py * ab[1]) / denom, 0.0, 1.0) if denom > 0 else 0.0
    d = np.hypot(px - t * ab[0], py - t * ab[1])
    cov = np.clip(0.5 + half_width - d, 0.0, 1.0) * level
    np.maximum(canvas[y0:y1, x0:x1], cov, out=canvas[y0:y1, x0:x1])


def generate(spec: SceneSpec, index: int) -> Sample:
    """Render one figure; fully determined by (spec.seed, index)."""
    spec.validate()
    H, W = spec.extent
    rng = np.random.default_rng([spec.seed, index])

    margin = 1.0
    joints = scale = theta = None
    for _ in range(100):
        scale = float(rng.uniform(*spec.scale_range))
        theta = float(np.deg2rad(rng.uniform(-spec.rotation_deg, spec.rotation_deg)))
        rot = np.array([[np.cos(theta), -np.sin(theta)],
                        [np.sin(theta), np.cos(theta)]])
        limbs_px = (_CANON * scale * H) @ rot.T
        # center range that keeps every joint margin pixels inside the frame
        lo = (margin - limbs_px[:, 0].min(), margin - limbs_px[:, 1].min())
        hi = (W - 1 - margin - limbs_px[:, 0].max(), H - 1 - margin - limbs_px[:, 1].max())
        if lo[0] > hi[0] or lo[1] > hi[1]:
            continue    # this draw cannot fit; reject and redraw
        center = rng.uniform(lo, hi)
        joints = limbs_px + center
        break
    if joints is None:
        raise PlacementFailure(
            f"no figure in scale range {spec.scale_range} fits a {H}x{W} image after 100 tries")
    height_px = scale * H

    line_w = max(0.6, 0.035 * height_px)
    joint_r = max(0.9, 0.05 * height_px)
    canvas = np.zeros((H, W))
    for i, j in _LIMBS:
        _paint_segment(canvas, joints[i], joints[j], line_w, 0.9)
    for k, pt in enumerate(joints):
        r = joint_r * (1.8 if k == 0 else 1.0)    # head drawn larger
        _paint_segment(canvas, pt, pt, r, 1.0)

    tint = np.array([1.0, 0.85, 0.7])
    img = canvas[None, :, :] * tint[:, None, None]
    img = img + rng.normal(0.0, spec.noise, size=img.shape)
    img = np.clip(img, 0.0, 1.0).astype(np.float32)

    kps = Keypoints(xy=joints.copy(), visible=np.ones(len(joints), dtype=bool))
    return Sample(image=Tensor(img), keypoints=kps,
                  meta={"scale": scale, "rotation": theta, "index": index})


class SyntheticDataset:
    """Index-addressable sequence of generated samples with optional caching."""

    def __init__(self, spec: SceneSpec, n: int, cache: bool = False):
        if n < 1:
            raise ValueError("dataset needs at least one sample")
        self.spec = spec
        self.n = n
        self._cache: dict[int, Sample] = {} if cache else None

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, index: int) -> Sample:
        if not 0 <= index < self.n:
            raise IndexError(index)
        if self._cache is not None:
            if index not in self._cache:
                self._cache[index] = generate(self.spec, index)
            return self._cache[index]
        return generate(self.spec, index)


def split_indices(n: int, eval_fraction: float = 0.2) -> tuple:
    """Disjoint, exhaustive (train, eval) index ranges."""
    n_eval = max(1, int(round(n * eval_fraction))) if n > 1 else 0
    return list(range(0, n - n_eval)), list(range(n - n_eval, n))


def export_samples(dataset: SyntheticDataset, out_dir: str, split: str, indices=None) -> None:
    """Write `<out>/<split>/<index>.tnsr` image blobs and `.csv` keypoint files."""
    root = os.path.join(out_dir, split)
    os.makedirs(root, exist_ok=True)
    for i in indices if indices is not None else range(len(dataset)):
        sample = dataset[i]
        with open(os.path.join(root, f"{i}.tnsr"), "wb") as fh:
            dump_tensor(sample.image, fh)
        with open(os.path.join(root, f"{i}.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "name", "x", "y", "visible"])
            kp = sample.keypoints
            for k in range(kp.count):
                writer.writerow([k, KEYPOINT_NAMES[k], f"{kp.xy[k, 0]:.4f}",
                                 f"{kp.xy[k, 1]:.4f}", int(kp.visible[k])])
