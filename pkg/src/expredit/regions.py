"""Local focus geometry: fixed-size region rectangles around eyes, nose and
mouth, computed from dataset-averaged landmark centroids, plus crop/stitch."""

from dataclasses import dataclass

import numpy as np

# (h, w) at the 128 px reference resolution
BASE_REGION_SIZES = {"eyes": (40, 92), "nose": (40, 48), "mouth": (40, 60)}
REGION_ORDER = ("eyes", "nose", "mouth")  # stitch overwrite order

LANDMARK_GROUPS = {
    "eyes": ("left-eye", "right-eye"),
    "nose": ("nose-bridge", "nose-tip"),
    "mouth": ("mouth-left", "mouth-right", "mouth-top", "mouth-bottom"),
}


def region_sizes(image_size):
    """Region (h, w) scaled from the 128 px reference, rounded to even."""
    sizes = {}
    for name, (h, w) in BASE_REGION_SIZES.items():
        sh = max(2, int(round(h * image_size / 128 / 2)) * 2)
        sw = max(2, int(round(w * image_size / 128 / 2)) * 2)
        sizes[name] = (sh, sw)
    return sizes


@dataclass(frozen=True)
class RegionLayout:
    image_size: int
    rects: dict  # name -> (top, left, h, w), ints

    def to_dict(self):
        return {
            "image_size": self.image_size,
            "rects": {k: list(v) for k, v in self.rects.items()},
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            image_size=int(d["image_size"]),
            rects={k: tuple(int(x) for x in v) for k, v in d["rects"].items()},
        )


def _clamped_rect(cy, cx, h, w, image_size):
    top = int(round(cy)) - h // 2
    left = int(round(cx)) - w // 2
    top = min(max(top, 0), image_size - h)
    left = min(max(left, 0), image_size - w)
    return (top, left, h, w)


def compute_region_centers(manifest):
    """Average each region's landmark-group centroid over all records and
    freeze the resulting fixed-size rectangles, shifted inside bounds."""
    if len(manifest.records) == 0:
        raise ValueError("cannot compute region centers from an empty manifest")
    sizes = region_sizes(manifest.image_size)
    rects = {}
    for name, keys in LANDMARK_GROUPS.items():
        centroids = []
        for i, rec in enumerate(manifest.records):
            missing = [k for k in keys if k not in rec.landmarks]
            if missing:
                raise ValueError(f"record {i}: missing landmarks {missing} for region {name!r}")
            pts = np.array([rec.landmarks[k] for k in keys], dtype=np.float64)
            if np.any(pts < 0) or np.any(pts >= manifest.image_size):
                raise ValueError(f"record {i}: landmark outside image bounds")
            centroids.append(pts.mean(axis=0))  # (x, y)
        cx, cy = np.mean(centroids, axis=0)
        h, w = sizes[name]
        rects[name] = _clamped_rect(cy, cx, h, w, manifest.image_size)
    return RegionLayout(image_size=manifest.image_size, rects=rects)


def default_layout(image_size):
    """Layout from the renderer's canonical geometry, for tests and demos."""
    frac = {"eyes": (0.42, 0.5), "nose": (0.56, 0.5), "mouth": (0.76, 0.5)}
    sizes = region_sizes(image_size)
    rects = {}
    for name, (fy, fx) in frac.items():
        h, w = sizes[name]
        rects[name] = _clamped_rect(fy * image_size, fx * image_size, h, w, image_size)
    return RegionLayout(image_size=image_size, rects=rects)


def crop_regions(face, layout):
    """Cut the three fixed rectangles out of a (H, W, C) face."""
    face = np.asarray(face)
    if face.shape[0] != layout.image_size or face.shape[1] != layout.image_size:
        raise ValueError(
            f"face is {face.shape[0]}x{face.shape[1]}, layout expects {layout.image_size}"
        )
    out = {}
    for name in REGION_ORDER:
        top, left, h, w = layout.rects[name]
        out[name] = face[top : top + h, left : left + w].copy()
    return out


def stitch_regions(patches, layout, background=None):
    """Write the patches back at their rectangles over a background
    (zeros if None). Overlaps resolve by the fixed order eyes->nose->mouth."""
    s = layout.image_size
    first = patches[REGION_ORDER[0]]
    if background is None:
        canvas = np.zeros((s, s) + first.shape[2:], dtype=first.dtype)
    else:
        background = np.asarray(background)
        if background.shape[0] != s or background.shape[1] != s:
            raise ValueError("background shape does not match layout image_size")
        canvas = background.copy()
    for name in REGION_ORDER:
        top, left, h, w = layout.rects[name]
        patch = np.asarray(patches[name])
        if patch.shape[:2] != (h, w):
            raise ValueError(f"patch {name!r} is {patch.shape[:2]}, layout expects {(h, w)}")
        canvas[top : top + h, left : left + w] = patch
    return canvas
