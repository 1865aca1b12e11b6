"""Deterministic parametric face renderer and synthetic corpus generator.

Faces are drawn procedurally on an S x S canvas. Four controls in [0, 1]
drive the geometry (brow raise, eye openness, mouth curve, mouth openness),
so every (controls, identity) pair has an exact ground-truth image. This
gives paired supervision that real expression corpora cannot provide at
desk scale.
"""

import os
from dataclasses import dataclass

import numpy as np

from .data import DatasetManifest, SampleRecord, save_manifest, save_image, MANIFEST_VERSION

MIN_CANVAS = 32
N_CONTROLS = 4  # brow-raise, eye-openness, mouth-curve, mouth-openness


@dataclass(frozen=True)
class SyntheticFaceParams:
    au_like: np.ndarray  # controls in [0, 1]
    identity_seed: int
    canvas: int = 128


def _controls(au_like):
    au = np.asarray(au_like, dtype=np.float64).ravel()
    if au.size == 0 or np.any(au < 0) or np.any(au > 1):
        raise ValueError("au_like components must lie in [0, 1]")
    full = np.full(N_CONTROLS, 0.5)
    full[: min(N_CONTROLS, au.size)] = au[:N_CONTROLS]
    return full


def _identity_traits(seed):
    rng = np.random.default_rng(seed)
    return {
        "skin": np.array([0.55, 0.35, 0.25]) + rng.uniform(-0.18, 0.35, 3),
        "bg": rng.uniform(-0.9, -0.3, 3),
        "face_rx": rng.uniform(0.33, 0.40),
        "face_ry": rng.uniform(0.42, 0.47),
        "eye_spacing": rng.uniform(0.13, 0.18),
        "mouth_width": rng.uniform(0.80, 1.15),
        "brow_color": rng.uniform(-0.95, -0.4, 3),
        "lip_color": np.array([0.3, -0.5, -0.4]) + rng.uniform(-0.2, 0.2, 3),
        "noise": rng,  # consumed once below, AU-independent
    }


def synth_regions(canvas, identity_seed):
    """Bounding boxes (top, left, h, w) that confine all AU-driven drawing,
    fixed per identity across every control setting."""
    s = canvas
    t = _identity_traits(identity_seed)
    es = t["eye_spacing"]
    mw = 0.44 * t["mouth_width"]
    boxes = {
        "eyes": (0.17 * s, (0.5 - es - 0.09) * s, 0.33 * s, 2 * (es + 0.09) * s),
        "nose": (0.48 * s, 0.44 * s, 0.20 * s, 0.12 * s),
        "mouth": (0.57 * s, (0.5 - mw / 2) * s - 2, 0.36 * s, mw * s + 4),
    }
    return {k: tuple(int(round(v)) for v in box) for k, box in boxes.items()}


def synth_face_render(params):
    """Render a face; returns (image in [-1,1], landmarks dict)."""
    s = int(params.canvas)
    if s < MIN_CANVAS:
        raise ValueError(f"canvas must be at least {MIN_CANVAS} px, got {s}")
    brow, eye_open, curve, mouth_open = _controls(params.au_like)
    t = _identity_traits(int(params.identity_seed))

    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    img = np.empty((s, s, 3))
    img[:] = t["bg"]

    # head
    cx, cy = 0.5 * s, 0.52 * s
    face = ((xx - cx) / (t["face_rx"] * s)) ** 2 + ((yy - cy) / (t["face_ry"] * s)) ** 2 <= 1.0
    skin = np.clip(t["skin"], -1, 1)
    img[face] = skin
    # identity texture, independent of the controls
    noise = t["noise"].normal(0.0, 0.035, (s, s, 1))
    img[face] += noise[face]

    def paint(mask, color):
        img[mask] = np.clip(color, -1, 1)

    # brows: large vertical travel so the extremes differ by many pixels
    ex_l, ex_r = cx - t["eye_spacing"] * s, cx + t["eye_spacing"] * s
    brow_y = (0.34 - 0.14 * brow) * s
    for ex in (ex_l, ex_r):
        m = (np.abs(yy - brow_y) < 0.022 * s + 1) & (np.abs(xx - ex) < 0.065 * s)
        paint(m, t["brow_color"])

    # eyes
    eye_y = 0.42 * s
    ry = 0.008 * s + 0.065 * eye_open * s
    for ex in (ex_l, ex_r):
        sclera = ((xx - ex) / (0.088 * s)) ** 2 + ((yy - eye_y) / max(ry, 1e-9)) ** 2 <= 1.0
        paint(sclera, np.array([0.9, 0.9, 0.9]))
        pupil = ((xx - ex) ** 2 + (yy - eye_y) ** 2 <= (0.028 * s) ** 2) & sclera
        paint(pupil, np.array([-0.85, -0.85, -0.85]))

    # nose (static)
    nose = ((xx - cx) / (0.032 * s)) ** 2 + ((yy - 0.57 * s) / (0.055 * s)) ** 2 <= 1.0
    paint(nose, skin * 0.75 - 0.08)

    # mouth: parabolic midline, curvature and thickness from the controls
    my = 0.76 * s
    half_w = 0.21 * t["mouth_width"] * s
    k = (curve - 0.5) * 2.0  # -1 frown .. +1 smile
    u = np.clip((xx - cx) / half_w, -1.5, 1.5)
    midline = my + k * 0.08 * s * (u ** 2 - 0.5)
    thick = 0.012 * s + 0.12 * mouth_open * s
    lips = (np.abs(yy - midline) < thick) & (np.abs(xx - cx) < half_w)
    paint(lips, t["lip_color"])
    if mouth_open > 0.15:
        inner = (np.abs(yy - midline) < thick * 0.6) & (np.abs(xx - cx) < half_w * 0.85)
        paint(inner, np.array([-0.7, -0.8, -0.8]))

    img = np.clip(img, -1.0, 1.0).astype(np.float32)

    def lm(x, y):
        return (float(np.clip(x, 0, s - 1)), float(np.clip(y, 0, s - 1)))

    corner_y = float(my + k * 0.08 * s * 0.5)
    landmarks = {
        "left-eye": lm(ex_l, eye_y),
        "right-eye": lm(ex_r, eye_y),
        "left-brow": lm(ex_l, brow_y),
        "right-brow": lm(ex_r, brow_y),
        "nose-bridge": lm(cx, 0.50 * s),
        "nose-tip": lm(cx, 0.62 * s),
        "mouth-left": lm(cx - half_w, corner_y),
        "mouth-right": lm(cx + half_w, corner_y),
        "mouth-top": lm(cx, my - k * 0.08 * s * 0.5 - thick),
        "mouth-bottom": lm(cx, my - k * 0.08 * s * 0.5 + thick),
    }
    return img, landmarks


def synth_au_settings(aus_per_identity, c, seed):
    """Shared control settings: all-zero, all-one, then uniform draws."""
    if aus_per_identity < 1 or c < 1:
        raise ValueError("counts must be >= 1")
    rng = np.random.default_rng(seed)
    settings = []
    for j in range(aus_per_identity):
        if j == 0:
            settings.append(np.zeros(c))
        elif j == 1:
            settings.append(np.ones(c))
        else:
            settings.append(rng.uniform(0.0, 1.0, c))
    return settings


def synth_dataset_generate(n_identities, aus_per_identity, c, out_dir, seed, image_size=128):
    """Write a paired synthetic corpus (images + manifest) and return the manifest.

    Every identity gets one ground-truth image per shared AU setting, so any
    (source, target) pair within an identity has an exact target image.
    """
    if n_identities < 1 or aus_per_identity < 1 or c < 1:
        raise ValueError("counts must be >= 1")
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    rng = np.random.default_rng(seed)
    identity_seeds = rng.integers(0, 2**31 - 1, size=n_identities)
    settings = synth_au_settings(aus_per_identity, c, seed + 1)

    records = []
    for i, id_seed in enumerate(identity_seeds):
        for j, au in enumerate(settings):
            params = SyntheticFaceParams(au_like=au, identity_seed=int(id_seed), canvas=image_size)
            img, landmarks = synth_face_render(params)
            rel = os.path.join("images", f"id{i:03d}_e{j:02d}.png")
            save_image(os.path.join(out_dir, rel), img)
            records.append(
                SampleRecord(
                    image_path=rel,
                    aus=au.astype(np.float64),
                    landmarks=landmarks,
                    identity_id=f"id{i:03d}",
                    expression_label=f"e{j:02d}",
                )
            )
    manifest = DatasetManifest(
        version=MANIFEST_VERSION,
        au_dim=c,
        image_size=image_size,
        au_max=1.0,
        records=tuple(records),
    )
    save_manifest(os.path.join(out_dir, "manifest.jsonl"), manifest)
    return manifest
