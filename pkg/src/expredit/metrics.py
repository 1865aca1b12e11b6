"""Evaluation metrics and protocols: PSNR, Frechet feature distance with a
pluggable extractor, the classifier-based R / G / R+G protocol, and
continuous editing frame generation."""

import numpy as np
import torch
import torch.nn as nn

from .data import load_image, resolve_image_path
from .interp import stage_targets
from .training import to_image, to_tensor

PSNR_CAP_DB = 100.0


def psnr(a, b, max_value=2.0, cap=PSNR_CAP_DB):
    """10 log10(max^2 / MSE), capped for identical images. Images in [-1, 1]
    have a peak-to-peak range of 2, hence the default max_value."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * np.log10(max_value**2 / mse))


def frechet_distance(stats_a, stats_b, eps=1e-10):
    """||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sa Sb)^(1/2)).

    The matrix square root comes from an eigendecomposition of the
    symmetrized product; small negative eigenvalues (within sqrt(eps) of 0)
    are clipped, larger ones indicate a non-PSD input and raise.
    """
    mu_a, sigma_a = stats_a
    mu_b, sigma_b = stats_b
    mu_a = np.asarray(mu_a, dtype=np.float64)
    mu_b = np.asarray(mu_b, dtype=np.float64)
    sigma_a = np.atleast_2d(np.asarray(sigma_a, dtype=np.float64))
    sigma_b = np.atleast_2d(np.asarray(sigma_b, dtype=np.float64))
    if mu_a.shape != mu_b.shape or sigma_a.shape != sigma_b.shape:
        raise ValueError("statistics dimension mismatch")
    for name, sigma in (("a", sigma_a), ("b", sigma_b)):
        if not np.allclose(sigma, sigma.T, atol=1e-8):
            raise ValueError(f"covariance {name} is not symmetric")
        eig = np.linalg.eigvalsh((sigma + sigma.T) / 2)
        if eig.min() < -1e-6:
            raise ValueError(f"covariance {name} is not positive semidefinite")
    prod = sigma_a @ sigma_b
    sym = (prod + prod.T) / 2
    eigvals = np.linalg.eigvalsh(sym)
    eigvals = np.clip(eigvals, 0.0, None)
    covmean_trace = np.sum(np.sqrt(eigvals))
    diff = mu_a - mu_b
    return float(diff @ diff + np.trace(sigma_a) + np.trace(sigma_b) - 2.0 * covmean_trace)


def feature_stats(images, extractor):
    """Sample mean and unbiased covariance of extractor(image) vectors."""
    if len(images) < 2:
        raise ValueError("need at least 2 images for feature statistics")
    feats = np.stack([np.asarray(extractor(img), dtype=np.float64).ravel() for img in images])
    mu = feats.mean(axis=0)
    sigma = np.cov(feats, rowvar=False)
    return mu, np.atleast_2d(sigma)


class SmallClassifier(nn.Module):
    """4 conv blocks + linear head; penultimate pooled features double as
    the default Frechet-distance feature extractor."""

    def __init__(self, n_classes, base_channels=16):
        super().__init__()
        b = base_channels
        layers = []
        cin = 3
        for i in range(4):
            cout = min(b * 2**i, 8 * b)
            layers += [nn.Conv2d(cin, cout, 4, 2, 1), nn.ReLU()]
            cin = cout
        self.trunk = nn.Sequential(*layers)
        self.head = nn.Linear(cin, n_classes)

    def features(self, x):
        return self.trunk(x).mean(dim=(2, 3))

    def forward(self, x):
        return self.head(self.features(x))


def train_classifier(images, labels, n_classes, epochs=20, lr=1e-3, seed=0, batch_size=16):
    """Fit the small expression classifier on (H, W, C) images in [-1, 1]."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    clf = SmallClassifier(n_classes)
    xs = torch.stack([to_tensor(img) for img in images])
    ys = torch.tensor(labels, dtype=torch.long)
    opt = torch.optim.Adam(clf.parameters(), lr=lr)
    loss_fn = nn.CrossEntropyLoss()
    n = len(images)
    clf.train()
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            opt.zero_grad(set_to_none=True)
            loss = loss_fn(clf(xs[list(idx)]), ys[list(idx)])
            loss.backward()
            opt.step()
    clf.eval()
    return clf


def classifier_accuracy(clf, images, labels):
    xs = torch.stack([to_tensor(img) for img in images])
    with torch.no_grad():
        pred = clf(xs).argmax(dim=1).numpy()
    return float(np.mean(pred == np.asarray(labels)))


def classifier_extractor(clf):
    """Frechet-distance feature extractor backed by a trained classifier."""

    def extract(img):
        with torch.no_grad():
            return clf.features(to_tensor(img)[None])[0].numpy()

    return extract


def classification_protocol(real_train, real_test, generated, mode, seed=0, epochs=20):
    """R / G / R+G accuracy. Each argument is a list of (image, label_index)
    pairs; label indices must share one vocabulary."""
    if mode not in ("R", "G", "R+G"):
        raise ValueError(f"unknown mode: {mode}")
    for name, split in (("real_train", real_train), ("real_test", real_test)):
        if any(lbl is None for _, lbl in split):
            raise ValueError(f"{name}: missing expression labels")
    all_labels = [lbl for split in (real_train, real_test, generated) for _, lbl in split]
    n_classes = int(max(all_labels)) + 1
    if mode == "R+G":
        train = list(real_train) + list(generated)
    else:
        train = list(real_train)
    clf = train_classifier(
        [img for img, _ in train], [lbl for _, lbl in train], n_classes, epochs=epochs, seed=seed
    )
    test = generated if mode == "G" else real_test
    return classifier_accuracy(clf, [img for img, _ in test], [lbl for _, lbl in test])


def manifest_labeled_images(manifest, manifest_path):
    """(image, label_index) pairs plus the label vocabulary."""
    labels = sorted({r.expression_label for r in manifest.records if r.expression_label})
    if not labels:
        raise ValueError("manifest records carry no expression labels")
    vocab = {lbl: i for i, lbl in enumerate(labels)}
    pairs = []
    for rec in manifest.records:
        if rec.expression_label is None:
            raise ValueError(f"record {rec.image_path} has no expression label")
        pairs.append((load_image(resolve_image_path(manifest_path, rec)), vocab[rec.expression_label]))
    return pairs, vocab


def continuous_edit(face, y_x, y_z, n_frames, model):
    """Frames walking the interpolated AU path; with n_frames equal to the
    cascade depth this reproduces edit()'s stage outputs."""
    if n_frames < 2:
        raise ValueError("n_frames must be >= 2")
    targets = stage_targets(
        np.asarray(y_x, dtype=np.float64),
        np.asarray(y_z, dtype=np.float64),
        n_frames,
        model.interpolator,
    )
    model.eval()
    x = to_tensor(np.asarray(face))[None]
    frames = []
    with torch.no_grad():
        for j, tgt in enumerate(targets):
            stage = model.stages[min(j, model.n_stages - 1)]
            aus = torch.tensor(np.asarray(tgt), dtype=torch.float32)[None]
            x = stage(x, aus).refined
            frames.append(to_image(x[0]))
    return frames


def save_image_grid(path, images, cols=None):
    """Tile equally sized (H, W, C) images into one PNG."""
    from .data import save_image

    n = len(images)
    cols = cols or n
    rows = (n + cols - 1) // cols
    h, w = images[0].shape[:2]
    grid = np.full((rows * h, cols * w, 3), -1.0, dtype=np.float32)
    for i, img in enumerate(images):
        r, c = divmod(i, cols)
        grid[r * h : (r + 1) * h, c * w : (c + 1) * w] = img
    save_image(path, grid)
    return path
