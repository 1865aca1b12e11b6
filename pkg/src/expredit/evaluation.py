"""Checkpoint evaluation: paired PSNR, Frechet feature distance and the
R / G / R+G classifier protocol over a labeled manifest."""

import numpy as np

from .data import load_image, resolve_image_path
from .metrics import (
    classification_protocol,
    classifier_extractor,
    feature_stats,
    frechet_distance,
    psnr,
    train_classifier,
)
from .training import edit


def split_by_identity(manifest, test_fraction=0.25):
    """Deterministic identity-level train/test split (last identities test)."""
    identities = sorted(manifest.identities())
    n_test = max(1, int(round(test_fraction * len(identities))))
    test_ids = set(identities[-n_test:])
    train = [r for r in manifest.records if r.identity_id not in test_ids]
    test = [r for r in manifest.records if r.identity_id in test_ids]
    return train, test


def label_vocabulary(records):
    labels = sorted({r.expression_label for r in records if r.expression_label})
    if not labels:
        raise ValueError("records carry no expression labels")
    return {lbl: i for i, lbl in enumerate(labels)}


def label_au_targets(records, vocab):
    """Mean AU vector per expression label, the editing target for that label."""
    sums = {lbl: [] for lbl in vocab}
    for rec in records:
        if rec.expression_label in sums:
            sums[rec.expression_label].append(rec.aus)
    return {lbl: np.mean(v, axis=0) for lbl, v in sums.items() if v}


def generate_label_edits(model, records, manifest_path, label_targets, vocab):
    """Edit every record toward every label's AU target; returns
    (image, label_index) pairs for the G / R+G protocols."""
    out = []
    for rec in records:
        src = load_image(resolve_image_path(manifest_path, rec))
        for lbl, target in label_targets.items():
            _, final = edit(src, rec.aus, target, model)
            out.append((final, vocab[lbl]))
    return out


def paired_psnr(model, records, manifest_path, max_pairs=64):
    """Mean PSNR of edits against same-identity ground-truth targets."""
    by_id = {}
    for rec in records:
        by_id.setdefault(rec.identity_id, []).append(rec)
    values = []
    for recs in by_id.values():
        for src in recs:
            for tgt in recs:
                if tgt is src or len(values) >= max_pairs:
                    continue
                src_img = load_image(resolve_image_path(manifest_path, src))
                tgt_img = load_image(resolve_image_path(manifest_path, tgt))
                _, final = edit(src_img, src.aus, tgt.aus, model)
                values.append(psnr(final, tgt_img))
    if not values:
        raise ValueError("no same-identity pairs available for PSNR")
    return float(np.mean(values)), len(values)


def evaluate(model, manifest, manifest_path, metrics=("psnr", "fid", "cls"), seed=0):
    """Run the requested metrics; returns a JSON-serializable report."""
    report = {}
    train_recs, test_recs = split_by_identity(manifest)
    if "psnr" in metrics:
        value, n_pairs = paired_psnr(model, test_recs, manifest_path)
        report["psnr"] = {"mean_db": value, "pairs": n_pairs}
    needs_cls = "cls" in metrics or "fid" in metrics
    if needs_cls:
        vocab = label_vocabulary(manifest.records)
        targets = label_au_targets(train_recs, vocab)
        real_train = [
            (load_image(resolve_image_path(manifest_path, r)), vocab[r.expression_label])
            for r in train_recs
        ]
        real_test = [
            (load_image(resolve_image_path(manifest_path, r)), vocab[r.expression_label])
            for r in test_recs
        ]
        generated = generate_label_edits(model, test_recs, manifest_path, targets, vocab)
    if "cls" in metrics:
        report["cls"] = {
            mode: classification_protocol(real_train, real_test, generated, mode, seed=seed)
            for mode in ("R", "G", "R+G")
        }
        report["cls"]["chance"] = 1.0 / len(vocab)
    if "fid" in metrics:
        clf = train_classifier(
            [img for img, _ in real_train],
            [lbl for _, lbl in real_train],
            len(vocab),
            seed=seed,
        )
        extractor = classifier_extractor(clf)
        stats_real = feature_stats([img for img, _ in real_test], extractor)
        stats_gen = feature_stats([img for img, _ in generated], extractor)
        report["fid"] = {"value": frechet_distance(stats_real, stats_gen)}
    return report
