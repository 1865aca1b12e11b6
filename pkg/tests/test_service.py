"""HTTP API tests with the in-process test client."""

import base64
import io
import os

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from expredit.service import create_app


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


class TestHealth:
    def test_ok(self, client):
        resp = client.get("/health")
        assert resp.status_code == 200
        body = resp.json()
        assert body["status"] == "ok" and "version" in body


class TestRender:
    def test_returns_png_and_landmarks(self, client):
        resp = client.post(
            "/synth/render", json={"au_like": [0.2, 0.8, 0.5, 0.5], "identity_seed": 7, "canvas": 64}
        )
        assert resp.status_code == 200
        body = resp.json()
        img = Image.open(io.BytesIO(base64.b64decode(body["image_png_base64"])))
        assert img.size == (64, 64)
        assert "mouth-top" in body["landmarks"]

    def test_rejects_out_of_range_controls(self, client):
        resp = client.post("/synth/render", json={"au_like": [2.0], "canvas": 64})
        assert resp.status_code == 422

    def test_rejects_empty_controls(self, client):
        resp = client.post("/synth/render", json={"au_like": []})
        assert resp.status_code == 422


class TestManifestValidate:
    def test_valid_manifest(self, client, toy_corpus):
        _, manifest_path = toy_corpus
        resp = client.post("/manifest/validate", json={"path": manifest_path})
        assert resp.status_code == 200
        body = resp.json()
        assert body["valid"] and body["n_records"] == 32 and body["n_identities"] == 4
        assert body["au_dim"] == 4 and body["image_size"] == 64

    def test_missing_file(self, client):
        resp = client.post("/manifest/validate", json={"path": "/nonexistent/manifest.jsonl"})
        assert resp.status_code == 404

    def test_corrupt_manifest(self, client, tmp_path):
        path = str(tmp_path / "bad.jsonl")
        with open(path, "w") as fh:
            fh.write("not json\n")
        resp = client.post("/manifest/validate", json={"path": path})
        assert resp.status_code == 422


class TestStageTargets:
    def test_linear_without_checkpoint(self, client):
        resp = client.post(
            "/interp/stage-targets", json={"y_x": [0.0, 0.0], "y_z": [1.0, 1.0], "n_stages": 4}
        )
        assert resp.status_code == 200
        targets = resp.json()["targets"]
        np.testing.assert_allclose(targets, [[0.25, 0.25], [0.5, 0.5], [0.75, 0.75], [1.0, 1.0]])

    def test_checkpoint_backed(self, client, tiny_checkpoint):
        resp = client.post(
            "/interp/stage-targets",
            json={"y_x": [0.0] * 4, "y_z": [1.0] * 4, "n_stages": 3, "checkpoint": tiny_checkpoint},
        )
        assert resp.status_code == 200
        targets = resp.json()["targets"]
        assert len(targets) == 3
        assert targets[-1] == [1.0] * 4

    def test_length_mismatch(self, client):
        resp = client.post("/interp/stage-targets", json={"y_x": [0.0], "y_z": [1.0, 1.0]})
        assert resp.status_code == 422


class TestMetricEndpoints:
    def test_psnr_identical_images(self, client, toy_corpus):
        manifest, manifest_path = toy_corpus
        img = os.path.join(os.path.dirname(manifest_path), manifest.records[0].image_path)
        resp = client.post("/metrics/psnr", json={"image_a": img, "image_b": img})
        assert resp.status_code == 200
        assert resp.json()["value"] == 100.0

    def test_psnr_missing_image(self, client):
        resp = client.post("/metrics/psnr", json={"image_a": "/no/a.png", "image_b": "/no/b.png"})
        assert resp.status_code == 404

    def test_frechet_one_dimensional(self, client):
        resp = client.post(
            "/metrics/frechet",
            json={"mu_a": [0.0], "sigma_a": [[1.0]], "mu_b": [1.0], "sigma_b": [[1.0]]},
        )
        assert resp.status_code == 200
        assert resp.json()["value"] == pytest.approx(1.0, abs=1e-8)

    def test_frechet_bad_covariance(self, client):
        resp = client.post(
            "/metrics/frechet",
            json={"mu_a": [0.0, 0.0], "sigma_a": [[-1.0, 0.0], [0.0, -1.0]],
                  "mu_b": [0.0, 0.0], "sigma_b": [[1.0, 0.0], [0.0, 1.0]]},
        )
        assert resp.status_code == 422


class TestEditEndpoint:
    def test_writes_outputs(self, client, tiny_checkpoint, toy_corpus, tmp_path):
        manifest, manifest_path = toy_corpus
        rec0, rec1 = manifest.records[0], manifest.records[1]
        img = os.path.join(os.path.dirname(manifest_path), rec0.image_path)
        resp = client.post(
            "/edit",
            json={
                "checkpoint": tiny_checkpoint,
                "image": img,
                "source_aus": list(rec0.aus),
                "target_aus": list(rec1.aus),
                "out_dir": str(tmp_path),
                "grid": True,
            },
        )
        assert resp.status_code == 200
        body = resp.json()
        assert os.path.exists(body["final"])
        assert os.path.exists(body["grid"])
        assert body["intermediates"] == []  # single-stage checkpoint
        out = np.asarray(Image.open(body["final"]))
        assert out.shape == (64, 64, 3)

    def test_missing_checkpoint(self, client, toy_corpus):
        manifest, manifest_path = toy_corpus
        img = os.path.join(os.path.dirname(manifest_path), manifest.records[0].image_path)
        resp = client.post(
            "/edit",
            json={"checkpoint": "/no/ckpt.pt", "image": img,
                  "source_aus": [0.0] * 4, "target_aus": [1.0] * 4},
        )
        assert resp.status_code == 404

    def test_wrong_au_length(self, client, tiny_checkpoint, toy_corpus, tmp_path):
        manifest, manifest_path = toy_corpus
        img = os.path.join(os.path.dirname(manifest_path), manifest.records[0].image_path)
        resp = client.post(
            "/edit",
            json={"checkpoint": tiny_checkpoint, "image": img,
                  "source_aus": [0.0] * 3, "target_aus": [1.0] * 3,
                  "out_dir": str(tmp_path)},
        )
        assert resp.status_code == 422
