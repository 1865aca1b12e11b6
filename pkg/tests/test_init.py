"""Weight initialization and spectral normalization checks."""

import pytest
import torch
import torch.nn as nn

from expredit.networks import (
    AuCritic,
    AuInterpolator,
    CriticSet,
    EditStage,
    GeneratorConfig,
    init_parameters,
    non_output_weights,
)
from expredit.regions import default_layout


def build_all(seed=0):
    torch.manual_seed(seed)
    cfg = GeneratorConfig.toy()
    stage = init_parameters(EditStage(cfg, default_layout(64)))
    critics = init_parameters(CriticSet(cfg))
    interp = init_parameters(AuInterpolator(cfg.au_dim, hidden=16))
    au_critic = init_parameters(AuCritic(cfg.au_dim, hidden=16))
    return stage, critics, interp, au_critic


@pytest.fixture(scope="module")
def models():
    return build_all()


def orthogonality_defect(w):
    """max |W^T W - I| with the weight reshaped 2-D and oriented tall."""
    m = w.detach().reshape(w.shape[0], -1)
    if m.shape[0] < m.shape[1]:
        m = m.t()
    eye = torch.eye(m.shape[1], dtype=m.dtype)
    return float((m.t() @ m - eye).abs().max())


class TestOrthogonalInit:
    def test_every_non_output_weight_orthogonal(self, models):
        checked = 0
        for model in models:
            for name, w in non_output_weights(model):
                assert orthogonality_defect(w) < 1e-4, name
                checked += 1
        assert checked > 20

    def test_biases_zero(self, models):
        for model in models:
            for name, mod in model.named_modules():
                if isinstance(mod, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
                    if mod.bias is not None:
                        assert float(mod.bias.detach().abs().max()) == 0.0, name

    def test_output_layers_small_normal(self, models):
        stage = models[0]
        w = stage.refiner.color.weight.detach()
        assert float(w.std()) < 0.1
        assert orthogonality_defect(w) > 1e-4

    def test_same_seed_identical(self):
        a = build_all(seed=5)
        b = build_all(seed=5)
        for ma, mb in zip(a, b):
            for pa, pb in zip(ma.parameters(), mb.parameters()):
                assert torch.equal(pa, pb)


class TestSpectralNorm:
    def test_output_layers_not_normalized(self, models):
        stage, critics = models[0], models[1]
        assert not hasattr(stage.refiner.color, "weight_orig")
        assert not hasattr(stage.refiner.attn, "weight_orig")
        for critic in critics.critics.values():
            assert not hasattr(critic.score_head, "weight_orig")

    def test_hidden_layers_are_normalized(self, models):
        stage = models[0]
        assert hasattr(stage.branches["face"].encoder[0].conv, "weight_orig")

    def test_normalized_spectral_norm_bounded(self, models):
        # run a few training-mode forwards so power iteration converges, then
        # check the effective weights
        stage, critics, interp, au_critic = models
        stage.train()
        critics.train()
        interp.train()
        au_critic.train()
        for _ in range(8):
            stage(torch.rand(1, 3, 64, 64) * 2 - 1, torch.rand(1, 4))
            for name in critics.NAMES:
                h, w = (64, 64) if name in ("final", "face") else {
                    "eyes": stage.layout.rects["eyes"][2:],
                    "nose": stage.layout.rects["nose"][2:],
                    "mouth": stage.layout.rects["mouth"][2:],
                }[name]
                critics(torch.rand(1, 3, h, w), name)
            interp(torch.rand(1, 4), torch.rand(1, 4))
            au_critic(torch.rand(1, 4))
        for model in models:
            model.eval()
            for name, mod in model.named_modules():
                if hasattr(mod, "weight_orig"):
                    w = mod.weight.detach().reshape(mod.weight.shape[0], -1)
                    sigma = float(torch.linalg.svdvals(w)[0])
                    assert sigma <= 1.01, f"{name}: sigma={sigma}"
