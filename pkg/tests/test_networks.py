import numpy as np
import pytest
import torch
import torch.nn as nn

from expredit.networks import (
    AuCritic,
    AuInterpolator,
    Branch,
    CriticSet,
    EditStage,
    GeneratorConfig,
    attention_blend,
    count_parameters,
    init_parameters,
)
from expredit.regions import default_layout


@pytest.fixture(scope="module")
def stage64():
    torch.manual_seed(0)
    cfg = GeneratorConfig.toy()
    stage = EditStage(cfg, default_layout(64))
    init_parameters(stage)
    stage.eval()
    return stage


class TestAttentionBlend:
    def test_zero_attention_is_identity(self):
        img = torch.rand(1, 3, 8, 8) * 2 - 1
        color = torch.rand(1, 3, 8, 8)
        attn = torch.zeros(1, 1, 8, 8)
        assert torch.equal(attention_blend(color, attn, img), img)

    def test_full_attention_is_color(self):
        img = torch.rand(1, 3, 8, 8)
        color = torch.rand(1, 3, 8, 8) * 2 - 1
        attn = torch.ones(1, 1, 8, 8)
        assert torch.equal(attention_blend(color, attn, img), color)

    def test_scalar_case(self):
        out = attention_blend(
            torch.full((1, 3, 1, 1), 0.8),
            torch.full((1, 1, 1, 1), 0.25),
            torch.zeros(1, 3, 1, 1),
        )
        assert torch.allclose(out, torch.full((1, 3, 1, 1), 0.2))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            attention_blend(torch.zeros(1, 3, 4, 4), torch.zeros(1, 1, 4, 4), torch.zeros(1, 3, 8, 8))


class TestBranch:
    def test_eyes_branch_output_shapes_at_128(self):
        torch.manual_seed(0)
        branch = Branch(17, (40, 92), base_channels=4, n_blocks=1, downsample=False)
        color, attn = branch(torch.rand(2, 3, 40, 92), torch.rand(2, 17))
        assert color.shape == (2, 3, 40, 92)
        assert attn.shape == (2, 1, 40, 92)

    def test_attention_bounded(self):
        torch.manual_seed(1)
        branch = Branch(4, (16, 16), 4, 1, downsample=False)
        _, attn = branch(torch.rand(3, 3, 16, 16) * 2 - 1, torch.rand(3, 4))
        assert attn.min() >= 0.0 and attn.max() <= 1.0

    def test_eval_mode_deterministic(self):
        torch.manual_seed(2)
        branch = Branch(4, (16, 16), 4, 1, downsample=False).eval()
        x, aus = torch.rand(1, 3, 16, 16), torch.rand(1, 4)
        c1, a1 = branch(x, aus)
        c2, a2 = branch(x, aus)
        assert torch.equal(c1, c2) and torch.equal(a1, a2)

    def test_shape_mismatch_rejected(self):
        branch = Branch(4, (16, 16), 4, 1, downsample=False)
        with pytest.raises(ValueError):
            branch(torch.rand(1, 3, 8, 8), torch.rand(1, 4))
        with pytest.raises(ValueError):
            branch(torch.rand(1, 3, 16, 16), torch.rand(1, 5))


class TestEditStage:
    def test_forced_zero_attention_reproduces_inputs(self, stage64):
        from expredit.networks import torch_crop

        face = torch.rand(1, 3, 64, 64) * 2 - 1
        aus = torch.rand(1, 4)
        for branch in stage64.branches.values():
            branch.force_attention = 0.0
        try:
            out = stage64(face, aus)
            assert torch.equal(out.init["face"], face)
            crops = torch_crop(face, stage64.layout)
            for name in ("eyes", "nose", "mouth"):
                assert torch.equal(out.init[name], crops[name])
        finally:
            for branch in stage64.branches.values():
                branch.force_attention = None

    def test_forced_full_attention_gives_color(self, stage64):
        face = torch.rand(1, 3, 64, 64) * 2 - 1
        aus = torch.rand(1, 4)
        for branch in stage64.branches.values():
            branch.force_attention = 1.0
        try:
            out = stage64(face, aus)
            assert torch.equal(out.init["face"], out.branch_raw["face"][0])
        finally:
            for branch in stage64.branches.values():
                branch.force_attention = None

    def test_shapes_preserved(self, stage64):
        out = stage64(torch.rand(2, 3, 64, 64), torch.rand(2, 4))
        assert out.refined.shape == (2, 3, 64, 64)
        assert out.init["eyes"].shape[-2:] == (20, 46)

    def test_refined_in_range(self, stage64):
        out = stage64(torch.rand(1, 3, 64, 64) * 2 - 1, torch.rand(1, 4))
        assert out.refined.min() >= -1.0 and out.refined.max() <= 1.0

    def test_branch_parameters_disjoint(self, stage64):
        ids = {}
        for name, branch in stage64.branches.items():
            for p in branch.parameters():
                assert id(p) not in ids, f"{name} aliases {ids.get(id(p))}"
                ids[id(p)] = name

    def test_refiner_takes_six_channels(self, stage64):
        assert stage64.refiner.body[0].conv.in_channels == 6
        with pytest.raises(ValueError):
            stage64.refiner(torch.rand(1, 3, 64, 64), torch.rand(1, 3, 64, 64))

    def test_refiner_blend_identities(self, stage64):
        # forced extremes of the refiner's own attention map
        fused = torch.rand(1, 6, 64, 64) * 2 - 1
        base = torch.rand(1, 3, 64, 64) * 2 - 1
        h = stage64.refiner.body(fused)
        color = torch.tanh(stage64.refiner.color(h))
        from expredit.networks import attention_blend

        assert torch.equal(attention_blend(color, torch.zeros(1, 1, 64, 64), base), base)
        assert torch.equal(attention_blend(color, torch.ones(1, 1, 64, 64), base), color)

    def test_deterministic_in_eval(self, stage64):
        face, aus = torch.rand(1, 3, 64, 64), torch.rand(1, 4)
        a = stage64(face, aus).refined
        b = stage64(face, aus).refined
        assert torch.equal(a, b)

    def test_face_size_mismatch(self, stage64):
        with pytest.raises(ValueError):
            stage64(torch.rand(1, 3, 32, 32), torch.rand(1, 4))


@pytest.fixture(scope="module")
def critics():
    torch.manual_seed(3)
    cs = CriticSet(GeneratorConfig.toy())
    init_parameters(cs)
    cs.eval()
    return cs


class TestCritics:

    def test_local_critic_no_au_prediction(self, critics):
        score, au = critics(torch.rand(2, 3, 20, 46), "eyes")
        assert score.shape == (2,) and au is None

    def test_final_critic_predicts_aus(self, critics):
        score, au = critics(torch.rand(2, 3, 64, 64), "final")
        assert score.shape == (2,) and au.shape == (2, 4)

    def test_face_critic_larger_than_local(self, critics):
        assert count_parameters(critics.critics["face"]) > count_parameters(critics.critics["eyes"])

    def test_score_head_is_raw_linear_output(self, critics):
        # unbounded critic: the score head is a bare conv marked as output,
        # with no activation after it
        for critic in critics.critics.values():
            assert isinstance(critic.score_head, nn.Conv2d)
            assert critic.score_head.is_output

    def test_leaky_slope(self, critics):
        slopes = [
            m.negative_slope for m in critics.modules() if isinstance(m, nn.LeakyReLU)
        ]
        assert slopes and all(s == 0.01 for s in slopes)

    def test_score_finite_and_deterministic(self, critics):
        x = torch.rand(4, 3, 64, 64) * 2 - 1
        s1, _ = critics(x, "final")
        s2, _ = critics(x, "final")
        assert torch.isfinite(s1).all() and torch.equal(s1, s2)


class TestAuCritic:
    def test_finite_scalar(self):
        torch.manual_seed(4)
        critic = AuCritic(4).eval()
        out = critic(torch.rand(5, 4))
        assert out.shape == (5,) and torch.isfinite(out).all()

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            AuCritic(4)(torch.rand(1, 5))

    def test_input_gradient_matches_finite_differences(self):
        torch.manual_seed(5)
        critic = AuCritic(3).double().eval()
        x = torch.rand(1, 3, dtype=torch.float64, requires_grad=True)
        critic(x).sum().backward()
        grad = x.grad.clone()
        eps = 1e-6
        for i in range(3):
            xp, xm = x.detach().clone(), x.detach().clone()
            xp[0, i] += eps
            xm[0, i] -= eps
            fd = (critic(xp).item() - critic(xm).item()) / (2 * eps)
            assert fd == pytest.approx(grad[0, i].item(), rel=1e-5, abs=1e-8)


class TestInterpolatorNet:
    def test_output_length(self):
        torch.manual_seed(6)
        net = AuInterpolator(4).eval()
        out = net(torch.rand(3, 4), torch.rand(3, 4))
        assert out.shape == (3, 4)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            AuInterpolator(4)(torch.rand(1, 4), torch.rand(1, 3))
