"""Generator, refiner and critic networks.

One editing stage = four branches (global face + eyes/nose/mouth locals),
each emitting a color map and an attention map blended with its input, plus
a refiner that fuses the stitched local outputs with the global output.
Critics are unbounded-score convolutional nets; the final-image critic also
regresses the AU label.

Layers follow the convention: every convolution except an output head is
spectrally normalized and followed by InstanceNorm + ReLU (generator) or
LeakyReLU(0.01) (critics). Output heads: tanh for color, sigmoid for
attention, raw linear for scores and AU predictions.
"""

from dataclasses import dataclass, field

import torch
import torch.nn as nn
from torch.nn.utils import spectral_norm

from .regions import REGION_ORDER

LEAKY_SLOPE = 0.01


@dataclass(frozen=True)
class GeneratorConfig:
    au_dim: int = 17
    image_size: int = 128
    base_channels: int = 64
    global_blocks: int = 6
    local_blocks: int = 4
    refiner_blocks: int = 2
    face_critic_blocks: int = 5
    local_critic_blocks: int = 3
    interp_hidden: int = 64
    au_critic_hidden: int = 64

    @classmethod
    def toy(cls, au_dim=4, image_size=64, base_channels=8):
        return cls(
            au_dim=au_dim,
            image_size=image_size,
            base_channels=base_channels,
            global_blocks=2,
            local_blocks=1,
            refiner_blocks=1,
            face_critic_blocks=4,
            local_critic_blocks=3,
            interp_hidden=32,
            au_critic_hidden=32,
        )

    def to_dict(self):
        return {f: getattr(self, f) for f in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _mark_output(layer):
    layer.is_output = True
    return layer


def sn_conv(cin, cout, k, s, p):
    return spectral_norm(nn.Conv2d(cin, cout, k, s, p))


def sn_deconv(cin, cout, k, s, p):
    return spectral_norm(nn.ConvTranspose2d(cin, cout, k, s, p))


class ConvIN(nn.Module):
    def __init__(self, cin, cout, k=3, s=1, p=1, transpose=False):
        super().__init__()
        self.conv = sn_deconv(cin, cout, k, s, p) if transpose else sn_conv(cin, cout, k, s, p)
        self.norm = nn.InstanceNorm2d(cout)
        self.act = nn.ReLU()

    def forward(self, x):
        return self.act(self.norm(self.conv(x)))


class ResBlock(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.conv1 = sn_conv(ch, ch, 3, 1, 1)
        self.norm1 = nn.InstanceNorm2d(ch)
        self.conv2 = sn_conv(ch, ch, 3, 1, 1)
        self.norm2 = nn.InstanceNorm2d(ch)
        self.act = nn.ReLU()

    def forward(self, x):
        h = self.act(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return self.act(x + h)


def tile_aus(aus, h, w):
    """Replicate a (B, c) AU vector into (B, c, h, w) conditioning planes."""
    return aus[:, :, None, None].expand(-1, -1, h, w)


class Branch(nn.Module):
    """One generator branch: image + tiled AU label in, (color, attention) out.

    The global branch works at 1/4 resolution in its bottleneck; local
    branches stay at full patch resolution so arbitrary patch sizes work.
    ``force_attention`` (test hook) overrides the attention map with a
    constant to make the blending identities directly assertable.
    """

    def __init__(self, au_dim, expected_hw, base_channels, n_blocks, downsample):
        super().__init__()
        self.au_dim = au_dim
        self.expected_hw = tuple(expected_hw)
        self.downsample = downsample
        self.force_attention = None
        b = base_channels
        cin = 3 + au_dim
        if downsample:
            mid = 4 * b
            self.encoder = nn.Sequential(
                ConvIN(cin, b, 7, 1, 3),
                ConvIN(b, 2 * b, 4, 2, 1),
                ConvIN(2 * b, mid, 4, 2, 1),
            )
            self.decoder = nn.Sequential(
                ConvIN(mid, 2 * b, 4, 2, 1, transpose=True),
                ConvIN(2 * b, b, 4, 2, 1, transpose=True),
            )
        else:
            mid = 2 * b
            self.encoder = nn.Sequential(
                ConvIN(cin, b, 7, 1, 3),
                ConvIN(b, mid, 3, 1, 1),
            )
            self.decoder = nn.Sequential(ConvIN(mid, b, 3, 1, 1))
        self.bottleneck = nn.Sequential(*[ResBlock(mid) for _ in range(n_blocks)])
        self.color_head = _mark_output(nn.Conv2d(b, 3, 7, 1, 3))
        self.attn_head = _mark_output(nn.Conv2d(b, 1, 7, 1, 3))

    def forward(self, image, aus):
        if image.shape[-2:] != self.expected_hw:
            raise ValueError(
                f"branch expects {self.expected_hw}, got {tuple(image.shape[-2:])}"
            )
        if aus.shape[-1] != self.au_dim:
            raise ValueError(f"AU vector length {aus.shape[-1]}, expected {self.au_dim}")
        x = torch.cat([image, tile_aus(aus, *self.expected_hw)], dim=1)
        h = self.encoder(x)
        h = self.bottleneck(h)
        h = self.decoder(h)
        color = torch.tanh(self.color_head(h))
        attn = torch.sigmoid(self.attn_head(h))
        if self.force_attention is not None:
            attn = torch.full_like(attn, float(self.force_attention))
        return color, attn


def attention_blend(color, attn, image):
    """out = A * color + (1 - A) * image, attention broadcast over channels."""
    if color.shape != image.shape:
        raise ValueError(f"color {tuple(color.shape)} vs input {tuple(image.shape)}")
    if attn.shape[-2:] != image.shape[-2:]:
        raise ValueError("attention map spatial size mismatch")
    return attn * color + (1.0 - attn) * image


class Refiner(nn.Module):
    """Fuses the stitched local initial output with the global one (6 input
    channels) into the final face.

    The output head mirrors the branches: a color map and an attention map,
    blended over the global initial editing. The blend keeps a direct path
    from the input to the final image, which the from-scratch variant lacks.
    """

    def __init__(self, base_channels, n_blocks):
        super().__init__()
        b = base_channels
        self.body = nn.Sequential(
            ConvIN(6, b, 7, 1, 3),
            ConvIN(b, b, 3, 1, 1),
            *[ResBlock(b) for _ in range(n_blocks)],
        )
        self.color = _mark_output(nn.Conv2d(b, 3, 7, 1, 3))
        self.attn = _mark_output(nn.Conv2d(b, 1, 7, 1, 3))

    def forward(self, x, base):
        if x.shape[1] != 6:
            raise ValueError(f"refiner expects 6 input channels, got {x.shape[1]}")
        h = self.body(x)
        color = torch.tanh(self.color(h))
        attn = torch.sigmoid(self.attn(h))
        return attention_blend(color, attn, base), color, attn


def torch_crop(face, layout):
    out = {}
    for name in REGION_ORDER:
        top, left, h, w = layout.rects[name]
        out[name] = face[:, :, top : top + h, left : left + w]
    return out


def torch_stitch(patches, layout, background=None):
    first = patches[REGION_ORDER[0]]
    s = layout.image_size
    if background is None:
        canvas = first.new_zeros((first.shape[0], first.shape[1], s, s))
    else:
        canvas = background.clone()
    for name in REGION_ORDER:
        top, left, h, w = layout.rects[name]
        canvas[:, :, top : top + h, left : left + w] = patches[name]
    return canvas


@dataclass
class StageOutput:
    init: dict  # name -> blended initial output
    refined: torch.Tensor
    branch_raw: dict  # name -> (color, attention)


class EditStage(nn.Module):
    """One editing stage: four branches plus the refiner."""

    def __init__(self, config, layout):
        super().__init__()
        self.config = config
        self.layout = layout
        s = config.image_size
        self.branches = nn.ModuleDict()
        self.branches["face"] = Branch(
            config.au_dim, (s, s), config.base_channels, config.global_blocks, downsample=True
        )
        for name in REGION_ORDER:
            h, w = layout.rects[name][2], layout.rects[name][3]
            self.branches[name] = Branch(
                config.au_dim, (h, w), config.base_channels, config.local_blocks, downsample=False
            )
        self.refiner = Refiner(config.base_channels, config.refiner_blocks)

    def transform(self, inputs, aus):
        """Run the four branches and blend: the initial editing."""
        init, raw = {}, {}
        for name, image in inputs.items():
            color, attn = self.branches[name](image, aus)
            raw[name] = (color, attn)
            init[name] = attention_blend(color, attn, image)
        return init, raw

    def refine(self, init):
        local = torch_stitch({k: init[k] for k in REGION_ORDER}, self.layout, init["face"])
        fused = torch.cat([local, init["face"]], dim=1)
        return self.refiner(fused, init["face"])

    def forward(self, face, aus):
        if face.shape[-1] != self.config.image_size or face.shape[-2] != self.config.image_size:
            raise ValueError(
                f"face is {tuple(face.shape[-2:])}, expected {self.config.image_size}"
            )
        inputs = {"face": face, **torch_crop(face, self.layout)}
        init, raw = self.transform(inputs, aus)
        refined, color, attn = self.refine(init)
        raw["refiner"] = (color, attn)
        return StageOutput(init=init, refined=refined, branch_raw=raw)


class ImageCritic(nn.Module):
    """Strided conv critic with an unbounded pooled scalar score.

    ``with_au_head`` adds the AU regression output (final-image critic only).
    """

    def __init__(self, au_dim, base_channels, n_blocks, with_au_head=False):
        super().__init__()

        def strided_trunk():
            layers = []
            cin = 3
            ch = base_channels
            for i in range(n_blocks):
                layers += [sn_conv(cin, ch, 4, 2, 1), nn.LeakyReLU(LEAKY_SLOPE)]
                cin = ch
                ch = min(2 * ch, 8 * base_channels)
            return nn.Sequential(*layers), cin

        self.trunk, cin = strided_trunk()
        self.score_head = _mark_output(nn.Conv2d(cin, 1, 1, 1, 0))
        self.au_trunk = None
        self.au_head = None
        if with_au_head:
            # separate trunk: the heavily weighted AU regression must not
            # drown the realness score's features. The fixed box blur keeps
            # the head blind to pixel-level noise so the generator cannot
            # satisfy it with high-frequency adversarial patterns.
            trunk, au_cin = strided_trunk()
            self.au_trunk = nn.Sequential(nn.AvgPool2d(5, stride=1, padding=2), trunk)
            self.au_head = _mark_output(nn.Linear(au_cin, au_dim))

    def forward(self, image):
        score = self.score_head(self.trunk(image)).mean(dim=(1, 2, 3))
        au_pred = None
        if self.au_head is not None:
            au_pred = self.au_head(self.au_trunk(image).mean(dim=(2, 3)))
        return score, au_pred


class CriticSet(nn.Module):
    """Hierarchy: final-output critic (with AU head) + one critic per
    initial output (face / eyes / nose / mouth)."""

    NAMES = ("final", "face") + REGION_ORDER

    def __init__(self, config):
        super().__init__()
        self.critics = nn.ModuleDict()
        for name in self.NAMES:
            blocks = (
                config.face_critic_blocks
                if name in ("final", "face")
                else config.local_critic_blocks
            )
            self.critics[name] = ImageCritic(
                config.au_dim, config.base_channels, blocks, with_au_head=(name == "final")
            )

    def forward(self, image, which):
        return self.critics[which](image)


class AuCritic(nn.Module):
    """Unbounded score over AU vectors, used to regularize the interpolator."""

    def __init__(self, au_dim, hidden=64):
        super().__init__()
        self.net = nn.Sequential(
            spectral_norm(nn.Linear(au_dim, hidden)),
            nn.LeakyReLU(LEAKY_SLOPE),
            spectral_norm(nn.Linear(hidden, hidden)),
            nn.LeakyReLU(LEAKY_SLOPE),
            _mark_output(nn.Linear(hidden, 1)),
        )
        self.au_dim = au_dim

    def forward(self, aus):
        if aus.shape[-1] != self.au_dim:
            raise ValueError(f"AU vector length {aus.shape[-1]}, expected {self.au_dim}")
        return self.net(aus).squeeze(-1)


class AuInterpolator(nn.Module):
    """Maps (source AUs, residual) to an intermediate AU label."""

    def __init__(self, au_dim, hidden=64):
        super().__init__()
        self.au_dim = au_dim
        self.net = nn.Sequential(
            spectral_norm(nn.Linear(2 * au_dim, hidden)),
            nn.ReLU(),
            spectral_norm(nn.Linear(hidden, hidden)),
            nn.ReLU(),
            _mark_output(nn.Linear(hidden, au_dim)),
        )

    def forward(self, source_aus, residual):
        if source_aus.shape[-1] != self.au_dim or residual.shape[-1] != self.au_dim:
            raise ValueError("AU vector length mismatch")
        return self.net(torch.cat([source_aus, residual], dim=-1))


def _weight_modules(model):
    for mod in model.modules():
        if isinstance(mod, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            yield mod


def init_parameters(model):
    """Orthogonal init on every non-output weight (the spectrally normalized
    ones target their raw weight); zero biases everywhere."""
    for mod in _weight_modules(model):
        if getattr(mod, "is_output", False):
            nn.init.normal_(mod.weight, 0.0, 0.02)
        else:
            w = mod.weight_orig if hasattr(mod, "weight_orig") else mod.weight
            nn.init.orthogonal_(w)
        if mod.bias is not None:
            nn.init.zeros_(mod.bias)
    return model


def non_output_weights(model):
    """(name, raw weight) for every spectrally normalized / non-output layer."""
    out = []
    for name, mod in model.named_modules():
        if isinstance(mod, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            if getattr(mod, "is_output", False):
                continue
            w = mod.weight_orig if hasattr(mod, "weight_orig") else mod.weight
            out.append((name, w))
    return out


def count_parameters(model):
    return sum(p.numel() for p in model.parameters())
