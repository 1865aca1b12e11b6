"""Optimization engine: single-stage adversarial training, cascade assembly
by weight cloning, end-to-end fine-tuning, schedules and checkpointing."""

import copy
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .data import load_image, resolve_image_path
from .interp import stage_targets
from .losses import (
    LossWeights,
    attention_sparsity_loss,
    cascade_total_loss,
    content_loss,
    critic_loss,
    generator_adv_loss,
    gradient_penalty,
    interpolation_loss,
    total_loss,
)
from .networks import (
    AuCritic,
    AuInterpolator,
    CriticSet,
    EditStage,
    GeneratorConfig,
    init_parameters,
)
from .regions import RegionLayout, compute_region_centers

CHECKPOINT_VERSION = 1
AU_HEAD_R1_WEIGHT = 10.0
AU_HEAD_NOISE_STD = 0.1


@dataclass(frozen=True)
class TrainConfig:
    n_stages: int = 3
    batch_size: int = 2
    epochs: int = 100
    lr: float = 1e-4
    lr_decay_start_epoch: int = 50
    finetune_epochs: int = 10
    finetune_lr: float = 1e-5
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    critic_steps_per_gen: int = 1
    content_warmup_steps: int = 200
    gen_lr_scale: float = 0.075
    seed: int = 0
    steps_per_epoch: int | None = None  # None: one pass over the records
    snapshot_every: int = 200
    weights: LossWeights = field(default_factory=LossWeights)

    def to_dict(self):
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d["weights"] = self.weights.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if isinstance(d.get("weights"), dict):
            d["weights"] = LossWeights.from_dict(d["weights"])
        return cls(**d)


def lr_at(epoch, config):
    """Constant until the decay start, then linear to 0 at the last epoch."""
    if epoch < 0 or epoch > config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs}]")
    if epoch < config.lr_decay_start_epoch:
        return config.lr
    span = config.epochs - config.lr_decay_start_epoch
    if span <= 0:
        return 0.0
    return config.lr * (config.epochs - epoch) / span


def finetune_lr_at(epoch, config):
    """Fine-tuning schedule: linear from finetune_lr down to 0."""
    if epoch < 0 or epoch > config.finetune_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.finetune_epochs}]")
    return config.finetune_lr * (config.finetune_epochs - epoch) / config.finetune_epochs


def to_tensor(img):
    """(H, W, C) numpy image in [-1, 1] -> (C, H, W) float tensor."""
    return torch.from_numpy(np.ascontiguousarray(np.moveaxis(img, -1, 0))).float()


def to_image(t):
    """(C, H, W) tensor -> (H, W, C) float32 numpy image clipped to [-1, 1]."""
    return np.clip(np.moveaxis(t.detach().cpu().numpy(), 0, -1), -1.0, 1.0).astype(np.float32)


class CascadeModel(nn.Module):
    """N chained editing stages with per-stage critic sets, one shared AU
    interpolator and its critic. n_stages=1 is the single-stage model."""

    def __init__(self, gen_config, layout, n_stages=1):
        super().__init__()
        if n_stages < 1:
            raise ValueError("n_stages must be >= 1")
        self.gen_config = gen_config
        self.layout = layout
        self.stages = nn.ModuleList(EditStage(gen_config, layout) for _ in range(n_stages))
        self.critic_sets = nn.ModuleList(CriticSet(gen_config) for _ in range(n_stages))
        self.interpolator = AuInterpolator(gen_config.au_dim, gen_config.interp_hidden)
        self.au_critic = AuCritic(gen_config.au_dim, gen_config.au_critic_hidden)

    @property
    def n_stages(self):
        return len(self.stages)

    def generator_parameters(self):
        params = [p for s in self.stages for p in s.parameters()]
        params += list(self.interpolator.parameters())
        return params

    def critic_parameters(self):
        params = [p for c in self.critic_sets for p in c.parameters()]
        params += list(self.au_critic.parameters())
        return params


def build_model(gen_config, layout, n_stages=1, seed=0):
    torch.manual_seed(seed)
    model = CascadeModel(gen_config, layout, n_stages)
    init_parameters(model)
    return model


# -- checkpoint key scheme: stage{k}.*, critic{k}.{name}.*, interp.* ---------

def _to_ckpt_keys(state):
    out = {}
    for key, val in state.items():
        if key.startswith("stages."):
            _, k, rest = key.split(".", 2)
            key = f"stage{k}.{rest}"
        elif key.startswith("critic_sets."):
            _, k, rest = key.split(".", 2)
            rest = rest.removeprefix("critics.")
            key = f"critic{k}.{rest}"
        elif key.startswith("interpolator."):
            key = "interp." + key.split(".", 1)[1]
        out[key] = val
    return out


def _from_ckpt_keys(state):
    out = {}
    for key, val in state.items():
        if key.startswith("stage"):
            head, rest = key.split(".", 1)
            key = f"stages.{head[len('stage'):]}.{rest}"
        elif key.startswith("critic") and not key.startswith("critic_sets."):
            head, rest = key.split(".", 1)
            key = f"critic_sets.{head[len('critic'):]}.critics.{rest}"
        elif key.startswith("interp."):
            key = "interpolator." + key.split(".", 1)[1]
        out[key] = val
    return out


def save_checkpoint(path, model, train_config=None):
    payload = {
        "version": CHECKPOINT_VERSION,
        "n_stages": model.n_stages,
        "gen_config": model.gen_config.to_dict(),
        "layout": model.layout.to_dict(),
        "train_config": train_config.to_dict() if train_config else None,
        "state": _to_ckpt_keys(model.state_dict()),
    }
    torch.save(payload, path)


def load_checkpoint(path):
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version: {payload.get('version')}")
    gen_config = GeneratorConfig.from_dict(payload["gen_config"])
    layout = RegionLayout.from_dict(payload["layout"])
    model = CascadeModel(gen_config, layout, payload["n_stages"])
    model.load_state_dict(_from_ckpt_keys(payload["state"]))
    model.eval()
    train_config = (
        TrainConfig.from_dict(payload["train_config"]) if payload["train_config"] else None
    )
    return model, train_config


def init_cascade_from_pretrained(single_ckpt_path, n_stages):
    """Clone a trained single-stage model into every cascade stage. Critics
    are cloned per stage; the interpolator and AU critic carry over once."""
    single, train_config = load_checkpoint(single_ckpt_path)
    cascade = CascadeModel(single.gen_config, single.layout, n_stages)
    for stage in cascade.stages:
        stage.load_state_dict(copy.deepcopy(single.stages[0].state_dict()))
    for critics in cascade.critic_sets:
        critics.load_state_dict(copy.deepcopy(single.critic_sets[0].state_dict()))
    cascade.interpolator.load_state_dict(single.interpolator.state_dict())
    cascade.au_critic.load_state_dict(single.au_critic.state_dict())
    return cascade, train_config


# -- data --------------------------------------------------------------------

class PairedData:
    """In-memory corpus with same-identity (source, target) pair sampling."""

    def __init__(self, manifest, manifest_path):
        if len(manifest.records) == 0:
            raise ValueError("empty manifest")
        self.manifest = manifest
        self.images = torch.stack(
            [to_tensor(load_image(resolve_image_path(manifest_path, r))) for r in manifest.records]
        )
        self.aus = torch.tensor(
            np.array([r.aus for r in manifest.records]), dtype=torch.float32
        )
        self.by_identity = {}
        for i, rec in enumerate(manifest.records):
            self.by_identity.setdefault(rec.identity_id, []).append(i)
        if len(self.by_identity) < 2:
            raise ValueError("need at least 2 identities for training")

    def sample_pairs(self, rng, batch_size):
        src, tgt = [], []
        identities = list(self.by_identity)
        for _ in range(batch_size):
            ident = identities[rng.integers(len(identities))]
            idxs = self.by_identity[ident]
            i = idxs[rng.integers(len(idxs))]
            j = idxs[rng.integers(len(idxs))] if len(idxs) > 1 else i
            src.append(i)
            tgt.append(j)
        return (
            self.images[src],
            self.aus[src],
            self.images[tgt],
            self.aus[tgt],
        )

    def sample_aus(self, rng, batch_size):
        idx = rng.integers(len(self.manifest.records), size=batch_size)
        return self.aus[list(idx)]


# -- training loops ----------------------------------------------------------

class DivergenceError(RuntimeError):
    def __init__(self, message, checkpoint_path):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


def _interp_schedule_batch(model, y_x, y_z, n_stages, rng):
    """Pick a random intermediate step and run the interpolator on its
    linear pseudo target (batched)."""
    n = max(n_stages, 3)
    k = int(rng.integers(1, n))  # 1..n-1
    y_p = y_x + (k / n) * (y_z - y_x)
    y_hat = model.interpolator(y_x, y_p - y_x)
    return y_hat, y_p


def _stage_target_batch(model, y_x, y_z, n_stages):
    """Per-stage conditioning labels for a batch: interpolator outputs for
    the intermediate stages, the true target for the last one."""
    targets = []
    for k in range(1, n_stages):
        y_p = y_x + (k / n_stages) * (y_z - y_x)
        with torch.no_grad():
            targets.append(model.interpolator(y_x, y_p - y_x))
    targets.append(y_z)
    return targets


def _crops(model, image):
    from .networks import torch_crop

    return torch_crop(image, model.layout)


def _fake_map(stage_out):
    return {
        "final": stage_out.refined,
        "face": stage_out.init["face"],
        "eyes": stage_out.init["eyes"],
        "nose": stage_out.init["nose"],
        "mouth": stage_out.init["mouth"],
    }


def _real_map(model, real_image):
    crops = _crops(model, real_image)
    return {"final": real_image, "face": real_image, **crops}


def _check_finite_parameters(model):
    for name, p in model.named_parameters():
        if not torch.isfinite(p).all():
            raise FloatingPointError(f"non-finite parameter: {name}")


def _run_training(
    model, data, config, out_dir, schedule, epochs, log_name, warmup_steps=0, use_gen_scale=False
):
    """Shared critic/generator alternation for both training phases.

    For n_stages == 1 this is single-stage training on full-gap pairs; for
    n_stages > 1 each stage consumes the previous refined output and its
    interpolated AU target, and the loss is the unweighted sum over stages.
    """
    os.makedirs(out_dir, exist_ok=True)
    w = config.weights
    n = model.n_stages
    rng = np.random.default_rng(config.seed)
    gp_gen = torch.Generator().manual_seed(config.seed + 1)
    # the interpolator gets its own group: gen_lr_scale exists to slow the
    # image-adversarial game, and the interpolator plays no part in it
    opt_g = torch.optim.Adam(
        [
            {"params": [p for s in model.stages for p in s.parameters()]},
            {"params": list(model.interpolator.parameters())},
        ],
        lr=schedule(0),
        betas=(config.adam_beta1, config.adam_beta2),
    )
    opt_d = torch.optim.Adam(
        model.critic_parameters(), lr=schedule(0), betas=(config.adam_beta1, config.adam_beta2)
    )
    steps_per_epoch = config.steps_per_epoch or max(
        1, math.ceil(len(data.manifest.records) / config.batch_size)
    )
    log_path = os.path.join(out_dir, log_name)
    ckpt_path = os.path.join(out_dir, "checkpoint.pt")
    last_good = copy.deepcopy(model.state_dict())
    step = 0
    model.train()
    with open(log_path, "w") as log:
        for epoch in range(epochs):
            lr = schedule(epoch)
            for group in opt_d.param_groups:
                group["lr"] = lr
            for _ in range(steps_per_epoch):
                # the generator runs slower than the critics once the full
                # adversarial loss is active, so the critics keep up and the
                # warm-up operating point erodes less
                scale = config.gen_lr_scale if use_gen_scale and step >= warmup_steps else 1.0
                g_lr = lr * scale
                opt_g.param_groups[0]["lr"] = g_lr
                opt_g.param_groups[1]["lr"] = lr
                i_x, y_x, i_z, y_z = data.sample_pairs(rng, config.batch_size)
                try:
                    reports = _train_step(
                        model, data, config, w, n, rng, gp_gen, opt_g, opt_d, i_x, y_x, i_z, y_z,
                        content_only=step < warmup_steps,
                    )
                    _check_finite_parameters(model)
                except FloatingPointError as exc:
                    model.load_state_dict(last_good)
                    save_checkpoint(ckpt_path, model, config)
                    raise DivergenceError(
                        f"training diverged at step {step}: {exc}", ckpt_path
                    ) from exc
                record = {
                    "step": step,
                    "epoch": epoch,
                    "lr": lr,
                    "stages": [r.to_dict() for r in reports],
                    "total": sum(r.total for r in reports),
                }
                log.write(json.dumps(record) + "\n")
                if step % config.snapshot_every == 0:
                    last_good = copy.deepcopy(model.state_dict())
                step += 1
    model.eval()
    save_checkpoint(ckpt_path, model, config)
    return ckpt_path


def _train_step(
    model, data, config, w, n, rng, gp_gen, opt_g, opt_d, i_x, y_x, i_z, y_z, content_only=False
):
    # critic update(s)
    for _ in range(config.critic_steps_per_gen):
        with torch.no_grad():
            targets = _stage_target_batch(model, y_x, y_z, n)
            x = i_x
            stage_fakes = []
            for k in range(n):
                out = model.stages[k](x, targets[k])
                stage_fakes.append(_fake_map(out))
                x = out.refined
        reals = _real_map(model, i_z)
        d_loss = 0.0
        for k in range(n):
            adv_d, _ = critic_loss(model.critic_sets[k], reals, stage_fakes[k], w.lambda_gp, gp_gen)
            noise = torch.randn(i_z.shape, generator=gp_gen) * AU_HEAD_NOISE_STD
            real_in = (i_z.detach() + noise).requires_grad_(True)
            _, au_pred_real = model.critic_sets[k].critics["final"](real_in)
            d_term = ((au_pred_real - y_z) ** 2).mean()
            # flatten the AU head around (noisy) real images so pixel noise
            # cannot move its predictions; without this the generator
            # satisfies the heavily weighted conditional loss with
            # adversarial noise instead of an actual edit
            head_grad = torch.autograd.grad(
                au_pred_real.sum(), real_in, create_graph=True, retain_graph=True
            )[0]
            head_r1 = head_grad.reshape(head_grad.shape[0], -1).pow(2).sum(dim=1).mean()
            d_loss = d_loss + adv_d + w.lambda_cond * d_term + AU_HEAD_R1_WEIGHT * head_r1
        # AU-vector adversary
        y_hat, _ = _interp_schedule_batch(model, y_x, y_z, n, rng)
        real_aus = data.sample_aus(rng, y_x.shape[0])
        au_d = (
            -model.au_critic(real_aus).mean()
            + model.au_critic(y_hat.detach()).mean()
            + gradient_penalty(model.au_critic, real_aus, y_hat.detach(), w.lambda_gp, gp_gen)
        )
        d_loss = d_loss + au_d
        opt_d.zero_grad(set_to_none=True)
        d_loss.backward()
        opt_d.step()

    # generator update (end-to-end through all stages)
    targets = _stage_target_batch(model, y_x, y_z, n)
    x = i_x
    stage_totals, reports = [], []
    final_out = None
    stage_outs = []
    for k in range(n):
        out = model.stages[k](x, targets[k])
        stage_outs.append(out)
        x = out.refined
        final_out = out
    # content preservation: cycle the final output back to the source AUs,
    # plus self-reconstruction (editing toward the image's own AUs must be
    # the identity); the second term anchors pixels the AUs do not control
    rec_targets = _stage_target_batch(model, y_z, y_x, n)
    xr = final_out.refined
    for k in range(n):
        xr = model.stages[k](xr, rec_targets[k]).refined
    # the self path runs through the cascade twice so repeated application is
    # trained to be idempotent; chained stages otherwise accumulate repaint
    # noise on every pass
    xs = i_x
    self_targets = _stage_target_batch(model, y_x, y_x, n)
    for _ in range(2):
        for k in range(n):
            xs = model.stages[k](xs, self_targets[k]).refined
    cont = 0.5 * content_loss(xr, i_x) + 0.5 * content_loss(xs, i_x)
    y_hat, y_p = _interp_schedule_batch(model, y_x, y_z, n, rng)
    interp_term = interpolation_loss(y_hat, y_p, model.au_critic, w.lambda_int)
    for k in range(n):
        out = stage_outs[k]
        fakes = _fake_map(out)
        adv_g, per_critic = generator_adv_loss(model.critic_sets[k], fakes)
        au_pred_fake = model.critic_sets[k].critics["final"](out.refined)[1]
        g_term = ((au_pred_fake - targets[k]) ** 2).mean()
        attn = attention_sparsity_loss(out.branch_raw)
        stage_cont = cont if k == n - 1 else torch.zeros(())
        stage_interp = interp_term if k == n - 1 else torch.zeros(())
        stage_total, report = total_loss(
            adv_g, g_term, stage_cont, attn, stage_interp, w, per_critic
        )
        stage_totals.append(stage_total)
        reports.append(report)
    # warm-up: optimize reconstruction alone so the generator settles into an
    # identity-preserving operating point before the adversarial and heavily
    # weighted conditional terms start pulling it toward full repaints
    g_loss = w.lambda_cont * cont if content_only else cascade_total_loss(stage_totals)
    opt_g.zero_grad(set_to_none=True)
    g_loss.backward()
    opt_g.step()
    return reports


def train_single_stage(manifest, manifest_path, config, gen_config, out_dir, layout=None):
    """Train one editing stage (with its critics and the AU interpolator)
    on full-gap same-identity pairs. Returns the checkpoint path."""
    if layout is None:
        layout = compute_region_centers(manifest)
    model = build_model(gen_config, layout, n_stages=1, seed=config.seed)
    data = PairedData(manifest, manifest_path)
    _run_training(
        model, data, config, out_dir, lambda e: lr_at(e, config), config.epochs,
        "train_log.jsonl", warmup_steps=config.content_warmup_steps, use_gen_scale=True,
    )
    return os.path.join(out_dir, "checkpoint.pt")


def train_cascade(model, manifest, manifest_path, config, out_dir):
    """End-to-end fine-tuning of an initialized cascade."""
    data = PairedData(manifest, manifest_path)
    _run_training(
        model,
        data,
        config,
        out_dir,
        lambda e: finetune_lr_at(e, config),
        config.finetune_epochs,
        "finetune_log.jsonl",
    )
    return os.path.join(out_dir, "checkpoint.pt")


def edit(face, y_x, y_z, model):
    """Run the cascade on one face; returns (intermediates, final) images."""
    model.eval()
    targets = stage_targets(
        np.asarray(y_x, dtype=np.float64),
        np.asarray(y_z, dtype=np.float64),
        model.n_stages,
        model.interpolator if model.n_stages > 1 else None,
    )
    x = to_tensor(np.asarray(face))[None]
    outputs = []
    with torch.no_grad():
        for k, tgt in enumerate(targets):
            aus = torch.tensor(np.asarray(tgt), dtype=torch.float32)[None]
            x = model.stages[k](x, aus).refined
            outputs.append(to_image(x[0]))
    return outputs[:-1], outputs[-1]
