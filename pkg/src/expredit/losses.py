"""Loss terms: Wasserstein adversarial with gradient penalty, AU-conditional
regression, cycle content, attention sparsity, and interpolation losses,
assembled into the weighted total. All reductions are means over batch and
elements so the weights are resolution- and batch-independent."""

from dataclasses import dataclass

import torch


@dataclass(frozen=True)
class LossWeights:
    lambda_cond: float = 3000.0
    lambda_cont: float = 10.0
    lambda_attn: float = 0.1
    lambda_interp: float = 1.0
    lambda_gp: float = 10.0
    lambda_int: float = 0.1

    def to_dict(self):
        return {f: getattr(self, f) for f in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class LossReport:
    adv: float
    cond: float
    cont: float
    attn: float
    interp: float
    total: float
    per_critic: dict

    def to_dict(self):
        return {
            "adv": self.adv,
            "cond": self.cond,
            "cont": self.cont,
            "attn": self.attn,
            "interp": self.interp,
            "total": self.total,
            "per_critic": dict(self.per_critic),
        }


def gradient_penalty(critic_fn, real, fake, lam_gp, rng=None):
    """lam * E[(||grad critic(x~)||_2 - 1)^2] on per-sample uniform mixes of
    real and fake."""
    if real.shape != fake.shape:
        raise ValueError("real/fake shape mismatch")
    b = real.shape[0]
    eps_shape = (b,) + (1,) * (real.dim() - 1)
    if rng is None:
        eps = torch.rand(eps_shape, dtype=real.dtype, device=real.device)
    else:
        eps = torch.rand(eps_shape, dtype=real.dtype, device=real.device, generator=rng)
    mixed = (eps * real.detach() + (1.0 - eps) * fake.detach()).requires_grad_(True)
    score = critic_fn(mixed)
    grads = torch.autograd.grad(
        outputs=score.sum(), inputs=mixed, create_graph=True, retain_graph=True
    )[0]
    norms = grads.reshape(b, -1).norm(2, dim=1)
    return lam_gp * ((norms - 1.0) ** 2).mean()


def _score(critic, image):
    out = critic(image)
    return out[0] if isinstance(out, tuple) else out


def critic_loss(critic_set, reals, fakes, lam_gp, rng=None):
    """Sum over the five image critics of the Wasserstein critic objective
    plus gradient penalty. ``reals``/``fakes`` map critic name -> image."""
    per_critic = {}
    total = 0.0
    for name in critic_set.NAMES:
        critic = critic_set.critics[name]
        real, fake = reals[name], fakes[name].detach()
        term = -_score(critic, real).mean() + _score(critic, fake).mean()
        if lam_gp > 0:
            term = term + gradient_penalty(
                lambda x, c=critic: _score(c, x), real, fake, lam_gp, rng=rng
            )
        per_critic[name] = float(term.detach())
        total = total + term
    return total, per_critic


def generator_adv_loss(critic_set, fakes):
    """Generator side of the min-max: -sum_i E[score(fake_i)]."""
    per_critic = {}
    total = 0.0
    for name in critic_set.NAMES:
        term = -_score(critic_set.critics[name], fakes[name]).mean()
        per_critic[name] = float(term.detach())
        total = total + term
    return total, per_critic


def conditional_expression_loss(au_pred_real, y_x, au_pred_fake, y_z):
    """AU regression: (critic term on real, generator term on fake), each a
    mean squared error over batch and AU dimensions."""
    for a, b in ((au_pred_real, y_x), (au_pred_fake, y_z)):
        if a.shape[-1] != b.shape[-1]:
            raise ValueError("AU vector length mismatch")
    d_term = ((au_pred_real - y_x) ** 2).mean()
    g_term = ((au_pred_fake - y_z) ** 2).mean()
    return d_term, g_term


def content_loss(reconstruction, original):
    """Mean absolute difference between the cycle reconstruction and input."""
    if reconstruction.shape != original.shape:
        raise ValueError("shape mismatch")
    return (reconstruction - original).abs().mean()


def attention_sparsity_loss(branch_raw):
    """Sum over the attention maps (branches and refiner) of the mean squared
    attention value."""
    total = 0.0
    for name, (_, attn) in branch_raw.items():
        total = total + (attn ** 2).mean()
    return total


def interpolation_loss(y_hat, y_p, au_critic, lam_int):
    """Batch-mean euclidean distance to the pseudo target plus the generator
    side of the AU adversary."""
    if y_hat.shape != y_p.shape:
        raise ValueError("AU vector length mismatch")
    reg = (y_hat - y_p).norm(2, dim=-1).mean()
    if lam_int == 0:
        return reg
    return reg + lam_int * (-au_critic(y_hat).mean())


def total_loss(adv, cond, cont, attn, interp, weights, per_critic=None):
    """Weighted sum of the five terms, returned as a LossReport."""
    parts = {"adv": adv, "cond": cond, "cont": cont, "attn": attn, "interp": interp}
    vals = {}
    for name, v in parts.items():
        v = v if torch.is_tensor(v) else torch.as_tensor(float(v))
        if not torch.isfinite(v).all():
            raise FloatingPointError(f"non-finite loss component: {name}")
        vals[name] = v
    total = (
        vals["adv"]
        + weights.lambda_cond * vals["cond"]
        + weights.lambda_cont * vals["cont"]
        + weights.lambda_attn * vals["attn"]
        + weights.lambda_interp * vals["interp"]
    )
    f = {name: float(v.detach()) for name, v in vals.items()}
    report = LossReport(
        adv=f["adv"],
        cond=f["cond"],
        cont=f["cont"],
        attn=f["attn"],
        interp=f["interp"],
        # recomputed in double so the report invariant holds exactly
        total=f["adv"]
        + weights.lambda_cond * f["cond"]
        + weights.lambda_cont * f["cont"]
        + weights.lambda_attn * f["attn"]
        + weights.lambda_interp * f["interp"],
        per_critic=dict(per_critic or {}),
    )
    return total, report


def cascade_total_loss(stage_totals):
    """Unweighted sum of per-stage totals."""
    if len(stage_totals) < 1:
        raise ValueError("need at least one stage")
    total = stage_totals[0]
    for t in stage_totals[1:]:
        total = total + t
    return total
