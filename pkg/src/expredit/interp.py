"""Intermediate AU-label construction: linear pseudo-targets, residuals, and
the learned projection onto natural AU statistics."""

import numpy as np
import torch


def _pair(y_x, y_z):
    y_x = np.asarray(y_x, dtype=np.float64)
    y_z = np.asarray(y_z, dtype=np.float64)
    if y_x.shape != y_z.shape:
        raise ValueError(f"AU length mismatch: {y_x.shape} vs {y_z.shape}")
    return y_x, y_z


def pseudo_targets(y_x, y_z, n_stages):
    """Linear interpolation targets; element k is y_x + (k/n)(y_z - y_x),
    k = 1..n, with the last element exactly y_z."""
    y_x, y_z = _pair(y_x, y_z)
    if n_stages < 1:
        raise ValueError("n_stages must be >= 1")
    out = [y_x + (k / n_stages) * (y_z - y_x) for k in range(1, n_stages)]
    out.append(y_z.copy())
    return out


def residual(y_p, y_x):
    y_p, y_x = _pair(y_p, y_x)
    return y_p - y_x


def interpolate_aus(y_x, r, interpolator):
    """Apply the trained interpolator to one (source, residual) pair."""
    y_x, r = _pair(y_x, r)
    device = next(interpolator.parameters()).device
    dtype = next(interpolator.parameters()).dtype
    with torch.no_grad():
        xs = torch.as_tensor(y_x, dtype=dtype, device=device)[None]
        rs = torch.as_tensor(r, dtype=dtype, device=device)[None]
        out = interpolator(xs, rs)[0]
    return out.double().cpu().numpy()


def stage_targets(y_x, y_z, n_stages, interpolator=None):
    """Per-stage supervision labels: interpolator outputs for stages
    1..n-1, the true target for the final stage."""
    y_x, y_z = _pair(y_x, y_z)
    pseudo = pseudo_targets(y_x, y_z, n_stages)
    targets = []
    for y_p in pseudo[:-1]:
        if interpolator is None:
            targets.append(y_p)
        else:
            targets.append(interpolate_aus(y_x, residual(y_p, y_x), interpolator))
    targets.append(y_z.copy())
    return targets
