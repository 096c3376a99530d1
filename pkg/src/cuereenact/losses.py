"""Training objectives and a finite-difference gradient checker."""
from __future__ import annotations

import numpy as np
import torch

from .errors import ValidationError

# cosine of two feature vectors is defined as 0 when either norm is below this
COS_NORM_FLOOR = 1e-12


def loss_base(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean squared error over masked frames only. pred/target: (B, N, P); mask: (B, N) bool."""
    if pred.shape != target.shape:
        raise ValidationError(f"pred {tuple(pred.shape)} and target {tuple(target.shape)} differ")
    if mask.shape != pred.shape[:2]:
        raise ValidationError(f"mask {tuple(mask.shape)} does not match frames {tuple(pred.shape[:2])}")
    n_masked = int(mask.sum())
    if n_masked == 0:
        raise ValidationError("mask selects no frames")
    sq = ((pred - target) ** 2).sum(dim=-1)
    return (sq * mask.to(sq.dtype)).sum() / (n_masked * pred.shape[-1])


def loss_3d_align(f3: torch.Tensor, f2: torch.Tensor) -> torch.Tensor:
    """Mean over blocks, batch and frames of the L2 norm of the feature difference."""
    if f3.shape != f2.shape:
        raise ValidationError(f"feature shapes differ: {tuple(f3.shape)} vs {tuple(f2.shape)}")
    s = ((f3 - f2) ** 2).sum(dim=-1)
    pos = s > 0
    # sqrt has an infinite slope at 0; route those entries through a constant
    norm = torch.where(pos, torch.sqrt(torch.where(pos, s, torch.ones_like(s))), torch.zeros_like(s))
    return norm.mean()


def loss_ortho(g: torch.Tensor, l: torch.Tensor) -> torch.Tensor:
    """Mean squared cosine similarity between global and local features per (block, frame)."""
    if g.shape != l.shape:
        raise ValidationError(f"feature shapes differ: {tuple(g.shape)} vs {tuple(l.shape)}")
    gg = (g * g).sum(dim=-1)
    ll = (l * l).sum(dim=-1)
    dot = (g * l).sum(dim=-1)
    ok = (gg >= COS_NORM_FLOOR**2) & (ll >= COS_NORM_FLOOR**2)
    denom = torch.where(ok, gg * ll, torch.ones_like(gg))
    return torch.where(ok, dot * dot / denom, torch.zeros_like(gg)).mean()


def grad_check(loss_fn, params, eps: float = 1e-5, n_coords: int = 24, seed: int = 0,
               floor: float = 1e-6) -> float:
    """Max relative error between autograd gradients and central finite differences.

    `loss_fn()` must return a scalar tensor built from `params`. Coordinates are
    sampled uniformly over all parameters. Relative error is
    |analytic - numeric| / max(|analytic|, |numeric|, floor).
    """
    params = [p for p in params]
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
    sizes = np.array([p.numel() for p in params])
    rng = np.random.default_rng(seed)
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(n_coords, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    with torch.no_grad():
        for flat in picks:
            k = int(np.searchsorted(offsets, flat, side="right") - 1)
            i = int(flat - offsets[k])
            view = params[k].view(-1)
            orig = view[i].item()
            view[i] = orig + eps
            up = loss_fn().item()
            view[i] = orig - eps
            down = loss_fn().item()
            view[i] = orig
            numeric = (up - down) / (2 * eps)
            analytic = grads[k].view(-1)[i].item()
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
            worst = max(worst, err)
    return worst
