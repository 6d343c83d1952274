"""Shared test utilities: finite-difference gradient checks and independent
scalar-loop reference implementations used as oracles.

Every reference here deliberately avoids the library's vectorized code
paths (plain Python loops over numpy float64) so the two sides of each
comparison stay independent.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import Tensor


def rel_err(a: Tensor, b: Tensor) -> float:
    """Infinity-norm relative error between two gradient tensors."""
    a = a.detach().double()
    b = b.detach().double()
    denom = max(float(a.abs().max()), float(b.abs().max()), 1e-12)
    return float((a - b).abs().max()) / denom


def fd_gradients(fn, tensors: list[Tensor], eps: float = 1e-6) -> list[Tensor]:
    """Central finite differences of scalar ``fn()`` w.r.t. each tensor's data."""
    grads = []
    with torch.no_grad():
        for x in tensors:
            g = torch.zeros_like(x, dtype=torch.float64)
            flat = x.reshape(-1)
            gf = g.reshape(-1)
            for i in range(flat.numel()):
                orig = float(flat[i])
                h = eps * max(1.0, abs(orig))
                flat[i] = orig + h
                f_plus = float(fn())
                flat[i] = orig - h
                f_minus = float(fn())
                flat[i] = orig
                gf[i] = (f_plus - f_minus) / (2.0 * h)
            grads.append(g)
    return grads


def check_gradients(fn, params: list[Tensor], eps: float = 1e-6) -> float:
    """Max relative error between autograd and central-difference gradients.

    ``fn`` must rebuild the forward pass from ``params`` (leaf tensors with
    ``requires_grad``) on every call.
    """
    for p in params:
        p.grad = None
    loss = fn()
    loss.backward()
    analytic = [
        p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
        for p in params
    ]
    numeric = fd_gradients(fn, [p.data for p in params], eps=eps)
    return max(rel_err(a, n) for a, n in zip(analytic, numeric))


def module_params(module: torch.nn.Module) -> list[Tensor]:
    return [p for p in module.parameters() if p.requires_grad]


def mha_reference(q, k, v, attn, mask=None, rpe_bias=None) -> np.ndarray:
    """Scalar-loop multi-head attention: per-head scaled dot products,
    softmax over allowed keys, value mixing, concat, output projection."""
    to64 = lambda t: t.detach().cpu().numpy().astype(np.float64)
    q, k, v = to64(q), to64(k), to64(v)
    w_q, w_k, w_v, w_o = (to64(m.weight) for m in (attn.w_q, attn.w_k, attn.w_v, attn.w_o))
    heads = attn.heads
    b, tq, d = q.shape
    tk = k.shape[1]
    dh = d // heads
    # nn.Linear computes x @ W.T
    Q, K, V = q @ w_q.T, k @ w_k.T, v @ w_v.T
    concat = np.zeros((b, tq, d))
    bias = None if rpe_bias is None else to64(rpe_bias)
    for bi in range(b):
        for h in range(heads):
            lo, hi = h * dh, (h + 1) * dh
            for i in range(tq):
                logits = []
                for j in range(tk):
                    s = sum(Q[bi, i, lo + a] * K[bi, j, lo + a] for a in range(dh))
                    s /= math.sqrt(dh)
                    if bias is not None:
                        s += bias[h, i, j]
                    if mask is not None and not bool(mask[i, j]):
                        s += -1e9
                    logits.append(s)
                peak = max(logits)
                exps = [math.exp(l - peak) for l in logits]
                total = sum(exps)
                weights = [e / total for e in exps]
                for a in range(dh):
                    concat[bi, i, lo + a] = sum(
                        weights[j] * V[bi, j, lo + a] for j in range(tk)
                    )
    return concat @ w_o.T


def l2_reference(x, x_hat) -> float:
    a = x.detach().reshape(-1).tolist()
    b = x_hat.detach().reshape(-1).tolist()
    return sum((ai - bi) ** 2 for ai, bi in zip(a, b))


def gdl_reference(x, x_hat, alpha: float = 1.0) -> float:
    """Scalar-loop gradient difference loss for stacks of [H, W] images."""
    a = x.detach().cpu().numpy().astype(np.float64).reshape(-1, *x.shape[-2:])
    b = x_hat.detach().cpu().numpy().astype(np.float64).reshape(-1, *x.shape[-2:])
    total = 0.0
    for img_a, img_b in zip(a, b):
        h, w = img_a.shape
        for i in range(1, h):
            for j in range(w):
                total += abs(abs(img_a[i, j] - img_a[i - 1, j])
                             - abs(img_b[i, j] - img_b[i - 1, j])) ** alpha
        for i in range(h):
            for j in range(1, w):
                total += abs(abs(img_a[i, j - 1] - img_a[i, j])
                             - abs(img_b[i, j - 1] - img_b[i, j])) ** alpha
    return total


def contrastive_reference(z, z_hat, temperature: float = 1.0) -> float:
    """Scalar-loop symmetric infoNCE over one [Hf, Wf, D] feature map pair."""
    v = z.detach().cpu().numpy().astype(np.float64).reshape(-1, z.shape[-1])
    vh = z_hat.detach().cpu().numpy().astype(np.float64).reshape(-1, z.shape[-1])
    s = v.shape[0]

    def dot(a, b):
        return sum(a[i] * b[i] for i in range(len(a))) / temperature

    def info_nce(anchor, positive, negatives):
        pos = dot(anchor, positive)
        logits = [pos] + [dot(anchor, neg) for neg in negatives]
        peak = max(logits)
        denom = sum(math.exp(l - peak) for l in logits)
        return -(pos - peak) + math.log(denom)

    total = 0.0
    for loc in range(s):
        others = [u for u in range(s) if u != loc]
        total += 0.5 * info_nce(vh[loc], v[loc], [v[u] for u in others])
        total += 0.5 * info_nce(v[loc], vh[loc], [vh[u] for u in others])
    return total


def ssim_reference(x, x_hat, peak: float = 1.0) -> float:
    """Scalar-loop SSIM: 11x11 Gaussian window, sigma 1.5, valid positions."""
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(x_hat, dtype=np.float64)
    if a.ndim == 3:  # [C, H, W]: average channels
        return float(np.mean([ssim_reference(a[c], b[c], peak) for c in range(a.shape[0])]))
    size, sigma = 11, 1.5
    half = (size - 1) / 2.0
    g = np.array([[math.exp(-((i - half) ** 2 + (j - half) ** 2) / (2 * sigma * sigma))
                   for j in range(size)] for i in range(size)])
    g /= g.sum()
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    h, w = a.shape
    values = []
    for top in range(h - size + 1):
        for left in range(w - size + 1):
            wa = a[top:top + size, left:left + size]
            wb = b[top:top + size, left:left + size]
            mu_a = float((g * wa).sum())
            mu_b = float((g * wb).sum())
            var_a = float((g * wa * wa).sum()) - mu_a ** 2
            var_b = float((g * wb * wb).sum()) - mu_b ** 2
            cov = float((g * wa * wb).sum()) - mu_a * mu_b
            values.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                          / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))
    return float(np.mean(values))


def tiny_model_config(variant: str = "far", **overrides):
    """Smallest config that exercises every code path."""
    from vptr.config import ModelConfig

    base = dict(
        variant=variant,
        past_frames=2,
        future_frames=2,
        layers=2,
        enc_layers=1,
        dec_layers=1,
        d_model=16,
        heads=2,
        window=2,
        feat_size=4,
        seed=7,
    )
    base.update(overrides)
    return ModelConfig(**base).validate()
