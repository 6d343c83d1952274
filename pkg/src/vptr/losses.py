"""Training objectives: L2, gradient-difference, contrastive feature loss,
and the per-variant composites.

Reduction convention: the optimization objectives keep per-clip sums over
time and pixels (matching the training equations) and average over the
batch axis only; pass ``reduction="mean"`` to the elementary losses for a
count-normalized value suitable for logging.
"""

from __future__ import annotations

import torch
from torch import Tensor

from .errors import ShapeMismatchError


def _check_same_shape(x: Tensor, x_hat: Tensor, what: str) -> None:
    if x.shape != x_hat.shape:
        raise ShapeMismatchError(
            f"{what}: shapes {tuple(x.shape)} and {tuple(x_hat.shape)} differ"
        )


def l2_loss(x: Tensor, x_hat: Tensor, reduction: str = "sum") -> Tensor:
    """Sum (or mean) of squared errors over all elements."""
    _check_same_shape(x, x_hat, "l2_loss")
    sq = (x - x_hat) ** 2
    return sq.mean() if reduction == "mean" else sq.sum()


def gdl_loss(x: Tensor, x_hat: Tensor, alpha: float = 1.0, reduction: str = "sum") -> Tensor:
    """Image gradient difference loss over the last two (spatial) dims.

    Penalizes |difference of absolute adjacent-pixel differences|^alpha in
    both spatial directions; invariant to adding a constant to either image.
    """
    _check_same_shape(x, x_hat, "gdl_loss")
    if x.shape[-1] < 2 or x.shape[-2] < 2:
        raise ShapeMismatchError(f"gdl_loss needs spatial dims >= 2, got {tuple(x.shape)}")
    gx_v = (x[..., 1:, :] - x[..., :-1, :]).abs()
    gh_v = (x_hat[..., 1:, :] - x_hat[..., :-1, :]).abs()
    gx_h = (x[..., :, 1:] - x[..., :, :-1]).abs()
    gh_h = (x_hat[..., :, 1:] - x_hat[..., :, :-1]).abs()
    term_v = (gx_v - gh_v).abs() ** alpha
    term_h = (gx_h - gh_h).abs() ** alpha
    if reduction == "mean":
        return (term_v.sum() + term_h.sum()) / (term_v.numel() + term_h.numel())
    return term_v.sum() + term_h.sum()


def contrastive_feature_loss(
    z: Tensor, z_hat: Tensor, temperature: float = 1.0
) -> Tensor:
    """Symmetric infoNCE between ground-truth and predicted feature maps.

    Inputs are [..., Hf, Wf, D]; each spatial location is a positive pair
    across the two maps, all other locations of the *same* map family serve
    as negatives and are held behind a stop-gradient. Per map the two
    directional terms are averaged (factor 1/2) and summed over locations;
    leading batch dims are averaged.
    """
    _check_same_shape(z, z_hat, "contrastive_feature_loss")
    if z.ndim < 3:
        raise ShapeMismatchError("contrastive loss expects [..., Hf, Wf, D] features")
    hf, wf, d = z.shape[-3:]
    s = hf * wf
    if s < 2:
        raise ShapeMismatchError(f"need at least 2 spatial locations, got {hf}x{wf}")
    v = z.reshape(-1, s, d)
    vh = z_hat.reshape(-1, s, d)
    eye = torch.eye(s, dtype=z.dtype, device=z.device)

    def one_direction(anchor: Tensor, positive: Tensor) -> Tensor:
        # positives on the diagonal stay live; off-diagonal negatives come
        # from the positive's own map, detached (stop-gradient)
        live = anchor @ positive.transpose(-2, -1) / temperature
        frozen = anchor @ positive.detach().transpose(-2, -1) / temperature
        logits = frozen * (1.0 - eye) + live * eye
        pos = torch.diagonal(logits, dim1=-2, dim2=-1)
        return (-pos + torch.logsumexp(logits, dim=-1)).sum(dim=-1)

    per_map = 0.5 * (one_direction(vh, v) + one_direction(v, vh))
    return per_map.mean()


def _pixel_step_losses(target: Tensor, pred: Tensor, alpha: float) -> Tensor:
    """Per-step (L2 + GDL) sums, averaged over the batch axis: [steps]."""
    _check_same_shape(target, pred, "pixel loss")
    if target.ndim != 5:
        raise ShapeMismatchError(f"expected [B, T, C, H, W], got {tuple(target.shape)}")
    b, steps = target.shape[0], target.shape[1]
    out = []
    for t in range(steps):
        step = l2_loss(target[:, t], pred[:, t]) + gdl_loss(target[:, t], pred[:, t], alpha)
        out.append(step / b)
    return torch.stack(out)


def far_loss(x: Tensor, x_hat: Tensor, alpha: float = 1.0, per_step: bool = False):
    """Fully-autoregressive objective: pixel losses over steps 2..T.

    ``x`` is the full clip [B, T, C, H, W]; ``x_hat`` holds the T-1
    one-step-ahead predictions (for steps 2..T).
    """
    if x.ndim != 5 or x_hat.ndim != 5 or x_hat.shape[1] != x.shape[1] - 1:
        raise ShapeMismatchError(
            f"far_loss: clip {tuple(x.shape)} needs T-1 predictions, got {tuple(x_hat.shape)}"
        )
    steps = _pixel_step_losses(x[:, 1:], x_hat, alpha)
    total = steps.sum()
    return (total, steps) if per_step else total


def par_loss(
    x: Tensor, x_hat: Tensor, past_frames: int, alpha: float = 1.0, per_step: bool = False
):
    """Partially-autoregressive objective: pixel losses over the future
    steps L+1..L+N only."""
    if x.ndim != 5 or x_hat.ndim != 5:
        raise ShapeMismatchError("par_loss expects rank-5 video tensors")
    n_future = x.shape[1] - past_frames
    if n_future < 1 or x_hat.shape[1] != n_future:
        raise ShapeMismatchError(
            f"par_loss: clip of {x.shape[1]} frames with L={past_frames} needs "
            f"{n_future} predictions, got {x_hat.shape[1]}"
        )
    steps = _pixel_step_losses(x[:, past_frames:], x_hat, alpha)
    total = steps.sum()
    return (total, steps) if per_step else total


def nar_loss(
    x: Tensor,
    x_hat: Tensor,
    z: Tensor,
    z_hat: Tensor,
    past_frames: int,
    lambda2: float = 0.1,
    alpha: float = 1.0,
    temperature: float = 1.0,
    per_step: bool = False,
):
    """Non-autoregressive objective: the future-step pixel losses plus
    ``lambda2`` times the contrastive feature loss.

    ``z``/``z_hat`` are the ground-truth and predicted future feature
    sequences [B, N, Hf, Wf, D]; the contrastive term is averaged over
    batch and steps.
    """
    pixel_total, steps = par_loss(x, x_hat, past_frames, alpha, per_step=True)
    _check_same_shape(z, z_hat, "nar_loss features")
    if z.ndim != 5 or z.shape[1] != steps.shape[0]:
        raise ShapeMismatchError(
            f"nar_loss: feature steps {tuple(z.shape)} do not match {steps.shape[0]} future frames"
        )
    contrastive = contrastive_feature_loss(z, z_hat, temperature)
    total = pixel_total + lambda2 * contrastive
    return (total, steps) if per_step else total
