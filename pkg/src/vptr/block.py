"""The factorized spatiotemporal transformer block and its dense oracle.

A block applies four residual sublayers to [N, T, Hf, Wf, D] features:
windowed spatial self-attention, a convolutional FFN (3x3 depthwise plus
two pointwise MLPs), temporal self-attention, and a plain MLP FFN. The
dense layer :func:`fsta_attention` attends over all T*Hf*Wf positions at
once; with the right masks it reproduces either factorized application
exactly, which is what the equivalence tests lean on.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .attention import (
    MultiHeadAttention,
    RelativePositionBias2D,
    local_spatial_mhsa,
    sinusoid_1d,
    sinusoid_2d,
    temporal_mha,
)
from .core import fold_time, unfold_time
from .errors import MaskError, ShapeMismatchError


class ConvFFN(nn.Module):
    """Depthwise 3x3 convolution followed by two pointwise MLPs.

    Operates on [NT, Hf, Wf, D] features; the depthwise stage exchanges
    information between neighbouring windows, the layer norm after it is
    the block's only internal normalization.
    """

    def __init__(self, d_model: int, d_ff: int | None = None):
        super().__init__()
        d_ff = d_ff or 4 * d_model
        self.d_model = d_model
        self.dw_kernel = nn.Parameter(torch.empty(d_model, 3, 3))
        nn.init.kaiming_uniform_(self.dw_kernel, a=math.sqrt(5))
        self.norm = nn.LayerNorm(d_model)
        self.fc1 = nn.Linear(d_model, d_ff, bias=False)
        self.fc2 = nn.Linear(d_ff, d_model, bias=False)
        nn.init.xavier_uniform_(self.fc1.weight)
        nn.init.xavier_uniform_(self.fc2.weight)

    def forward(self, z: Tensor) -> Tensor:
        if z.ndim != 4 or z.shape[-1] != self.d_model:
            raise ShapeMismatchError(
                f"conv ffn expects [NT, Hf, Wf, {self.d_model}], got {tuple(z.shape)}"
            )
        x = z.permute(0, 3, 1, 2)
        x = F.conv2d(x, self.dw_kernel.unsqueeze(1), padding=1, groups=self.d_model)
        x = x.permute(0, 2, 3, 1)
        x = self.norm(x)
        return self.fc2(F.gelu(self.fc1(x)))


class MlpFFN(nn.Module):
    """Plain two-layer feed-forward with GELU, bias-free."""

    def __init__(self, d_model: int, d_ff: int | None = None):
        super().__init__()
        d_ff = d_ff or 4 * d_model
        self.fc1 = nn.Linear(d_model, d_ff, bias=False)
        self.fc2 = nn.Linear(d_ff, d_model, bias=False)
        nn.init.xavier_uniform_(self.fc1.weight)
        nn.init.xavier_uniform_(self.fc2.weight)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


class SpatioTemporalBlock(nn.Module):
    """One factorized block: spatial window attention, Conv FFN, temporal
    attention, MLP FFN, each wrapped in a (pre- or post-norm) residual.

    ``posenc`` selects the spatial encoding: ``"abs2d"`` fixed sinusoidal,
    ``"rpe2d"`` learned relative bias, ``"none"`` disabled. The temporal
    encoding is always the fixed 1D sinusoid unless a ``query_embed`` is
    passed, which replaces it on queries/keys (learned-query decoding).
    """

    def __init__(
        self,
        d_model: int,
        heads: int,
        window: int,
        d_ff: int | None = None,
        posenc: str = "abs2d",
        pre_norm: bool = True,
    ):
        super().__init__()
        if posenc not in ("abs2d", "rpe2d", "none"):
            raise ShapeMismatchError(f"unknown spatial posenc {posenc!r}")
        self.d_model = d_model
        self.window = window
        self.posenc = posenc
        self.pre_norm = pre_norm
        self.spatial_attn = MultiHeadAttention(d_model, heads)
        self.temporal_attn = MultiHeadAttention(d_model, heads)
        self.conv_ffn = ConvFFN(d_model, d_ff)
        self.out_ffn = MlpFFN(d_model, d_ff)
        self.rpe = RelativePositionBias2D(window, heads) if posenc == "rpe2d" else None
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.norm3 = nn.LayerNorm(d_model)
        self.norm4 = nn.LayerNorm(d_model)

    def _residual(self, x: Tensor, norm: nn.LayerNorm, fn) -> Tensor:
        if self.pre_norm:
            return x + fn(norm(x))
        return norm(x + fn(x))

    def _spatial_posenc(self, hf: int, wf: int, ref: Tensor):
        if self.rpe is not None:
            return self.rpe
        if self.posenc == "abs2d":
            return sinusoid_2d(hf, wf, self.d_model, dtype=ref.dtype, device=ref.device)
        return None

    def forward(
        self,
        z: Tensor,
        temporal_mask: Tensor | None = None,
        time_offset: int = 0,
        query_embed: Tensor | None = None,
    ) -> Tensor:
        if z.ndim != 5 or z.shape[-1] != self.d_model:
            raise ShapeMismatchError(
                f"block expects [N, T, Hf, Wf, {self.d_model}], got {tuple(z.shape)}"
            )
        n, t, hf, wf, _ = z.shape
        spe = self._spatial_posenc(hf, wf, z)

        x = fold_time(z)
        x = self._residual(
            x, self.norm1, lambda u: local_spatial_mhsa(u, self.spatial_attn, self.window, spe)
        )
        x = self._residual(x, self.norm2, self.conv_ffn)
        y = unfold_time(x, n)

        if query_embed is not None:
            tpe = query_embed
        else:
            tpe = sinusoid_1d(time_offset + t, self.d_model, dtype=z.dtype, device=z.device)
            tpe = tpe[time_offset:]
        y = self._residual(
            y,
            self.norm3,
            lambda u: temporal_mha(u, u, self.temporal_attn, tpe, tpe, temporal_mask),
        )
        y = self._residual(y, self.norm4, self.out_ffn)
        return y


def same_window_mask(t: int, hf: int, wf: int, window: int, device=None) -> Tensor:
    """Dense [S, S] mask (S = t*hf*wf): allowed iff same time step and same
    spatial window. Flattening order matches ``z.reshape(n, t*hf*wf, d)``."""
    if hf % window != 0 or wf % window != 0:
        raise ShapeMismatchError(f"window {window} does not divide {hf}x{wf}")
    tt = torch.arange(t, device=device).repeat_interleave(hf * wf)
    rows = torch.arange(hf, device=device).repeat_interleave(wf).repeat(t)
    cols = torch.arange(wf, device=device).repeat(hf).repeat(t)
    tile = (rows // window) * (wf // window) + cols // window
    same_t = tt[:, None] == tt[None, :]
    same_tile = tile[:, None] == tile[None, :]
    return same_t & same_tile


def same_location_mask(t: int, hf: int, wf: int, device=None) -> Tensor:
    """Dense [S, S] mask: allowed iff same (row, col) spatial location."""
    loc = torch.arange(hf * wf, device=device).repeat(t)
    return loc[:, None] == loc[None, :]


def fsta_attention(
    z: Tensor,
    attn: MultiHeadAttention,
    mask: Tensor | None = None,
    kv: Tensor | None = None,
    q_pos: Tensor | None = None,
    k_pos: Tensor | None = None,
) -> Tensor:
    """Full spatiotemporal attention over all T*Hf*Wf positions.

    Quadratic in T*Hf*Wf, so only usable at small sizes; serves as the
    dense oracle for the factorized layers and as the encoder-decoder
    attention ablation. ``kv`` switches to cross-attention; positional
    terms [T, Hf, Wf, D] (or [S, D]) are added to queries/keys only.
    """
    if z.ndim != 5:
        raise ShapeMismatchError("fsta expects [N, T, Hf, Wf, D]")
    n, t, hf, wf, d = z.shape
    source = z if kv is None else kv
    if source.ndim != 5 or source.shape[0] != n or source.shape[2:] != z.shape[2:]:
        raise ShapeMismatchError(
            f"fsta key/value shape {tuple(source.shape)} incompatible with {tuple(z.shape)}"
        )
    tk = source.shape[1]
    q = z.reshape(n, t * hf * wf, d)
    k = source.reshape(n, tk * hf * wf, d)

    def flat_pos(pos: Tensor, steps: int) -> Tensor:
        if pos.ndim == 4:
            pos = pos.reshape(steps * hf * wf, d)
        if pos.shape != (steps * hf * wf, d):
            raise ShapeMismatchError(f"fsta positional term shape {tuple(pos.shape)} invalid")
        return pos.to(z.dtype)

    qi = q if q_pos is None else q + flat_pos(q_pos, t)
    ki = k if k_pos is None else k + flat_pos(k_pos, tk)
    if mask is not None and not mask.any(dim=-1).all():
        raise MaskError("fsta mask leaves a query row with no allowed key")
    out = attn(qi, ki, k, mask=mask)
    return out.reshape(n, t, hf, wf, d)
