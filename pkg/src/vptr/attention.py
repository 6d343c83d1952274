"""Multi-head attention, its two factorized applications, masks, and positional encodings.

The two factorizations operate on [N, T, Hf, Wf, D] feature sequences:

* local spatial self-attention: frames folded into the batch, each K x K
  window attends within itself only;
* temporal self/cross attention: spatial locations folded into the batch,
  each location attends across time at that same location.

Positional encodings follow the detection-transformer convention: fixed
sinusoidal tables are added to queries and keys only (never values), the
learned relative bias enters as an additive per-head term on the
pre-softmax logits.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .core import window_merge, window_partition
from .errors import MaskError, ShapeMismatchError

MASK_FILL = -1e9  # additive logit penalty for disallowed keys


def causal_mask(t: int, device=None) -> Tensor:
    """Boolean [t, t] mask, ``mask[i, j]`` true iff key step j <= query step i."""
    if t < 1:
        raise ShapeMismatchError(f"mask length must be >= 1, got {t}")
    return torch.ones(t, t, dtype=torch.bool, device=device).tril()


def sinusoid_1d(length: int, d_model: int, *, dtype=torch.float32, device=None) -> Tensor:
    """Fixed 1D sine/cosine table [length, d_model], sin/cos interleaved.

    Position 0 is the pattern [0, 1, 0, 1, ...].
    """
    if d_model % 2 != 0:
        raise ShapeMismatchError(f"sinusoidal encoding needs even d_model, got {d_model}")
    pos = torch.arange(length, dtype=dtype, device=device).unsqueeze(1)
    idx = torch.arange(d_model // 2, dtype=dtype, device=device)
    freq = torch.pow(torch.tensor(10000.0, dtype=dtype, device=device), -2.0 * idx / d_model)
    angles = pos * freq
    table = torch.empty(length, d_model, dtype=dtype, device=device)
    table[:, 0::2] = torch.sin(angles)
    table[:, 1::2] = torch.cos(angles)
    return table


def sinusoid_2d(height: int, width: int, d_model: int, *, dtype=torch.float32, device=None) -> Tensor:
    """Fixed 2D table [height, width, d_model]: row encoding in the first half
    of the channels, column encoding in the second half."""
    if d_model % 4 != 0:
        raise ShapeMismatchError(f"2D sinusoidal encoding needs d_model % 4 == 0, got {d_model}")
    half = d_model // 2
    rows = sinusoid_1d(height, half, dtype=dtype, device=device)
    cols = sinusoid_1d(width, half, dtype=dtype, device=device)
    table = torch.empty(height, width, d_model, dtype=dtype, device=device)
    table[..., :half] = rows[:, None, :]
    table[..., half:] = cols[None, :, :]
    return table


class RelativePositionBias2D(nn.Module):
    """Learned per-head logit bias indexed by relative (row, col) offset
    within one K x K window. Zero-initialized, so it starts out inert."""

    def __init__(self, window: int, heads: int):
        super().__init__()
        self.window = window
        self.heads = heads
        span = 2 * window - 1
        self.table = nn.Parameter(torch.zeros(span * span, heads))
        coords = torch.stack(
            torch.meshgrid(torch.arange(window), torch.arange(window), indexing="ij")
        ).flatten(1)  # [2, K^2]
        rel = coords[:, :, None] - coords[:, None, :] + (window - 1)  # offsets in [0, 2K-2]
        index = rel[0] * span + rel[1]
        self.register_buffer("index", index, persistent=False)

    def forward(self) -> Tensor:
        """Bias [heads, K^2, K^2]."""
        return self.table[self.index].permute(2, 0, 1)


def make_posenc(variant: str, shape, d_model: int, *, heads: int | None = None):
    """Build a positional encoding for the given variant.

    * ``"abs2d"``: shape = (Hf, Wf), returns a fixed [Hf, Wf, D] table.
    * ``"abs1d"``: shape = T, returns a fixed [T, D] table.
    * ``"rpe2d"``: shape = window K, returns a trainable
      :class:`RelativePositionBias2D` (requires ``heads``).
    """
    if variant == "abs2d":
        hf, wf = shape
        return sinusoid_2d(hf, wf, d_model)
    if variant == "abs1d":
        return sinusoid_1d(int(shape), d_model)
    if variant == "rpe2d":
        if heads is None:
            raise ShapeMismatchError("rpe2d encoding needs a head count")
        return RelativePositionBias2D(int(shape), heads)
    raise ShapeMismatchError(f"unknown positional encoding variant {variant!r}")


class MultiHeadAttention(nn.Module):
    """Standard multi-head attention with bias-free projections.

    Per head: softmax(Q Ki^T / sqrt(D/h)) Vi, heads concatenated, then an
    output projection. Masking is additive (-1e9 on disallowed logits).
    """

    def __init__(self, d_model: int, heads: int):
        super().__init__()
        if d_model % heads != 0:
            raise ShapeMismatchError(f"d_model {d_model} not divisible by {heads} heads")
        self.d_model = d_model
        self.heads = heads
        self.head_dim = d_model // heads
        self.w_q = nn.Linear(d_model, d_model, bias=False)
        self.w_k = nn.Linear(d_model, d_model, bias=False)
        self.w_v = nn.Linear(d_model, d_model, bias=False)
        self.w_o = nn.Linear(d_model, d_model, bias=False)
        for proj in (self.w_q, self.w_k, self.w_v, self.w_o):
            nn.init.xavier_uniform_(proj.weight)

    def forward(
        self,
        q_in: Tensor,
        k_in: Tensor,
        v_in: Tensor,
        mask: Tensor | None = None,
        rpe_bias: Tensor | None = None,
        return_weights: bool = False,
    ):
        if q_in.ndim != 3 or k_in.ndim != 3 or v_in.ndim != 3:
            raise ShapeMismatchError("attention inputs must be [B, T, D]")
        b, tq, d = q_in.shape
        tk = k_in.shape[1]
        if d != self.d_model or k_in.shape[-1] != d or v_in.shape[-1] != d:
            raise ShapeMismatchError(
                f"feature width mismatch: model {self.d_model}, "
                f"inputs {q_in.shape[-1]}/{k_in.shape[-1]}/{v_in.shape[-1]}"
            )
        if k_in.shape != v_in.shape or k_in.shape[0] != b:
            raise ShapeMismatchError(
                f"key/value shapes {tuple(k_in.shape)}/{tuple(v_in.shape)} inconsistent"
            )

        h, dh = self.heads, self.head_dim
        q = self.w_q(q_in).view(b, tq, h, dh).transpose(1, 2)
        k = self.w_k(k_in).view(b, tk, h, dh).transpose(1, 2)
        v = self.w_v(v_in).view(b, tk, h, dh).transpose(1, 2)

        scores = q @ k.transpose(-2, -1) / math.sqrt(dh)
        if rpe_bias is not None:
            if rpe_bias.shape != (h, tq, tk):
                raise ShapeMismatchError(
                    f"rpe bias shape {tuple(rpe_bias.shape)} != ({h}, {tq}, {tk})"
                )
            scores = scores + rpe_bias.unsqueeze(0)
        if mask is not None:
            if mask.shape != (tq, tk):
                raise ShapeMismatchError(f"mask shape {tuple(mask.shape)} != ({tq}, {tk})")
            if not mask.any(dim=-1).all():
                raise MaskError("attention mask leaves a query row with no allowed key")
            scores = scores + (~mask).to(scores.dtype) * MASK_FILL

        weights = F.softmax(scores, dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(b, tq, d)
        out = self.w_o(out)
        if return_weights:
            return out, weights
        return out


def local_spatial_mhsa(
    z: Tensor,
    attn: MultiHeadAttention,
    window: int,
    posenc: Tensor | RelativePositionBias2D | None = None,
) -> Tensor:
    """Windowed spatial self-attention on [NT, Hf, Wf, D] features.

    Each K x K window attends within itself only; the same parameters are
    shared by all frames and windows.
    """
    nt, hf, wf, d = z.shape
    tiles = window_partition(z, window)
    rpe_bias = None
    q = k = tiles
    if isinstance(posenc, RelativePositionBias2D):
        rpe_bias = posenc()
    elif posenc is not None:
        if posenc.shape != (hf, wf, d):
            raise ShapeMismatchError(
                f"spatial posenc shape {tuple(posenc.shape)} != ({hf}, {wf}, {d})"
            )
        pe = window_partition(posenc.to(dtype=z.dtype, device=z.device).unsqueeze(0), window)
        pe = pe.repeat(nt, 1, 1)
        q = tiles + pe
        k = tiles + pe
    out = attn(q, k, tiles, rpe_bias=rpe_bias)
    return window_merge(out, window, hf, wf)


def _fold_locations(z: Tensor) -> Tensor:
    """[N, T, Hf, Wf, D] -> [N*Hf*Wf, T, D], N outer."""
    n, t, hf, wf, d = z.shape
    return z.permute(0, 2, 3, 1, 4).reshape(n * hf * wf, t, d)


def _unfold_locations(x: Tensor, n: int, hf: int, wf: int) -> Tensor:
    t, d = x.shape[1], x.shape[2]
    return x.reshape(n, hf, wf, t, d).permute(0, 3, 1, 2, 4)


def _as_location_pos(pos: Tensor, n: int, hf: int, wf: int, d: int) -> Tensor:
    """Normalize a [T, D] or [T, Hf, Wf, D] positional term to broadcast
    against location-folded sequences [N*Hf*Wf, T, D]."""
    if pos.ndim == 2:
        return pos
    if pos.ndim == 4:
        if pos.shape[1] != hf or pos.shape[2] != wf or pos.shape[3] != d:
            raise ShapeMismatchError(
                f"positional term shape {tuple(pos.shape)} incompatible with "
                f"({hf}, {wf}, {d}) locations"
            )
        return pos.permute(1, 2, 0, 3).reshape(hf * wf, -1, d).repeat(n, 1, 1)
    raise ShapeMismatchError(f"positional term must be rank 2 or 4, got rank {pos.ndim}")


def temporal_mha(
    q_seq: Tensor,
    kv_seq: Tensor,
    attn: MultiHeadAttention,
    q_pos: Tensor | None = None,
    k_pos: Tensor | None = None,
    mask: Tensor | None = None,
) -> Tensor:
    """Attention across time at each fixed spatial location.

    ``q_seq`` is [N, Tq, Hf, Wf, D] and ``kv_seq`` [N, Tk, Hf, Wf, D]; the
    output has the query shape. Positional terms may be [T, D] tables or
    full [T, Hf, Wf, D] tensors (learned query embeddings); they are added
    to queries/keys only.
    """
    if q_seq.ndim != 5 or kv_seq.ndim != 5:
        raise ShapeMismatchError("temporal attention expects [N, T, Hf, Wf, D] inputs")
    n, tq, hf, wf, d = q_seq.shape
    if kv_seq.shape[0] != n or kv_seq.shape[2:] != q_seq.shape[2:]:
        raise ShapeMismatchError(
            f"query {tuple(q_seq.shape)} and key/value {tuple(kv_seq.shape)} grids differ"
        )
    q = _fold_locations(q_seq)
    kv = _fold_locations(kv_seq)
    qi = q if q_pos is None else q + _as_location_pos(q_pos.to(q.dtype), n, hf, wf, d)
    ki = kv if k_pos is None else kv + _as_location_pos(k_pos.to(kv.dtype), n, hf, wf, d)
    out = attn(qi, ki, kv, mask=mask)
    return _unfold_locations(out, n, hf, wf)


def temporal_mhsa(
    z: Tensor,
    attn: MultiHeadAttention,
    posenc: Tensor | None = None,
    mask: Tensor | None = None,
) -> Tensor:
    """Temporal self-attention: every spatial location attends across time
    at that same location only."""
    return temporal_mha(z, z, attn, q_pos=posenc, k_pos=posenc, mask=mask)
