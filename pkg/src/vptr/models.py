"""The three predictor variants, their inference modes, and stage-two training.

* FAR: a causally masked stack of factorized blocks, one-step-ahead over
  the whole sequence (fully autoregressive).
* PAR: encoder over the past frames, causally masked decoder over the
  future steps with cross-time attention into the memories (partially
  autoregressive).
* NAR: same encoder, unmasked decoder driven by learned future-frame
  queries from a zero target stream; all future steps come out in one pass.

Time positions use one global timeline: past frames sit at 0..L-1 and
future steps at L..L+N-1, for the sinusoidal tables of self- and
cross-attention alike.
"""

from __future__ import annotations

import time

import numpy as np
import torch
from torch import Tensor, nn

from .attention import MultiHeadAttention, causal_mask, sinusoid_1d, temporal_mha
from .block import ConvFFN, SpatioTemporalBlock, fsta_attention
from .config import ModelConfig, TrainSection
from .core import fold_time, unfold_time
from .errors import ConfigError, ShapeMismatchError, TrainingDivergedError
from .losses import far_loss, nar_loss, par_loss


class EncoderStack(nn.Module):
    """Unmasked stack of factorized blocks over the past frames."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.blocks = nn.ModuleList(
            SpatioTemporalBlock(cfg.d_model, cfg.heads, cfg.window,
                                posenc=cfg.posenc, pre_norm=cfg.pre_norm)
            for _ in range(cfg.enc_layers)
        )
        self.final_norm = nn.LayerNorm(cfg.d_model) if cfg.pre_norm else nn.Identity()

    def forward(self, z: Tensor) -> Tensor:
        for block in self.blocks:
            z = block(z)
        return self.final_norm(z)


class DecoderLayer(nn.Module):
    """A factorized block plus cross-time attention into the memories and
    an extra output Conv FFN, each in its own residual."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.pre_norm = cfg.pre_norm
        self.cross_mode = cfg.cross_attention
        self.memory_posenc = cfg.memory_posenc
        self.block = SpatioTemporalBlock(cfg.d_model, cfg.heads, cfg.window,
                                         posenc=cfg.posenc, pre_norm=cfg.pre_norm)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.heads)
        self.out_ffn = ConvFFN(cfg.d_model)
        self.norm_cross = nn.LayerNorm(cfg.d_model)
        self.norm_out = nn.LayerNorm(cfg.d_model)

    def _residual(self, x: Tensor, norm: nn.LayerNorm, fn) -> Tensor:
        if self.pre_norm:
            return x + fn(norm(x))
        return norm(x + fn(x))

    def forward(
        self,
        tgt: Tensor,
        memory: Tensor,
        self_mask: Tensor | None = None,
        time_offset: int = 0,
        query_embed: Tensor | None = None,
    ) -> Tensor:
        if tgt.shape[0] != memory.shape[0] or tgt.shape[2:] != memory.shape[2:]:
            raise ShapeMismatchError(
                f"target {tuple(tgt.shape)} and memory {tuple(memory.shape)} grids differ"
            )
        x = self.block(tgt, temporal_mask=self_mask, time_offset=time_offset,
                       query_embed=query_embed)
        _, tq, hf, wf, d = x.shape
        tk = memory.shape[1]

        if query_embed is not None:
            q_pos = query_embed
        else:
            q_pos = sinusoid_1d(time_offset + tq, d, dtype=x.dtype, device=x.device)
            q_pos = q_pos[time_offset:]
        k_pos = None
        if self.memory_posenc:
            k_pos = sinusoid_1d(tk, d, dtype=x.dtype, device=x.device)

        def cross(u: Tensor) -> Tensor:
            if self.cross_mode == "temporal":
                return temporal_mha(u, memory, self.cross_attn, q_pos, k_pos)
            qp = q_pos if q_pos.ndim == 4 else q_pos[:, None, None, :].expand(tq, hf, wf, d)
            kp = None if k_pos is None else k_pos[:, None, None, :].expand(tk, hf, wf, d)
            return fsta_attention(u, self.cross_attn, kv=memory, q_pos=qp, k_pos=kp)

        x = self._residual(x, self.norm_cross, cross)
        x = self._residual(
            x, self.norm_out,
            lambda u: unfold_time(self.out_ffn(fold_time(u)), u.shape[0]),
        )
        return x


class DecoderStack(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.layers = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.dec_layers))
        self.final_norm = nn.LayerNorm(cfg.d_model) if cfg.pre_norm else nn.Identity()

    def forward(self, tgt, memory, self_mask=None, time_offset=0, query_embed=None):
        for layer in self.layers:
            tgt = layer(tgt, memory, self_mask=self_mask, time_offset=time_offset,
                        query_embed=query_embed)
        return self.final_norm(tgt)


class FARModel(nn.Module):
    """Causal block stack: given steps 1..T-1 it predicts steps 2..T."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        if cfg.variant != "far":
            raise ConfigError(f"FARModel built from a {cfg.variant!r} config")
        self.cfg = cfg
        self.blocks = nn.ModuleList(
            SpatioTemporalBlock(cfg.d_model, cfg.heads, cfg.window,
                                posenc=cfg.posenc, pre_norm=cfg.pre_norm)
            for _ in range(cfg.layers)
        )
        self.final_norm = nn.LayerNorm(cfg.d_model) if cfg.pre_norm else nn.Identity()

    def forward(self, z: Tensor) -> Tensor:
        if z.ndim != 5:
            raise ShapeMismatchError(f"expected [N, T, Hf, Wf, D], got {tuple(z.shape)}")
        mask = causal_mask(z.shape[1], device=z.device)
        for block in self.blocks:
            z = block(z, temporal_mask=mask)
        return self.final_norm(z)


class PARModel(nn.Module):
    """Encoder over the past, causally masked decoder over the future."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        if cfg.variant != "par":
            raise ConfigError(f"PARModel built from a {cfg.variant!r} config")
        self.cfg = cfg
        self.encoder = EncoderStack(cfg)
        self.decoder = DecoderStack(cfg)

    def encode(self, src: Tensor) -> Tensor:
        return self.encoder(src)

    def decode(self, tgt: Tensor, memory: Tensor) -> Tensor:
        mask = causal_mask(tgt.shape[1], device=tgt.device)
        return self.decoder(tgt, memory, self_mask=mask,
                            time_offset=self.cfg.past_frames)

    def forward(self, src: Tensor, tgt: Tensor) -> Tensor:
        return self.decode(tgt, self.encode(src))


class NARModel(nn.Module):
    """Encoder plus unmasked decoder over a zero target stream; learned
    per-step queries are injected into the decoder's temporal self-attention
    (queries and keys) and into the cross-attention queries."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        if cfg.variant != "nar":
            raise ConfigError(f"NARModel built from a {cfg.variant!r} config")
        self.cfg = cfg
        self.encoder = EncoderStack(cfg)
        self.decoder = DecoderStack(cfg)
        self.queries = nn.Parameter(
            torch.randn(cfg.future_frames, cfg.feat_size, cfg.feat_size, cfg.d_model) * 0.02
        )

    def encode(self, src: Tensor) -> Tensor:
        return self.encoder(src)

    def decode(self, memory: Tensor) -> Tensor:
        n = memory.shape[0]
        cfg = self.cfg
        tgt = torch.zeros(
            n, cfg.future_frames, cfg.feat_size, cfg.feat_size, cfg.d_model,
            dtype=memory.dtype, device=memory.device,
        )
        return self.decoder(tgt, memory, self_mask=None, query_embed=self.queries)

    def forward(self, src: Tensor) -> Tensor:
        return self.decode(self.encode(src))


def build_model(cfg: ModelConfig) -> nn.Module:
    """Seeded construction of the configured variant."""
    cfg.validate()
    torch.manual_seed(cfg.seed)
    if cfg.variant == "far":
        return FARModel(cfg)
    if cfg.variant == "par":
        return PARModel(cfg)
    return NARModel(cfg)


class IdentityCodec:
    """Autoencoder stub: encode/decode are mutually inverse axis permutations
    between [N, T, C, H, W] frames and [N, T, H, W, C] features. Useful for
    isolating predictor behaviour from the frame codec."""

    @staticmethod
    def encode(frames: Tensor) -> Tensor:
        return frames.permute(0, 1, 3, 4, 2)

    @staticmethod
    def decode(feats: Tensor) -> Tensor:
        return feats.permute(0, 1, 4, 2, 3)


def _check_recurrent_model(model: nn.Module) -> None:
    if not isinstance(model, (FARModel, PARModel)):
        raise ConfigError(
            f"recurrent inference needs a far or par model, got {type(model).__name__}"
        )


@torch.no_grad()
def infer_rip(past: Tensor, enc, model: nn.Module, dec, steps: int) -> Tensor:
    """Recurrent inference over pixel space: every predicted feature is
    decoded to a frame and re-encoded before being appended to the context."""
    _check_recurrent_model(model)
    if steps < 1:
        raise ShapeMismatchError("steps must be >= 1")
    z = enc(past)
    frames = []
    if isinstance(model, FARModel):
        feats = z
        for _ in range(steps):
            nxt = model(feats)[:, -1:]
            x = dec(nxt)
            frames.append(x)
            feats = torch.cat([feats, enc(x)], dim=1)
    else:
        memory = model.encode(z)
        tgt = z[:, -1:]
        for _ in range(steps):
            nxt = model.decode(tgt, memory)[:, -1:]
            x = dec(nxt)
            frames.append(x)
            tgt = torch.cat([tgt, enc(x)], dim=1)
    return torch.cat(frames, dim=1)


@torch.no_grad()
def infer_ril(past: Tensor, enc, model: nn.Module, dec, steps: int) -> Tensor:
    """Recurrent inference over latent space: predicted features are fed
    straight back without the decode/re-encode round trip."""
    _check_recurrent_model(model)
    if steps < 1:
        raise ShapeMismatchError("steps must be >= 1")
    z = enc(past)
    preds = []
    if isinstance(model, FARModel):
        feats = z
        for _ in range(steps):
            nxt = model(feats)[:, -1:]
            preds.append(nxt)
            feats = torch.cat([feats, nxt], dim=1)
    else:
        memory = model.encode(z)
        tgt = z[:, -1:]
        for _ in range(steps):
            nxt = model.decode(tgt, memory)[:, -1:]
            preds.append(nxt)
            tgt = torch.cat([tgt, nxt], dim=1)
    return dec(torch.cat(preds, dim=1))


@torch.no_grad()
def nar_blockwise(past: Tensor, enc, model: NARModel, dec, total_steps: int) -> Tensor:
    """Block-wise autoregressive use of the one-shot predictor: each pass
    predicts N frames which are appended (through pixel space) to the
    history; a trailing partial block is truncated."""
    if not isinstance(model, NARModel):
        raise ConfigError(f"blockwise inference needs a nar model, got {type(model).__name__}")
    if total_steps < 1:
        raise ShapeMismatchError("total_steps must be >= 1")
    window = model.cfg.past_frames
    if past.shape[1] < window:
        raise ShapeMismatchError(
            f"need at least {window} past frames, got {past.shape[1]}"
        )
    history = past
    chunks = []
    produced = 0
    while produced < total_steps:
        src = enc(history[:, -window:])
        x = dec(model(src))
        chunks.append(x)
        history = torch.cat([history, x], dim=1)
        produced += x.shape[1]
    return torch.cat(chunks, dim=1)[:, :total_steps]


@torch.no_grad()
def _encode_dataset(autoencoder, clips: Tensor, batch_clips: int) -> Tensor:
    parts = []
    for start in range(0, clips.shape[0], batch_clips):
        parts.append(autoencoder.encode(clips[start:start + batch_clips]))
    return torch.cat(parts, dim=0)


def train_stage2(
    model: nn.Module,
    autoencoder,
    train_clips: Tensor,
    cfg: ModelConfig,
    train_cfg: TrainSection,
    log=None,
):
    """Stage two: optimize the predictor against the frozen autoencoder.

    The encoder/decoder are set to eval and their parameters detached from
    the optimizer; supervision stays in pixel space (plus the contrastive
    feature term for the nar variant). Returns the loss history.
    """
    autoencoder.eval()
    for p in autoencoder.parameters():
        p.requires_grad_(False)

    L, N = cfg.past_frames, cfg.future_frames
    horizon = L + N
    if train_clips.shape[1] < horizon:
        raise ShapeMismatchError(
            f"clips of length {train_clips.shape[1]} too short for L+N = {horizon}"
        )
    clips = train_clips[:, :horizon]

    feats_cache = None
    if not train_cfg.flip_augment:
        feats_cache = _encode_dataset(autoencoder, clips, train_cfg.batch_clips)

    opt = torch.optim.AdamW(model.parameters(), lr=train_cfg.lr,
                            weight_decay=train_cfg.weight_decay)
    gen = torch.Generator().manual_seed(train_cfg.seed)
    flip_rng = np.random.default_rng(train_cfg.seed + 1)

    from .data import augment_flips

    frame_numel = clips[0, 0].numel()
    history = []
    step = 0
    model.train()
    for epoch in range(train_cfg.epochs):
        perm = torch.randperm(clips.shape[0], generator=gen)
        epoch_loss, num_batches = 0.0, 0
        for start in range(0, len(perm), train_cfg.batch_clips):
            idx = perm[start:start + train_cfg.batch_clips]
            x = clips[idx]
            if feats_cache is not None:
                z = feats_cache[idx]
            else:
                x = torch.stack([augment_flips(clip, flip_rng) for clip in x])
                with torch.no_grad():
                    z = autoencoder.encode(x)

            if isinstance(model, FARModel):
                z_hat = model(z[:, :-1])
                x_hat = autoencoder.decode(z_hat)
                loss = far_loss(x, x_hat, train_cfg.gdl_alpha)
            elif isinstance(model, PARModel):
                z_hat = model(z[:, :L], z[:, L - 1:horizon - 1])
                x_hat = autoencoder.decode(z_hat)
                loss = par_loss(x, x_hat, L, train_cfg.gdl_alpha)
            else:
                z_hat = model(z[:, :L])
                x_hat = autoencoder.decode(z_hat)
                loss = nar_loss(x, x_hat, z[:, L:], z_hat, L,
                                lambda2=train_cfg.lambda2, alpha=train_cfg.gdl_alpha)

            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite stage-two loss at epoch {epoch} step {step}: {loss.item()!r}"
                )
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), train_cfg.clip_norm)
            opt.step()
            epoch_loss += float(loss.detach())
            num_batches += 1
            step += 1
        mean_loss = epoch_loss / max(num_batches, 1)
        row = {
            "epoch": epoch,
            "train_loss": mean_loss,
            "train_loss_per_frame_elem": mean_loss / (N * frame_numel),
        }
        history.append(row)
        if log is not None:
            log(row)
    model.eval()
    return history


def predict(model: nn.Module, autoencoder, past: Tensor, steps: int, mode: str) -> Tensor:
    """Unified inference entry point; validates mode/variant compatibility."""
    enc, dec = autoencoder.encode, autoencoder.decode
    if mode == "rip":
        return infer_rip(past, enc, model, dec, steps)
    if mode == "ril":
        return infer_ril(past, enc, model, dec, steps)
    if mode == "block":
        return nar_blockwise(past, enc, model, dec, steps)
    raise ConfigError(f"unknown inference mode {mode!r}")


def benchmark_inference(
    model: nn.Module,
    autoencoder,
    past: Tensor,
    steps: int,
    repeats: int = 20,
    warmup: int = 3,
) -> dict:
    """Wall-clock of one full inference (model forward + decode), mean/std
    over ``repeats`` runs after ``warmup`` discarded runs."""
    mode = "block" if isinstance(model, NARModel) else "rip"
    for _ in range(warmup):
        predict(model, autoencoder, past, steps, mode)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        predict(model, autoencoder, past, steps, mode)
        times.append(time.perf_counter() - t0)
    arr = np.asarray(times)
    return {
        "variant": getattr(model, "cfg").variant,
        "mode": mode,
        "batch": int(past.shape[0]),
        "steps": steps,
        "repeats": repeats,
        "mean_s": float(arr.mean()),
        "std_s": float(arr.std()),
    }
