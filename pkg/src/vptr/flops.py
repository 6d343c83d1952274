"""Analytic FLOPs model for the factorized block and the three predictor variants.

Counting convention: one multiply-accumulate = 2 FLOPs; both attention
matmuls (scores and apply) are counted; projections and FFNs are itemized
separately; softmax and normalization are ignored as non-dominant terms.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from pathlib import Path

from .config import ModelConfig
from .errors import ConfigError

CSV_HEADER = ("component", "flops")


@dataclass
class ComplexityReport:
    """Itemized FLOPs for one forward (or a full inference recurrence).

    ``total_flops`` is the sum of the four itemized parts;
    ``dense_equivalent_flops`` is what a vanilla dense spatiotemporal
    attention would spend on scores+apply over the same inputs, and
    ``per_window_spatial_flops`` the score+apply cost of a single window.
    Both informational fields stay outside the total.
    """

    spatial_flops: int = 0
    temporal_flops: int = 0
    proj_flops: int = 0
    ffn_flops: int = 0
    total_flops: int = 0
    dense_equivalent_flops: int = 0
    per_window_spatial_flops: int = 0

    def __add__(self, other: "ComplexityReport") -> "ComplexityReport":
        return ComplexityReport(
            spatial_flops=self.spatial_flops + other.spatial_flops,
            temporal_flops=self.temporal_flops + other.temporal_flops,
            proj_flops=self.proj_flops + other.proj_flops,
            ffn_flops=self.ffn_flops + other.ffn_flops,
            total_flops=self.total_flops + other.total_flops,
            dense_equivalent_flops=self.dense_equivalent_flops + other.dense_equivalent_flops,
            per_window_spatial_flops=max(
                self.per_window_spatial_flops, other.per_window_spatial_flops
            ),
        )

    def scaled(self, factor: int) -> "ComplexityReport":
        return ComplexityReport(
            spatial_flops=self.spatial_flops * factor,
            temporal_flops=self.temporal_flops * factor,
            proj_flops=self.proj_flops * factor,
            ffn_flops=self.ffn_flops * factor,
            total_flops=self.total_flops * factor,
            dense_equivalent_flops=self.dense_equivalent_flops * factor,
            per_window_spatial_flops=self.per_window_spatial_flops,
        )

    @property
    def attention_flops(self) -> int:
        return self.spatial_flops + self.temporal_flops

    def rows(self) -> list[tuple[str, int]]:
        return [(f.name[: -len("_flops")], getattr(self, f.name)) for f in fields(self)]


def _finish(report: ComplexityReport) -> ComplexityReport:
    report.total_flops = (
        report.spatial_flops + report.temporal_flops + report.proj_flops + report.ffn_flops
    )
    return report


def block_flops(
    batch: int,
    t: int,
    hf: int,
    wf: int,
    d_model: int,
    window: int,
    d_ff: int | None = None,
) -> ComplexityReport:
    """One factorized block forward over a [batch, t, hf, wf, d_model] input."""
    d_ff = d_ff or 4 * d_model
    p = (hf * wf) // (window * window)
    tokens = batch * t * hf * wf
    k2 = window * window

    per_window = 4 * k2 * k2 * d_model                  # scores + apply, 2 FLOPs/MAC
    spatial = batch * t * p * per_window
    temporal = batch * hf * wf * 4 * t * t * d_model
    proj = 2 * (8 * tokens * d_model * d_model)         # q/k/v/o for both attentions
    conv_ffn = tokens * (18 * d_model + 4 * d_model * d_ff)
    mlp_ffn = tokens * 4 * d_model * d_ff
    dense = 4 * batch * (t * hf * wf) ** 2 * d_model

    return _finish(
        ComplexityReport(
            spatial_flops=spatial,
            temporal_flops=temporal,
            proj_flops=proj,
            ffn_flops=conv_ffn + mlp_ffn,
            dense_equivalent_flops=dense,
            per_window_spatial_flops=per_window,
        )
    )


def decoder_layer_flops(
    batch: int,
    tq: int,
    tk: int,
    hf: int,
    wf: int,
    d_model: int,
    window: int,
    d_ff: int | None = None,
    cross_attention: str = "temporal",
) -> ComplexityReport:
    """One decoder layer: a factorized block plus cross attention over the
    memories plus the extra output Conv FFN."""
    d_ff = d_ff or 4 * d_model
    report = block_flops(batch, tq, hf, wf, d_model, window, d_ff)
    q_tokens = batch * tq * hf * wf
    k_tokens = batch * tk * hf * wf
    if cross_attention == "temporal":
        cross = batch * hf * wf * 4 * tq * tk * d_model
    elif cross_attention == "fsta":
        cross = 4 * batch * (tq * hf * wf) * (tk * hf * wf) * d_model
    else:
        raise ConfigError(f"unknown cross attention mode {cross_attention!r}")
    report.temporal_flops += cross
    report.proj_flops += 4 * (q_tokens + k_tokens) * d_model * d_model
    report.ffn_flops += q_tokens * (18 * d_model + 4 * d_model * d_ff)
    report.dense_equivalent_flops += 4 * batch * (tq * hf * wf) * (tk * hf * wf) * d_model
    return _finish(report)


def flops_estimate(cfg: ModelConfig, batch: int = 1) -> ComplexityReport:
    """Full-inference FLOPs for the configured variant.

    Autoregressive variants are costed as latent-space recurrences without
    caching (each step reruns the stack on the grown prefix), matching the
    implementation; frame encoder/decoder passes are not included.
    """
    cfg.validate()
    hf = wf = cfg.feat_size
    d, k = cfg.d_model, cfg.window
    L, N = cfg.past_frames, cfg.future_frames
    total = ComplexityReport()
    if cfg.variant == "far":
        for t in range(L, L + N):
            total = total + block_flops(batch, t, hf, wf, d, k).scaled(cfg.layers)
    elif cfg.variant == "par":
        total = total + block_flops(batch, L, hf, wf, d, k).scaled(cfg.enc_layers)
        for tq in range(1, N + 1):
            step = decoder_layer_flops(
                batch, tq, L, hf, wf, d, k, cross_attention=cfg.cross_attention
            )
            total = total + step.scaled(cfg.dec_layers)
    else:  # nar: one encoder pass, one decoder pass
        total = total + block_flops(batch, L, hf, wf, d, k).scaled(cfg.enc_layers)
        step = decoder_layer_flops(
            batch, N, L, hf, wf, d, k, cross_attention=cfg.cross_attention
        )
        total = total + step.scaled(cfg.dec_layers)
    return _finish(total)


def write_report_csv(report: ComplexityReport, path: str | Path) -> None:
    """One row per component, schema ``component,flops``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for name, value in report.rows():
            writer.writerow([name, value])
