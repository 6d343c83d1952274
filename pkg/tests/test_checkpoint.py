"""Checkpoint bundles: exact state round trips and hash behaviour."""

import pytest
import torch

from helpers import tiny_model_config
from vptr.checkpoint import checkpoint_hash, load_checkpoint, load_into, save_checkpoint
from vptr.errors import CheckpointError
from vptr.models import build_model


class TestBundle:
    def test_state_round_trip_bit_exact(self, tmp_path):
        model = build_model(tiny_model_config("nar"))
        save_checkpoint(tmp_path, model, {"kind": "predictor", "variant": "nar"})
        clone = build_model(tiny_model_config("nar", seed=99))
        meta = load_into(clone, tmp_path)
        assert meta["variant"] == "nar"
        for (n1, p1), (_, p2) in zip(model.state_dict().items(), clone.state_dict().items()):
            assert torch.equal(p1, p2), n1

    def test_meta_preserved(self, tmp_path):
        model = build_model(tiny_model_config("far"))
        save_checkpoint(tmp_path, model, {"kind": "predictor", "note": 42})
        _, meta = load_checkpoint(tmp_path)
        assert meta == {"kind": "predictor", "note": 42}

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(CheckpointError, match="manifest"):
            load_checkpoint(tmp_path)

    def test_hash_stable_and_content_sensitive(self, tmp_path):
        model = build_model(tiny_model_config("far"))
        save_checkpoint(tmp_path, model, {"kind": "predictor"})
        h1 = checkpoint_hash(tmp_path)
        assert checkpoint_hash(tmp_path) == h1
        with torch.no_grad():
            next(model.parameters()).add_(1.0)
        save_checkpoint(tmp_path, model, {"kind": "predictor"})
        assert checkpoint_hash(tmp_path) != h1

    def test_shape_mismatch_detected(self, tmp_path):
        model = build_model(tiny_model_config("far"))
        save_checkpoint(tmp_path, model, {})
        other = build_model(tiny_model_config("far", d_model=32, heads=4))
        with pytest.raises(CheckpointError):
            load_into(other, tmp_path)
