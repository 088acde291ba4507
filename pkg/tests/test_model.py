import numpy as np
import pytest

from liveseg.cachefile import CacheFormatError, weights_read, weights_write
from liveseg.decoder import DecoderConfig
from liveseg.encoder import EncoderConfig
from liveseg.model import (
    build_model,
    load_checkpoint,
    preset_decoder_config,
    save_checkpoint,
)
from conftest import micro_configs


class TestBuild:
    def test_channel_mismatch_rejected(self):
        enc = EncoderConfig(base_channels=16)
        dec = DecoderConfig(base_channels=32)
        with pytest.raises(ValueError):
            build_model(enc, dec)

    def test_presets(self):
        assert preset_decoder_config("light").depths == (0, 0, 1, 0)
        tiny = preset_decoder_config("tiny", base_channels=16)
        assert tiny.depths == (1, 1, 5, 2)
        assert tiny.zoomin_start == (2, 2, 3, 2)
        assert tiny.stage_channels == (16, 32, 64, 128)
        with pytest.raises(ValueError):
            preset_decoder_config("huge")

    def test_param_names_unique(self, micro_bundle):
        names = [n for n, _ in micro_bundle.named_params()]
        assert len(names) == len(set(names))


class TestCheckpoint:
    def test_round_trip_bitwise(self, micro_bundle, tmp_path):
        p = str(tmp_path / "ck.ifmr")
        save_checkpoint(micro_bundle, p, extra_meta={"note": "test"})
        back = load_checkpoint(p)
        assert back.dec_cfg == micro_bundle.dec_cfg
        assert back.enc_cfg == micro_bundle.enc_cfg
        a = dict(micro_bundle.named_params())
        b = dict(back.named_params())
        assert a.keys() == b.keys()
        for k in a:
            assert np.array_equal(a[k].data, b[k].data), k

    def test_missing_tensor_rejected(self, micro_bundle, tmp_path):
        p = str(tmp_path / "ck.ifmr")
        save_checkpoint(micro_bundle, p)
        tensors, meta = weights_read(p)
        victim = next(iter(tensors))
        del tensors[victim]
        weights_write(tensors, p, meta)
        with pytest.raises(CacheFormatError, match="missing"):
            load_checkpoint(p)

    def test_wrong_shape_rejected(self, micro_bundle, tmp_path):
        p = str(tmp_path / "ck.ifmr")
        save_checkpoint(micro_bundle, p)
        tensors, meta = weights_read(p)
        victim = next(iter(tensors))
        tensors[victim] = np.zeros((2, 2), dtype=np.float32)
        weights_write(tensors, p, meta)
        with pytest.raises(CacheFormatError, match="shape"):
            load_checkpoint(p)

    def test_extra_tensor_rejected(self, micro_bundle, tmp_path):
        p = str(tmp_path / "ck.ifmr")
        save_checkpoint(micro_bundle, p)
        tensors, meta = weights_read(p)
        tensors["stowaway"] = np.zeros(3, dtype=np.float32)
        weights_write(tensors, p, meta)
        with pytest.raises(CacheFormatError, match="unexpected"):
            load_checkpoint(p)

    def test_encoder_weight_import_path(self, tmp_path):
        # externally produced weights for the same architecture load cleanly
        enc, dec = micro_configs()
        src = build_model(enc, dec, seed=123)
        p = str(tmp_path / "ext.ifmr")
        save_checkpoint(src, p)
        dst = load_checkpoint(p)
        img = (np.random.default_rng(0).random((48, 48, 3)) * 255).astype(np.uint8)
        fa = src.encode(img)
        fb = dst.encode(img)
        for la, lb in zip(fa.levels, fb.levels):
            assert np.array_equal(la.data, lb.data)
