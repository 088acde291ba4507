import numpy as np
import pytest

from liveseg.cachefile import (
    CacheFormatError,
    cache_read,
    cache_write,
    weights_read,
    weights_write,
)
from liveseg.encoder import FeatureMapSet
from liveseg.numerics import Tensor


def random_fs(rng, ph=64, pw=96, c1=4, oh=None, ow=None):
    levels = [Tensor(rng.normal(size=(ph // s, pw // s, c1 * 2 ** i)).astype(np.float32))
              for i, s in enumerate((4, 8, 16, 32))]
    return FeatureMapSet(levels, oh or ph - 3, ow or pw - 5, ph, pw)


class TestRoundTrip:
    def test_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        fs = random_fs(rng)
        p = str(tmp_path / "f.ifmr")
        cache_write(fs, p)
        back = cache_read(p)
        assert (back.original_h, back.original_w) == (fs.original_h, fs.original_w)
        assert (back.padded_h, back.padded_w) == (fs.padded_h, fs.padded_w)
        for a, b in zip(fs.levels, back.levels):
            assert np.array_equal(a.data, b.data)

    def test_many_random_round_trips(self, tmp_path):
        rng = np.random.default_rng(1)
        for i in range(25):
            hb, wb = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            c1 = int(2 ** rng.integers(0, 3))
            fs = random_fs(rng, 32 * hb, 32 * wb, c1)
            p = str(tmp_path / f"f{i}.ifmr")
            cache_write(fs, p)
            back = cache_read(p)
            for a, b in zip(fs.levels, back.levels):
                assert np.array_equal(a.data, b.data)


class TestCorruption:
    def test_every_flipped_byte_is_structured_error(self, tmp_path):
        rng = np.random.default_rng(2)
        fs = random_fs(rng, 32, 32, 1)
        p = str(tmp_path / "f.ifmr")
        cache_write(fs, p)
        blob = bytearray(open(p, "rb").read())
        for _ in range(60):
            i = int(rng.integers(len(blob)))
            corrupted = bytearray(blob)
            corrupted[i] ^= 0xFF
            bad = tmp_path / "bad.ifmr"
            bad.write_bytes(bytes(corrupted))
            with pytest.raises(CacheFormatError):
                cache_read(str(bad))

    def test_truncation_names_offset(self, tmp_path):
        rng = np.random.default_rng(3)
        fs = random_fs(rng, 32, 32, 1)
        p = str(tmp_path / "f.ifmr")
        cache_write(fs, p)
        blob = open(p, "rb").read()
        bad = tmp_path / "trunc.ifmr"
        bad.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(CacheFormatError):
            cache_read(str(bad))

    def test_bad_magic(self, tmp_path):
        bad = tmp_path / "m.ifmr"
        bad.write_bytes(b"XXXX" + b"\x00" * 40)
        with pytest.raises(CacheFormatError, match="magic"):
            cache_read(str(bad))

    def test_unknown_version(self, tmp_path):
        rng = np.random.default_rng(4)
        fs = random_fs(rng, 32, 32, 1)
        p = str(tmp_path / "f.ifmr")
        cache_write(fs, p)
        blob = bytearray(open(p, "rb").read())
        blob[4] = 99  # version field
        bad = tmp_path / "v.ifmr"
        bad.write_bytes(bytes(blob))
        with pytest.raises(CacheFormatError):
            cache_read(str(bad))

    def test_missing_file(self, tmp_path):
        with pytest.raises(CacheFormatError):
            cache_read(str(tmp_path / "nope.ifmr"))


class TestWeights:
    def test_round_trip_with_meta(self, tmp_path):
        rng = np.random.default_rng(5)
        named = {"a/w": rng.normal(size=(3, 4)).astype(np.float32),
                 "b/scalar": np.float32(2.5),
                 "c/deep": rng.normal(size=(2, 2, 2, 2)).astype(np.float32)}
        p = str(tmp_path / "w.ifmr")
        weights_write(named, p, meta={"config": "depths=1,1,5,2", "note": "x"})
        tensors, meta = weights_read(p)
        assert meta == {"config": "depths=1,1,5,2", "note": "x"}
        assert set(tensors) == set(named)
        for k in named:
            assert np.array_equal(tensors[k], np.asarray(named[k], dtype=np.float32))

    def test_weight_file_rejected_as_cache(self, tmp_path):
        p = str(tmp_path / "w.ifmr")
        weights_write({"x": np.zeros(3, np.float32)}, p)
        with pytest.raises(CacheFormatError):
            cache_read(p)

    def test_cache_rejected_as_weights(self, tmp_path):
        rng = np.random.default_rng(6)
        p = str(tmp_path / "f.ifmr")
        cache_write(random_fs(rng, 32, 32, 1), p)
        with pytest.raises(CacheFormatError):
            weights_read(p)
