import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eegcast import tokenizer as tk
from eegcast.eeg_io import FormatError, Recording

STD = tk.TokenizerState(0.0, 1.0, 5.0, 512)


class TestFit:
    def test_constant_rejected(self):
        with pytest.raises(ValueError, match="sigma"):
            tk.fit(np.full((2, 10), 4.2))

    def test_plus_minus_one(self):
        s = tk.fit(np.array([[-1.0, 1.0, -1.0, 1.0]]))
        assert s.mu == 0.0 and s.sigma == 1.0

    def test_channel_permutation_invariant(self, rng):
        x = rng.normal(3, 2, size=(5, 400))
        a = tk.fit(Recording(x, 250.0, list("abcde")))
        b = tk.fit(Recording(x[[3, 0, 4, 1, 2]], 250.0, list("abcde")))
        assert a.mu == pytest.approx(b.mu, abs=1e-12) and a.sigma == pytest.approx(b.sigma, abs=1e-12)


class TestQuantize:
    def test_midpoint(self):
        assert tk.quantize(0.0, STD) == 255

    def test_boundaries(self):
        assert tk.quantize(-7.0, STD) == 0
        assert tk.quantize(5.0, STD) == 511
        assert tk.quantize(-5.0, STD) == 0

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            tk.quantize(np.array([0.0, np.nan]), STD)

    def test_monotone_million(self, rng):
        x = np.sort(rng.uniform(-8, 8, 10 ** 6))
        q = tk.quantize(x, STD)
        assert np.all(np.diff(q) >= 0)

    def test_every_bin_edge(self):
        # level j begins at x01 = j / (L-1); just below and at the edge
        edges = np.arange(1, 512) / 511 * 10 - 5
        below = tk.quantize(np.nextafter(edges, -np.inf) - 1e-9, STD)
        at = tk.quantize(edges, STD)
        assert np.array_equal(at, np.arange(1, 512))
        assert np.array_equal(below, np.arange(0, 511))

    @given(st.floats(-1e6, 1e6, allow_nan=False), st.floats(-1e6, 1e6, allow_nan=False))
    def test_monotone_pairs(self, a, b):
        lo, hi = min(a, b), max(a, b)
        assert tk.quantize(lo, STD) <= tk.quantize(hi, STD)


class TestDequantize:
    def test_endpoints(self):
        s = tk.TokenizerState(2.0, 3.0, 5.0, 512)
        assert tk.dequantize(0, s) == pytest.approx(2.0 - 15.0)
        assert tk.dequantize(511, s) == pytest.approx(2.0 + 15.0)

    def test_zero_round_trip_value(self):
        # 255 / 511 * 10 - 5
        expect = 255 / 511 * 10 - 5
        assert tk.dequantize(tk.quantize(0.0, STD), STD) == pytest.approx(expect, abs=1e-15)
        assert expect == pytest.approx(-0.009784735812133, abs=1e-12)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            tk.dequantize(512, STD)
        with pytest.raises(ValueError):
            tk.dequantize(-0.5, STD)

    def test_fractional_level(self):
        assert tk.dequantize(255.5, STD) == pytest.approx(0.0, abs=1e-12)

    @given(st.floats(-5.0, 5.0), st.floats(-100, 100), st.floats(0.01, 100))
    def test_round_trip_within_bin(self, z, mu, sigma):
        s = tk.TokenizerState(mu, sigma, 5.0, 512)
        x = mu + z * sigma
        err = abs(tk.dequantize(tk.quantize(x, s), s) - x)
        assert err <= s.bin_width * (1 + 1e-9) + 1e-12 * max(1.0, abs(x))

    def test_bin_width(self):
        assert STD.bin_width == pytest.approx(10 / 511)


class TestStream:
    def test_interleaving(self):
        x = np.array([[1.0, 2.0, 3.0], [-1.0, -2.0, -3.0]])
        s = tk.TokenizerState(0.0, 1.0, 5.0, 512)
        stream = tk.tokenize_recording(Recording(x, 250.0, ["a", "b"]), s)
        expect = [tk.quantize(v, s) for v in (1.0, -1.0, 2.0, -2.0, 3.0, -3.0)]
        assert list(stream.tokens) == expect and stream.tokens.dtype == np.uint16

    def test_single_channel(self, rng):
        x = rng.normal(size=(1, 50))
        s = tk.fit(x)
        assert np.array_equal(tk.tokenize_recording(Recording(x, 250.0, ["a"]), s).tokens, tk.quantize(x[0], s))

    @given(st.integers(1, 4), st.integers(2, 200), st.integers(0, 2 ** 16))
    def test_idempotent(self, C, T, seed):
        x = np.random.default_rng(seed).normal(5, 7, size=(C, T))
        rec = Recording(x, 250.0, [str(i) for i in range(C)])
        s = tk.fit(rec)
        first = tk.tokenize_recording(rec, s)
        recon = tk.dequantize(first.tokens.reshape(T, C).T.astype(float), s)
        second = tk.tokenize_recording(Recording(recon, 250.0, rec.channel_names), s)
        assert np.array_equal(first.tokens, second.tokens)

    def test_file_round_trip(self, rng):
        x = rng.normal(size=(3, 40))
        s = tk.fit(x, 4.0, 256)
        stream = tk.tokenize_recording(Recording(x, 250.0, list("abc")), s)
        back = tk.read_tok(tk.write_tok(stream))
        assert np.array_equal(back.tokens, stream.tokens)
        assert back.state == s and (back.n_channels, back.n_samples) == (3, 40)

    def test_file_truncated(self, rng):
        x = rng.normal(size=(2, 10))
        raw = tk.write_tok(tk.tokenize_recording(Recording(x, 250.0, ["a", "b"]), tk.fit(x)))
        with pytest.raises(FormatError):
            tk.read_tok(raw[:-2])
        with pytest.raises(FormatError):
            tk.read_tok(b"BAD 1 2 3\n")

    def test_uniform_levels_hit(self):
        x = np.linspace(-5, 5, 100001)
        assert set(np.unique(tk.quantize(x, STD))) == set(range(512))
        assert math.isclose(tk.dequantize(511, STD), 5.0)
