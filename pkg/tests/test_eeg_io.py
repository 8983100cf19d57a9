from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eegcast import eeg_io, spectral
from eegcast.eeg_io import FormatError, Recording, SeizureAnnotation


def _golden_one_channel_edf() -> bytes:
    """Hand-assembled EDF for 1 channel 'Fp1', fs=250, 250 zero samples."""
    def f(s, w):
        return s.encode("ascii").ljust(w, b" ")
    main = (f("0", 8) + f("X", 80) + f("X", 80) + f("01.01.00", 8) + f("00.00.00", 8)
            + f("512", 8) + f("", 44) + f("1", 8) + f("1", 8) + f("1", 4))
    sig = (f("Fp1", 16) + f("", 80) + f("uV", 8) + f("-1", 8) + f("1", 8)
           + f("-32768", 8) + f("32767", 8) + f("", 80) + f("250", 8) + f("", 32))
    return main + sig + b"\x00\x00" * 250


def _edf_bytes(digital, phys=(-500.0, 500.0), fs=250, label="A"):
    def f(s, w):
        return str(s).encode("ascii").ljust(w, b" ")
    n = len(digital)
    main = (f("0", 8) + f("X", 80) + f("X", 80) + f("01.01.00", 8) + f("00.00.00", 8)
            + f(512, 8) + f("", 44) + f(n // fs, 8) + f(1, 8) + f(1, 4))
    sig = (f(label, 16) + f("", 80) + f("uV", 8) + f(phys[0], 8) + f(phys[1], 8)
           + f(-32768, 8) + f(32767, 8) + f("", 80) + f(fs, 8) + f("", 32))
    return main + sig + np.asarray(digital, dtype="<i2").tobytes()


class TestEdf:
    def test_golden_header_byte_for_byte(self):
        rec = Recording(np.zeros((1, 250)), 250.0, ["Fp1"])
        raw = eeg_io.write_edf(rec)
        golden = _golden_one_channel_edf()
        assert raw[:256] == golden[:256]
        assert raw[256:512] == golden[256:512]
        assert raw == golden

    def test_file_size_one_record(self):
        raw = eeg_io.write_edf(Recording(np.zeros((1, 250)), 250.0, ["Fp1"]))
        assert len(raw) == 256 + 256 + 500

    def test_version_field(self):
        raw = _golden_one_channel_edf()
        assert eeg_io.read_edf(raw).n_channels == 1
        with pytest.raises(FormatError, match="version"):
            eeg_io.read_edf(b"1       " + raw[8:])

    def test_digital_min_maps_to_physical_min(self):
        rec = eeg_io.read_edf(_edf_bytes([-32768] + [0] * 249))
        assert rec.samples[0, 0] == -500.0
        rec = eeg_io.read_edf(_edf_bytes([32767] * 250))
        assert rec.samples[0, 0] == 500.0

    def test_round_trip_within_one_step(self, rng):
        x = rng.normal(0, 30, size=(4, 1000))
        raw = eeg_io.write_edf(Recording(x, 250.0, ["a", "b", "c", "d"]))
        back = eeg_io.read_edf(raw)
        step = (x.max(axis=1) - x.min(axis=1)) / 65535
        assert back.samples.shape == x.shape
        assert np.all(np.abs(back.samples - x) <= step[:, None] * 1.0001 + 1e-9)

    def test_write_read_write_identical(self, rng):
        x = rng.normal(0, 30, size=(3, 1250))
        first = eeg_io.write_edf(Recording(x, 250.0, ["a", "b", "c"]))
        second = eeg_io.write_edf(eeg_io.read_edf(first))
        assert first == second

    def test_partial_record_is_padded(self, rng):
        x = rng.normal(0, 10, size=(2, 300))
        raw = eeg_io.write_edf(Recording(x, 250.0, ["a", "b"]))
        assert len(raw) == 256 * 3 + 2 * 2 * 500
        back = eeg_io.read_edf(raw)
        assert np.allclose(back.samples[:, 300:], back.samples[:, 299:300])

    def test_long_label_truncated(self):
        rec = Recording(np.zeros((1, 250)), 250.0, ["EEG FP1-REF-LONGNAME"])
        back = eeg_io.read_edf(eeg_io.write_edf(rec))
        assert back.channel_names == ("EEG FP1-REF-LONG",)

    def test_truncated_body(self):
        raw = _golden_one_channel_edf()
        with pytest.raises(FormatError):
            eeg_io.read_edf(raw[:-10])

    def test_short_header(self):
        with pytest.raises(FormatError):
            eeg_io.read_edf(b"0" * 100)

    def test_discontinuous_rejected(self):
        raw = bytearray(_golden_one_channel_edf())
        raw[192:197] = b"EDF+D"
        with pytest.raises(FormatError, match="discontinuous"):
            eeg_io.read_edf(bytes(raw))

    def test_non_ascii_field(self):
        raw = bytearray(_golden_one_channel_edf())
        raw[10] = 0xFF
        with pytest.raises(FormatError, match="non-ASCII"):
            eeg_io.read_edf(bytes(raw))

    @given(st.integers(1, 4), st.integers(1, 600), st.floats(0.1, 3000.0))
    def test_round_trip_property(self, C, T, scale):
        x = np.random.default_rng(T * 7 + C).normal(0, scale, size=(C, T))
        back = eeg_io.read_edf(eeg_io.write_edf(Recording(x, 250.0, [str(i) for i in range(C)])))
        # one digital step of the physical range actually written to the header
        step = (back.phys_range[:, 1] - back.phys_range[:, 0]) / 65535
        assert np.all(back.phys_range[:, 0] <= x.min(axis=1)) and np.all(x.max(axis=1) <= back.phys_range[:, 1])
        tol = step * (1 + 1e-9)
        assert np.all(np.abs(back.samples[:, :T] - x) <= tol[:, None] + 1e-12)


class TestRawContainer:
    def test_round_trip(self, rng):
        x = rng.normal(size=(3, 100)).astype(np.float32).astype(np.float64)
        rec = Recording(x, 250.0, ["a", "b", "c"])
        back = eeg_io.read_eegraw(eeg_io.write_eegraw(rec))
        assert np.array_equal(back.samples, x) and back.channel_names == rec.channel_names

    def test_bad_magic(self):
        with pytest.raises(FormatError):
            eeg_io.read_eegraw(b"NOPE 1 250 1\na\n\x00\x00\x00\x00")

    def test_truncated(self, rng):
        raw = eeg_io.write_eegraw(Recording(rng.normal(size=(2, 10)), 250.0, ["a", "b"]))
        with pytest.raises(FormatError):
            eeg_io.read_eegraw(raw[:-1])


class TestAnnotations:
    def test_csv_round_trip(self):
        ann = [SeizureAnnotation(100.5, 120.0, "F3"), SeizureAnnotation(300.0, 310.25)]
        assert eeg_io.read_annotations_csv(eeg_io.write_annotations_csv(ann)) == ann

    def test_bad_header(self):
        with pytest.raises(FormatError):
            eeg_io.read_annotations_csv("start,stop\n1,2\n")

    def test_offset_before_onset(self):
        with pytest.raises(FormatError):
            eeg_io.read_annotations_csv("onset_s,offset_s,channel\n5,4,\n")


class TestResample:
    def test_ramp_decimation_exact(self):
        x = np.arange(1000, dtype=float)[None]
        out = eeg_io.resample(Recording(x, 500.0, ["a"]), 250.0)
        assert np.array_equal(out.samples[0], x[0, ::2])

    def test_identity(self, rng):
        rec = Recording(rng.normal(size=(2, 100)), 250.0, ["a", "b"])
        assert np.array_equal(eeg_io.resample(rec, 250.0).samples, rec.samples)

    def test_sine(self):
        t = np.arange(10000) / 1000.0
        out = eeg_io.resample(Recording(np.sin(2 * np.pi * t)[None], 1000.0, ["a"]), 250.0)
        t_out = np.arange(out.n_samples) / 250.0
        assert np.max(np.abs(out.samples[0] - np.sin(2 * np.pi * t_out))) <= 1e-3


def _enumerate_starts(duration, seg, overlap):
    """Exact rational enumeration of window starts."""
    d, s = Fraction(duration), Fraction(seg)
    stride = s * (1 - Fraction(overlap))
    out, t = [], Fraction(0)
    while t + s <= d:
        out.append(float(t))
        t += stride
    return out


class TestWindows:
    def test_120s_half_overlap(self):
        assert list(eeg_io.window_starts(120, 30, 0.5)) == [0, 15, 30, 45, 60, 75, 90]

    def test_60s_three_quarter_overlap(self):
        assert list(eeg_io.window_starts(60, 30, 0.75)) == [0, 7.5, 15, 22.5, 30]

    @pytest.mark.parametrize("overlap", [0.0, 0.25, 0.5, 0.75, 0.9])
    def test_exact_length_single_window(self, overlap):
        assert len(eeg_io.window_starts(30, 30, overlap)) == 1

    @given(st.integers(30, 2000), st.sampled_from([0.0, 0.25, 0.5, 0.75, 0.875]))
    def test_count_matches_enumeration(self, duration, overlap):
        assert list(eeg_io.window_starts(duration, 30, overlap)) == _enumerate_starts(duration, 30, overlap)

    def test_segments_are_views(self, rng):
        rec = Recording(rng.normal(size=(2, 250 * 60)), 250.0, ["a", "b"])
        segs = eeg_io.segment_recording(rec, 30, 0.5)
        assert [(t0, t1) for t0, t1, _ in segs] == [(0, 30), (15, 45), (30, 60)]
        assert all(np.shares_memory(w, rec.samples) and w.shape == (2, 7500) for _, _, w in segs)

    def test_too_short(self, rng):
        rec = Recording(rng.normal(size=(1, 250 * 10)), 250.0, ["a"])
        assert eeg_io.segment_recording(rec, 30, 0.5) == []


class TestLabels:
    def test_examples(self):
        assert list(eeg_io.window_labels([75, 69], [100.0])) == [1, 0]

    def test_closed_interval(self):
        assert list(eeg_io.window_labels([70, 100, 100.001], [100.0])) == [1, 1, 0]

    def test_merge_duplicate_channels(self):
        split = [SeizureAnnotation(100, 130, "F3"), SeizureAnnotation(101, 125, "C4")]
        single = [SeizureAnnotation(100, 130)]
        t_ends = np.arange(0, 200, 0.5)
        segs = [(t - 30, t, None) for t in t_ends]
        a = [s.label for s in eeg_io.label_segments(segs, split)]
        b = [s.label for s in eeg_io.label_segments(segs, single)]
        assert a == b
        assert list(eeg_io.merged_onsets(split)) == [100.0]

    @given(st.lists(st.tuples(st.floats(0, 500), st.floats(0.5, 50)), min_size=1, max_size=5),
           st.randoms())
    def test_invariant_to_reordering(self, spans, rnd):
        ann = [SeizureAnnotation(a, a + w) for a, w in spans]
        shuffled = list(ann)
        rnd.shuffle(shuffled)
        t = np.arange(0, 600, 2.5)
        on1, on2 = eeg_io.merged_onsets(ann), eeg_io.merged_onsets(shuffled)
        assert np.array_equal(eeg_io.window_labels(t, on1), eeg_io.window_labels(t, on2))

    def test_labels_match_brute_force(self, rng):
        for _ in range(200):
            onsets = np.sort(rng.uniform(0, 300, rng.integers(0, 4)))
            t = rng.uniform(0, 330, 20)
            expect = [int(any(te <= s <= te + 30 for s in onsets)) for te in t]
            assert list(eeg_io.window_labels(t, onsets)) == expect


class TestSynth:
    def test_deterministic(self):
        a, ann_a = eeg_io.synth_patient(3, 600, 4, 250, 2)
        b, ann_b = eeg_io.synth_patient(3, 600, 4, 250, 2)
        assert eeg_io.write_edf(a) == eeg_io.write_edf(b) and ann_a == ann_b
        assert np.array_equal(a.samples, b.samples)

    def test_six_events_with_gaps(self):
        rec, ann = eeg_io.synth_patient(42, 3600, 8, 250, 6)
        assert rec.samples.shape == (8, 900000)
        assert len(ann) == 6
        for prev, nxt in zip(ann, ann[1:]):
            assert nxt.onset_s - prev.offset_s >= 60 - 1e-9
        assert ann[0].onset_s >= 30
        assert all(abs(a.offset_s - a.onset_s - 20) < 1e-9 for a in ann)

    def test_background_rms(self):
        rec, _ = eeg_io.synth_patient(0, 600, 4, 250, 0)
        rms = np.sqrt(np.mean(rec.samples ** 2, axis=1))
        assert np.allclose(rms, 20.0 * np.sqrt(1.2), rtol=0.15)

    def test_no_seizures_no_3hz_peak(self):
        rec, ann = eeg_io.synth_patient(5, 600, 4, 250, 0)
        assert ann == []
        psd = spectral.welch_psd(rec)
        mean = psd.power.mean(axis=0)
        bg = spectral._median_filter(mean, 11)
        i3 = np.argmin(np.abs(psd.freqs - 3.0))
        assert np.all(mean[i3 - 1:i3 + 2] < 3 * bg[i3 - 1:i3 + 2])

    def test_seizures_show_3hz_peak(self):
        rec, ann = eeg_io.synth_patient(5, 600, 4, 250, 3)
        on = round(ann[0].onset_s * 250)
        ictal = Recording(rec.samples[:, on:on + 20 * 250], 250.0, rec.channel_names)
        psd = spectral.welch_psd(ictal)
        assert abs(psd.freqs[np.argmax(psd.power.mean(axis=0))] - 3.0) <= psd.df

    def test_duration_guard(self):
        with pytest.raises(ValueError, match="n_seizures"):
            eeg_io.synth_patient(0, 500, 2, 250, 6)
