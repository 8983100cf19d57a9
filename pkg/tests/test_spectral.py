import numpy as np
import pytest
from scipy.signal import lfilter

from eegcast import spectral
from eegcast.eeg_io import Recording
from conftest import pink_noise

FS = 250.0


def dft_oracle(x):
    n = len(x)
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) @ x


def with_tone(x, f, amp, channels=None):
    t = np.arange(x.shape[1]) / FS
    y = x.copy()
    rows = slice(None) if channels is None else channels
    y[rows] += amp * np.sin(2 * np.pi * f * t)
    return y


def band_power(psd, lo, hi):
    sel = (psd.freqs >= lo) & (psd.freqs <= hi)
    return psd.power[:, sel].sum() * psd.df


class TestFft:
    def test_impulse(self):
        x = np.zeros(16)
        x[0] = 1
        assert np.allclose(spectral.fft(x), np.ones(16), atol=1e-15)

    @pytest.mark.parametrize("n,k", [(8, 3), (32, 5), (64, 63)])
    def test_basis_vector(self, n, k):
        X = spectral.fft(np.exp(2j * np.pi * k * np.arange(n) / n))
        expect = np.zeros(n)
        expect[k] = n
        assert np.max(np.abs(X - expect)) <= 1e-9

    @pytest.mark.parametrize("n", [1, 2, 4, 8, 16, 32, 64])
    def test_matches_direct_dft(self, n, rng):
        x = rng.normal(size=n) + 1j * rng.normal(size=n)
        assert np.max(np.abs(spectral.fft(x) - dft_oracle(x))) <= 1e-9
        assert np.max(np.abs(spectral.ifft(spectral.fft(x)) - x)) <= 1e-12

    def test_batched_last_axis(self, rng):
        x = rng.normal(size=(3, 2, 32))
        assert np.allclose(spectral.fft(x), np.fft.fft(x, axis=-1), atol=1e-10)

    def test_zero_padding(self, rng):
        x = rng.normal(size=20)
        assert np.allclose(spectral.fft(x, 32), np.fft.fft(x, 32), atol=1e-10)

    def test_rejects_non_power_of_two(self):
        with pytest.raises(ValueError):
            spectral.fft(np.ones(12))


class TestWelch:
    def test_sine_peak(self):
        t = np.arange(int(60 * FS)) / FS
        psd = spectral.welch_psd(Recording(np.sin(2 * np.pi * 10 * t)[None], FS, ["a"]))
        assert abs(psd.freqs[np.argmax(psd.power[0])] - 10.0) <= psd.df

    def test_parseval_white_noise(self):
        for seed in range(20):
            sigma = 3.0
            x = np.random.default_rng(seed).normal(0, sigma, size=(1, int(60 * FS)))
            psd = spectral.welch_psd(Recording(x, FS, ["a"]))
            total = psd.power[0].sum() * psd.df
            assert abs(total - sigma ** 2) <= 0.1 * sigma ** 2

    def test_zero_signal(self):
        psd = spectral.welch_psd(Recording(np.zeros((2, 2000)), FS, ["a", "b"]))
        assert np.all(psd.power == 0)

    def test_resolution(self):
        psd = spectral.welch_psd(Recording(np.zeros((1, 2000)), FS, ["a"]))
        assert psd.freqs[-1] == FS / 2 and psd.df == pytest.approx(FS / 512)

    def test_too_short(self):
        with pytest.raises(ValueError):
            spectral.welch_psd(Recording(np.zeros((1, 100)), FS, ["a"]))


class TestDetection:
    def test_common_mode_50hz_caught(self):
        for seed in range(20):
            x = with_tone(pink_noise(np.random.default_rng(seed), 8, int(120 * FS)), 50.0, 10.0)
            bands = spectral.detect_noise_bands(spectral.welch_psd(Recording(x, FS, list("abcdefgh"))))
            assert len(bands) == 1
            assert bands[0].f_lo <= 50.0 <= bands[0].f_hi

    def test_clean_pink_noise(self):
        for seed in range(20):
            x = pink_noise(np.random.default_rng(100 + seed), 8, int(120 * FS))
            assert spectral.detect_noise_bands(spectral.welch_psd(Recording(x, FS, list("abcdefgh")))) == []

    def test_single_channel_tone_not_flagged(self):
        x = with_tone(pink_noise(np.random.default_rng(7), 8, int(120 * FS)), 12.0, 30.0, channels=[2])
        assert spectral.detect_noise_bands(spectral.welch_psd(Recording(x, FS, list("abcdefgh")))) == []

    def test_needs_two_channels(self):
        psd = spectral.welch_psd(Recording(np.ones((1, 1000)), FS, ["a"]))
        with pytest.raises(ValueError):
            spectral.detect_noise_bands(psd)

    def test_csv(self):
        band = spectral.NoiseBand(49.8, 50.3, 50.0, 12.5, 0.01)
        assert spectral.bands_to_csv([band]) == "f_lo,f_hi,f_center,mean_power,cv\n49.8000,50.3000,50.0000,12.5,0.010000\n"


class TestNotch:
    def test_zero_and_unity(self):
        n = spectral.design_notch(50.0, FS, 30.0)
        assert abs(n.response(50.0)) < 1e-3
        assert abs(abs(n.response(0.0)) - 1) < 1e-12
        assert abs(abs(n.response(FS / 2)) - 1) < 1e-12

    def test_passband(self):
        n = spectral.design_notch(50.0, FS, 30.0)
        assert abs(n.response(40.0)) >= 0.99

    def test_matches_analytic_biquad(self):
        n = spectral.design_notch(60.0, FS, 20.0)
        w0 = 2 * np.pi * 60 / FS
        f = np.linspace(0, FS / 2, 50)
        z = np.exp(1j * 2 * np.pi * f / FS)
        # H(z) = (z^2 - 2cos(w0) z + 1) / (z^2 - 2r' z + ...), checked via numerator zeros
        num = z ** 2 - 2 * np.cos(w0) * z + 1
        assert np.allclose(np.abs(n.response(f)) == 0, np.abs(num) == 0)
        assert abs(n.response(60.0)) < 1e-12

    def test_cascade_doubles_db(self):
        n = spectral.design_notch(50.0, FS, 30.0)
        imp = np.zeros(8192)
        imp[0] = 1
        h1 = lfilter(n.b, n.a, imp)
        h2 = lfilter(n.b, n.a, h1)
        H1, H2 = np.fft.rfft(h1), np.fft.rfft(h2)
        f = np.fft.rfftfreq(8192, 1 / FS)
        keep = np.abs(f - 50) > 1.0
        db1 = 20 * np.log10(np.abs(H1[keep]))
        db2 = 20 * np.log10(np.abs(H2[keep]))
        assert np.allclose(db2, 2 * db1, atol=1e-6)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            spectral.design_notch(200.0, FS, 30.0)
        with pytest.raises(ValueError):
            spectral.design_notch(50.0, FS, 0.0)

    def test_zero_phase(self):
        t = np.arange(5000) / FS
        x = np.sin(2 * np.pi * 10 * t)
        y = spectral.filtfilt_notch(x, spectral.design_notch(50.0, FS, 30.0))
        mid = slice(1000, 4000)
        assert np.max(np.abs(y[mid] - x[mid])) < 5e-3


class TestPreprocessing:
    def test_no_bands_passthrough(self):
        x = pink_noise(np.random.default_rng(3), 4, int(60 * FS))
        rec = Recording(x, FS, list("abcd"))
        clean, bands = spectral.apply_preprocessing(rec)
        assert bands == [] and np.array_equal(clean.samples, rec.samples)

    def test_tone_attenuated_to_background(self):
        x = with_tone(pink_noise(np.random.default_rng(4), 8, int(120 * FS)), 50.0, 10.0)
        clean, bands = spectral.apply_preprocessing(Recording(x, FS, list("abcdefgh")))
        assert len(bands) == 1
        psd = spectral.welch_psd(clean)
        mean = psd.power.mean(axis=0)
        near = np.abs(psd.freqs - 50) <= 0.5
        ring = (np.abs(psd.freqs - 50) >= 2) & (np.abs(psd.freqs - 50) <= 5)
        assert 10 * np.log10(mean[near].max() / np.median(mean[ring])) <= 3.0

    def test_alpha_preserved(self):
        rng = np.random.default_rng(9)
        t = np.arange(int(120 * FS)) / FS
        spec = np.fft.rfft(rng.standard_normal((8, len(t))), axis=1)
        f = np.fft.rfftfreq(len(t), 1 / FS)
        alpha = np.fft.irfft(spec * ((f >= 8) & (f <= 12)), n=len(t), axis=1)
        base = pink_noise(rng, 8, len(t)) + 15 * alpha / alpha.std(axis=1, keepdims=True)
        noisy = with_tone(base, 50.0, 10.0)
        clean, bands = spectral.apply_preprocessing(Recording(noisy, FS, list("abcdefgh")))
        assert len(bands) == 1
        before = band_power(spectral.welch_psd(Recording(base, FS, list("abcdefgh"))), 8, 12)
        after = band_power(spectral.welch_psd(clean), 8, 12)
        assert abs(after / before - 1) <= 0.05
