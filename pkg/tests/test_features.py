import numpy as np
import pytest

from spkver.errors import ConfigError, InputError
from spkver.features import LOG_EPS, FeatureConfig, compute_log_mel, mean_normalize

CFG = FeatureConfig()


def test_frame_count_one_second():
    # win 400, hop 160: 1 + (16000 - 400) // 160 = 98
    f = compute_log_mel(np.random.default_rng(0).standard_normal(16000), CFG)
    assert f.shape == (98, 80)


@pytest.mark.parametrize("n", [400, 401, 559, 560, 12345])
def test_frame_count_formula(n):
    assert compute_log_mel(np.ones(n), CFG).shape[0] == 1 + (n - 400) // 160


def test_silence_is_log_eps():
    f = compute_log_mel(np.zeros(4000), CFG)
    assert np.all(np.isfinite(f))
    np.testing.assert_allclose(f, np.log(LOG_EPS), rtol=1e-6)


def _mel_centers(cfg):
    # independent: O'Shaughnessy Mel scale, centers evenly spaced between f_min and f_max
    to_mel = lambda f: 1127.0 * np.log(1 + f / 700.0)
    from_mel = lambda m: 700.0 * (np.exp(m / 1127.0) - 1)
    m = np.linspace(to_mel(cfg.f_min), to_mel(cfg.f_max), cfg.n_mels + 2)
    return from_mel(m[1:-1])


def test_tone_peaks_at_its_mel_bin():
    t = np.arange(16000) / 16000
    f = compute_log_mel(np.sin(2 * np.pi * 1000 * t), CFG)
    expected = int(np.argmin(np.abs(_mel_centers(CFG) - 1000.0)))
    assert set(np.argmax(f, axis=1)) == {expected}


def test_short_waveform_rejected():
    with pytest.raises(InputError):
        compute_log_mel(np.zeros(399), CFG)


def test_sample_rate_mismatch():
    with pytest.raises(InputError):
        compute_log_mel(np.zeros(1000), CFG, sample_rate=8000)


def test_config_validation():
    with pytest.raises(ConfigError):
        FeatureConfig(win_ms=10, hop_ms=10)
    with pytest.raises(ConfigError):
        FeatureConfig(n_mels=40)
    with pytest.raises(ConfigError):
        FeatureConfig(fft_size=256)


def test_deterministic():
    x = np.random.default_rng(3).standard_normal(8000)
    assert compute_log_mel(x).tobytes() == compute_log_mel(x.copy()).tobytes()


def test_shift_by_one_hop_shifts_frames():
    x = np.random.default_rng(4).standard_normal(16000)
    a = compute_log_mel(x)
    b = compute_log_mel(x[160:])
    np.testing.assert_allclose(a[1:], b[: len(a) - 1], atol=1e-5)


class TestMeanNormalize:
    def test_zero_mean_random(self):
        f = np.random.default_rng(0).standard_normal((50, 80)).astype(np.float32) * 5 + 3
        assert np.all(np.abs(mean_normalize(f).mean(axis=0, dtype=np.float64)) < 1e-6)

    def test_constant_goes_to_zero(self):
        assert np.all(mean_normalize(np.full((7, 80), 4.5, dtype=np.float32)) == 0)

    def test_idempotent(self):
        f = mean_normalize(np.random.default_rng(1).standard_normal((30, 80)))
        np.testing.assert_allclose(mean_normalize(f), f, atol=1e-6)

    def test_single_frame(self):
        assert np.all(mean_normalize(np.ones((1, 80))) == 0)
