import hashlib

import numpy as np
import pytest

from vssapsa.harness import ExperimentConfig
from vssapsa.signals import (EchoPath, NoiseSpec, echo_signal, export_scenario,
                             gen_ar1, gen_bg, gen_echo_path, load_scenario,
                             make_rng, power_for_ratio, synthesize_scenario)

# sha256 of round(d, 9) for the configuration in test_golden_checksum,
# recorded from the first verified run
GOLDEN_D = "67f63f104c8d18fe039a8bb0b3ff7d5e4825027a23b21877c685523367ff0db2"


def lag1_autocorr(u):
    u = u - u.mean()
    return float(u[1:] @ u[:-1] / (u @ u))


# --- echo paths ------------------------------------------------------------

def test_echo_path_deterministic():
    a, b = gen_echo_path(128, 9), gen_echo_path(128, 9)
    assert a.taps.tobytes() == b.taps.tobytes()


@pytest.mark.parametrize("L", [1, 7, 128, 512])
def test_echo_path_unit_norm(L):
    assert abs(np.linalg.norm(gen_echo_path(L, 3).taps) - 1.0) < 1e-12


def test_echo_paths_nearly_orthogonal():
    for seed in range(20):
        a = gen_echo_path(128, seed).taps
        b = gen_echo_path(128, seed + 1000).taps
        assert abs(a @ b) < 0.5


def test_echo_path_rejects_empty():
    with pytest.raises(ValueError):
        gen_echo_path(0, 1)


# --- AR(1) -----------------------------------------------------------------

def test_ar1_zero_pole_is_white():
    np.testing.assert_array_equal(gen_ar1(50, 0.0, 4), make_rng(4).standard_normal(50))


def test_ar1_recursion():
    u = gen_ar1(20, 0.5, 1)
    w = make_rng(1).standard_normal(20)
    assert u[0] == w[0]
    np.testing.assert_allclose(u[1:], 0.5 * u[:-1] + w[1:], rtol=0, atol=1e-14)


@pytest.mark.slow
def test_ar1_statistics():
    u = gen_ar1(1_000_000, 0.8, 21)
    assert abs(lag1_autocorr(u) - 0.8) <= 0.02
    var = 1.0 / (1.0 - 0.64)
    assert abs(u.var() - var) <= 0.05 * var


@pytest.mark.parametrize("pole", [1.0, -1.0, 1.5])
def test_ar1_rejects_unstable(pole):
    with pytest.raises(ValueError):
        gen_ar1(10, pole, 0)


# --- Bernoulli-Gaussian ----------------------------------------------------

def test_bg_never_fires():
    np.testing.assert_array_equal(gen_bg(1000, 0.0, 4.0, 1), 0.0)


def test_bg_always_fires():
    z = gen_bg(200_000, 1.0, 4.0, 2)
    assert np.all(z != 0)
    assert abs(z.var() - 4.0) < 0.05 * 4.0


@pytest.mark.slow
def test_bg_mean_power():
    z = gen_bg(1_000_000, 0.1, 4.0, 3)
    assert abs(np.mean(z * z) - 0.4) <= 0.05 * 0.4
    assert abs(np.mean(z != 0) - 0.1) < 0.002


def test_bg_rejects_bad_args():
    with pytest.raises(ValueError):
        gen_bg(10, 1.5, 1.0, 0)
    with pytest.raises(ValueError):
        gen_bg(10, 0.5, 0.0, 0)


def test_noise_spec_validates():
    with pytest.raises(ValueError):
        NoiseSpec(bernoulli_p=-0.1)


# --- power_for_ratio -------------------------------------------------------

def test_power_zero_db():
    assert power_for_ratio(3.7, 0.0) == 3.7


def test_power_30_db():
    assert power_for_ratio(2.0, 30.0) == pytest.approx(0.002)


def test_power_rejects_nonpositive():
    with pytest.raises(ValueError):
        power_for_ratio(0.0, 10.0)


@pytest.mark.slow
def test_sir_closure():
    cfg = ExperimentConfig(n_samples=1_000_000, snr_db=None, sir_db=0.0)
    sc = synthesize_scenario(cfg)
    pilot_power = np.mean(sc.y[:5000] ** 2)
    sigma_sq = power_for_ratio(pilot_power, 0.0) / 0.1
    assert np.mean(sc.bg ** 2) == pytest.approx(0.1 * sigma_sq, rel=0.05)
    assert np.mean(sc.bg ** 2) == pytest.approx(pilot_power, rel=0.05)


# --- synthesize_scenario ---------------------------------------------------

def test_scenario_without_near_end():
    sc = synthesize_scenario(ExperimentConfig(n_samples=500, snr_db=None))
    np.testing.assert_array_equal(sc.d, sc.y)
    np.testing.assert_array_equal(sc.v, 0.0)


def test_scenario_identity_path():
    h = np.zeros(16)
    h[0] = 1.0
    sc = synthesize_scenario(ExperimentConfig(L=16, n_samples=300), paths=[h])
    np.testing.assert_array_equal(sc.y, sc.x)


def test_scenario_echo_is_tapped_delay_product():
    cfg = ExperimentConfig(L=8, P=2, n_samples=60)
    sc = synthesize_scenario(cfg)
    h = sc.paths[0].taps
    for k in (0, 3, 7, 30, 59):
        xk = np.array([sc.x[k - i] if k - i >= 0 else 0.0 for i in range(8)])
        assert sc.y[k] == pytest.approx(xk @ h, abs=1e-12)


def test_scenario_path_change():
    cfg = ExperimentConfig(L=8, n_samples=200, path_change_at=120)
    sc = synthesize_scenario(cfg)
    h1, h2 = sc.paths[0].taps, sc.paths[1].taps
    np.testing.assert_allclose(sc.y[:120], np.convolve(sc.x, h1)[:120], atol=1e-12)
    np.testing.assert_allclose(sc.y[120:], np.convolve(sc.x, h2)[120:200], atol=1e-12)
    assert sc.true_path(119) is sc.paths[0] and sc.true_path(120) is sc.paths[1]


def test_scenario_deterministic():
    cfg = ExperimentConfig(n_samples=3000, sir_db=0.0)
    a, b = synthesize_scenario(cfg, run=2), synthesize_scenario(cfg, run=2)
    for name in ("x", "y", "v", "d"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
    c = synthesize_scenario(cfg, run=3)
    assert not np.array_equal(a.x, c.x)


def test_golden_checksum():
    cfg = ExperimentConfig(n_samples=2000, sir_db=0.0, path_change_at=1000)
    d = synthesize_scenario(cfg).d
    assert hashlib.sha256(np.round(d, 9).astype("<f8").tobytes()).hexdigest() == GOLDEN_D


def test_ratio_closure():
    sc = synthesize_scenario(ExperimentConfig(n_samples=100_000, sir_db=0.0))
    echo = np.mean(sc.y ** 2)
    assert abs(10 * np.log10(echo / np.mean(sc.wgn ** 2)) - 30.0) <= 0.5
    assert abs(10 * np.log10(echo / np.mean(sc.bg ** 2)) - 0.0) <= 0.5


def test_convolution_linearity():
    cfg = ExperimentConfig(L=32, n_samples=2000, snr_db=None)
    h1, h2 = gen_echo_path(32, 1).taps, gen_echo_path(32, 2).taps
    a, b = 0.7, -1.9
    y1 = synthesize_scenario(cfg, paths=[h1]).y
    y2 = synthesize_scenario(cfg, paths=[h2]).y
    y = synthesize_scenario(cfg, paths=[a * h1 + b * h2]).y
    np.testing.assert_allclose(y, a * y1 + b * y2, atol=1e-10, rtol=0)


def test_echo_signal_accepts_echo_paths():
    x = np.arange(5.0)
    y = echo_signal(x, [EchoPath(np.array([0.0, 1.0]), 0)])
    np.testing.assert_array_equal(y, [0, 0, 1, 2, 3])


def test_export_round_trip(tmp_path):
    cfg = ExperimentConfig(L=16, n_samples=400, sir_db=0.0, path_change_at=200)
    sc = synthesize_scenario(cfg, run=1)
    export_scenario(sc, cfg, tmp_path, run=1)
    meta, data = load_scenario(tmp_path)
    assert meta["byteorder"] == "little" and meta["run"] == 1
    assert meta["config"]["seeds"] == cfg.seeds
    assert (tmp_path / "d.f64").stat().st_size == 400 * 8
    np.testing.assert_array_equal(data["d"], sc.d)
    np.testing.assert_array_equal(data["h1"], sc.paths[1].taps)
    assert ExperimentConfig.from_dict(meta["config"]) == cfg
