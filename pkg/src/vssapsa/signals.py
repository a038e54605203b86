"""Seeded signal generators for echo-cancellation scenarios.

All randomness comes from numpy's Philox4x64-10 counter-based bit generator,
keyed by ``SeedSequence([seed, run])``.  Given the same seeds another
implementation using Philox4x64-10 with the same key derivation reproduces the
streams; ``standard_normal`` uses numpy's ziggurat method.
"""
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

PILOT_LENGTH = 5000


def make_rng(seed, run=0):
    """Philox generator for ``(seed, run)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(run)])))


@dataclass
class EchoPath:
    taps: np.ndarray
    seed: int

    @property
    def length(self):
        return len(self.taps)


@dataclass
class NoiseSpec:
    snr_db: float = 30.0
    sir_db: float = None
    bernoulli_p: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.bernoulli_p <= 1.0:
            raise ValueError("bernoulli_p must lie in [0, 1]")


def gen_echo_path(L, seed, run=0):
    """Unit-norm echo path with i.i.d. Gaussian taps."""
    if L < 1:
        raise ValueError("echo path length must be >= 1")
    h = make_rng(seed, run).standard_normal(L)
    return EchoPath(h / np.linalg.norm(h), seed)


def gen_ar1(n_samples, pole, seed, run=0):
    """
    First-order autoregressive sequence ``u(k) = pole u(k-1) + w(k)``,
    ``w ~ N(0, 1)``, started from ``u(0) = w(0)``.
    """
    if not -1.0 < pole < 1.0:
        raise ValueError(f"AR(1) pole must satisfy |pole| < 1, got {pole}")
    w = make_rng(seed, run).standard_normal(n_samples)
    return lfilter([1.0], [1.0, -pole], w)


def gen_wgn(n_samples, power, seed, run=0):
    return np.sqrt(power) * make_rng(seed, run).standard_normal(n_samples)


def gen_bg(n_samples, p, sigma_sq, seed, run=0):
    """Bernoulli-Gaussian impulses: Bernoulli(p) gate times N(0, sigma_sq)."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if sigma_sq <= 0:
        raise ValueError("sigma_sq must be positive")
    rng = make_rng(seed, run)
    gate = rng.random(n_samples) < p
    return gate * (np.sqrt(sigma_sq) * rng.standard_normal(n_samples))


def power_for_ratio(signal_power, ratio_db):
    """Noise power giving ``ratio_db`` below ``signal_power``."""
    if signal_power <= 0:
        raise ValueError("signal_power must be positive")
    return signal_power * 10.0 ** (-ratio_db / 10.0)


@dataclass
class Scenario:
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    d: np.ndarray
    paths: list
    change_at: int = None
    wgn: np.ndarray = None
    bg: np.ndarray = None

    def true_path(self, k):
        if self.change_at is not None and k >= self.change_at:
            return self.paths[1]
        return self.paths[0]


def echo_signal(x, paths, change_at=None):
    """Echo ``y(k) = x_k^T h`` with a switch to ``paths[1]`` at ``change_at``."""
    y = lfilter(paths[0].taps, [1.0], x)
    if change_at is not None and change_at < len(x):
        y[change_at:] = lfilter(paths[1].taps, [1.0], x)[change_at:]
    return y


def synthesize_scenario(config, run=0, paths=None):
    """
    Generate far-end, echo, near-end and microphone signals for one run.

    ``paths`` overrides the seeded echo paths (one, or two with a path
    change).

    Background noise is sized for ``config.snr_db`` and impulses for
    ``config.sir_db``, both against the echo power over the first
    ``PILOT_LENGTH`` samples.  ``config.snr_db = None`` disables the
    background noise and ``config.sir_db = None`` the impulses.

    Returns
    -------
    Scenario
    """
    n = config.n_samples
    L = config.L
    s = config.seeds
    x = gen_ar1(n, config.pole, s["far_end"], run)
    if paths is None:
        paths = [gen_echo_path(L, s["path"], run)]
        if config.path_change_at is not None:
            paths.append(gen_echo_path(L, s["path2"], run))
    paths = [p if isinstance(p, EchoPath) else EchoPath(np.asarray(p, float), -1)
             for p in paths]
    y = echo_signal(x, paths, config.path_change_at)

    pilot = y[:min(PILOT_LENGTH, n)]
    echo_power = float(np.mean(pilot ** 2))
    wgn = np.zeros(n)
    bg = np.zeros(n)
    if echo_power > 0:
        if config.snr_db is not None:
            wgn = gen_wgn(n, power_for_ratio(echo_power, config.snr_db), s["noise"], run)
        if config.sir_db is not None and config.bernoulli_p > 0:
            sigma_sq = power_for_ratio(echo_power, config.sir_db) / config.bernoulli_p
            bg = gen_bg(n, config.bernoulli_p, sigma_sq, s["impulse"], run)
    v = wgn + bg
    return Scenario(x, y, v, y + v, paths, config.path_change_at, wgn, bg)


def export_scenario(scenario, config, directory, run=0):
    """
    Write ``x``, ``y``, ``v``, ``d`` and the echo path taps as little-endian
    float64 raw files plus ``scenario.json`` with parameters and seeds.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    streams = {"x": scenario.x, "y": scenario.y, "v": scenario.v, "d": scenario.d}
    for i, p in enumerate(scenario.paths):
        streams[f"h{i}"] = p.taps
    for name, data in streams.items():
        fname = f"{name}.f64"
        np.asarray(data, dtype="<f8").tofile(directory / fname)
        files[name] = {"file": fname, "length": int(len(data))}
    meta = {
        "dtype": "float64",
        "byteorder": "little",
        "rng": "numpy Philox4x64-10, SeedSequence([seed, run])",
        "run": run,
        "pilot_length": PILOT_LENGTH,
        "config": config.to_dict(),
        "files": files,
    }
    (directory / "scenario.json").write_text(json.dumps(meta, indent=2) + "\n")
    return directory / "scenario.json"


def load_scenario(directory):
    """Read back the raw streams written by :func:`export_scenario`."""
    directory = Path(directory)
    meta = json.loads((directory / "scenario.json").read_text())
    data = {k: np.fromfile(directory / f["file"], dtype="<f8")
            for k, f in meta["files"].items()}
    return meta, data
