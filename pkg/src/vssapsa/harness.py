"""Experiment runner: scenarios in, misalignment and step-size traces out."""
import csv
import json
import logging
from dataclasses import dataclass, field, asdict, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .adaptive import (RegressorWindow, apa_regularizer, apa_update,
                       apsa_update, delta_norm, delta_regularizer, sgn)
from .signals import synthesize_scenario
from .stepsize import (MU_MAX, FixedStep, ProposedVSS, ShaoOracleVSS,
                       ShinVSS)

log = logging.getLogger(__name__)

ALGORITHMS = ("apsa_fixed", "apa_fixed", "shin_vss", "shao_oracle_vss", "proposed_vss")
VSS_ALGORITHMS = ("shin_vss", "shao_oracle_vss", "proposed_vss")
MISALIGNMENT_FLOOR_DB = -120.0
DIVERGENCE_LIMIT = 1e6

DEFAULT_SEEDS = {"path": 101, "far_end": 202, "noise": 303, "impulse": 404, "path2": 505}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    '''
    One echo-cancellation experiment.

    ``snr_db = None`` removes the background noise, ``sir_db = None`` the
    impulses and ``path_change_at = None`` the echo path switch.  ``mu`` is the
    step of the fixed-step algorithms.  ``alpha`` drives the moment estimates
    and step smoothing of the per-lane controllers, ``shin_alpha`` the
    shrinking rule.  ``mu_init = None`` picks the controller default.
    '''

    L: int = 128
    P: int = 5
    n_samples: int = 30000
    pole: float = 0.8
    snr_db: Optional[float] = 30.0
    sir_db: Optional[float] = None
    bernoulli_p: float = 0.1
    path_change_at: Optional[int] = None
    algorithm: str = "proposed_vss"
    mu: float = 0.01
    alpha: float = 0.99
    shin_alpha: float = 0.99
    mu_max: float = MU_MAX
    mu_init: Optional[float] = None
    seeds: dict = field(default_factory=lambda: dict(DEFAULT_SEEDS))
    monte_carlo_runs: int = 10

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.L < 1 or self.P < 1 or self.n_samples < 1:
            raise ConfigError("L, P and n_samples must be >= 1")
        if self.P > self.L:
            raise ConfigError("P must not exceed L")
        if not 0.0 <= self.bernoulli_p <= 1.0:
            raise ConfigError("bernoulli_p must lie in [0, 1]")
        if not -1.0 < self.pole < 1.0:
            raise ConfigError("pole must satisfy |pole| < 1")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; "
                              f"expected one of {', '.join(ALGORITHMS)}")
        if self.mu < 0:
            raise ConfigError("mu must be nonnegative")
        if self.algorithm == "apa_fixed" and not self.mu < 2:
            raise ConfigError("APA step must lie in [0, 2)")
        for name in ("alpha", "shin_alpha"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")
        if self.mu_max <= 0:
            raise ConfigError("mu_max must be positive")
        if self.monte_carlo_runs < 1:
            raise ConfigError("monte_carlo_runs must be >= 1")
        missing = set(DEFAULT_SEEDS) - set(self.seeds)
        extra = set(self.seeds) - set(DEFAULT_SEEDS)
        if missing or extra:
            raise ConfigError(f"seeds must have exactly the keys {sorted(DEFAULT_SEEDS)}")
        if self.path_change_at is not None and self.path_change_at < 0:
            raise ConfigError("path_change_at must be >= 0")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        data = dict(data)
        if "seeds" in data:
            data["seeds"] = {**DEFAULT_SEEDS, **data["seeds"]}
        return cls(**data)

    @classmethod
    def load(cls, path):
        """Read a JSON object whose keys are the field names."""
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)

    def label(self):
        if self.algorithm in ("apsa_fixed", "apa_fixed"):
            return f"{self.algorithm.split('_')[0]}_{self.mu:g}"
        return self.algorithm


@dataclass
class TraceSet:
    '''
    Per-sample traces of one experiment or ensemble.

    ``misalignment_db[k]`` is the misalignment of the coefficients entering
    sample k against the echo path active at k, so entry 0 is the initial
    condition.  ``step_size`` is the lane-averaged step applied at k and
    ``residual`` the first a priori error ``e(k) = d(k) - x_k^T h_hat``.
    After a divergence all three traces are NaN.
    '''

    misalignment_db: np.ndarray
    step_size: np.ndarray
    residual: np.ndarray
    config: ExperimentConfig
    diverged_at: Optional[int] = None
    run_misalignment_db: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.misalignment_db)

    @property
    def diverged(self):
        return self.diverged_at is not None

    def steady_state_db(self, window=5000):
        return float(np.mean(self.misalignment_db[-window:]))

    def standard_error_db(self, window=5000):
        """Mean over the last ``window`` samples of the per-sample standard error."""
        runs = self.run_misalignment_db
        if runs is None or runs.shape[0] < 2:
            return 0.0
        se = runs[:, -window:].std(axis=0, ddof=1) / np.sqrt(runs.shape[0])
        return float(np.mean(se))


def misalignment_db(h, h_hat):
    """``20 log10(||h - h_hat|| / ||h||)``, floored at -120 dB."""
    h = np.asarray(getattr(h, "taps", h), dtype=float)
    h_hat = np.asarray(h_hat, dtype=float)
    if h.shape[-1] != h_hat.shape[-1]:
        raise ValueError("h and h_hat lengths differ")
    ref = np.linalg.norm(h, axis=-1)
    if np.any(ref == 0):
        raise ValueError("true echo path has zero norm")
    with np.errstate(divide="ignore"):
        out = 20.0 * np.log10(np.linalg.norm(h - h_hat, axis=-1) / ref)
    return np.maximum(out, MISALIGNMENT_FLOOR_DB)


def make_controller(config, batch=()):
    L, P = config.L, config.P
    alg = config.algorithm
    if alg in ("apsa_fixed", "apa_fixed"):
        return FixedStep(L, P, config.mu, batch)
    if alg == "shin_vss":
        mu_init = config.mu_max if config.mu_init is None else config.mu_init
        return ShinVSS(L, P, config.shin_alpha, mu_init, batch, config.mu_max)
    if alg == "shao_oracle_vss":
        return ShaoOracleVSS(L, P, config.alpha, batch, config.mu_max)
    mu_init = 0.0 if config.mu_init is None else config.mu_init
    return ProposedVSS(L, P, config.alpha, mu_init, batch, config.mu_max)


def _simulate(config, runs):
    """Run ``len(runs)`` independent filters side by side."""
    B = len(runs)
    L, P, n = config.L, config.P, config.n_samples
    scen = [synthesize_scenario(config, r) for r in runs]
    x = np.stack([s.x for s in scen])
    d = np.stack([s.d for s in scen])
    v = np.stack([s.v for s in scen])
    h_true = [np.stack([s.paths[i].taps for s in scen]) for i in range(len(scen[0].paths))]
    change = config.path_change_at

    window = RegressorWindow(L, P, (B,))
    controller = make_controller(config, (B,))
    apa = config.algorithm == "apa_fixed"
    eps = delta_regularizer(L)
    # APA regularizer from the average input power of each run
    delta_reg = apa_regularizer(np.mean(x * x, axis=1))

    h = np.zeros((B, L))
    dwin = np.zeros((B, P))
    mis = np.full((B, n), np.nan)
    step = np.full((B, n), np.nan)
    resid = np.full((B, n), np.nan)
    alive = np.ones(B, dtype=bool)
    diverged_at = [None] * B

    for k in range(n):
        target = h_true[1] if change is not None and k >= change else h_true[0]
        mis[:, k] = misalignment_db(target, h)

        window.push(x[:, k])
        dwin[:, 1:] = dwin[:, :-1]
        dwin[:, 0] = d[:, k]
        e = dwin - np.matmul(window.Xt, h[..., None])[..., 0]
        delta = delta_norm(window, sgn(e), eps)
        controller.observe_near_end(v[:, k])
        mu = controller.step(window, e, delta)
        if apa:
            h = apa_update(h, window, e, config.mu, delta_reg)
        else:
            h = apsa_update(h, window, e, mu, eps, delta)
        step[:, k] = np.mean(mu, axis=-1)
        resid[:, k] = e[:, 0]

        bad = ~np.isfinite(h).all(axis=1) | (np.abs(h).max(axis=1) > DIVERGENCE_LIMIT)
        bad &= alive
        if bad.any():
            for b in np.flatnonzero(bad):
                diverged_at[b] = k
                log.warning("run %d (%s) diverged at sample %d",
                            runs[b], config.label(), k)
            alive &= ~bad
            h[bad] = 0.0
        if not alive.all():
            dead = ~alive
            mis[dead, k] = np.nan
            step[dead, k] = np.nan
            resid[dead, k] = np.nan
            if not alive.any():
                break
    return mis, step, resid, diverged_at


def run_monte_carlo(config):
    """
    Average ``config.monte_carlo_runs`` independent runs.

    Run ``r`` uses every configured seed with run index ``r``.  Misalignment is
    averaged in dB.  A diverged run makes the ensemble NaN from its divergence
    sample onward.
    """
    runs = list(range(config.monte_carlo_runs))
    mis, step, resid, div = _simulate(config, runs)
    hits = [k for k in div if k is not None]
    return TraceSet(
        misalignment_db=mis.mean(axis=0),
        step_size=step.mean(axis=0),
        residual=resid.mean(axis=0),
        config=config,
        diverged_at=min(hits) if hits else None,
        run_misalignment_db=mis,
    )


def run_experiment(config):
    """Single run (run index 0) of ``config``."""
    return run_monte_carlo(replace(config, monte_carlo_runs=1))


def emit_csv(traces, path):
    '''
    Write named traces side by side.

    Parameters
    ----------
    traces: list of (name, TraceSet)
    path: str or Path

    Columns are ``sample`` then ``<name>_misalignment_db`` and ``<name>_step``
    for every trace; a diverged trace also gets ``<name>_diverged`` (0/1 per
    sample).  Values use 9 significant digits.
    '''
    path = Path(path)
    lengths = {len(t) for _, t in traces}
    if len(lengths) > 1:
        raise ValueError(f"traces have different lengths: {sorted(lengths)}")
    header = ["sample"]
    cols = []
    for name, t in traces:
        header += [f"{name}_misalignment_db", f"{name}_step"]
        cols += [t.misalignment_db, t.step_size]
        if t.diverged:
            header.append(f"{name}_diverged")
            cols.append((np.arange(len(t)) >= t.diverged_at).astype(int))
    n = lengths.pop() if lengths else 0
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for k in range(n):
                w.writerow([k] + [_fmt(c[k]) for c in cols])
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc}") from exc
    return path


def _fmt(value):
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{value:.9g}"


def read_csv(path):
    """Parse a file written by :func:`emit_csv` into ``{column: ndarray}``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array(body, dtype=float).reshape(len(body), len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


# --- figure presets and calibration -----------------------------------------

def first_crossing(trace, level_db=-20.0):
    """First sample where the misalignment trace drops below ``level_db``."""
    m = trace.misalignment_db if isinstance(trace, TraceSet) else np.asarray(trace)
    hits = np.flatnonzero(m < level_db)
    return int(hits[0]) if len(hits) else None


def figure_config(figure, **overrides):
    """Scenario of one of the three comparison figures."""
    if figure == 1:
        cfg = ExperimentConfig(n_samples=30000)
    elif figure == 2:
        cfg = ExperimentConfig(n_samples=30000, sir_db=0.0)
    elif figure == 3:
        cfg = ExperimentConfig(n_samples=20000, sir_db=0.0, path_change_at=10000)
    else:
        raise ConfigError(f"no preset for figure {figure}")
    return replace(cfg, **overrides)


# Output of `vssapsa calibrate` on the figure-1 scenario (10 runs): lowest
# steady state among grid points that cross -20 dB within twice the samples
# APA(0.1) needs.
VSS_PRESETS = {
    "shin_vss": {"shin_alpha": 0.8, "mu_max": 0.02},
    "shao_oracle_vss": {"alpha": 0.95, "mu_max": 0.02},
    "proposed_vss": {"alpha": 0.999, "mu_max": 0.02},
}

COMPARISON = (
    ("apsa_0.01", {"algorithm": "apsa_fixed", "mu": 0.01}),
    ("apsa_0.001", {"algorithm": "apsa_fixed", "mu": 0.001}),
    ("apa_0.1", {"algorithm": "apa_fixed", "mu": 0.1}),
    ("shin", {"algorithm": "shin_vss", **VSS_PRESETS["shin_vss"]}),
    ("shao_oracle", {"algorithm": "shao_oracle_vss", **VSS_PRESETS["shao_oracle_vss"]}),
    ("proposed", {"algorithm": "proposed_vss", **VSS_PRESETS["proposed_vss"]}),
)


def compare(figure, names=None, **overrides):
    """
    Run the comparison algorithms on a figure scenario.

    Returns a list of ``(name, TraceSet)`` in :data:`COMPARISON` order.
    """
    out = []
    for name, params in COMPARISON:
        if names is not None and name not in names:
            continue
        cfg = figure_config(figure, **{**params, **overrides})
        log.info("figure %d: running %s", figure, name)
        out.append((name, run_monte_carlo(cfg)))
    return out


CALIBRATION_ALPHAS = (0.5, 0.8, 0.9, 0.95, 0.98, 0.99, 0.995, 0.998, 0.999)
CALIBRATION_MU_MAX = (0.01, 0.02, 0.05)


@dataclass
class CalibrationRow:
    alpha: float
    mu_max: float
    steady_state_db: float
    crossing: Optional[int]


@dataclass
class Calibration:
    algorithm: str
    reference_crossing: int
    limit: float
    rows: list
    best: Optional[CalibrationRow]

    def params(self):
        if self.best is None:
            return None
        key = "shin_alpha" if self.algorithm == "shin_vss" else "alpha"
        return {key: self.best.alpha, "mu_max": self.best.mu_max}


def calibrate(algorithm, base=None, alphas=CALIBRATION_ALPHAS,
              mu_maxes=CALIBRATION_MU_MAX, budget=2.0):
    '''
    Grid-search a VSS controller on the figure-1 scenario.

    The reference is APA with step 0.1.  A grid point is admissible when its
    ensemble crosses -20 dB within ``budget`` times the reference crossing;
    the admissible point with the lowest steady state (last 5000 samples)
    wins.
    '''
    if algorithm not in VSS_ALGORITHMS:
        raise ConfigError(f"{algorithm!r} has no step-size parameters to calibrate")
    base = figure_config(1) if base is None else base
    ref = run_monte_carlo(replace(base, algorithm="apa_fixed", mu=0.1))
    ref_cross = first_crossing(ref)
    if ref_cross is None:
        raise RuntimeError("reference APA(0.1) never reaches -20 dB")
    limit = budget * ref_cross
    key = "shin_alpha" if algorithm == "shin_vss" else "alpha"
    rows = []
    for a in alphas:
        for m in mu_maxes:
            t = run_monte_carlo(replace(base, algorithm=algorithm, mu_max=m, **{key: a}))
            row = CalibrationRow(a, m, t.steady_state_db(), first_crossing(t))
            log.info("calibrate %s: %s", algorithm, row)
            rows.append(row)
    ok = [r for r in rows if r.crossing is not None and r.crossing <= limit]
    best = min(ok, key=lambda r: r.steady_state_db) if ok else None
    return Calibration(algorithm, ref_cross, limit, rows, best)
