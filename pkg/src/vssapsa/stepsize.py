"""
Variable step-size controllers for APSA.

Three rules are provided:

* :class:`ShinVSS` -- a single smoothed step that can only shrink.
* :class:`ShaoOracleVSS` -- per-lane steps from the gap between the mean
  absolute error and a known mean absolute near-end level.  The near-end level
  comes from the true injected signal, so this is a benchmark, not a practical
  controller.
* :class:`ProposedVSS` -- per-lane steps from the near-end energy recovered
  out of the error signal with recursive moment estimates.

All controllers clamp their output to ``[0, mu_max]`` and accept a leading
batch shape for stacked Monte Carlo runs.
"""
from dataclasses import dataclass, field

import numpy as np

MU_MAX = 0.05


def _ema(old, new, alpha):
    return alpha * old + (1.0 - alpha) * new


@dataclass
class MomentState:
    """
    Recursive moment estimates, one row per lane ``l = 0..P-1``.

    Fields map onto the running expectations used by the proposed step:
    ``sigma_x_abs_e ~ E[x^T x |e|]``, ``sigma_x_sq ~ E[(x^T x)^2]``,
    ``sigma_sqrt_x ~ E[sqrt(x^T x)]``, ``r_xe ~ E[x e]`` and
    ``r_xsgn_e ~ E[x sgn(e)]``.
    """

    sigma_x_abs_e: np.ndarray
    sigma_x_sq: np.ndarray
    sigma_sqrt_x: np.ndarray
    r_xe: np.ndarray
    r_xsgn_e: np.ndarray
    alpha: float = 0.99

    @classmethod
    def zeros(cls, filter_length, projection_order, alpha=0.99, batch=()):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        lanes = tuple(batch) + (projection_order,)
        vecs = lanes + (filter_length,)
        return cls(np.zeros(lanes), np.zeros(lanes), np.zeros(lanes),
                   np.zeros(vecs), np.zeros(vecs), alpha)

    def copy(self):
        return MomentState(self.sigma_x_abs_e.copy(), self.sigma_x_sq.copy(),
                           self.sigma_sqrt_x.copy(), self.r_xe.copy(),
                           self.r_xsgn_e.copy(), self.alpha)


def update_moments(moments, x_lanes, e, lane=None):
    """
    Advance the five moment estimates by one sample, in place.

    Parameters
    ----------
    moments: MomentState
    x_lanes: ndarray
        ``x(n-l)`` for every lane, shape ``(P, L)``; or a single vector of
        shape ``(L,)`` when ``lane`` is given
    e: ndarray or float
        the matching a priori errors ``e_{l+1}(n)``
    lane: int, optional
        update only this lane

    Returns
    -------
    MomentState
        ``moments`` itself
    """
    a = moments.alpha
    x_lanes = np.asarray(x_lanes, dtype=float)
    e = np.asarray(e, dtype=float)
    xx = np.einsum("...l,...l->...", x_lanes, x_lanes)
    inst = (xx * np.abs(e), xx * xx, np.sqrt(xx),
            x_lanes * e[..., None], x_lanes * np.sign(e)[..., None])
    names = ("sigma_x_abs_e", "sigma_x_sq", "sigma_sqrt_x", "r_xe", "r_xsgn_e")
    for name, value in zip(names, inst):
        arr = getattr(moments, name)
        if lane is None:
            arr *= a
            arr += (1.0 - a) * value
        else:
            target = arr[..., lane, :] if name.startswith("r_") else arr[..., lane]
            target *= a
            target += (1.0 - a) * value
    return moments


def near_end_excess(moments, lane=None):
    """
    Estimate of ``E[e^2] - E[v^2]`` per lane.

    ``r_xe . r_xsgn_e / sigma_sqrt_x``; zero for lanes that are not warmed up.
    """
    num = np.einsum("...l,...l->...", moments.r_xe, moments.r_xsgn_e)
    den = moments.sigma_sqrt_x
    out = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return out if lane is None else out[..., lane]


def quadratic_step(A, B, C, delta, mu_max=MU_MAX):
    """
    Smaller root of ``A m^2 / delta^2 - 2 B m / delta + C = 0``.

    ``A = E[(x^T x)^2]``, ``B = E[x^T x |e|]`` and ``C`` is the excess error
    energy.  A negative discriminant is clamped to zero and the result to
    ``[0, mu_max]``.
    """
    A = np.asarray(A, dtype=float)
    if np.any(A <= 0):
        raise ValueError("A must be positive")
    disc = np.maximum(B * B - A * C, 0.0)
    mu = delta / A * (B - np.sqrt(disc))
    return np.clip(mu, 0.0, mu_max)


def proposed_raw_step(moments, delta, mu_max=MU_MAX):
    """Unsmoothed proposed step for every lane, clamped to ``[0, mu_max]``."""
    sx2 = moments.sigma_x_sq
    ssq = moments.sigma_sqrt_x
    warm = (sx2 > 0) & (ssq > 0)
    safe_sx2 = np.where(warm, sx2, 1.0)
    safe_ssq = np.where(warm, ssq, 1.0)
    a_hat = moments.sigma_x_abs_e / safe_sx2
    b_hat = np.einsum("...l,...l->...", moments.r_xe, moments.r_xsgn_e)
    b_hat = b_hat / (safe_sx2 * safe_ssq)
    raw = np.asarray(delta)[..., None] * (
        a_hat - np.sqrt(np.maximum(a_hat * a_hat - b_hat, 0.0)))
    # a negative bracket means the near-end estimate exceeds the error energy
    return np.where(warm, np.clip(raw, 0.0, mu_max), 0.0)


def proposed_step(mu_prev, moments, delta, alpha, mu_max=MU_MAX):
    """Smoothed proposed step ``alpha mu_prev + (1 - alpha) raw``."""
    raw = proposed_raw_step(moments, delta, mu_max)
    return _ema(np.asarray(mu_prev, dtype=float), raw, alpha)


def shin_step(state, e, delta):
    """
    One step of the shrinking rule
    ``mu(n) = a mu(n-1) + (1-a) min(||e||_1 / delta, mu(n-1))``.

    Updates ``state`` in place and returns the new step (one value per
    filter, shared by all lanes).
    """
    ratio = np.sum(np.abs(e), axis=-1) / delta
    mu = state.mu_prev
    # same convex combination, written so rounding can never raise mu
    state.mu_prev = mu - (1.0 - state.alpha) * (mu - np.minimum(ratio, mu))
    return state.mu_prev


def shao_oracle_step(oracle, e_mean_abs, mean_energy, delta, mu_max=MU_MAX):
    """
    Per-lane ``max(0, delta (E|e_l| - E|v|) / E[x^T x])`` clamped to
    ``mu_max``; zero while the energy estimate is still zero.
    """
    mean_energy = np.asarray(mean_energy, dtype=float)
    gap = np.asarray(e_mean_abs, dtype=float) - np.asarray(oracle.abs_mean)
    warm = mean_energy > 0
    mu = np.asarray(delta)[..., None] * gap / np.where(warm, mean_energy, 1.0)
    return np.where(warm, np.clip(mu, 0.0, mu_max), 0.0)


@dataclass
class ShinState:
    mu_prev: np.ndarray
    alpha: float = 0.99
    mu_init: float = MU_MAX


@dataclass
class OracleNearEnd:
    """Known near-end statistics ``E|v|`` and ``E[v^2]``."""

    abs_mean: np.ndarray = field(default_factory=lambda: np.zeros(()))
    sq_mean: np.ndarray = field(default_factory=lambda: np.zeros(()))

    def __post_init__(self):
        if np.any(np.asarray(self.abs_mean) < 0) or np.any(np.asarray(self.sq_mean) < 0):
            raise ValueError("near-end moments must be nonnegative")


class StepController:
    '''
    Common interface used by the experiment loop.

    ``step(window, e, delta)`` returns the per-lane step sizes to apply at the
    current sample; ``observe_near_end(v)`` is a hook for oracle controllers.
    '''

    per_lane = False

    def __init__(self, filter_length, projection_order, batch=(), mu_max=MU_MAX):
        self.filter_length = filter_length
        self.projection_order = projection_order
        self.batch = tuple(batch)
        self.mu_max = mu_max

    def observe_near_end(self, v):
        pass

    def step(self, window, e, delta):
        raise NotImplementedError

    def name(self):
        return self.__class__.__name__


class FixedStep(StepController):

    def __init__(self, filter_length, projection_order, mu, batch=()):
        StepController.__init__(self, filter_length, projection_order, batch, mu_max=mu)
        self.mu = float(mu)
        self._mu = np.full(self.batch + (projection_order,), self.mu)

    def step(self, window, e, delta):
        return self._mu


class ShinVSS(StepController):

    def __init__(self, filter_length, projection_order, alpha=0.99,
                 mu_init=MU_MAX, batch=(), mu_max=MU_MAX):
        StepController.__init__(self, filter_length, projection_order, batch, mu_max)
        mu_init = min(mu_init, mu_max)
        self.state = ShinState(np.full(self.batch, mu_init), alpha, mu_init)

    def step(self, window, e, delta):
        mu = shin_step(self.state, e, delta)
        return np.broadcast_to(mu[..., None], mu.shape + (self.projection_order,))


class ShaoOracleVSS(StepController):
    '''
    Oracle per-lane controller driven by the true near-end signal.

    ``E|v|`` for lane l is an exponential average of ``|v(n-l)|``, fed
    through :meth:`observe_near_end`, with the same factor ``alpha`` as the
    averages of ``|e_l|`` and ``x^T x``, so error and near-end levels carry
    matching lag.
    '''

    per_lane = True

    def __init__(self, filter_length, projection_order, alpha=0.99,
                 batch=(), mu_max=MU_MAX):
        StepController.__init__(self, filter_length, projection_order, batch, mu_max)
        self.alpha = alpha
        lanes = self.batch + (projection_order,)
        self.abs_error = np.zeros(lanes)
        self.energy = np.zeros(lanes)
        self.oracle = OracleNearEnd(np.zeros(lanes), np.zeros(lanes))
        self._v = np.zeros(lanes)

    def observe_near_end(self, v):
        self._v[..., 1:] = self._v[..., :-1]
        self._v[..., 0] = v

    def step(self, window, e, delta):
        mu = shao_oracle_step(self.oracle, self.abs_error, self.energy, delta,
                              self.mu_max)
        a = self.alpha
        self.abs_error = _ema(self.abs_error, np.abs(e), a)
        self.energy = _ema(self.energy, window.lane_energies(), a)
        o = self.oracle
        o.abs_mean = _ema(o.abs_mean, np.abs(self._v), a)
        o.sq_mean = _ema(o.sq_mean, np.square(self._v), a)
        return mu


class ProposedVSS(StepController):
    '''
    Per-lane step from near-end energy recovery.

    At sample n the step uses the moment estimates accumulated up to n-1,
    smooths the clamped raw step with ``alpha``, then folds sample n into the
    moments.

    Parameters
    ----------
    alpha: float
        smoothing factor of the moments and of the step itself
    mu_init: float
        initial step for every lane (default 0)
    '''

    per_lane = True

    def __init__(self, filter_length, projection_order, alpha=0.99,
                 mu_init=0.0, batch=(), mu_max=MU_MAX):
        StepController.__init__(self, filter_length, projection_order, batch, mu_max)
        self.alpha = alpha
        self.moments = MomentState.zeros(filter_length, projection_order, alpha,
                                         self.batch)
        self.mu = np.full(self.batch + (projection_order,), min(mu_init, mu_max))
        self.last_raw = np.zeros_like(self.mu)

    def step(self, window, e, delta):
        self.last_raw = proposed_raw_step(self.moments, delta, self.mu_max)
        self.mu = _ema(self.mu, self.last_raw, self.alpha)
        update_moments(self.moments, window.Xt, e)
        return self.mu
