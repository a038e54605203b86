"""
Affine projection filter core
=============================

Regressor window, a priori errors and coefficient updates for the affine
projection sign algorithm (APSA) with a diagonal step-size matrix, and for the
plain affine projection algorithm (APA) used as a baseline.

Every function broadcasts over leading axes, so a stack of independent filters
(one per Monte Carlo run) is updated with the same calls as a single filter.
Shapes below are written for one filter; prepend ``(B,)`` for a batch.
"""
import numpy as np
from numpy.lib.stride_tricks import as_strided


class NumericFault(FloatingPointError):
    """Raised when an update receives or produces non-finite values."""


def sgn(e):
    """Elementwise sign with ``sgn(0) = 0``."""
    return np.sign(e)


def delta_regularizer(length):
    """Default regularizer added under the square root of the APSA norm."""
    return 1e-10 * length


class RegressorWindow:
    '''
    Tapped delay line holding the P most recent input vectors.

    Column ``j`` of :attr:`columns` is ``x(n-j) = [x(n-j), ..., x(n-j-L+1)]``.
    Unfilled entries are zero (pre-windowing).

    Parameters
    ----------
    filter_length: int
        number of taps L
    projection_order: int
        number of stacked input vectors P
    batch: tuple, optional
        leading shape for a stack of independent windows (default ``()``)
    '''

    def __init__(self, filter_length, projection_order, batch=()):
        if filter_length < 1 or projection_order < 1:
            raise ValueError("filter_length and projection_order must be >= 1")
        self.filter_length = int(filter_length)
        self.projection_order = int(projection_order)
        self.batch = tuple(batch)
        self.reset()

    def reset(self):
        L, P = self.filter_length, self.projection_order
        # newest sample first
        self.buffer = np.zeros(self.batch + (L + P - 1,))
        self.samples_seen = 0
        s = self.buffer.strides
        # rows of Xt alias the buffer, so shifting it in place moves X(n) too
        self.Xt = as_strided(
            self.buffer,
            shape=self.batch + (P, L),
            strides=s[:-1] + (s[-1], s[-1]),
            writeable=False,
        )

    @property
    def columns(self):
        """The L x P matrix X(n) (a read-only view)."""
        return np.swapaxes(self.Xt, -1, -2)

    def push(self, x_new):
        """Shift in one new sample (or one per batch member)."""
        self.buffer[..., 1:] = self.buffer[..., :-1]
        self.buffer[..., 0] = x_new
        self.samples_seen += 1
        return self

    def lane_energies(self):
        """``x(n-l)^T x(n-l)`` for every lane l, shape ``(P,)``."""
        return np.einsum("...pl,...pl->...p", self.Xt, self.Xt)


def push_sample(window, x_new):
    """Push ``x_new`` into ``window`` and return it."""
    return window.push(x_new)


def _check_lanes(window, v, name):
    v = np.asarray(v, dtype=float)
    if v.shape[-1:] != (window.projection_order,):
        raise ValueError(
            f"{name} has trailing length {v.shape[-1:]}, "
            f"expected projection order {window.projection_order}"
        )
    return v


def error_vector(window, d, h_hat):
    """
    A priori error ``e(n) = d(n) - X(n)^T h_hat``.

    Parameters
    ----------
    window: RegressorWindow
    d: array_like, shape (P,)
        ``[d(n), d(n-1), ..., d(n-P+1)]``
    h_hat: array_like, shape (L,)
        current coefficients

    Returns
    -------
    ndarray, shape (P,)
    """
    d = _check_lanes(window, d, "d")
    h_hat = np.asarray(h_hat, dtype=float)
    if h_hat.shape[-1] != window.filter_length:
        raise ValueError(
            f"h_hat has length {h_hat.shape[-1]}, expected {window.filter_length}"
        )
    return d - np.matmul(window.Xt, h_hat[..., None])[..., 0]


def delta_norm(window, s, eps=0.0):
    """``sqrt(||X(n) s||^2 + eps)``; the normalizer of the APSA update."""
    s = _check_lanes(window, s, "s")
    Xs = np.matmul(s[..., None, :], window.Xt)[..., 0, :]
    return np.sqrt(np.einsum("...l,...l->...", Xs, Xs) + eps)


def apsa_update(h_hat, window, e, mu, eps=None, delta=None):
    '''
    APSA coefficient update with a diagonal step-size matrix.

    ``h_hat + X(n) diag(mu) sgn(e) / delta``, so that the a posteriori error
    equals ``e - X^T X diag(mu) sgn(e) / delta``.

    Parameters
    ----------
    h_hat: ndarray, shape (L,)
    window: RegressorWindow
    e: ndarray, shape (P,)
        a priori error vector
    mu: float or ndarray, shape (P,)
        per-lane step sizes; a scalar gives the fixed-step APSA
    eps: float, optional
        regularizer under the square root (default ``1e-10 * L``)
    delta: ndarray, optional
        precomputed ``delta_norm(window, sgn(e), eps)``

    Returns
    -------
    ndarray, shape (L,)
        the updated coefficients (a new array)
    '''
    e = _check_lanes(window, e, "e")
    mu = np.asarray(mu, dtype=float)
    if not (np.all(np.isfinite(e)) and np.all(np.isfinite(mu))
            and np.all(np.isfinite(h_hat))):
        raise NumericFault("non-finite input to apsa_update")
    if np.any(mu < 0):
        raise ValueError("step sizes must be nonnegative")
    if eps is None:
        eps = delta_regularizer(window.filter_length)
    s = sgn(e)
    if delta is None:
        delta = delta_norm(window, s, eps)
    g = mu * s / np.asarray(delta)[..., None]
    return h_hat + np.matmul(g[..., None, :], window.Xt)[..., 0, :]


def apa_regularizer(input_power):
    """Default APA regularizer: ``1e-6 * (input_power + 1)``."""
    return 1e-6 * (input_power + 1.0)


def apa_update(h_hat, window, e, mu, delta_reg):
    """
    Affine projection update ``h_hat + mu X (X^T X + delta_reg I)^{-1} e``.

    With P = 1 this is NLMS.
    """
    e = _check_lanes(window, e, "e")
    if not (np.all(np.isfinite(e)) and np.all(np.isfinite(h_hat))):
        raise NumericFault("non-finite input to apa_update")
    Xt = window.Xt
    P = window.projection_order
    R = np.matmul(Xt, np.swapaxes(Xt, -1, -2))
    R = R + np.asarray(delta_reg)[..., None, None] * np.eye(P)
    g = np.linalg.solve(R, e[..., None])[..., 0]
    return h_hat + mu * np.matmul(g[..., None, :], Xt)[..., 0, :]
