"""Modified Bessel functions and the Yukawa Green kernel.

Everything here is self-contained numpy code:

* ``K_0`` and ``K_1`` come from the ascending series for ``x <= 2`` and from
  the trapezoidal rule applied to ``K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt``
  for ``x > 2`` (the integrand is entire and doubly-exponentially decaying, so
  the trapezoidal rule converges geometrically).  Higher orders use the
  upward recurrence, which is stable for ``K``.
* ``I_n`` uses Miller's downward recurrence normalised by ``I_0`` from its
  ascending series.

The 2D Yukawa kernel carries the ``1/(2 pi)`` factor so that
``-Laplace G + G / gamma**2 = delta_0``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EULER_GAMMA = 0.57721566490153286061
MAX_ORDER = 60
# I_0(x) overflows double precision shortly after x = 713.
OVERFLOW_X = 700.0
_SERIES_SWITCH = 2.0


def _as_positive_array(x):
    x = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(x)) or np.any(x <= 0.0):
        raise ValueError("modified Bessel functions require finite x > 0")
    return x


def _check_order(n):
    if int(n) != n or n < 0 or n > MAX_ORDER:
        raise ValueError(f"order must be an integer in [0, {MAX_ORDER}], got {n}")
    return int(n)


def _i0_series(x):
    t = 0.25 * x * x
    term = np.ones_like(x)
    total = np.ones_like(x)
    k = 0
    while True:
        k += 1
        term = term * t / (k * k)
        total = total + term
        if np.all(term <= 1e-17 * total):
            return total


def _k01_series(x):
    """K_0 and K_1 from the ascending series (accurate for x <= 2)."""
    t = 0.25 * x * x
    log_half = np.log(0.5 * x)
    # I_0, I_1 and the digamma-weighted sums, accumulated together.
    psi_k1 = -EULER_GAMMA  # psi(k + 1)
    psi_k2 = 1.0 - EULER_GAMMA  # psi(k + 2)
    a0 = np.ones_like(x)  # t^k / (k!)^2
    a1 = np.ones_like(x)  # t^k / (k! (k+1)!)
    i0 = a0.copy()
    i1 = a1.copy()
    s0 = psi_k1 * a0
    s1 = (psi_k1 + psi_k2) * a1
    for k in range(1, 40):
        a0 = a0 * t / (k * k)
        a1 = a1 * t / (k * (k + 1))
        psi_k1 += 1.0 / k
        psi_k2 += 1.0 / (k + 1)
        i0 += a0
        i1 += a1
        s0 += psi_k1 * a0
        s1 += (psi_k1 + psi_k2) * a1
        if np.all(a0 <= 1e-18 * i0):
            break
    i1 = 0.5 * x * i1
    k0 = -log_half * i0 + s0
    k1 = 1.0 / x + log_half * i1 - 0.25 * x * s1
    return k0, k1


def _k01_scaled_trapezoid(x):
    """exp(x) * K_0(x) and exp(x) * K_1(x) for x > 2 via the trapezoidal rule."""
    x_min = float(np.min(x))
    # Strip half-width d keeps x (1 - cos d) <= 2; step h = 2 pi d / 40.
    d = min(1.0, 2.0 / np.sqrt(float(np.max(x))))
    h = 2.0 * np.pi * d / 40.0
    t_max = np.arccosh(1.0 + 45.0 / x_min) + 1.0
    t = np.arange(0.0, t_max + h, h)
    w = np.full(t.shape, h)
    w[0] = 0.5 * h
    expo = np.exp(-np.multiply.outer(x, np.cosh(t) - 1.0))
    k0 = expo @ w
    k1 = expo @ (w * np.cosh(t))
    return k0, k1


def _k01(x):
    k0 = np.empty_like(x)
    k1 = np.empty_like(x)
    small = x <= _SERIES_SWITCH
    if np.any(small):
        k0[small], k1[small] = _k01_series(x[small])
    big = ~small
    if np.any(big):
        xb = x[big]
        s0, s1 = _k01_scaled_trapezoid(xb)
        scale = np.exp(-xb)
        k0[big] = s0 * scale
        k1[big] = s1 * scale
    return k0, k1


def bessel_k(n, x):
    """Modified Bessel function of the second kind ``K_n(x)``.

    Parameters
    ----------
    n : int
        Order, ``0 <= n <= 60``.
    x : float or array_like
        Positive argument(s).

    Returns
    -------
    float or ndarray
        Same shape as ``x``.
    """
    n = _check_order(n)
    x = _as_positive_array(x)
    scalar = x.ndim == 0
    xf = np.atleast_1d(x).ravel()
    k_prev, k_cur = _k01(xf)
    if n == 0:
        out = k_prev
    else:
        for k in range(1, n):
            k_prev, k_cur = k_cur, k_prev + (2.0 * k / xf) * k_cur
        out = k_cur
    out = out.reshape(x.shape)
    return float(out) if scalar else out


def bessel_i(n, x):
    """Modified Bessel function of the first kind ``I_n(x)``.

    Raises
    ------
    OverflowError
        If ``x`` exceeds the range where ``I_n`` is representable.
    """
    n = _check_order(n)
    x = _as_positive_array(x)
    if np.any(x > OVERFLOW_X):
        raise OverflowError(f"I_n(x) overflows for x > {OVERFLOW_X}")
    scalar = x.ndim == 0
    xf = np.atleast_1d(x).ravel()
    i0 = _i0_series(xf)
    if n == 0:
        out = i0
    else:
        x_max = float(np.max(xf))
        start = 2 * (max(n, int(np.ceil(x_max))) + int(np.sqrt(40.0 * max(n, x_max)))) + 20
        b_next = np.zeros_like(xf)
        b_cur = np.full_like(xf, 1e-300)
        b_n = np.zeros_like(xf)
        for k in range(start, 0, -1):
            b_prev = b_next + (2.0 * k / xf) * b_cur
            b_next, b_cur = b_cur, b_prev
            big = np.abs(b_cur) > 1e250
            if np.any(big):
                b_cur[big] *= 1e-250
                b_next[big] *= 1e-250
                b_n[big] *= 1e-250
            if k - 1 == n:
                b_n = b_cur.copy()
        # b_cur now holds the unnormalised I_0.
        out = b_n * (i0 / b_cur)
    out = out.reshape(x.shape)
    return float(out) if scalar else out


def bessel_i_ratio_derivative(n, x):
    """``I_n'(x) / I_n(x)`` computed as ``I_{n+1}/I_n + n/x``."""
    return bessel_i(n + 1, x) / bessel_i(n, x) + n / np.asarray(x, dtype=float)


def bessel_k_ratio_derivative(n, x):
    """``K_n'(x) / K_n(x)`` computed as ``-K_{n+1}/K_n + n/x``."""
    return -bessel_k(n + 1, x) / bessel_k(n, x) + n / np.asarray(x, dtype=float)


def bessel_k_ratio_sequence(n_max, x):
    """Ratios ``K_{k+1}(x) / K_k(x)`` for ``k = 0..n_max`` (no order cap).

    Uses ``r_k = 1 / r_{k-1} + 2k / x``, the upward recurrence written for
    ratios so that large orders do not overflow.
    """
    k0, k1 = _k01(np.atleast_1d(_as_positive_array(x)).astype(float))
    x = float(x)
    ratios = np.empty(n_max + 1)
    ratios[0] = k1[0] / k0[0]
    for k in range(1, n_max + 1):
        ratios[k] = 1.0 / ratios[k - 1] + 2.0 * k / x
    return ratios


@dataclass(frozen=True)
class KernelParams:
    """Decay length ``gamma`` and spatial dimension of the Yukawa kernel."""

    gamma: float
    dim: int = 2

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")


def _radius(params, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.dim:
        raise ValueError(f"expected points of dimension {params.dim}, got shape {x.shape}")
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0.0):
        raise ValueError("Yukawa kernel is singular at the origin")
    return x, r


def yukawa_green(params: KernelParams, x):
    """Free-space Yukawa Green function evaluated at ``x`` (shape ``(..., dim)``)."""
    x, r = _radius(params, x)
    if params.dim == 2:
        return bessel_k(0, r / params.gamma) / (2.0 * np.pi)
    return np.exp(-r / params.gamma) / (4.0 * np.pi * r)


def yukawa_green_grad(params: KernelParams, x):
    """Gradient of :func:`yukawa_green`, shape ``(..., dim)``."""
    x, r = _radius(params, x)
    g = params.gamma
    if params.dim == 2:
        dgdr = -bessel_k(1, r / g) / (2.0 * np.pi * g)
    else:
        dgdr = -np.exp(-r / g) * (1.0 / g + 1.0 / r) / (4.0 * np.pi * r)
    return (np.asarray(dgdr) / r)[..., None] * x
