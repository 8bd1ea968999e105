import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtf_osm.specfun import (
    KernelParams,
    bessel_i,
    bessel_i_ratio_derivative,
    bessel_k,
    bessel_k_ratio_derivative,
    bessel_k_ratio_sequence,
    yukawa_green,
    yukawa_green_grad,
)

# 20-digit values from an arbitrary-precision evaluation.
K_TABLE = [
    (0, 0.01, 4.7212447301610949443),
    (0, 0.5, 0.92441907122766586178),
    (0, 2.0, 0.11389387274953343565),
    (0, 2.5, 0.062347553200366186029),
    (0, 10.0, 1.7780062316167651811e-05),
    (0, 50.0, 3.4101677497894955139e-23),
    (1, 0.1, 9.8538447808706055744),
    (1, 3.0, 0.040156431128194184377),
    (1, 30.0, 2.1677320018915494249e-14),
    (5, 1.5, 44.067781159301076526),
    (5, 8.0, 0.00061935801098512511668),
    (20, 7.0, 424108.10482459436178),
    (60, 40.0, 0.096492787492223799808),
]
I_TABLE = [
    (0, 0.01, 1.000025000156250434),
    (0, 3.0, 4.8807925858650240856),
    (0, 40.0, 14894774793419899.924),
    (1, 0.5, 0.25789430539089631636),
    (1, 12.0, 18141.348781638831601),
    (3, 2.0, 0.21273995923985265527),
    (10, 5.0, 0.0045800444191760512612),
    (30, 25.0, 337.2072686049406518),
    (60, 100.0, 2.4691003858200678503e34),
    (2, 600.0, 6.125834799453288497e258),
]


@pytest.mark.parametrize("n,x,ref", K_TABLE)
def test_bessel_k_reference_values(n, x, ref):
    assert bessel_k(n, x) == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("n,x,ref", I_TABLE)
def test_bessel_i_reference_values(n, x, ref):
    assert bessel_i(n, x) == pytest.approx(ref, rel=1e-10)


def test_vectorised_matches_scalar():
    x = np.array([0.3, 1.9, 2.1, 7.5])
    np.testing.assert_allclose(bessel_k(2, x), [bessel_k(2, v) for v in x], rtol=1e-14)
    np.testing.assert_allclose(bessel_i(4, x), [bessel_i(4, v) for v in x], rtol=1e-14)
    assert bessel_k(1, x.reshape(2, 2)).shape == (2, 2)


@pytest.mark.parametrize("bad", [0.0, -1.0, np.nan, np.inf])
def test_nonpositive_argument_rejected(bad):
    with pytest.raises(ValueError):
        bessel_k(0, bad)
    with pytest.raises(ValueError):
        bessel_i(0, bad)


@pytest.mark.parametrize("order", [-1, 61, 1.5])
def test_bad_order_rejected(order):
    with pytest.raises(ValueError):
        bessel_k(order, 1.0)


def test_i_overflow_reported():
    with pytest.raises(OverflowError):
        bessel_i(0, 800.0)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(0, 40), x=st.floats(0.05, 80.0))
def test_wronskian(n, x):
    # I_n K_{n+1} + I_{n+1} K_n = 1/x
    w = bessel_i(n, x) * bessel_k(n + 1, x) + bessel_i(n + 1, x) * bessel_k(n, x)
    assert w * x == pytest.approx(1.0, rel=1e-10)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 30), x=st.floats(0.1, 50.0))
def test_recurrences(n, x):
    assert bessel_k(n + 1, x) == pytest.approx(bessel_k(n - 1, x) + 2 * n / x * bessel_k(n, x), rel=1e-11)
    assert bessel_i(n - 1, x) - bessel_i(n + 1, x) == pytest.approx(2 * n / x * bessel_i(n, x), rel=1e-9)


def test_ratio_derivatives_match_finite_differences():
    for n in (0, 1, 4):
        x, d = 1.7, 1e-5
        fd_i = (bessel_i(n, x + d) - bessel_i(n, x - d)) / (2 * d) / bessel_i(n, x)
        fd_k = (bessel_k(n, x + d) - bessel_k(n, x - d)) / (2 * d) / bessel_k(n, x)
        assert bessel_i_ratio_derivative(n, x) == pytest.approx(fd_i, rel=1e-8)
        assert bessel_k_ratio_derivative(n, x) == pytest.approx(fd_k, rel=1e-8)


def test_k_ratio_sequence_beyond_order_cap():
    x = 3.3
    r = bessel_k_ratio_sequence(80, x)
    for k in range(59):
        assert r[k] == pytest.approx(bessel_k(k + 1, x) / bessel_k(k, x), rel=1e-12)
    assert np.all(np.isfinite(r)) and r[-1] > r[-2]


def test_kernel_params_validation():
    with pytest.raises(ValueError):
        KernelParams(0.0)
    with pytest.raises(ValueError):
        KernelParams(1.0, dim=4)


def test_green_2d_solves_yukawa():
    # -Laplace G + G / gamma^2 = 0 away from the origin (five-point stencil).
    p = KernelParams(0.6)
    x0, d = np.array([0.7, -0.4]), 1e-3
    shifts = np.array([[d, 0], [-d, 0], [0, d], [0, -d]])
    lap = (yukawa_green(p, x0 + shifts).sum() - 4 * yukawa_green(p, x0)) / d**2
    assert -lap + yukawa_green(p, x0) / p.gamma**2 == pytest.approx(0.0, abs=1e-6)


def test_green_2d_flux_through_small_circle():
    # The outward flux of grad G through a small circle tends to -1.
    p = KernelParams(1.0)
    r = 1e-4
    t = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    pts = r * np.column_stack([np.cos(t), np.sin(t)])
    flux = np.sum(np.einsum("qd,qd->q", yukawa_green_grad(p, pts), pts / r)) * (2 * np.pi * r / 64)
    assert flux == pytest.approx(-1.0, rel=1e-6)


def test_green_3d_and_gradient():
    p = KernelParams(0.5, dim=3)
    x = np.array([0.3, 0.4, 1.2])
    r = np.linalg.norm(x)
    assert yukawa_green(p, x) == pytest.approx(np.exp(-r / 0.5) / (4 * np.pi * r), rel=1e-14)
    d = 1e-6
    fd = [(yukawa_green(p, x + d * e) - yukawa_green(p, x - d * e)) / (2 * d) for e in np.eye(3)]
    np.testing.assert_allclose(yukawa_green_grad(p, x), fd, rtol=1e-7)


def test_green_2d_gradient_finite_difference():
    p = KernelParams(0.8)
    x = np.array([[0.5, 0.2], [-1.3, 2.0]])
    d = 1e-6
    for k, e in enumerate(np.eye(2)):
        fd = (yukawa_green(p, x + d * e) - yukawa_green(p, x - d * e)) / (2 * d)
        np.testing.assert_allclose(yukawa_green_grad(p, x)[:, k], fd, rtol=1e-7)


def test_green_errors():
    with pytest.raises(ValueError):
        yukawa_green(KernelParams(1.0), np.zeros(2))
    with pytest.raises(ValueError):
        yukawa_green(KernelParams(1.0), np.ones(3))
