import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special

from prefect_rbf_fmm.exceptions import KernelDomainError, UnsupportedKernelError
from prefect_rbf_fmm.kernels import (
    FourierKind,
    KernelName,
    RadialKernel,
    bessel_k,
    eval_fourier,
    eval_kernel,
    eval_kernel_derivative,
    parse_kernel_spec,
    radial_fourier_numeric,
    spectrum,
)


@pytest.mark.parametrize(
    "text,name,shape",
    [
        ("imq:c=1", KernelName.IMQ, 1.0),
        ("IMQ:c=2", KernelName.IMQ, 2.0),
        ("mq", KernelName.MQ, 1.0),
        ("gaussian:c=0.5", KernelName.GAUSSIAN, 0.5),
        ("wendland:epsilon=0.25", KernelName.WENDLAND, 0.25),
        ("tps:beta=4", KernelName.TPS, 4.0),
        ("polyharmonic", KernelName.POLYHARMONIC, 5.0),
    ],
)
def test_parse_kernel_spec(text, name, shape):
    kernel = parse_kernel_spec(text)
    assert kernel.name == name
    assert kernel.shape == shape
    assert parse_kernel_spec(kernel.spec) == kernel


@pytest.mark.parametrize(
    "text", ["cauchy:c=1", "imq:beta=1", "imq:c", "imq:c=abc", "tps:beta=3"]
)
def test_parse_kernel_spec_rejects(text):
    with pytest.raises(ValueError):
        parse_kernel_spec(text)


def test_radial_kernel_is_hashable(imq):
    assert {imq: 1}[parse_kernel_spec("imq:c=1")] == 1


def test_kernel_properties(mq, imq, gaussian):
    assert mq.kind == FourierKind.GENERALIZED
    assert mq.cpd_order == 1
    assert imq.kind == FourierKind.CLASSICAL
    assert imq.cpd_order == 0
    assert parse_kernel_spec("tps:beta=2").cpd_order == 2
    assert parse_kernel_spec("polyharmonic:beta=5").cpd_order == 3
    assert parse_kernel_spec("wendland:eps=2").compact_support == 0.5
    assert gaussian.positive_definite(2)
    assert not mq.positive_definite(1)
    assert parse_kernel_spec("wendland31").positive_definite(1)
    assert not parse_kernel_spec("wendland31").positive_definite(2)
    assert imq.singular_at_origin(1)
    assert not gaussian.singular_at_origin(1)
    assert parse_kernel_spec("tps:beta=2").decay_order(1) == 1.5
    assert gaussian.decay_order(1) is None
    assert imq.decay_order(1) == 1.0
    assert imq.decay_order(2) == 1.5


@pytest.mark.parametrize(
    "text,r,expected",
    [
        ("imq:c=1", 0.0, 1.0),
        ("imq:c=2", 0.0, 0.5),
        ("mq:c=2", 0.0, 2.0),
        ("mq:c=1", 1.0, math.sqrt(2.0)),
        ("gaussian:c=1", 2.0, math.exp(-4.0)),
        ("tps:beta=2", 1.0, 0.0),
        ("tps:beta=2", 0.0, 0.0),
        ("tps:beta=2", math.e, math.e**2),
        ("polyharmonic:beta=3", 2.0, 8.0),
        ("wendland:eps=1", 0.0, 1.0),
        ("wendland:eps=1", 1.5, 0.0),
    ],
)
def test_eval_kernel(text, r, expected):
    assert eval_kernel(parse_kernel_spec(text), r) == pytest.approx(expected)


def test_eval_kernel_keeps_shape(imq):
    values = eval_kernel(imq, np.zeros((3, 4)))
    assert values.shape == (3, 4)
    assert isinstance(eval_kernel(imq, 0.5), float)


def test_eval_kernel_rejects_negative_radius(imq):
    with pytest.raises(ValueError):
        eval_kernel(imq, -1.0)


@pytest.mark.parametrize(
    "text", ["gaussian:c=1", "mq:c=1", "imq:c=0.5", "wendland:eps=1", "wendland31"]
)
@pytest.mark.parametrize("order", [1, 2])
def test_eval_kernel_derivative_matches_differences(text, order):
    kernel = parse_kernel_spec(text)
    r, h = 0.4, 1e-4
    if order == 1:
        expected = (eval_kernel(kernel, r + h) - eval_kernel(kernel, r - h)) / (2 * h)
    else:
        expected = (
            eval_kernel(kernel, r + h)
            - 2 * eval_kernel(kernel, r)
            + eval_kernel(kernel, r - h)
        ) / h**2
    actual = eval_kernel_derivative(kernel, r, order)
    assert actual == pytest.approx(expected, rel=1e-5, abs=1e-6)


def test_eval_kernel_derivative_unsupported():
    with pytest.raises(UnsupportedKernelError):
        eval_kernel_derivative(parse_kernel_spec("tps:beta=2"), 1.0, 2)
    with pytest.raises(ValueError):
        eval_kernel_derivative(parse_kernel_spec("imq"), 1.0, 3)


@pytest.mark.parametrize("nu", [0, 0.5, 1, 1.5])
def test_bessel_k(nu):
    z = np.array([0.1, 1.0, 7.5])
    np.testing.assert_allclose(bessel_k(nu, z), special.kv(nu, z), rtol=1e-12)


def test_bessel_k_unknown_order():
    with pytest.raises(ValueError):
        bessel_k(2.5, 1.0)


class TestEvalFourier:
    def test_gaussian_unitary_table_value(self, gaussian):
        value = eval_fourier(gaussian, 0.0, d=1, unitary=True)
        assert value.value == pytest.approx(1 / math.sqrt(2))
        assert value.unitary
        assert value.kind == FourierKind.CLASSICAL

    @pytest.mark.parametrize("d", [1, 2])
    def test_conventions_differ_by_power_of_two_pi(self, imq, d):
        unitary = eval_fourier(imq, 1.3, d=d, unitary=True).value
        operative = eval_fourier(imq, 1.3, d=d).value
        assert operative == pytest.approx((2 * math.pi) ** (d / 2) * unitary)

    def test_imq_is_bessel_k0(self, imq):
        value = eval_fourier(imq, 2.0, d=1).value
        assert value == pytest.approx(2 * special.k0(2.0))

    def test_mq_is_negative_and_generalized(self, mq):
        value = eval_fourier(mq, 1.0, d=1)
        assert value.kind == FourierKind.GENERALIZED
        assert value.value == pytest.approx(-2 * special.k1(1.0))

    def test_tps_decays_like_its_order(self):
        tps = parse_kernel_spec("tps:beta=2")
        ratio = eval_fourier(tps, 2.0, d=2).value / eval_fourier(tps, 4.0, d=2).value
        assert ratio == pytest.approx(2.0**4)

    @pytest.mark.parametrize("d", [1, 2])
    def test_tps_ratio_at_ten(self, d):
        tps = parse_kernel_spec("tps:beta=2")
        ratio = eval_fourier(tps, 20.0, d=d).value / eval_fourier(tps, 10.0, d=d).value
        assert ratio == pytest.approx(2.0 ** -(2 + d), rel=1e-2)

    @pytest.mark.parametrize("text", ["gaussian:c=1", "imq:c=1"])
    @pytest.mark.parametrize("d", [1, 2])
    def test_strictly_decreasing(self, text, d):
        kernel = parse_kernel_spec(text)
        values = [
            eval_fourier(kernel, xi, d=d).value for xi in np.linspace(0.05, 49.95, 500)
        ]
        assert np.all(np.diff(values) < 0)

    @pytest.mark.parametrize("text", ["imq", "mq", "tps:beta=2"])
    def test_singular_at_origin(self, text):
        with pytest.raises(KernelDomainError):
            eval_fourier(parse_kernel_spec(text), 0.0, d=1)

    def test_wendland_has_no_closed_form(self):
        with pytest.raises(UnsupportedKernelError):
            eval_fourier(parse_kernel_spec("wendland"), 1.0, d=1)

    def test_rejects_dimension(self, gaussian):
        with pytest.raises(KernelDomainError):
            eval_fourier(gaussian, 1.0, d=3)

    def test_rejects_negative_frequency(self, gaussian):
        with pytest.raises(ValueError):
            eval_fourier(gaussian, -1.0, d=1)


class TestRadialFourierNumeric:
    @pytest.mark.parametrize("d", [1, 2])
    @pytest.mark.parametrize("xi", [0.0, 0.7, 3.0])
    def test_gaussian_matches_closed_form(self, gaussian, d, xi):
        numeric = radial_fourier_numeric(gaussian, xi, d)
        assert numeric == pytest.approx(eval_fourier(gaussian, xi, d).value, rel=1e-8)

    def test_imq_one_dimension(self, imq):
        numeric = radial_fourier_numeric(imq, 1.0, 1, tol=1e-6)
        assert numeric == pytest.approx(eval_fourier(imq, 1.0, 1).value, rel=1e-5)

    def test_wendland_integral(self):
        wendland = parse_kernel_spec("wendland:eps=1")
        assert radial_fourier_numeric(wendland, 0.0, 1) == pytest.approx(2 / 3)

    def test_generalized_kernels_are_rejected(self, mq):
        with pytest.raises(UnsupportedKernelError):
            radial_fourier_numeric(mq, 1.0, 1)

    def test_imq_diverges_at_origin(self, imq):
        with pytest.raises(KernelDomainError):
            radial_fourier_numeric(imq, 0.0, 1)

    def test_rejects_tolerance(self, gaussian):
        with pytest.raises(ValueError):
            radial_fourier_numeric(gaussian, 1.0, 1, tol=0.0)


class TestSpectrum:
    @pytest.mark.parametrize("text", ["gaussian:c=2", "imq:c=1", "mq:c=0.5"])
    @pytest.mark.parametrize("d", [1, 2])
    def test_matches_eval_fourier(self, text, d):
        kernel = parse_kernel_spec(text)
        xi = np.array([0.25, 1.0, 4.0])
        expected = [eval_fourier(kernel, value, d).value for value in xi]
        np.testing.assert_allclose(spectrum(kernel, xi, d), expected, rtol=1e-12)

    def test_wendland_is_positive(self):
        wendland = parse_kernel_spec("wendland:eps=1")
        values = spectrum(wendland, np.array([0.0, 1.0, 5.0, 10.0]), 1)
        assert values[0] == pytest.approx(2 / 3)
        assert np.all(values > 0)

    def test_wendland_table_agrees_with_direct_quadrature(self):
        wendland = parse_kernel_spec("wendland:eps=1")
        xi = np.linspace(0.0, 20.0, 5000)
        values = spectrum(wendland, xi, 1)
        direct = spectrum(wendland, xi[::500], 1)
        np.testing.assert_allclose(values[::500], direct, rtol=1e-6, atol=1e-10)

    def test_singular_origin_is_infinite(self, imq):
        assert np.isinf(spectrum(imq, 0.0, 1))

    def test_scalar_in_scalar_out(self, gaussian):
        assert isinstance(spectrum(gaussian, 1.0, 1), float)


@given(
    r=st.floats(min_value=0.0, max_value=1e3),
    c=st.floats(min_value=0.05, max_value=20.0),
)
def test_imq_is_bounded_by_its_value_at_zero(r, c):
    kernel = RadialKernel(name="imq", shape=c)
    value = eval_kernel(kernel, r)
    assert 0.0 < value <= 1.0 / c + 1e-15


@given(
    xi=st.floats(min_value=1e-3, max_value=30.0),
    c=st.floats(min_value=0.1, max_value=10.0),
)
def test_definite_kernels_have_positive_spectra(xi, c):
    for name in ("gaussian", "imq"):
        value = spectrum(RadialKernel(name=name, shape=c), xi, 1)
        assert value >= 0.0
