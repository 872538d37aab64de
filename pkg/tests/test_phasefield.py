import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from ddlab.errors import AxiomViolation, ConfigError
from ddlab.geometry import Disk, Rectangle
from ddlab.phasefield import (CUBIC, LINEAR, PROFILES, QUINTIC, PhaseField, custom_profile,
                              get_profile, grad_omega_magnitude, omega, s_derivative, s_eval,
                              verify_profile)

DISK = Disk((0.0, 0.0), math.sqrt(0.5))

# (alpha, zeta1, zeta2) for the three built-in profiles
CONSTANTS = {"linear": (1, 0.5, 0.5), "cubic": (2, 0.25, 0.75), "quintic": (3, 0.125, 2.5)}


@pytest.mark.parametrize("name", sorted(PROFILES))
def test_builtin_constants(name):
    p = get_profile(name)
    assert (p.alpha, p.zeta1, p.zeta2) == CONSTANTS[name]


@pytest.mark.parametrize("profile", [LINEAR, CUBIC, QUINTIC])
def test_profile_endpoints_and_clamp(profile):
    assert s_eval(profile, 0.0) == 0.0
    assert s_eval(profile, 1.0) == 1.0
    assert s_eval(profile, -1.0) == -1.0
    np.testing.assert_array_equal(s_eval(profile, np.array([-5.0, 3.0])), [-1.0, 1.0])
    np.testing.assert_array_equal(s_derivative(profile, np.array([-5.0, 1.5])), [0.0, 0.0])
    # continuity at the clamp
    assert s_eval(profile, 1 - 1e-12) == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("profile", [LINEAR, CUBIC, QUINTIC])
def test_derivative_matches_differences(profile):
    t = np.linspace(-0.95, 0.95, 39)
    h = 1e-6
    fd = (s_eval(profile, t + h) - s_eval(profile, t - h)) / (2 * h)
    np.testing.assert_allclose(s_derivative(profile, t), fd, atol=1e-8)


@pytest.mark.parametrize("profile", [LINEAR, CUBIC, QUINTIC])
def test_builtins_satisfy_axioms(profile):
    report = verify_profile(profile)
    assert report.ok, report.passed


def test_s3_violation_is_reported():
    # S' = (1 + 3 t^2)/2 grows on (0, 1)
    bad = custom_profile(lambda t: 0.5 * (t + t**3), lambda t: 0.5 * (1 + 3 * t**2), 1.0, 0.25, 1.0)
    report = verify_profile(bad)
    assert report.passed["S1"] and report.passed["odd"]
    assert not report.passed["S3"]
    with pytest.raises(AxiomViolation) as info:
        verify_profile(bad, strict=True)
    assert info.value.axiom == "S3"


def test_wrong_power_constants_fail_s2():
    wrong = custom_profile(CUBIC.s, CUBIC.s_prime, 1.0, 0.5, 0.5)
    assert not verify_profile(wrong).passed["S2"]


def test_even_profile_fails_oddness():
    even = custom_profile(lambda t: t * t, lambda t: 2 * t, 1.0, 0.5, 0.5)
    assert not verify_profile(even).passed["odd"]


def test_too_few_samples():
    with pytest.raises(ConfigError):
        verify_profile(LINEAR, samples=10)


def test_unknown_profile_names_key():
    with pytest.raises(ConfigError) as info:
        get_profile("septic")
    assert info.value.key == "phasefield.profile"


@pytest.mark.parametrize("profile", [LINEAR, CUBIC, QUINTIC])
def test_omega_levels(profile):
    pf = PhaseField(profile, 0.25, DISK)
    assert omega(pf, (0.0, 0.0)) == 1.0
    assert omega(pf, (2.0, 0.0)) == 0.0
    r = math.sqrt(0.5)
    assert omega(pf, (r, 0.0)) == pytest.approx(0.5)
    assert grad_omega_magnitude(pf, (r, 0.0)) == pytest.approx(s_derivative(profile, 0.0) / 0.5)
    assert grad_omega_magnitude(pf, (0.0, 0.0)) == 0.0


@pytest.mark.parametrize("profile", [LINEAR, CUBIC, QUINTIC])
@given(eps=st.floats(0.01, 0.5))
@settings(max_examples=20, deadline=None)
def test_surface_density_integrates_to_one_across_the_band(profile, eps):
    pf = PhaseField(profile, eps, Rectangle((0.0, 0.0), (1.0, 1.0)))
    val, _ = quad(lambda d: float(pf.grad_magnitude_from_distance(np.array(d))), -eps, eps)
    assert val == pytest.approx(1.0, rel=1e-10)


@pytest.mark.parametrize("profile", [LINEAR, CUBIC, QUINTIC])
@given(d=st.floats(-1.0, 1.0))
@settings(max_examples=40, deadline=None)
def test_omega_symmetry(profile, d):
    pf = PhaseField(profile, 0.3, DISK)
    a = pf.omega_from_distance(np.array(d))
    b = pf.omega_from_distance(np.array(-d))
    assert a + b == pytest.approx(1.0, abs=1e-14)
    assert 0.0 <= a <= 1.0


def test_phasefield_checks_eps():
    with pytest.raises(ConfigError):
        PhaseField(LINEAR, 0.8, DISK)
