"""Sigmoidal profiles S, the phase-field weight omega and its gradient magnitude."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import AxiomViolation, ConfigError
from .geometry import SharpDomain, check_eps


@dataclass(frozen=True)
class Profile:
    """A regularised sign function.

    ``s`` and ``s_prime`` only need to be valid on (-1, 1); the clamp to
    +-1 outside is applied by :func:`s_eval`. ``alpha``, ``zeta1`` and
    ``zeta2`` are the power-type constants bounding ``(1 + S(t-1))/2`` by
    ``zeta * t**alpha`` on (0, 2).
    """

    name: str
    s: Callable = field(repr=False)
    s_prime: Callable = field(repr=False)
    alpha: float
    zeta1: float
    zeta2: float


LINEAR = Profile("linear", lambda t: t, lambda t: np.ones_like(t), 1.0, 0.5, 0.5)
CUBIC = Profile("cubic", lambda t: 0.5 * (3.0 * t - t**3), lambda t: 1.5 * (1.0 - t**2),
                2.0, 0.25, 0.75)
QUINTIC = Profile(
    "quintic",
    lambda t: 15.0 * t / 8.0 - 5.0 * t**3 / 4.0 + 3.0 * t**5 / 8.0,
    lambda t: 15.0 / 8.0 - 15.0 * t**2 / 4.0 + 15.0 * t**4 / 8.0,
    3.0, 0.125, 2.5,
)

PROFILES = {p.name: p for p in (LINEAR, CUBIC, QUINTIC)}


def get_profile(name: str) -> Profile:
    try:
        return PROFILES[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}",
                          key="phasefield.profile") from None


def custom_profile(s, s_prime, alpha, zeta1, zeta2, name="custom") -> Profile:
    return Profile(name, s, s_prime, float(alpha), float(zeta1), float(zeta2))


def s_eval(profile: Profile, t):
    t = np.asarray(t, dtype=float)
    inner = np.abs(t) < 1.0
    out = np.where(inner, profile.s(np.where(inner, t, 0.0)), np.sign(t))
    return out if out.ndim else float(out)


def s_derivative(profile: Profile, t):
    """S'(t) on (-1, 1); zero for |t| >= 1 (one-sided convention at the kink)."""
    t = np.asarray(t, dtype=float)
    inner = np.abs(t) < 1.0
    out = np.where(inner, profile.s_prime(np.where(inner, t, 0.0)), 0.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class PhaseField:
    profile: Profile
    eps: float
    domain: SharpDomain

    def __post_init__(self):
        check_eps(self.domain, self.eps)

    def omega_from_distance(self, d):
        return 0.5 * (1.0 + s_eval(self.profile, -np.asarray(d) / self.eps))

    def grad_magnitude_from_distance(self, d):
        # |grad d_D| = 1 off the medial axis, so only the chain-rule factor remains
        return s_derivative(self.profile, -np.asarray(d) / self.eps) / (2.0 * self.eps)

    def omega(self, x, y):
        return self.omega_from_distance(self.domain.distance(x, y))

    def grad_omega_magnitude(self, x, y):
        return self.grad_magnitude_from_distance(self.domain.distance(x, y))


def omega(pf: PhaseField, p):
    return pf.omega(np.asarray(p[0], dtype=float), np.asarray(p[1], dtype=float))


def grad_omega_magnitude(pf: PhaseField, p):
    return pf.grad_omega_magnitude(np.asarray(p[0], dtype=float), np.asarray(p[1], dtype=float))


@dataclass
class ProfileReport:
    profile: str
    passed: dict[str, bool]
    witness: dict[str, float | None]

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def raise_if_failed(self):
        for axiom, good in self.passed.items():
            if not good:
                raise AxiomViolation(axiom, self.witness[axiom])


def verify_profile(profile: Profile, samples: int = 1000, strict: bool = False,
                   tol: float = 1e-12) -> ProfileReport:
    """Check the sigmoid axioms on a sample grid.

    The checks are: oddness, monotonicity with S' > 0 inside (-1, 1)
    ("S1"), the power-type bounds with the profile's own (alpha, zeta1,
    zeta2) ("S2"), and S' nonincreasing on [0, 1) ("S3"). With
    ``strict=True`` the first failure raises :class:`AxiomViolation`.
    """
    if samples < 100:
        raise ConfigError("verify_profile needs at least 100 samples")
    t = np.linspace(0.0, 2.0, samples + 2)[1:-1]
    passed, witness = {}, {}

    def record(axiom, bad):
        idx = np.flatnonzero(bad)
        passed[axiom] = idx.size == 0
        witness[axiom] = float(t_of[axiom][idx[0]]) if idx.size else None

    t_of = {}

    t_of["odd"] = t
    record("odd", np.abs(s_eval(profile, t) + s_eval(profile, -t)) > tol)

    sym = np.concatenate([-t[::-1], [0.0], t])
    vals = s_eval(profile, sym)
    slope = s_derivative(profile, sym)
    inner = np.abs(sym) < 1.0
    t_of["S1"] = sym
    bad = np.zeros(sym.size, dtype=bool)
    bad[1:] |= np.diff(vals) < -tol
    bad |= inner & ~(slope > 0)
    bad |= ~inner & (np.abs(vals - np.sign(sym)) > tol)
    record("S1", bad)

    lhs = 0.5 * (1.0 + s_eval(profile, t - 1.0))
    scale = np.maximum(lhs, 1e-300)
    t_of["S2"] = t
    record("S2", (profile.zeta1 * t**profile.alpha > lhs + tol * scale)
           | (lhs > profile.zeta2 * t**profile.alpha + tol * scale))

    u = np.concatenate([[0.0], t[t < 1.0]])
    d1 = s_derivative(profile, u)
    t_of["S3"] = u
    bad = np.zeros(u.size, dtype=bool)
    bad[1:] = np.diff(d1) > tol * np.maximum(1.0, np.abs(d1[1:]))
    record("S3", bad)

    report = ProfileReport(profile.name, passed, witness)
    if strict:
        report.raise_if_failed()
    return report
