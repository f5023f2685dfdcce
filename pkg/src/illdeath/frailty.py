"""Frailty laws for the marginalized illness-death model.

The conditional hazards of a subject are ``omega * alpha_jk(t|Z)`` where
``omega`` is an unobserved positive frailty with mean one.  Everything the
estimation procedure needs from the frailty law is expressed through its
Laplace transform ``phi`` and two inverse functions:

* ``psi``, the inverse of ``phi``;
* ``xi``, the inverse of ``-phi'``.

Only the gamma law is shipped.  :class:`FrailtyFamily` lists the operations
another law has to supply.
"""

from __future__ import annotations

import abc
import enum
import math

import numpy as np

__all__ = [
    "DomainError",
    "FrailtyFamily",
    "GammaFrailty",
    "Transition",
    "THETA_ZERO",
    "laplace_deriv",
    "psi",
    "psi_deriv",
    "xi",
    "xi_deriv",
    "alpha_star_1k",
    "alpha_star_23",
    "posterior_expectation_F1",
    "posterior_expectation_F2",
]

# Below this value theta is treated as exactly zero (degenerate frailty).
THETA_ZERO = 1e-10


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of a frailty function."""


class Transition(enum.Enum):
    """The three transitions of the illness-death process."""

    ILLNESS = "12"
    DEATH_HEALTHY = "13"
    DEATH_AFTER_ILLNESS = "23"

    @property
    def origin(self) -> int:
        return int(self.value[0])


def _check_theta(theta):
    if not theta >= 0 or not math.isfinite(theta):
        raise DomainError(f"theta must be a finite nonnegative number, got {theta!r}")


def _check_unit(u):
    if not (0.0 < u <= 1.0):
        raise DomainError(f"argument must lie in (0, 1], got {u!r}")


class FrailtyFamily(abc.ABC):
    """Interface of a mean-one frailty law indexed by a scalar ``theta``."""

    def __init__(self, theta: float):
        _check_theta(theta)
        self.theta = float(theta)

    @abc.abstractmethod
    def laplace_deriv(self, s: float, q: int = 0) -> float:
        """``q``-th derivative of the Laplace transform at ``s``."""

    @abc.abstractmethod
    def psi(self, u: float) -> float:
        """Inverse of the Laplace transform."""

    @abc.abstractmethod
    def psi_deriv(self, u: float) -> float:
        """Derivative of :meth:`psi`."""

    @abc.abstractmethod
    def xi(self, u: float) -> float:
        """Inverse of minus the first derivative of the Laplace transform."""

    @abc.abstractmethod
    def xi_deriv(self, u: float) -> float:
        """Derivative of :meth:`xi`."""

    # The generic forms below only rely on the abstract methods.  Concrete
    # families may override them with closed forms.

    def alpha_star_1k(self, linpred_1k: float, H1dot: float) -> float:
        u = math.exp(-H1dot)
        return -self.psi_deriv(u) * u * math.exp(linpred_1k)

    def alpha_star_23(self, linpred_23: float, H23: float) -> float:
        u = math.exp(-H23)
        return -self.xi_deriv(u) * u * math.exp(linpred_23)

    def posterior_expectation(self, n_events: int, A: float) -> float:
        """``E(omega | n_events events, cumulative intensity A)``."""
        num = self.laplace_deriv(A, n_events + 1)
        den = self.laplace_deriv(A, n_events)
        return -num / den

    def posterior_expectation_F1(self, N1dot: int, A1dot: float) -> float:
        return self.posterior_expectation(N1dot, A1dot)

    def posterior_expectation_F2(self, N23: int, Adot: float) -> float:
        return self.posterior_expectation(1 + N23, Adot)


class GammaFrailty(FrailtyFamily):
    """Gamma frailty with mean one and variance ``theta``.

    ``theta = 0`` is the degenerate law ``omega == 1``; every method has an
    explicit branch for it rather than dividing by ``theta``.
    """

    @property
    def degenerate(self) -> bool:
        return self.theta < THETA_ZERO

    def laplace_deriv(self, s, q=0):
        if s < 0:
            raise DomainError(f"s must be nonnegative, got {s!r}")
        if q < 0 or int(q) != q:
            raise DomainError(f"q must be a nonnegative integer, got {q!r}")
        q = int(q)
        sign = -1.0 if q % 2 else 1.0
        theta = self.theta
        if self.degenerate:
            return sign * math.exp(-s)
        coef = 1.0
        for j in range(q):
            coef *= 1.0 + j * theta
        return sign * coef * math.exp(-(1.0 / theta + q) * math.log1p(theta * s))

    def log_abs_laplace_deriv(self, s, q=0):
        """``log |phi^(q)(s)|``, finite for any ``s >= 0``."""
        if s < 0:
            raise DomainError(f"s must be nonnegative, got {s!r}")
        theta = self.theta
        if self.degenerate:
            return -s
        logc = sum(math.log1p(j * theta) for j in range(q))
        return logc - (1.0 / theta + q) * math.log1p(theta * s)

    def psi(self, u):
        _check_unit(u)
        if self.degenerate:
            return -math.log(u)
        return math.expm1(-self.theta * math.log(u)) / self.theta

    def psi_deriv(self, u):
        _check_unit(u)
        return -(u ** (-self.theta - 1.0))

    def xi(self, u):
        _check_unit(u)
        if self.degenerate:
            return -math.log(u)
        r = self.theta / (1.0 + self.theta)
        return math.expm1(-r * math.log(u)) / self.theta

    def xi_deriv(self, u):
        _check_unit(u)
        r = self.theta / (1.0 + self.theta)
        return -(u ** (-r - 1.0)) / (1.0 + self.theta)

    def alpha_star_1k(self, linpred_1k, H1dot):
        if H1dot < 0:
            raise DomainError(f"H1dot must be nonnegative, got {H1dot!r}")
        return math.exp(linpred_1k + self.theta * H1dot)

    def alpha_star_23(self, linpred_23, H23):
        if H23 < 0:
            raise DomainError(f"H23 must be nonnegative, got {H23!r}")
        theta = self.theta
        return math.exp(linpred_23 + H23 * theta / (1.0 + theta)) / (1.0 + theta)

    def posterior_expectation_F1(self, N1dot, A1dot):
        if self.degenerate:
            return 1.0
        inv = 1.0 / self.theta
        return (inv + N1dot) / (inv + A1dot)

    def posterior_expectation_F2(self, N23, Adot):
        if self.degenerate:
            return 1.0
        inv = 1.0 / self.theta
        return (inv + 1.0 + N23) / (inv + Adot)

    def sample(self, size, rng: np.random.Generator) -> np.ndarray:
        """Draw frailties; ``theta = 0`` returns ones."""
        if self.degenerate:
            return np.ones(size)
        return rng.gamma(shape=1.0 / self.theta, scale=self.theta, size=size)

    def kendall_tau(self) -> float:
        return self.theta / (self.theta + 2.0)

    def __repr__(self):
        return f"GammaFrailty(theta={self.theta!r})"


# Functional forms, mirroring the methods of GammaFrailty.


def laplace_deriv(theta, s, q=0):
    return GammaFrailty(theta).laplace_deriv(s, q)


def psi(theta, u):
    return GammaFrailty(theta).psi(u)


def psi_deriv(theta, u):
    return GammaFrailty(theta).psi_deriv(u)


def xi(theta, u):
    return GammaFrailty(theta).xi(u)


def xi_deriv(theta, u):
    return GammaFrailty(theta).xi_deriv(u)


def alpha_star_1k(theta, linpred_1k, H1dot):
    return GammaFrailty(theta).alpha_star_1k(linpred_1k, H1dot)


def alpha_star_23(theta, linpred_23, H23):
    return GammaFrailty(theta).alpha_star_23(linpred_23, H23)


def posterior_expectation_F1(theta, N1dot, A1dot):
    return GammaFrailty(theta).posterior_expectation_F1(N1dot, A1dot)


def posterior_expectation_F2(theta, N23, Adot):
    return GammaFrailty(theta).posterior_expectation_F2(N23, Adot)
