"""Duffing oscillator ``q'' = -alpha q - beta q^3`` in three-variable Poisson form.

The state is ``x = (v, sigma_hor, sigma_ver)`` with
``H = Diag[m, 2/k_hor, 2/k_ver]`` and
``L(q) = [[2], [2 q / L]]``, which is the sliding mass between two pairs of
springs after truncation of the vertical spring geometry to second order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .poisson import AffineCoupling, BlockMass, ConfigurationError, PoissonModel, PoissonState
from .solvers import BlockDiagonal

AGM_TOL = 1e-15


class EllipticDomainError(ValueError):
    pass


@dataclass(frozen=True)
class DuffingParams:
    alpha: float = 10.0
    beta: float = 5.0
    q0: float = 10.0
    mass: float = 1.0
    length: float = 1.0
    dt_base: float = 0.278e-3
    n_periods: float = 100.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0 and self.q0 != 0 and self.mass > 0 and self.length > 0):
            raise ConfigurationError(f"invalid Duffing parameters: {self}")

    @property
    def k_hor(self) -> float:
        return 0.5 * self.alpha * self.mass

    @property
    def k_ver(self) -> float:
        return self.beta * self.mass * self.length**2

    @property
    def omega0(self) -> float:
        return math.sqrt(self.alpha + self.beta * self.q0**2)

    @property
    def elliptic_parameter(self) -> float:
        return self.beta * self.q0**2 / (2.0 * (self.alpha + self.beta * self.q0**2))

    @property
    def period(self) -> float:
        """Nominal period ``2 pi / omega0`` used to size the run."""
        return 2.0 * math.pi / self.omega0

    @property
    def true_period(self) -> float:
        return 4.0 * ellipk(self.elliptic_parameter) / self.omega0

    @property
    def t_end(self) -> float:
        return self.n_periods * self.period

    def initial_energy(self) -> float:
        return self.mass * (0.5 * self.alpha * self.q0**2 + 0.25 * self.beta * self.q0**4)


def _agm_sequence(m: float):
    a, b, c = 1.0, math.sqrt(1.0 - m), math.sqrt(m)
    seq_a, seq_c = [a], [c]
    for _ in range(64):
        if abs(c) <= AGM_TOL:
            return seq_a, seq_c
        a, b, c = 0.5 * (a + b), math.sqrt(a * b), 0.5 * (a - b)
        seq_a.append(a)
        seq_c.append(c)
    raise ArithmeticError(f"AGM did not converge for m={m}")


def ellipk(m: float) -> float:
    """Complete elliptic integral of the first kind, ``K(m) = pi / (2 AGM(1, sqrt(1-m)))``."""
    if not 0.0 <= m < 1.0:
        raise EllipticDomainError(f"parameter m={m} outside [0, 1)")
    seq_a, _ = _agm_sequence(m)
    return math.pi / (2.0 * seq_a[-1])


def jacobi_elliptic(u, m: float):
    """Jacobi ``(sn, cn, dn)`` of argument ``u`` and parameter ``m`` by descending Landen/AGM.

    Vectorized over ``u``.  The argument is first reduced modulo the real
    period ``4 K(m)``.
    """
    if not 0.0 <= m < 1.0:
        raise EllipticDomainError(f"parameter m={m} outside [0, 1)")
    u = np.asarray(u, dtype=float)
    if m == 0.0:
        return np.sin(u), np.cos(u), np.ones_like(u)
    seq_a, seq_c = _agm_sequence(m)
    n = len(seq_a) - 1
    period = 2.0 * math.pi / seq_a[-1]  # 4 K(m)
    u = u - period * np.round(u / period)
    phi = (2.0**n) * seq_a[-1] * u
    for k in range(n, 0, -1):
        phi = 0.5 * (phi + np.arcsin(seq_c[k] / seq_a[k] * np.sin(phi)))
    sn, cn = np.sin(phi), np.cos(phi)
    dn = np.sqrt(1.0 - m * sn * sn)
    return sn, cn, dn


def duffing_exact(params: DuffingParams, t):
    """Closed-form ``(q(t), v(t))`` for ``q(0) = q0``, ``v(0) = 0``."""
    t = np.asarray(t, dtype=float)
    w0 = params.omega0
    sn, cn, dn = jacobi_elliptic(w0 * t, params.elliptic_parameter)
    return params.q0 * cn, -w0 * params.q0 * sn * dn


class DuffingModel(PoissonModel):
    name = "duffing"

    def __init__(self, params: DuffingParams):
        self.params = params
        p = params
        self.mass = BlockMass(
            m_rho=np.array([[p.mass]]),
            m_c=BlockDiagonal([np.array([2.0 / p.k_hor, 2.0 / p.k_ver]).reshape(2, 1, 1)]),
        )
        self.coupling = AffineCoupling.from_entries(
            (2, 1),
            const=([0], [0], [2.0]),
            linear=([1], [0], [0], [2.0 / p.length]),
            n_q=1,
            dense=True,
        )

    def strain(self, q):
        q = float(np.asarray(q).reshape(-1)[0])
        return np.array([2.0 * q, q * q / self.params.length])

    def initial_state(self) -> PoissonState:
        q = np.array([self.params.q0])
        return PoissonState(q, np.zeros(1), self.stress_from_q(q))


def duffing_system(params: DuffingParams | None = None) -> DuffingModel:
    return DuffingModel(params or DuffingParams())
