"""Energy, BD entropy, Bohm force and the inequality functionals.

All integrals are nodal quadratures on the collocation grid.  Singular
compositions of the density (square root, logarithm, negative powers) are
evaluated pointwise on ``max(rho, floor)`` and then re-projected onto the
dealiased band before being differentiated.

Coefficients of the energy and dissipation terms are the ones for which the
semi-discrete energy identity of the regularized system closes exactly:
with the momentum forcing ``kappa rho grad(lap sqrt(rho)/sqrt(rho))`` the
quantum energy is ``kappa int |grad sqrt(rho)|^2``, the cold pressure
``-eta grad rho^-10`` carries the potential ``eta/11 rho^-10``, and the
viscous stress ``2 rho D(u)`` dissipates ``2 int rho |D(u)|^2``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np

from .spectral import (
    PeriodicGrid,
    ScalarField,
    VectorField,
    _dealias,
    _div,
    _fft,
    _grad,
    _hessian,
    _ifft,
    _integral,
    _lap,
)

COLD_EXPONENT = 10  # cold pressure rho^-10
HYPER_ORDER = 9  # delta rho grad lap^9 rho
HYPER_FILTER = 1e-13  # relative size below which modes count as round-off

DISSIPATION_NAMES = (
    "viscous",
    "hyper_velocity",
    "hyper_density",
    "pressure",
    "cold",
    "drag_linear",
    "drag_cubic",
    "quantum",
)

BD_DISSIPATION_NAMES = (
    "pressure",
    "rotation",
    "quantum",
    "cold",
    "hyper_density",
    "hyper_velocity",
    "parabolic",
)


class NonPositiveDensityError(ValueError):
    """Raised when an operation needs rho > 0 and does not get it."""


@dataclass(frozen=True)
class ModelParams:
    gamma: float = 1.5
    kappa: float = 0.0
    r0: float = 0.0
    r1: float = 0.0
    epsilon: float = 0.0
    mu: float = 0.0
    eta: float = 0.0
    delta: float = 0.0
    floor_rho: float = 1e-8

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
        if not self.gamma > 1:
            raise ValueError(f"gamma must satisfy gamma > 1, got {self.gamma}")
        for name in ("kappa", "r0", "r1", "epsilon", "mu", "eta", "delta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if not self.floor_rho > 0:
            raise ValueError(f"floor_rho must be positive, got {self.floor_rho}")

    def replace(self, **changes) -> "ModelParams":
        return ModelParams(**{**asdict(self), **changes})


@dataclass(frozen=True)
class EnergyBreakdown:
    kinetic: float
    pressure: float
    cold: float
    quantum: float
    hyper: float

    @property
    def total(self) -> float:
        return self.kinetic + self.pressure + self.cold + self.quantum + self.hyper

    def as_dict(self) -> dict[str, float]:
        return {**asdict(self), "total": self.total}


@dataclass(frozen=True)
class BDEntropyBreakdown:
    effective_kinetic: float
    hyper: float
    quantum: float
    pressure: float
    cold: float
    log_term: float
    dissipations: dict[str, float] = field(default_factory=dict)
    remainders: dict[str, float] = field(default_factory=dict)

    @property
    def total(self) -> float:
        return (
            self.effective_kinetic
            + self.hyper
            + self.quantum
            + self.pressure
            + self.cold
            + self.log_term
        )

    def as_dict(self) -> dict:
        d = asdict(self)
        d["total"] = self.total
        return d


# --------------------------------------------------------------------------
# shared evaluation of density-derived quantities


def _require_positive(rho: np.ndarray) -> None:
    m = float(rho.min())
    if not m > 0:
        raise NonPositiveDensityError(f"density must be positive, min is {m:.6g}")


class DensityTerms:
    """Lazily evaluated density composites on one grid.

    ``floored`` reports whether ``floor`` had to be applied anywhere.
    """

    def __init__(self, grid: PeriodicGrid, rho: np.ndarray, floor: float = 1e-300):
        self.grid = grid
        self.rho = rho
        self.floor = floor
        self.floored = bool((rho < floor).any())
        self._safe = np.maximum(rho, floor) if self.floored else rho

    @cached_property
    def sqrt(self) -> np.ndarray:
        return _dealias(self.grid, np.sqrt(self._safe))

    @cached_property
    def lap_sqrt(self) -> np.ndarray:
        return _lap(self.grid, self.sqrt)

    @cached_property
    def grad_sqrt(self) -> np.ndarray:
        return _grad(self.grid, self.sqrt)

    @cached_property
    def grad(self) -> np.ndarray:
        return _grad(self.grid, self.rho)

    @cached_property
    def lap(self) -> np.ndarray:
        return _lap(self.grid, self.rho)

    @cached_property
    def log(self) -> np.ndarray:
        return _dealias(self.grid, np.log(self._safe))

    @cached_property
    def hess_log(self) -> np.ndarray:
        return _hessian(self.grid, self.log)

    @cached_property
    def bohm(self) -> np.ndarray:
        """Bohm potential lap(sqrt rho) / sqrt rho."""
        return _dealias(self.grid, self.lap_sqrt / self.sqrt)

    def power(self, p: float) -> np.ndarray:
        return _dealias(self.grid, self._safe**p)

    @cached_property
    def _hyper_coeffs(self) -> np.ndarray:
        """rfft of rho with modes outside the band or at round-off level zeroed.

        Up to 20 derivatives act on these coefficients, so noise near machine
        precision would otherwise swamp the delta terms.
        """
        rh = _fft(self.grid, self.rho)
        keep = self.grid.rmask & (np.abs(rh) > HYPER_FILTER * np.abs(rh).max())
        return np.where(keep, rh, 0.0)

    @cached_property
    def hyper_force(self) -> np.ndarray:
        """grad lap^9 rho of the filtered density."""
        g = self.grid
        rh = self._hyper_coeffs * (-g.rk2) ** HYPER_ORDER
        return np.stack([_ifft(g, rh * g.rderiv(ax, 1)) for ax in range(g.dim)])

    def weighted_hyper_norm(self, order: int) -> float:
        """Squared L2 norm of all order-th derivatives of the filtered density."""
        g = self.grid
        rh = self._hyper_coeffs / g.size
        # rfft layout: interior modes of the halved axis stand for two
        weight = np.full(g.rshape, 2.0)
        weight[..., 0] = 1.0
        if g.n % 2 == 0:
            weight[..., -1] = 1.0
        return float(np.sum(weight * g.rk2**order * np.abs(rh) ** 2) * g.volume)


class VelocityTerms:
    def __init__(self, grid: PeriodicGrid, u: np.ndarray):
        self.grid = grid
        self.u = u

    @cached_property
    def jac(self) -> np.ndarray:
        """jac[a, b] = d_b u_a."""
        return np.stack([_grad(self.grid, c) for c in self.u])

    @cached_property
    def sym(self) -> np.ndarray:
        return 0.5 * (self.jac + np.swapaxes(self.jac, 0, 1))

    @cached_property
    def div(self) -> np.ndarray:
        return np.einsum("aa...->...", self.jac)

    @cached_property
    def lap(self) -> np.ndarray:
        return np.stack([_lap(self.grid, c) for c in self.u])

    @cached_property
    def speed2(self) -> np.ndarray:
        return np.sum(self.u**2, axis=0)


def _density(rho: ScalarField, floor: float = 1e-300, *, strict: bool = True) -> DensityTerms:
    if strict:
        _require_positive(rho.values)
    return DensityTerms(rho.grid, rho.values, floor)


def _vec(u: VectorField, grid: PeriodicGrid) -> np.ndarray:
    if u.grid != grid:
        raise ValueError("density and velocity live on different grids")
    return u.array()


# --------------------------------------------------------------------------
# pointwise composites and the Bohm term


def sqrt_density(rho: ScalarField, floor: float) -> tuple[ScalarField, bool]:
    """Pointwise sqrt(max(rho, floor)) and whether the floor was active."""
    if not floor > 0:
        raise ValueError(f"floor must be positive, got {floor}")
    floored = bool((rho.values < floor).any())
    return ScalarField(rho.grid, np.sqrt(np.maximum(rho.values, floor))), floored


def bohm_potential(rho: ScalarField) -> ScalarField:
    return ScalarField(rho.grid, _density(rho).bohm)


def bohm_force_strong(rho: ScalarField, kappa: float) -> VectorField:
    """kappa rho grad(lap sqrt(rho) / sqrt(rho))."""
    d = _density(rho)
    g = rho.grid
    if kappa == 0:
        return VectorField.zeros(g)
    grad_b = _grad(g, d.bohm)
    return VectorField.from_array(g, [kappa * _dealias(g, rho.values * c) for c in grad_b])


def bohm_force_divform(rho: ScalarField, kappa: float) -> VectorField:
    """(kappa / 2) div(rho hess(log rho)), equal to the strong form."""
    d = _density(rho)
    g = rho.grid
    if kappa == 0:
        return VectorField.zeros(g)
    flux = np.stack([[_dealias(g, rho.values * h) for h in row] for row in d.hess_log])
    return VectorField.from_array(g, [0.5 * kappa * _div(g, flux[a]) for a in range(g.dim)])


# --------------------------------------------------------------------------
# energy and dissipation


def _energy(d: DensityTerms, v: VelocityTerms, p: ModelParams) -> EnergyBreakdown:
    g = d.grid
    rho = d.rho
    kinetic = 0.5 * _integral(g, rho * v.speed2)
    pressure = _integral(g, d.power(p.gamma)) / (p.gamma - 1.0)
    cold = 0.0
    if p.eta:
        cold = p.eta / (COLD_EXPONENT + 1) * _integral(g, d.power(-COLD_EXPONENT))
    quantum = 0.0
    if p.kappa:
        quantum = p.kappa * _integral(g, np.sum(d.grad_sqrt**2, axis=0))
    hyper = 0.0
    if p.delta:
        hyper = 0.5 * p.delta * d.weighted_hyper_norm(HYPER_ORDER)
    return EnergyBreakdown(kinetic, pressure, cold, quantum, hyper)


def energy(rho: ScalarField, u: VectorField, p: ModelParams) -> EnergyBreakdown:
    d = _density(rho, p.floor_rho)
    return _energy(d, VelocityTerms(rho.grid, _vec(u, rho.grid)), p)


def _dissipation(d: DensityTerms, v: VelocityTerms, p: ModelParams) -> dict[str, float]:
    g = d.grid
    rho = d.rho
    out = dict.fromkeys(DISSIPATION_NAMES, 0.0)
    out["viscous"] = 2.0 * _integral(g, rho * np.sum(v.sym**2, axis=(0, 1)))
    if p.mu:
        out["hyper_velocity"] = p.mu * _integral(g, np.sum(v.lap**2, axis=0))
    if p.epsilon and p.delta:
        out["hyper_density"] = p.epsilon * p.delta * d.weighted_hyper_norm(10)
    if p.epsilon:
        gp = _grad(g, d.power(0.5 * p.gamma))
        out["pressure"] = 4.0 * p.epsilon / p.gamma * _integral(g, np.sum(gp**2, axis=0))
    if p.epsilon and p.eta:
        gc = _grad(g, d.power(-COLD_EXPONENT / 2))
        out["cold"] = 0.4 * p.epsilon * p.eta * _integral(g, np.sum(gc**2, axis=0))
    if p.r0:
        out["drag_linear"] = p.r0 * _integral(g, v.speed2)
    if p.r1:
        out["drag_cubic"] = p.r1 * _integral(g, rho * v.speed2**2)
    if p.kappa and p.epsilon:
        out["quantum"] = 0.5 * p.kappa * p.epsilon * _hess_log_norm(d)
    return out


def dissipation_rates(rho: ScalarField, u: VectorField, p: ModelParams) -> dict[str, float]:
    """Instantaneous dissipation integrals of the regularized energy balance.

    Every entry is a nonnegative integral; their sum is -dE/dt for the
    semi-discrete system.
    """
    d = _density(rho, p.floor_rho)
    return _dissipation(d, VelocityTerms(rho.grid, _vec(u, rho.grid)), p)


# --------------------------------------------------------------------------
# inequality / identity functionals


def _hess_log_norm(d: DensityTerms) -> float:
    return _integral(d.grid, d.rho * np.sum(d.hess_log**2, axis=(0, 1)))


def jungel_terms(rho: ScalarField) -> tuple[float, float, float]:
    """(D, A, B) = (int rho|hess log rho|^2, int |hess sqrt rho|^2, int |grad rho^1/4|^4)."""
    d = _density(rho)
    g = rho.grid
    D = _hess_log_norm(d)
    A = _integral(g, np.sum(_hessian(g, d.sqrt) ** 2, axis=(0, 1)))
    q = _grad(g, d.power(0.25))
    B = _integral(g, np.sum(q**2, axis=0) ** 2)
    return D, A, B


def ibp_identity_residual(rho: ScalarField) -> float:
    """|int (lap sqrt rho / sqrt rho) lap rho - D/2| / max(1, D/2)."""
    d = _density(rho)
    lhs = _integral(rho.grid, d.bohm * d.lap)
    half_d = 0.5 * _hess_log_norm(d)
    return abs(lhs - half_d) / max(1.0, half_d)


def log_minus_mass(rho: ScalarField) -> float:
    """int -log(min(rho, 1)) dx."""
    _require_positive(rho.values)
    return _integral(rho.grid, -np.log(np.minimum(rho.values, 1.0)))


def bd_entropy(rho: ScalarField, u: VectorField, p: ModelParams) -> BDEntropyBreakdown:
    """BD entropy functional with its dissipations and the remainders R1..R6.

    ``remainders`` also carries ``log_rate`` (r0 d/dt int log rho, with the
    time derivative replaced through the continuity equation) and
    ``eps_correction`` (eps r0 int lap rho / rho); R6 = log_rate - eps_correction.
    """
    d = _density(rho, p.floor_rho)
    v = VelocityTerms(rho.grid, _vec(u, rho.grid))
    return _bd_entropy(d, v, p)


def _bd_entropy(d: DensityTerms, v: VelocityTerms, p: ModelParams) -> BDEntropyBreakdown:
    g = d.grid
    rho, u = d.rho, v.u
    grad_log = _grad(g, d.log)
    w = u + grad_log
    effective = 0.5 * _integral(g, rho * np.sum(w**2, axis=0))
    hyper = 0.5 * p.delta * d.weighted_hyper_norm(HYPER_ORDER) if p.delta else 0.0
    quantum = 0.5 * p.kappa * _integral(g, np.sum(d.grad_sqrt**2, axis=0)) if p.kappa else 0.0
    pressure = _integral(g, d.power(p.gamma)) / (p.gamma - 1.0)
    cold = p.eta / COLD_EXPONENT * _integral(g, d.power(-COLD_EXPONENT)) if p.eta else 0.0
    log_term = -p.r0 * _integral(g, d.log) if p.r0 else 0.0

    diss = dict.fromkeys(BD_DISSIPATION_NAMES, 0.0)
    gp = _grad(g, d.power(0.5 * p.gamma))
    diss["pressure"] = _integral(g, np.sum(gp**2, axis=0))
    rot = v.jac - np.swapaxes(v.jac, 0, 1)
    diss["rotation"] = 0.5 * _integral(g, rho * np.sum(rot**2, axis=(0, 1)))
    if p.kappa:
        diss["quantum"] = p.kappa * _hess_log_norm(d)
    if p.eta:
        gc = _grad(g, d.power(-COLD_EXPONENT / 2))
        diss["cold"] = p.eta * _integral(g, np.sum(gc**2, axis=0))
    if p.delta:
        diss["hyper_density"] = (2.0 + p.epsilon) * p.delta * d.weighted_hyper_norm(10)
    if p.mu:
        diss["hyper_velocity"] = p.mu * _integral(g, np.sum(v.lap**2, axis=0))
    if p.epsilon:
        diss["parabolic"] = p.epsilon * _integral(g, d.lap**2 / rho)

    rem = {f"R{i}": 0.0 for i in range(1, 7)}
    flux_div = _div(g, np.stack([_dealias(g, rho * c) for c in u]))
    if p.epsilon:
        # sum_ij d_j rho d_j u_i d_i log rho
        grad_rho = d.grad
        rem["R1"] = p.epsilon * _integral(
            g, np.einsum("j...,ij...,i...->...", grad_rho, v.jac, grad_log)
        )
        rem["R2"] = p.epsilon * _integral(g, 0.5 * d.lap * np.sum(grad_log**2, axis=0))
        rem["R3"] = -p.epsilon * _integral(g, flux_div * d.lap / rho)
    if p.mu:
        grad_lap_log = _grad(g, _lap(g, d.log))
        rem["R4"] = -p.mu * _integral(g, np.sum(v.lap * grad_lap_log, axis=0))
    if p.r1:
        rem["R5"] = -p.r1 * _integral(g, v.speed2 * np.sum(u * d.grad, axis=0))
    log_rate = eps_corr = 0.0
    if p.r0:
        rem["R6"] = -p.r0 * _integral(g, np.sum(u * d.grad, axis=0) / rho)
        log_rate = p.r0 * _integral(g, (p.epsilon * d.lap - flux_div) / rho)
        eps_corr = p.epsilon * p.r0 * _integral(g, d.lap / rho)
    rem["log_rate"] = log_rate
    rem["eps_correction"] = eps_corr
    return BDEntropyBreakdown(effective, hyper, quantum, pressure, cold, log_term, diss, rem)


def dissipation_total(rates: Mapping[str, float]) -> float:
    return float(sum(rates.values()))
