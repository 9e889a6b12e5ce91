"""Faedo-Galerkin solver for the regularized quantum Navier-Stokes system.

The velocity lives in X_N, the span of the first N L2-orthonormal vector
trigonometric modes; the density is a full collocation field evolved by the
parabolic continuity equation

    rho_t + div(rho u) = eps lap rho.

One time step solves, by Picard iteration over the velocity coefficients,

    M[rho^{n+1}] lam^{n+1} = M[rho^n] lam^n + dt F(rho^{n+1}, u^{n+1}),
    rho^{n+1} = continuity_step(rho^n, u^{n+1}),

where M[rho]_ij = int rho e_i . e_j and F_i is the weak momentum forcing
tested against e_i.  The biharmonic velocity term is kept implicit inside
each iterate and the stiff linear part of the delta rho grad lap^9 rho
coupling is subtracted on both sides of the iterate, so neither changes the
fixed point.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from itertools import product
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .functionals import (
    COLD_EXPONENT,
    DensityTerms,
    ModelParams,
    NonPositiveDensityError,
    VelocityTerms,
    _bd_entropy,
    _dissipation,
    _energy,
)
from .spectral import (
    PeriodicGrid,
    ScalarField,
    VectorField,
    _dealias,
    _div,
    _fft,
    _grad,
    _ifft,
    _lap,
)

if TYPE_CHECKING:
    from .config import RunConfig

log = logging.getLogger(__name__)

WEAK_TERMS = (
    "convection",
    "viscous",
    "pressure",
    "cold",
    "hyper_velocity",
    "parabolic",
    "drag_linear",
    "drag_cubic",
    "bohm",
    "hyper_density",
)


class StepRejected(RuntimeError):
    def __init__(self, message: str, suggested_dt: float | None = None):
        self.suggested_dt = suggested_dt
        super().__init__(message)


# --------------------------------------------------------------------------
# test-function families and the Galerkin basis


@dataclass(frozen=True, eq=False)
class TestFamily:
    """A stack of M vector test fields with their derivatives.

    Arrays are flattened over the grid: ``values`` (M, d, P), ``grad``
    (M, d, d, P) with ``grad[m, a, b] = d_b psi_a``, ``div`` (M, P) and
    ``lap`` (M, d, P).
    """

    __test__ = False  # not a pytest class

    grid: PeriodicGrid
    values: np.ndarray
    grad: np.ndarray
    div: np.ndarray
    lap: np.ndarray

    def __len__(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_fields(cls, fields: Sequence[VectorField]) -> "TestFamily":
        if not fields:
            raise ValueError("need at least one test field")
        g = fields[0].grid
        vals, grads, divs, laps = [], [], [], []
        for f in fields:
            if f.grid != g:
                raise ValueError("test fields live on different grids")
            a = f.array()
            vals.append(a.reshape(g.dim, -1))
            grads.append(np.stack([_grad(g, c) for c in a]).reshape(g.dim, g.dim, -1))
            divs.append(_div(g, a).reshape(-1))
            laps.append(np.stack([_lap(g, c) for c in a]).reshape(g.dim, -1))
        return cls(g, np.stack(vals), np.stack(grads), np.stack(divs), np.stack(laps))

    def field(self, i: int) -> VectorField:
        return VectorField.from_array(self.grid, self.values[i].reshape((self.grid.dim,) + self.grid.shape))


@dataclass(frozen=True)
class Mode:
    k: tuple[int, ...]
    component: int
    kind: str  # "const", "cos" or "sin"


def _half_space_modes(grid: PeriodicGrid) -> list[tuple[int, ...]]:
    kmax = int(math.floor(grid.cutoff))
    out = []
    for m in product(range(-kmax, kmax + 1), repeat=grid.dim):
        nz = [x for x in m if x != 0]
        if nz and nz[0] < 0:
            continue
        out.append(m)
    return out


def available_modes(grid: PeriodicGrid) -> int:
    """Number of real vector modes inside the dealiasing radius."""
    scalars = 2 * len(_half_space_modes(grid)) - 1
    return scalars * grid.dim


def _ordered_modes(grid: PeriodicGrid) -> list[Mode]:
    modes = []
    for m in _half_space_modes(grid):
        for c in range(grid.dim):
            if any(m):
                modes.append(Mode(m, c, "cos"))
                modes.append(Mode(m, c, "sin"))
            else:
                modes.append(Mode(m, c, "const"))
    kind_rank = {"const": 0, "cos": 1, "sin": 2}
    modes.sort(key=lambda md: (sum(x * x for x in md.k), md.component, md.k, kind_rank[md.kind]))
    return modes


@dataclass(frozen=True, eq=False)
class GalerkinBasis:
    grid: PeriodicGrid
    N: int
    modes: tuple[Mode, ...]
    family: TestFamily
    weight: float  # quadrature weight |Omega| / P

    @property
    def values(self) -> np.ndarray:
        return self.family.values

    def expand(self, lam: np.ndarray) -> np.ndarray:
        """u = sum lam_i e_i as an array of shape (d, *grid.shape)."""
        u = np.tensordot(lam, self.family.values, axes=(0, 0))
        return u.reshape((self.grid.dim,) + self.grid.shape)

    def project(self, v: np.ndarray) -> np.ndarray:
        """L2 coefficients <v, e_i> of a vector array of shape (d, *grid.shape)."""
        v = np.asarray(v).reshape(self.grid.dim, -1)
        return self.weight * np.einsum("iap,ap->i", self.family.values, v)

    def gram(self) -> np.ndarray:
        return self.weight * np.einsum("iap,jap->ij", self.family.values, self.family.values)

    def field(self, i: int) -> VectorField:
        return self.family.field(i)


def build_basis(grid: PeriodicGrid, N: int) -> GalerkinBasis:
    cap = available_modes(grid)
    if not 1 <= N <= cap:
        raise ValueError(f"N must lie in 1..{cap} for this grid, got {N}")
    modes = tuple(_ordered_modes(grid)[:N])
    d, P = grid.dim, grid.size
    vol = grid.volume
    scale = 2 * math.pi / grid.length
    vals = np.zeros((N, d, P))
    grads = np.zeros((N, d, d, P))
    divs = np.zeros((N, P))
    laps = np.zeros((N, d, P))
    for i, md in enumerate(modes):
        k = np.array(md.k, dtype=float) * scale
        phase = sum(ki * x for ki, x in zip(k, grid.coords)).reshape(-1)
        if md.kind == "const":
            phi = np.full(P, 1.0 / math.sqrt(vol))
            dphi = np.zeros((d, P))
        elif md.kind == "cos":
            amp = math.sqrt(2.0 / vol)
            phi = amp * np.cos(phase)
            dphi = -amp * np.sin(phase)[None, :] * k[:, None]
        else:
            amp = math.sqrt(2.0 / vol)
            phi = amp * np.sin(phase)
            dphi = amp * np.cos(phase)[None, :] * k[:, None]
        c = md.component
        vals[i, c] = phi
        grads[i, c] = dphi
        divs[i] = dphi[c]
        laps[i, c] = -float(k @ k) * phi
    fam = TestFamily(grid, vals, grads, divs, laps)
    return GalerkinBasis(grid, N, modes, fam, vol / P)


# --------------------------------------------------------------------------
# mass operator


@dataclass(frozen=True, eq=False)
class MassMatrix:
    entries: np.ndarray

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.entries)

    def min_eigenvalue(self) -> float:
        return float(self.eigenvalues[0])

    def inverse_norm(self) -> float:
        """Spectral norm of the inverse, 1 / smallest eigenvalue."""
        lo = self.min_eigenvalue()
        return math.inf if lo <= 0 else 1.0 / lo

    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.entries)

    def solve(self, b: np.ndarray) -> np.ndarray:
        return np.linalg.solve(self.entries, b)


def _mass(basis: GalerkinBasis, rho: np.ndarray) -> np.ndarray:
    v = basis.family.values
    m = basis.weight * np.einsum("iap,p,jap->ij", v, rho.reshape(-1), v)
    return 0.5 * (m + m.T)


def mass_matrix(rho: ScalarField, basis: GalerkinBasis) -> MassMatrix:
    if rho.min() <= 0:
        raise NonPositiveDensityError(f"density must be positive, min is {rho.min():.6g}")
    return MassMatrix(_mass(basis, rho.values))


def lipschitz_check(rho1: ScalarField, rho2: ScalarField, basis: GalerkinBasis) -> float:
    """||M^-1(rho1) - M^-1(rho2)||_2 / ||rho1 - rho2||_L1 (0 for equal densities)."""
    diff = np.abs(rho1.values - rho2.values)
    l1 = float(diff.mean() * rho1.grid.volume)
    if l1 == 0.0:
        return 0.0
    inv1 = mass_matrix(rho1, basis).inverse()
    inv2 = mass_matrix(rho2, basis).inverse()
    return float(np.linalg.norm(inv1 - inv2, 2)) / l1


# --------------------------------------------------------------------------
# continuity equation


def _continuity(grid: PeriodicGrid, rho: np.ndarray, u: np.ndarray, eps: float, dt: float) -> np.ndarray:
    flux = np.stack([_dealias(grid, rho * c) for c in u])
    rhs = _fft(grid, rho) - dt * sum(_fft(grid, flux[a]) * grid.rderiv(a, 1) for a in range(grid.dim))
    if eps:
        rhs = rhs / (1.0 + eps * dt * grid.rk2)
    return _ifft(grid, rhs)


def continuity_step(
    rho: ScalarField, u: VectorField, epsilon: float, dt: float, *, strict: bool = False
) -> ScalarField:
    """One step: transport explicit, eps-diffusion implicit; preserves the mean."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if rho.min() <= 0:
        raise NonPositiveDensityError(f"density must be positive, min is {rho.min():.6g}")
    new = _continuity(rho.grid, rho.values, u.array(), epsilon, dt)
    if strict and new.min() <= 0:
        raise StepRejected(f"density lost positivity (min {new.min():.3e})", suggested_dt=dt / 2)
    return ScalarField(rho.grid, new)


def continuity_lipschitz(
    rho: ScalarField, u1: VectorField, u2: VectorField, epsilon: float, dt: float, steps: int = 1
) -> float:
    """Measured ||S(u1) - S(u2)||_inf / ||u1 - u2||_inf after ``steps`` continuity steps.

    S maps a frozen velocity to the density it transports; the ratio is an
    empirical value of the Lipschitz constant of that map (0 for u1 = u2).
    """
    du = float(np.abs(u1.array() - u2.array()).max())
    if du == 0.0:
        return 0.0
    r1 = r2 = rho
    for _ in range(steps):
        r1 = continuity_step(r1, u1, epsilon, dt)
        r2 = continuity_step(r2, u2, epsilon, dt)
    return float(np.abs(r1.values - r2.values).max()) / du


# --------------------------------------------------------------------------
# weak momentum forcing


def weak_terms(
    d: DensityTerms, v: VelocityTerms, family: TestFamily, p: ModelParams, *, absolute: bool = False
) -> dict[str, np.ndarray]:
    """Each weak momentum term tested against every field of ``family``.

    With psi a test field the terms are

        convection      int rho u (x) u : grad psi
        viscous        -int 2 rho D(u) : grad psi
        pressure        int rho^gamma div psi
        cold           -eta int rho^-10 div psi
        hyper_velocity -mu int lap u . lap psi
        parabolic      -eps int (grad rho . grad u) . psi
        drag_linear    -r0 int u . psi
        drag_cubic     -r1 int rho |u|^2 u . psi
        bohm           -2 kappa int lap sqrt(rho) grad sqrt(rho) . psi
                        - kappa int lap sqrt(rho) sqrt(rho) div psi
        hyper_density   delta int rho grad lap^9 rho . psi

    so that d/dt int rho u . psi equals their sum.  With ``absolute`` the
    integrands are replaced by their absolute values, which gives the size
    of each term independent of cancellations.
    """
    g = d.grid
    w = g.volume / g.size
    dim = g.dim
    rho = d.rho.reshape(-1)
    u = v.u.reshape(dim, -1)
    out = dict.fromkeys(WEAK_TERMS, np.zeros(len(family)))

    def reduce(integrand: np.ndarray, coef: float = 1.0) -> np.ndarray:
        if absolute:
            return abs(coef) * w * np.abs(integrand).sum(axis=-1)
        return coef * w * integrand.sum(axis=-1)

    out["convection"] = reduce(np.einsum("p,ap,bp,mabp->mp", rho, u, u, family.grad))
    sym = v.sym.reshape(dim, dim, -1)
    out["viscous"] = reduce(np.einsum("p,abp,mabp->mp", rho, sym, family.grad), -2.0)
    out["pressure"] = reduce(family.div * d.power(p.gamma).reshape(-1))
    if p.eta:
        out["cold"] = reduce(family.div * d.power(-COLD_EXPONENT).reshape(-1), -p.eta)
    if p.mu:
        out["hyper_velocity"] = reduce(np.einsum("ap,map->mp", v.lap.reshape(dim, -1), family.lap), -p.mu)
    if p.epsilon:
        gr = d.grad.reshape(dim, -1)
        jac = v.jac.reshape(dim, dim, -1)
        out["parabolic"] = reduce(np.einsum("jp,ajp,map->mp", gr, jac, family.values), -p.epsilon)
    if p.r0:
        out["drag_linear"] = reduce(np.einsum("ap,map->mp", u, family.values), -p.r0)
    if p.r1:
        s2 = v.speed2.reshape(-1)
        out["drag_cubic"] = reduce(np.einsum("p,ap,map->mp", rho * s2, u, family.values), -p.r1)
    if p.kappa:
        ls = d.lap_sqrt.reshape(-1)
        gs = d.grad_sqrt.reshape(dim, -1)
        sq = d.sqrt.reshape(-1)
        out["bohm"] = reduce(
            2.0 * np.einsum("p,ap,map->mp", ls, gs, family.values) + family.div * (ls * sq), -p.kappa
        )
    if p.delta:
        hf = d.hyper_force.reshape(dim, -1)
        out["hyper_density"] = reduce(np.einsum("p,ap,map->mp", rho, hf, family.values), p.delta)
    return out


def momentum_rhs(state: "State", p: ModelParams, basis: GalerkinBasis) -> np.ndarray:
    """Weak momentum forcing <N(rho, u), e_i> for i = 1..N."""
    rho = state.rho.values
    if rho.min() <= 0:
        raise NonPositiveDensityError(f"density must be positive, min is {rho.min():.6g}")
    d = DensityTerms(basis.grid, rho, p.floor_rho)
    v = VelocityTerms(basis.grid, basis.expand(state.lam))
    return sum(weak_terms(d, v, basis.family, p).values())


# --------------------------------------------------------------------------
# state and time stepping


@dataclass(frozen=True, eq=False)
class State:
    time: float
    rho: ScalarField
    lam: np.ndarray
    basis: GalerkinBasis
    iterations: int = 0
    residuals: tuple[float, ...] = ()
    floored: bool = False

    def __post_init__(self):
        lam = np.array(self.lam, dtype=float, copy=True)
        if lam.shape != (self.basis.N,):
            raise ValueError(f"lam must have length {self.basis.N}, got {lam.shape}")
        lam.flags.writeable = False
        object.__setattr__(self, "lam", lam)

    @property
    def u(self) -> VectorField:
        return VectorField.from_array(self.basis.grid, self.basis.expand(self.lam))

    @property
    def picard_ratio(self) -> float:
        """Geometric mean of successive Picard residual ratios."""
        r = [x for x in self.residuals if x > 0]
        if len(r) < 2:
            return 0.0
        return float((r[-1] / r[0]) ** (1.0 / (len(r) - 1)))


def _biharmonic(basis: GalerkinBasis) -> np.ndarray:
    """int lap e_i . lap e_j (diagonal for trigonometric modes)."""
    fam = basis.family
    bih = basis.weight * np.einsum("iap,jap->ij", fam.lap, fam.lap)
    return 0.5 * (bih + bih.T)


def _hyper_jacobian(
    basis: GalerkinBasis, rho_n: np.ndarray, lam: np.ndarray, p: ModelParams, dt: float
) -> np.ndarray:
    """d/d lam_j of delta int rho grad lap^9 rho . e_i along the continuity update.

    The updated density is affine in lam, rho = r + sum_j lam_j s_j, so the
    delta term is quadratic in lam and this Jacobian is exact at ``lam``.
    Evaluated once per step it turns the Picard loop into a simplified
    Newton iteration for the stiff hyper-regularization coupling.
    """
    g = basis.grid
    fam = basis.family
    shape = (g.dim,) + g.shape
    base = _continuity(g, rho_n, np.zeros(shape), p.epsilon, dt)
    resp = [
        _continuity(g, rho_n, fam.values[j].reshape(shape), p.epsilon, dt) - base
        for j in range(len(fam))
    ]
    rho = base + sum(l * s for l, s in zip(lam, resp))
    hf_rho = DensityTerms(g, rho).hyper_force.reshape(g.dim, -1)
    r = rho.reshape(-1)
    cols = []
    for s in resp:
        hf_s = DensityTerms(g, s).hyper_force.reshape(g.dim, -1)
        force = s.reshape(-1) * hf_rho + r * hf_s
        cols.append(np.einsum("ap,iap->i", force, fam.values))
    return p.delta * basis.weight * np.stack(cols, axis=1)


def fixed_point_advance(
    state: State,
    p: ModelParams,
    basis: GalerkinBasis,
    dt: float,
    tol: float = 1e-10,
    max_iter: int = 12,
    *,
    strict: bool = False,
) -> State:
    """Advance one step of size ``dt`` by Picard iteration on lam."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    g = basis.grid
    rho_n = state.rho.values
    if rho_n.min() <= 0:
        raise NonPositiveDensityError(f"density must be positive, min is {rho_n.min():.6g}")
    bih = _biharmonic(basis)
    b0 = _mass(basis, rho_n) @ state.lam
    lin = dt * p.mu * bih
    stab = None
    if p.delta:
        stab = -dt * _hyper_jacobian(basis, rho_n, state.lam, p, dt)
        lin = lin + stab

    lam = state.lam.copy()
    residuals: list[float] = []
    for _ in range(max_iter):
        u = basis.expand(lam)
        rho = _continuity(g, rho_n, u, p.epsilon, dt)
        _check_density(rho, p, dt, strict)
        d = DensityTerms(g, rho, p.floor_rho)
        v = VelocityTerms(g, u)
        terms = weak_terms(d, v, basis.family, p)
        terms.pop("hyper_velocity")
        forcing = sum(terms.values())
        rhs = b0 + dt * forcing
        if stab is not None:
            rhs = rhs + stab @ lam
        lam_new = np.linalg.solve(_mass(basis, rho) + lin, rhs)
        if not np.all(np.isfinite(lam_new)):
            raise StepRejected("Picard iterate is not finite", suggested_dt=dt / 2)
        res = float(np.abs(lam_new - lam).max())
        residuals.append(res)
        lam = lam_new
        if res < tol:
            break
    else:
        raise StepRejected(
            f"Picard iteration did not reach tol {tol:g} in {max_iter} iterations "
            f"(last residual {residuals[-1]:.3e})",
            suggested_dt=dt / 2,
        )
    rho = _continuity(g, rho_n, basis.expand(lam), p.epsilon, dt)
    floored = _check_density(rho, p, dt, strict)
    return State(
        state.time + dt,
        ScalarField(g, rho),
        lam,
        basis,
        iterations=len(residuals),
        residuals=tuple(residuals),
        floored=floored,
    )


def _check_density(rho: np.ndarray, p: ModelParams, dt: float, strict: bool) -> bool:
    lo = float(rho.min())
    floored = lo < p.floor_rho
    if strict and lo <= 0:
        raise StepRejected(f"density lost positivity (min {lo:.3e})", suggested_dt=dt / 2)
    if strict and floored:
        raise StepRejected(f"density floor {p.floor_rho:g} activated (min {lo:.3e})", suggested_dt=dt / 2)
    return floored


# --------------------------------------------------------------------------
# diagnostics of a state


def state_energy(state: State, p: ModelParams):
    d = DensityTerms(state.basis.grid, state.rho.values, p.floor_rho)
    v = VelocityTerms(state.basis.grid, state.basis.expand(state.lam))
    return _energy(d, v, p)


def state_dissipation(state: State, p: ModelParams) -> dict[str, float]:
    d = DensityTerms(state.basis.grid, state.rho.values, p.floor_rho)
    v = VelocityTerms(state.basis.grid, state.basis.expand(state.lam))
    return _dissipation(d, v, p)


def state_bd(state: State, p: ModelParams):
    d = DensityTerms(state.basis.grid, state.rho.values, p.floor_rho)
    v = VelocityTerms(state.basis.grid, state.basis.expand(state.lam))
    return _bd_entropy(d, v, p)


def energy_balance_residual(records) -> float:
    """|E(T) - E(0) + int_0^T D dt| over a record sequence, trapezoidal in time.

    D is the sum of the recorded dissipation integrals.  For an exact
    solution this vanishes; for the first-order scheme it is O(dt).
    """
    if len(records) < 2:
        return 0.0
    t = np.array([r.time for r in records])
    diss = np.array([sum(r.dissipation.values()) for r in records])
    return abs(records[-1].energy.total - records[0].energy.total + float(np.trapezoid(diss, t)))


def initial_state(rho0: np.ndarray, m0: np.ndarray, basis: GalerkinBasis) -> tuple[State, float]:
    """State with lam = L2 projection of m0 / rho0 onto X_N, and the projection defect."""
    g = basis.grid
    u0 = m0 / rho0
    lam = basis.project(u0)
    defect = float(np.sqrt(np.sum((u0 - basis.expand(lam)) ** 2) * g.volume / g.size))
    return State(0.0, ScalarField(g, rho0), lam, basis), defect


# --------------------------------------------------------------------------
# driver


@dataclass(frozen=True)
class Snapshot:
    step: int
    time: float
    rho: np.ndarray
    lam: np.ndarray


@dataclass
class RunResult:
    config: "RunConfig"
    basis: GalerkinBasis
    records: list = field(default_factory=list)
    snapshots: list[Snapshot] = field(default_factory=list)
    status: str = "running"
    error: str | None = None
    projection_defect: float = 0.0

    @property
    def completed(self) -> bool:
        return self.status == "completed"

    @property
    def label(self) -> str:
        if self.basis.grid.dim == 1:
            return "1D test vehicle"
        return f"{self.basis.grid.dim}D"

    @property
    def params(self) -> ModelParams:
        return self.config.params

    @property
    def grid(self) -> PeriodicGrid:
        return self.basis.grid

    def snapshot_state(self, snap: Snapshot) -> State:
        return State(snap.time, ScalarField(self.grid, snap.rho), snap.lam, self.basis)


def _advance(state: State, cfg, basis: GalerkinBasis) -> tuple[State, int]:
    """One macro step of size cfg.dt, halving into sub-steps on rejection."""
    last: StepRejected | None = None
    for level in range(cfg.retry_budget + 1):
        pieces = 2**level
        sub_dt = cfg.dt / pieces
        cur, iters = state, 0
        try:
            for _ in range(pieces):
                cur = fixed_point_advance(
                    cur, cfg.params, basis, sub_dt, cfg.picard_tol, cfg.max_iter, strict=cfg.strict
                )
                iters += cur.iterations
        except (StepRejected, NonPositiveDensityError) as exc:
            last = exc if isinstance(exc, StepRejected) else StepRejected(str(exc))
            log.debug("step at t=%g rejected with dt=%g: %s", state.time, sub_dt, exc)
            continue
        # exact macro time, independent of sub-stepping round-off
        cur = State(state.time + cfg.dt, cur.rho, cur.lam, basis, iters, cur.residuals, cur.floored)
        return cur, level
    raise StepRejected(f"step at t={state.time:g} rejected after {cfg.retry_budget} halvings: {last}")


def make_record(state: State, cfg, step: int, with_bd: bool = False):
    from .records import DiagnosticsRecord

    p = cfg.params
    g = state.basis.grid
    rho = state.rho.values
    d = DensityTerms(g, rho, p.floor_rho)
    u = state.basis.expand(state.lam)
    v = VelocityTerms(g, u)
    lo = float(rho.min())
    minv = 1.0 / float(np.linalg.eigvalsh(_mass(state.basis, rho))[0]) if lo > 0 else math.inf
    return DiagnosticsRecord(
        step=step,
        time=state.time,
        dt=cfg.dt,
        energy=_energy(d, v, p),
        dissipation=_dissipation(d, v, p),
        mass=float(rho.mean() * g.volume),
        min_rho=lo,
        max_rho=float(rho.max()),
        iterations=state.iterations,
        picard_ratio=state.picard_ratio,
        floored=state.floored or d.floored,
        minv_norm=minv,
        max_div_u=float(np.abs(v.div).max()),
        bd=_bd_entropy(d, v, p) if with_bd else None,
    )


def run(cfg, on_record=None) -> RunResult:
    """Integrate the configured system from t=0 to T.

    ``on_record`` is called with every DiagnosticsRecord as it is produced.
    A failing step stops the run; everything produced so far is kept and
    ``status`` is ``"failed"``.
    """
    from .config import initial_fields

    basis = build_basis(cfg.grid, cfg.N)
    rho0, m0 = initial_fields(cfg)
    state, defect = initial_state(rho0, m0, basis)
    result = RunResult(cfg, basis, projection_defect=defect)

    def emit(st: State, step: int):
        with_bd = cfg.bd_stride > 0 and step % cfg.bd_stride == 0
        rec = make_record(st, cfg, step, with_bd)
        result.records.append(rec)
        if on_record is not None:
            on_record(rec)
        if step % cfg.snapshot_stride == 0 or step == cfg.n_steps:
            result.snapshots.append(Snapshot(step, st.time, st.rho.values, st.lam))
        return rec

    rec0 = emit(state, 0)
    if not (math.isfinite(rec0.energy.total) and rec0.min_rho > 0):
        result.status = "failed"
        result.error = "initial data have infinite energy or nonpositive density"
        return result

    for step in range(1, cfg.n_steps + 1):
        try:
            state, _ = _advance(state, cfg, basis)
        except StepRejected as exc:
            result.status = "failed"
            result.error = str(exc)
            log.warning("run aborted at step %d: %s", step, exc)
            return result
        rec = emit(state, step)
        if cfg.strict and rec.floored:
            result.status = "failed"
            result.error = f"density floor activated at step {step}"
            return result
    result.status = "completed"
    return result
