"""Randomized battery for the functional inequalities and identities.

Each check runs on seeded random positive band-limited densities, half of
them on a 1D grid with n = 128 and half on a 2D grid with n = 64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .functionals import bohm_force_divform, bohm_force_strong, ibp_identity_residual, jungel_terms
from .galerkin import build_basis, mass_matrix
from .spectral import PeriodicGrid, ScalarField, _ifft

CHECKS = ("hessian_sqrt", "quarter_gradient", "bohm_forms", "ibp_identity", "mass_operator")


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float  # worst margin or residual over the field set
    threshold: float
    failures: list[int] = field(default_factory=list)

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict} {self.name}: worst {self.worst:.3e} (threshold {self.threshold:.1e})"


def random_density(
    grid: PeriodicGrid,
    rng: np.random.Generator,
    kmax: int = 2,
    min_range: tuple[float, float] = (0.6, 0.9),
) -> ScalarField:
    """Positive trigonometric polynomial with |m_i| <= kmax and mean 1.

    The minimum is drawn uniformly from ``min_range``.  The default keeps
    sqrt(rho) and log(rho) resolved inside the dealiasing band, which the
    identity checks need at their 1e-6 tolerance.
    """
    coeffs = np.zeros(grid.rshape, dtype=complex)
    idx = [np.abs(m) <= kmax for m in grid.rmodes]
    band = np.ones(grid.rshape, dtype=bool)
    for i in idx:
        band = band & i
    k2 = grid.rk2 * (grid.length / (2 * math.pi)) ** 2
    amp = 1.0 / (1.0 + k2)
    noise = rng.normal(size=grid.rshape) + 1j * rng.normal(size=grid.rshape)
    coeffs[band] = (amp * noise)[band]
    coeffs.flat[0] = 0.0
    pert = _ifft(grid, coeffs)
    pert = pert / np.abs(pert).max()
    floor = rng.uniform(*min_range)
    # scale so that min(1 + s pert) = floor
    s = (1.0 - floor) / max(-pert.min(), 1e-12)
    return ScalarField(grid, 1.0 + s * pert)


def battery_fields(count: int, seed: int) -> list[ScalarField]:
    """``count`` fields, alternating between the 1D and the 2D grid."""
    rng = np.random.default_rng(seed)
    grids = (PeriodicGrid(1, 128), PeriodicGrid(2, 64))
    return [random_density(grids[i % 2], rng) for i in range(count)]


def run_battery(count: int = 100, seed: int = 7, basis_size: int = 9) -> list[CheckResult]:
    """Evaluate every check in :data:`CHECKS` on ``count`` random densities."""
    if count < 1:
        raise ValueError(f"need at least one field, got {count}")
    fields = battery_fields(count, seed)
    margins: dict[str, list[float]] = {name: [] for name in CHECKS}
    bases = {}
    for rho in fields:
        D, A, B = jungel_terms(rho)
        scale = 1.0 + D
        margins["hessian_sqrt"].append((D - A / 7.0) / scale)
        margins["quarter_gradient"].append((D - B / 8.0) / scale)
        strong = bohm_force_strong(rho, 1.0).array()
        div = bohm_force_divform(rho, 1.0).array()
        margins["bohm_forms"].append(float(np.linalg.norm(strong - div) / max(np.linalg.norm(div), 1e-300)))
        margins["ibp_identity"].append(ibp_identity_residual(rho))
        g = rho.grid
        if g not in bases:
            bases[g] = build_basis(g, basis_size)
        minv = mass_matrix(rho, bases[g]).inverse_norm()
        margins["mass_operator"].append(1.0 / rho.min() + 1e-9 - minv)

    out = []
    for name in CHECKS:
        vals = np.array(margins[name])
        if name in ("bohm_forms", "ibp_identity"):
            threshold = 1e-6
            bad = np.nonzero(vals >= threshold)[0]
            worst = float(vals.max())
        else:
            threshold = -1e-9
            bad = np.nonzero(vals < threshold)[0]
            worst = float(vals.min())
        out.append(CheckResult(name, bad.size == 0, worst, threshold, [int(i) for i in bad]))
    return out
