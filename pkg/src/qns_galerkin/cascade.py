"""Parameter sweeps and the convergence metrics of the regularization cascade.

Every metric here is a space-time quantity computed from the snapshots of
finished runs with trapezoidal quadrature in time.  A sweep lowers one
regularization parameter along a strictly decreasing sequence and collects
the metrics in a :class:`SweepTable`; the trends along the table are what
get checked, since the limits themselves cannot be reached numerically.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .config import RunConfig
from .functionals import COLD_EXPONENT, DensityTerms, VelocityTerms
from .galerkin import RunResult, TestFamily, build_basis, run, weak_terms
from .spectral import PeriodicGrid, VectorField, _dealias, _grad, _hessian, _integral

log = logging.getLogger(__name__)

MetricFn = Callable[[RunResult], Mapping[str, float]]


@dataclass
class SweepTable:
    """Metrics of a family of runs along a decreasing parameter sequence.

    Entries whose run failed keep ``status == "failed"`` and an empty metric
    map; the remaining entries carry finite metrics.
    """

    parameter: str
    values: list[float]
    runs: list[RunResult | None] = field(default_factory=list, repr=False)
    metrics: list[dict[str, float]] = field(default_factory=list)
    status: list[str] = field(default_factory=list)
    errors: list[str | None] = field(default_factory=list)

    def __post_init__(self):
        vals = [float(v) for v in self.values]
        if not vals:
            raise ValueError("a sweep needs at least one value")
        if any(b >= a for a, b in zip(vals, vals[1:])):
            raise ValueError(f"{self.parameter} values must be strictly decreasing, got {vals}")
        if vals[-1] < 0:
            raise ValueError(f"{self.parameter} values must be nonnegative, got {vals}")
        self.values = vals
        for m in self.metrics:
            bad = [k for k, x in m.items() if not math.isfinite(x)]
            if bad:
                raise ValueError(f"non-finite metrics {bad}")

    def column(self, name: str) -> list[float]:
        """Metric ``name`` along the sweep; failed entries give NaN."""
        return [m.get(name, math.nan) for m in self.metrics]

    def to_dict(self) -> dict:
        return {
            "parameter": self.parameter,
            "values": self.values,
            "status": self.status,
            "errors": self.errors,
            "metrics": self.metrics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), allow_nan=False, sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> "SweepTable":
        return cls(
            d["parameter"],
            list(d["values"]),
            runs=[None] * len(d["values"]),
            metrics=[dict(m) for m in d["metrics"]],
            status=list(d["status"]),
            errors=list(d.get("errors", [None] * len(d["values"]))),
        )


def is_monotone_decreasing(values: Sequence[float], slack: float = 0.05) -> bool:
    """values[i+1] <= (1 + slack) values[i] for every consecutive pair."""
    v = list(values)
    return all(b <= (1.0 + slack) * a for a, b in zip(v, v[1:]))


# --------------------------------------------------------------------------
# quadrature over snapshots


def _times(r: RunResult) -> np.ndarray:
    return np.array([s.time for s in r.snapshots])


def _time_integral(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Trapezoidal rule along the first axis; a single snapshot integrates to 0."""
    values = np.asarray(values, dtype=float)
    if len(times) < 2:
        return np.zeros(values.shape[1:])
    return np.trapezoid(values, times, axis=0)


def _snapshot_fields(r: RunResult):
    for s in r.snapshots:
        yield s, s.rho, r.basis.expand(s.lam)


def _check_band_limited(fields: Sequence[VectorField], grid: PeriodicGrid) -> None:
    for i, f in enumerate(fields):
        if f.grid != grid:
            raise ValueError(f"test field {i} lives on a different grid than the run")
        a = f.array()
        scale = max(1.0, float(np.abs(a).max()))
        if any(np.abs(_dealias(grid, c) - c).max() > 1e-10 * scale for c in a):
            raise ValueError(f"test field {i} is not band-limited to the dealiasing cutoff")


# --------------------------------------------------------------------------
# metrics


def sqrtrho_u_distance(run_a: RunResult, run_b: RunResult) -> float:
    """Space-time L2 distance between sqrt(rho) u of two runs."""
    if run_a.grid != run_b.grid:
        raise ValueError(f"runs live on different grids: {run_a.grid} vs {run_b.grid}")
    ta, tb = _times(run_a), _times(run_b)
    if ta.shape != tb.shape or not np.array_equal(ta, tb):
        raise ValueError("runs have different snapshot times")
    g = run_a.grid
    sq = []
    for (_, ra, ua), (_, rb, ub) in zip(_snapshot_fields(run_a), _snapshot_fields(run_b)):
        diff = np.sqrt(ra) * ua - np.sqrt(rb) * ub
        sq.append(_integral(g, np.sum(diff**2, axis=0)))
    return float(math.sqrt(max(_time_integral(ta, np.array(sq)), 0.0)))


def eta_vanishing_metric(r: RunResult) -> float:
    """eta int_0^T int rho^-10 dx dt."""
    eta = r.params.eta
    if eta == 0:
        return 0.0
    vals = [_integral(r.grid, rho ** (-COLD_EXPONENT)) for _, rho, _ in _snapshot_fields(r)]
    return float(eta * _time_integral(_times(r), np.array(vals)))


def _pairing_family(r: RunResult, testfields: Sequence[VectorField]) -> TestFamily:
    _check_band_limited(testfields, r.grid)
    return TestFamily.from_fields(list(testfields))


def delta_vanishing_metric(r: RunResult, testfields: Sequence[VectorField]) -> float:
    """max over test fields of |delta int_0^T int rho grad lap^9 rho . phi|."""
    fam = _pairing_family(r, testfields)
    delta = r.params.delta
    if delta == 0:
        return 0.0
    g = r.grid
    w = g.volume / g.size
    vals = []
    for _, rho, _ in _snapshot_fields(r):
        hf = DensityTerms(g, rho).hyper_force.reshape(g.dim, -1)
        vals.append(w * np.einsum("p,ap,map->m", rho.reshape(-1), hf, fam.values))
    return float(np.abs(delta * _time_integral(_times(r), np.array(vals))).max())


def weak_residual_components(r: RunResult, testfields: Sequence[VectorField]) -> tuple[np.ndarray, np.ndarray]:
    """Raw weak-form momentum residuals and their magnitudes, per test field.

    For time-independent psi the residual is

        int rho u . psi |_T - int rho u . psi |_0 - int_0^T sum of terms dt,

    the terms being those of :func:`weak_terms`, including both Bohm
    integrals.  The magnitude adds up the absolute integrands of every piece
    except the delta term, whose size is taken after spatial integration.
    """
    fam = _pairing_family(r, testfields)
    if len(r.snapshots) < 2:
        raise ValueError("need at least two snapshots")
    g = r.grid
    w = g.volume / g.size
    p = r.params
    sums, mags = [], []
    moments = []
    for _, rho, u in _snapshot_fields(r):
        d = DensityTerms(g, rho, p.floor_rho)
        v = VelocityTerms(g, u)
        signed = weak_terms(d, v, fam, p)
        size = weak_terms(d, v, fam, p, absolute=True)
        # pointwise rho grad lap^9 rho is dominated by amplified round-off
        size["hyper_density"] = np.abs(signed["hyper_density"])
        sums.append(sum(signed.values()))
        mags.append(sum(size.values()))
        m = rho.reshape(-1) * u.reshape(g.dim, -1)
        moments.append((w * np.einsum("ap,map->m", m, fam.values), w * np.abs(np.einsum("ap,map->mp", m, fam.values)).sum(-1)))
    t = _times(r)
    forcing = _time_integral(t, np.array(sums))
    res = moments[-1][0] - moments[0][0] - forcing
    scale = moments[-1][1] + moments[0][1] + _time_integral(t, np.array(mags))
    return res, scale


def weak_residual(r: RunResult, testfields: Sequence[VectorField]) -> float:
    """Largest weak-form residual normalized by its term magnitudes."""
    res, scale = weak_residual_components(r, testfields)
    rel = np.where(scale > 0, np.abs(res) / np.where(scale > 0, scale, 1.0), 0.0)
    return float(rel.max())


def momentum_pairing_series(r: RunResult, psi: VectorField) -> tuple[np.ndarray, np.ndarray]:
    """Snapshot times and int rho u . psi, to inspect time continuity of rho u."""
    g = r.grid
    if psi.grid != g:
        raise ValueError("test field lives on a different grid than the run")
    a = psi.array()
    vals = [_integral(g, np.sum(rho * u * a, axis=0)) for _, rho, u in _snapshot_fields(r)]
    return _times(r), np.array(vals)


def default_test_fields(grid: PeriodicGrid, N: int = 8, bump_concentration: float = 8.0) -> list[VectorField]:
    """The first ``N`` Galerkin modes plus one steep band-limited bump.

    The bump is a von Mises profile exp(c (cos(x - 1) - 1)) in each direction,
    truncated to the dealiasing band, placed in every velocity component.
    """
    basis = build_basis(grid, N)
    fields = [basis.field(i) for i in range(N)]
    fields.append(bump_field(grid, bump_concentration))
    return fields


def bump_field(grid: PeriodicGrid, concentration: float = 8.0) -> VectorField:
    scale = 2.0 * math.pi / grid.length
    prof = np.ones(grid.shape)
    for x in grid.coords:
        prof = prof * np.exp(concentration * (np.cos(scale * x - 1.0) - 1.0))
    prof = _dealias(grid, prof)
    return VectorField.from_array(grid, np.stack([prof] * grid.dim))


def jungel_quantities(r: RunResult, kappa: float) -> dict[str, float]:
    """kappa^(1/2) ||sqrt rho||_{L2 H2} and kappa^(1/4) ||grad rho^(1/4)||_{L4 L4}."""
    g = r.grid
    h2, l4 = [], []
    for _, rho, _ in _snapshot_fields(r):
        s = np.sqrt(rho)
        gs = _grad(g, s)
        hs = _hessian(g, s)
        h2.append(_integral(g, s**2 + np.sum(gs**2, axis=0) + np.sum(hs**2, axis=(0, 1))))
        q = _grad(g, rho**0.25)
        l4.append(_integral(g, np.sum(q**2, axis=0) ** 2))
    t = _times(r)
    return {
        "sqrt_rho_h2": math.sqrt(kappa) * math.sqrt(float(_time_integral(t, np.array(h2)))),
        "grad_rho_quarter_l4": kappa**0.25 * float(_time_integral(t, np.array(l4))) ** 0.25,
    }


# --------------------------------------------------------------------------
# sweeps


def _member(config: RunConfig, parameter: str, value: float) -> RunResult:
    cfg = config.replace(**{parameter: value})
    r = run(cfg)
    return r


def parameter_sweep(
    config: RunConfig, parameter: str, values: Sequence[float], metric: MetricFn
) -> SweepTable:
    """Run ``config`` once per value of ``parameter`` and tabulate ``metric``.

    A failing member run is recorded as failed and the sweep continues.
    """
    table = SweepTable(parameter, list(values))
    for v in table.values:
        try:
            r = _member(config, parameter, v)
        except Exception as exc:  # a member failure must not abort the study
            log.warning("%s=%g failed: %s", parameter, v, exc)
            table.runs.append(None)
            table.metrics.append({})
            table.status.append("failed")
            table.errors.append(str(exc))
            continue
        table.runs.append(r)
        if not r.completed:
            table.metrics.append({})
            table.status.append("failed")
            table.errors.append(r.error)
            continue
        try:
            m = {k: float(x) for k, x in metric(r).items()}
        except Exception as exc:
            log.warning("%s=%g metric failed: %s", parameter, v, exc)
            table.metrics.append({})
            table.status.append("failed")
            table.errors.append(str(exc))
            continue
        table.metrics.append(m)
        table.status.append("completed")
        table.errors.append(None)
    table.__post_init__()
    return table


def eta_sweep(config: RunConfig, etas: Sequence[float]) -> SweepTable:
    return parameter_sweep(config, "eta", etas, lambda r: {"eta_metric": eta_vanishing_metric(r)})


def delta_sweep(
    config: RunConfig, deltas: Sequence[float], testfields: Sequence[VectorField] | None = None
) -> SweepTable:
    fields = list(testfields) if testfields is not None else default_test_fields(config.grid)
    return parameter_sweep(
        config, "delta", deltas, lambda r: {"delta_metric": delta_vanishing_metric(r, fields)}
    )


def kappa_limit_study(config: RunConfig, kappas: Sequence[float]) -> SweepTable:
    """Distance of sqrt(rho) u for each kappa to a kappa = 0 reference run.

    Besides the distance each entry reports :func:`jungel_quantities`.
    If the reference run fails every entry is marked failed.
    """
    if any(k <= 0 for k in kappas):
        raise ValueError("kappa values must be positive; the kappa = 0 run is the reference")
    reference = run(config.replace(kappa=0.0))

    def metric(r: RunResult) -> dict[str, float]:
        if not reference.completed:
            raise RuntimeError(f"kappa = 0 reference run failed: {reference.error}")
        out = {"distance": sqrtrho_u_distance(r, reference)}
        out.update(jungel_quantities(r, r.params.kappa))
        return out

    table = SweepTable("kappa", list(kappas))
    for v in table.values:
        r = None
        try:
            r = _member(config, "kappa", v)
            if not r.completed:
                raise RuntimeError(r.error or "run failed")
            m = metric(r)
        except Exception as exc:  # mark and continue
            log.warning("kappa=%g failed: %s", v, exc)
            table.runs.append(r)
            table.metrics.append({})
            table.status.append("failed")
            table.errors.append(str(exc))
            continue
        table.runs.append(r)
        table.metrics.append(m)
        table.status.append("completed")
        table.errors.append(None)
    table.__post_init__()
    return table
