"""Collocation fields on the periodic torus and their Fourier duals.

Fields are sampled on a uniform tensor grid of ``n`` points per axis over a
box of side ``length``.  Spectral coefficients are normalized so that the
zero mode equals the mean of the field:

    f(x_j) = sum_m  c_m exp(i k_m . x_j),    k_m = 2 pi m / L

Every differential operator is a diagonal multiplier in this basis.  The
public types (:class:`ScalarField`, :class:`VectorField`,
:class:`SpectralCoeffs`) are immutable; the underscore-prefixed array kernels
at the bottom are what the solver uses in its inner loops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "PeriodicGrid",
    "ScalarField",
    "VectorField",
    "SpectralCoeffs",
    "forward",
    "inverse",
    "derivative",
    "gradient",
    "divergence",
    "laplacian_power",
    "integrate",
    "inner",
    "spectral_inner",
    "dealias",
    "dealias_field",
]

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform grid on the ``dim``-dimensional torus [0, length)^dim."""

    dim: int
    n: int
    length: float = TWO_PI

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.n < 8 or self.n % 2:
            raise ValueError(f"n_per_axis must be even and >= 8, got {self.n}")
        if not (self.length > 0 and math.isfinite(self.length)):
            raise ValueError(f"length must be positive, got {self.length}")
        object.__setattr__(self, "length", float(self.length))

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def spacing(self) -> float:
        return self.length / self.n

    @property
    def volume(self) -> float:
        return self.length**self.dim

    @property
    def cutoff(self) -> float:
        """Two-thirds rule radius, in integer wavenumber units."""
        return self.n / 3.0

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        x = np.arange(self.n) * self.spacing
        return tuple(np.meshgrid(*([x] * self.dim), indexing="ij"))

    @cached_property
    def modes(self) -> tuple[np.ndarray, ...]:
        """Integer wavenumbers of the full fftn layout, broadcastable."""
        m = np.fft.fftfreq(self.n, 1.0 / self.n)
        return tuple(
            m.reshape([-1 if a == ax else 1 for a in range(self.dim)]) for ax in range(self.dim)
        )

    @cached_property
    def rmodes(self) -> tuple[np.ndarray, ...]:
        """Integer wavenumbers of the rfftn layout (last axis halved)."""
        out = []
        for ax in range(self.dim):
            if ax == self.dim - 1:
                m = np.fft.rfftfreq(self.n, 1.0 / self.n)
            else:
                m = np.fft.fftfreq(self.n, 1.0 / self.n)
            out.append(m.reshape([-1 if a == ax else 1 for a in range(self.dim)]))
        return tuple(out)

    @cached_property
    def rk(self) -> tuple[np.ndarray, ...]:
        scale = TWO_PI / self.length
        return tuple(m * scale for m in self.rmodes)

    @cached_property
    def rk2(self) -> np.ndarray:
        return sum(k**2 for k in self.rk) + np.zeros(self.rshape)

    @cached_property
    def rshape(self) -> tuple[int, ...]:
        return self.shape[:-1] + (self.n // 2 + 1,)

    @cached_property
    def rmask(self) -> np.ndarray:
        keep = np.ones(self.rshape, dtype=bool)
        for m in self.rmodes:
            keep &= np.abs(m) <= self.cutoff
        return keep

    @cached_property
    def mask(self) -> np.ndarray:
        keep = np.ones(self.shape, dtype=bool)
        for m in self.modes:
            keep &= np.abs(m) <= self.cutoff
        return keep

    @cached_property
    def _nyquist_free(self) -> tuple[np.ndarray, ...]:
        # odd derivatives of the Nyquist mode are not real-representable
        return tuple(np.abs(m) != self.n // 2 for m in self.rmodes)

    def rderiv(self, axis: int, order: int) -> np.ndarray:
        """Multiplier (i k_axis)^order in the rfftn layout (0-based axis)."""
        mult = (1j * self.rk[axis]) ** order
        if order % 2:
            mult = mult * self._nyquist_free[axis]
        return mult

    def sample(self, fn: Callable[..., np.ndarray]) -> "ScalarField":
        """Evaluate ``fn(x0, x1, ...)`` at the nodes."""
        return ScalarField(self, np.broadcast_to(fn(*self.coords), self.shape))


def _check_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        bad = int(np.size(values) - np.count_nonzero(np.isfinite(values)))
        raise ValueError(f"{what} contains {bad} non-finite value(s)")


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real values at the grid nodes."""

    grid: PeriodicGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.shape != self.grid.shape:
            try:
                v = v.reshape(self.grid.shape)
            except ValueError:
                raise ValueError(
                    f"values of shape {np.shape(self.values)} do not fit grid {self.grid.shape}"
                ) from None
        _check_finite(v, "field")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid: PeriodicGrid, c: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(c)))

    def _other(self, other):
        if isinstance(other, ScalarField):
            if other.grid != self.grid:
                raise ValueError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return ScalarField(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return ScalarField(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return ScalarField(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.values)

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())


@dataclass(frozen=True, eq=False)
class VectorField:
    """``dim`` scalar components sharing one grid."""

    components: tuple[ScalarField, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("a vector field needs at least one component")
        grid = comps[0].grid
        if any(c.grid != grid for c in comps):
            raise ValueError("all components must share one grid")
        if len(comps) != grid.dim:
            raise ValueError(f"expected {grid.dim} components, got {len(comps)}")
        object.__setattr__(self, "components", comps)

    @property
    def grid(self) -> PeriodicGrid:
        return self.components[0].grid

    @classmethod
    def from_array(cls, grid: PeriodicGrid, arr) -> "VectorField":
        arr = np.asarray(arr, dtype=float)
        return cls(tuple(ScalarField(grid, a) for a in arr))

    @classmethod
    def zeros(cls, grid: PeriodicGrid) -> "VectorField":
        return cls.from_array(grid, np.zeros((grid.dim,) + grid.shape))

    @classmethod
    def constant(cls, grid: PeriodicGrid, vec: Sequence[float]) -> "VectorField":
        vec = list(vec) + [0.0] * (grid.dim - len(vec))
        return cls.from_array(grid, [np.full(grid.shape, float(v)) for v in vec[: grid.dim]])

    def array(self) -> np.ndarray:
        return np.stack([c.values for c in self.components])

    def __getitem__(self, i: int) -> ScalarField:
        return self.components[i]

    def __len__(self) -> int:
        return len(self.components)


@dataclass(frozen=True, eq=False)
class SpectralCoeffs:
    """Complex coefficients in full fftn layout, zero mode = mean."""

    grid: PeriodicGrid
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex, copy=True)
        if c.shape != self.grid.shape:
            raise ValueError(f"coefficient array {c.shape} does not match grid {self.grid.shape}")
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    def reflected(self) -> np.ndarray:
        """c[-m] for every m."""
        c = self.coeffs
        for ax in range(c.ndim):
            c = np.roll(np.flip(c, axis=ax), 1, axis=ax)
        return c

    def hermitian_defect(self) -> float:
        scale = max(float(np.abs(self.coeffs).max(initial=0.0)), 1e-300)
        return float(np.abs(self.coeffs - np.conj(self.reflected())).max(initial=0.0)) / scale

    def at(self, *m: int) -> complex:
        return complex(self.coeffs[tuple(int(mi) % self.grid.n for mi in m)])


# --------------------------------------------------------------------------
# public operations


def forward(f: ScalarField) -> SpectralCoeffs:
    _check_finite(f.values, "field")
    return SpectralCoeffs(f.grid, np.fft.fftn(f.values) / f.grid.size)


def inverse(c: SpectralCoeffs, tol: float = 1e-12) -> ScalarField:
    defect = c.hermitian_defect()
    if defect > tol:
        raise ValueError(f"coefficients are not Hermitian symmetric (defect {defect:.3e})")
    return ScalarField(c.grid, np.fft.ifftn(c.coeffs * c.grid.size).real)


def derivative(f: ScalarField, axis: int, order: int = 1) -> ScalarField:
    """Spectral derivative along ``axis`` (1-based) of the given order."""
    g = f.grid
    if not 1 <= axis <= g.dim:
        raise ValueError(f"axis must lie in 1..{g.dim}, got {axis}")
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    return ScalarField(g, _deriv(g, f.values, axis - 1, order))


def gradient(f: ScalarField) -> VectorField:
    return VectorField.from_array(f.grid, _grad(f.grid, f.values))


def divergence(v: VectorField) -> ScalarField:
    return ScalarField(v.grid, _div(v.grid, v.array()))


def laplacian_power(f: ScalarField, p: int) -> ScalarField:
    """Apply Δ^p, i.e. multiply coefficients by (-|k|^2)^p."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    return ScalarField(f.grid, _lap(f.grid, f.values, p))


def integrate(f: ScalarField) -> float:
    return float(f.values.mean() * f.grid.volume)


def inner(f: ScalarField, g: ScalarField) -> float:
    """L2 inner product by nodal quadrature."""
    if f.grid != g.grid:
        raise ValueError("fields live on different grids")
    return float((f.values * g.values).mean() * f.grid.volume)


def spectral_inner(f: ScalarField, g: ScalarField) -> float:
    """L2 inner product from the coefficients (Parseval)."""
    cf, cg = forward(f).coeffs, forward(g).coeffs
    return float(np.real(np.vdot(cg, cf)) * f.grid.volume)


def dealias(c: SpectralCoeffs) -> SpectralCoeffs:
    """Zero every mode with some |m_i| > n/3."""
    return SpectralCoeffs(c.grid, np.where(c.grid.mask, c.coeffs, 0.0))


def dealias_field(f: ScalarField) -> ScalarField:
    return ScalarField(f.grid, _dealias(f.grid, f.values))


# --------------------------------------------------------------------------
# array kernels (values arrays in, values arrays out)


def _fft(g: PeriodicGrid, a: np.ndarray) -> np.ndarray:
    return np.fft.rfftn(a, axes=tuple(range(-g.dim, 0)))


def _ifft(g: PeriodicGrid, ah: np.ndarray) -> np.ndarray:
    return np.fft.irfftn(ah, s=g.shape, axes=tuple(range(-g.dim, 0)))


def _deriv(g: PeriodicGrid, a: np.ndarray, axis: int, order: int = 1) -> np.ndarray:
    return _ifft(g, _fft(g, a) * g.rderiv(axis, order))


def _grad(g: PeriodicGrid, a: np.ndarray) -> np.ndarray:
    ah = _fft(g, a)
    return np.stack([_ifft(g, ah * g.rderiv(ax, 1)) for ax in range(g.dim)])


def _div(g: PeriodicGrid, v: np.ndarray) -> np.ndarray:
    acc = sum(_fft(g, v[ax]) * g.rderiv(ax, 1) for ax in range(g.dim))
    return _ifft(g, acc)


def _lap(g: PeriodicGrid, a: np.ndarray, p: int = 1) -> np.ndarray:
    return _ifft(g, _fft(g, a) * (-g.rk2) ** p)


def _hessian(g: PeriodicGrid, a: np.ndarray) -> np.ndarray:
    """Array of shape (dim, dim, *grid) with entries d_a d_b f."""
    ah = _fft(g, a)
    out = np.empty((g.dim, g.dim) + g.shape)
    for i in range(g.dim):
        for j in range(i, g.dim):
            if i == j:
                mult = g.rderiv(i, 2)
            else:
                mult = g.rderiv(i, 1) * g.rderiv(j, 1)
            out[i, j] = _ifft(g, ah * mult)
            out[j, i] = out[i, j]
    return out


def _dealias(g: PeriodicGrid, a: np.ndarray) -> np.ndarray:
    return _ifft(g, _fft(g, a) * g.rmask)


def _integral(g: PeriodicGrid, a: np.ndarray) -> float:
    return float(a.mean() * g.volume)
