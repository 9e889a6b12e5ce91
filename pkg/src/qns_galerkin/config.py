"""Run configuration: parsing, validation and the initial-data library.

A configuration is one JSON object.  Every key is optional; omitted keys take
the defaults in :data:`DEFAULTS`.  Environment variables prefixed with
``QNS_`` override fields, with ``__`` separating nested keys, e.g.
``QNS_PARAMS__KAPPA=1e-3`` or ``QNS_DT=5e-4``.
"""

from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .functionals import ModelParams
from .spectral import PeriodicGrid, _dealias

ENV_PREFIX = "QNS_"

PROFILES = ("constant", "single_mode", "random", "near_vacuum", "coefficients")

DEFAULTS: dict[str, Any] = {
    "name": "",
    "grid": {"dim": 1, "n": 64, "length": 2 * math.pi},
    "params": {
        "gamma": 1.5,
        "kappa": 0.0,
        "r0": 0.0,
        "r1": 0.0,
        "epsilon": 0.0,
        "mu": 0.0,
        "eta": 0.0,
        "delta": 0.0,
        "floor_rho": 1e-8,
    },
    "N": 7,
    "dt": 1e-3,
    "T": 0.5,
    "initial": {"profile": "constant"},
    "nu": 0.05,
    "snapshot_stride": 1,
    "bd_stride": 0,
    "strict": False,
    "seed": 0,
    "picard_tol": 1e-10,
    "max_iter": 12,
    "retry_budget": 8,
}


class ConfigError(ValueError):
    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.violations))


@dataclass(frozen=True)
class RunConfig:
    grid: PeriodicGrid
    params: ModelParams
    N: int
    dt: float
    T: float
    initial: dict = field(default_factory=lambda: {"profile": "constant"})
    nu: float = 0.05
    snapshot_stride: int = 1
    bd_stride: int = 0
    strict: bool = False
    seed: int = 0
    picard_tol: float = 1e-10
    max_iter: int = 12
    retry_budget: int = 8
    name: str = ""

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "grid": {"dim": self.grid.dim, "n": self.grid.n, "length": self.grid.length},
            "params": dict(self.params.__dict__),
            "N": self.N,
            "dt": self.dt,
            "T": self.T,
            "initial": copy.deepcopy(self.initial),
            "nu": self.nu,
            "snapshot_stride": self.snapshot_stride,
            "bd_stride": self.bd_stride,
            "strict": self.strict,
            "seed": self.seed,
            "picard_tol": self.picard_tol,
            "max_iter": self.max_iter,
            "retry_budget": self.retry_budget,
        }

    def replace(self, **changes) -> "RunConfig":
        """Copy with top-level fields or model parameters changed."""
        data = self.to_dict()
        for key, value in changes.items():
            if key in data["params"]:
                data["params"][key] = value
            elif key in data:
                data[key] = value
            else:
                raise KeyError(key)
        return build_config(data)


def _merge(base: dict, override: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict) and k != "initial":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def apply_env_overrides(data: dict, environ: Mapping[str, str]) -> dict:
    out = copy.deepcopy(data)
    for key in sorted(environ):
        if not key.startswith(ENV_PREFIX):
            continue
        path = [p.lower() for p in key[len(ENV_PREFIX) :].split("__")]
        if path == ["n"] or path[0] == "n":
            path[0] = "N"  # the Galerkin dimension is spelled upper-case
        try:
            value = json.loads(environ[key])
        except json.JSONDecodeError:
            value = environ[key]
        node = out
        for p in path[:-1]:
            node = node.setdefault(p, {})
        node[path[-1]] = value
    return out


def _num(data, path, violations, *, integer=False):
    node = data
    for p in path:
        node = node[p]
    ok = isinstance(node, (int, float)) and not isinstance(node, bool)
    if integer:
        ok = ok and float(node).is_integer()
    if not ok or not math.isfinite(float(node)):
        kind = "an integer" if integer else "a finite number"
        violations.append(f"{'.'.join(path)}: must be {kind}, got {node!r}")
        return None
    return int(node) if integer else float(node)


def build_config(data: Mapping) -> RunConfig:
    """Validate a (possibly partial) config mapping and return a RunConfig."""
    violations: list[str] = []
    unknown = set(data) - set(DEFAULTS)
    for k in sorted(unknown):
        violations.append(f"{k}: unknown field")
    merged = _merge(DEFAULTS, {k: v for k, v in data.items() if k in DEFAULTS})
    for section in ("grid", "params"):
        extra = set(merged[section]) - set(DEFAULTS[section])
        for k in sorted(extra):
            violations.append(f"{section}.{k}: unknown field")

    dim = _num(merged, ["grid", "dim"], violations, integer=True)
    n = _num(merged, ["grid", "n"], violations, integer=True)
    length = _num(merged, ["grid", "length"], violations)
    if dim is not None and dim not in (1, 2, 3):
        violations.append(f"grid.dim: must be 1, 2 or 3, got {dim}")
    if n is not None and (n < 8 or n % 2):
        violations.append(f"grid.n: must be even and >= 8, got {n}")
    if length is not None and length <= 0:
        violations.append(f"grid.length: must be > 0, got {length}")

    pvals = {}
    for k in DEFAULTS["params"]:
        pvals[k] = _num(merged, ["params", k], violations)
    if pvals["gamma"] is not None and not pvals["gamma"] > 1:
        violations.append(f"params.gamma: adiabatic exponent must satisfy gamma > 1, got {pvals['gamma']}")
    for k in ("kappa", "r0", "r1", "epsilon", "mu", "eta", "delta"):
        if pvals[k] is not None and pvals[k] < 0:
            violations.append(f"params.{k}: must be >= 0, got {pvals[k]}")
    if pvals["floor_rho"] is not None and not pvals["floor_rho"] > 0:
        violations.append(f"params.floor_rho: must be > 0, got {pvals['floor_rho']}")

    N = _num(merged, ["N"], violations, integer=True)
    dt = _num(merged, ["dt"], violations)
    T = _num(merged, ["T"], violations)
    nu = _num(merged, ["nu"], violations)
    stride = _num(merged, ["snapshot_stride"], violations, integer=True)
    bd_stride = _num(merged, ["bd_stride"], violations, integer=True)
    seed = _num(merged, ["seed"], violations, integer=True)
    tol = _num(merged, ["picard_tol"], violations)
    max_iter = _num(merged, ["max_iter"], violations, integer=True)
    retry = _num(merged, ["retry_budget"], violations, integer=True)
    if dt is not None and not dt > 0:
        violations.append(f"dt: must be > 0, got {dt}")
    if T is not None and not T > 0:
        violations.append(f"T: must be > 0, got {T}")
    if dt and T and dt > 0 and T > 0 and abs(T / dt - round(T / dt)) > 1e-9 * (T / dt):
        violations.append(f"T: must be an integer multiple of dt ({T} / {dt})")
    if nu is not None and not nu > 0:
        violations.append(f"nu: initial density floor must be > 0, got {nu}")
    if N is not None and N < 1:
        violations.append(f"N: must be >= 1, got {N}")
    if stride is not None and stride < 1:
        violations.append(f"snapshot_stride: must be >= 1, got {stride}")
    if bd_stride is not None and bd_stride < 0:
        violations.append(f"bd_stride: must be >= 0, got {bd_stride}")
    if tol is not None and not tol > 0:
        violations.append(f"picard_tol: must be > 0, got {tol}")
    if max_iter is not None and max_iter < 1:
        violations.append(f"max_iter: must be >= 1, got {max_iter}")
    if retry is not None and retry < 0:
        violations.append(f"retry_budget: must be >= 0, got {retry}")
    if not isinstance(merged["strict"], bool):
        violations.append(f"strict: must be true or false, got {merged['strict']!r}")
    if not isinstance(merged["name"], str):
        violations.append("name: must be a string")
    initial = merged["initial"]
    if not isinstance(initial, Mapping):
        violations.append("initial: must be an object")
    elif initial.get("profile", "constant") not in PROFILES:
        violations.append(
            f"initial.profile: unknown profile {initial.get('profile')!r}; expected one of {', '.join(PROFILES)}"
        )

    if not violations and dim is not None and n is not None and N is not None:
        from .galerkin import available_modes

        cap = available_modes(PeriodicGrid(dim, n, length))
        if N > cap:
            violations.append(f"N: {N} exceeds the {cap} dealiased vector modes of the grid")

    if violations:
        raise ConfigError(violations)

    return RunConfig(
        grid=PeriodicGrid(dim, n, length),
        params=ModelParams(**pvals),
        N=N,
        dt=dt,
        T=T,
        initial=dict(initial),
        nu=nu,
        snapshot_stride=stride,
        bd_stride=bd_stride,
        strict=merged["strict"],
        seed=seed,
        picard_tol=tol,
        max_iter=max_iter,
        retry_budget=retry,
        name=merged["name"],
    )


def parse_config(text: str, environ: Mapping[str, str] | None = None) -> RunConfig:
    """Parse a JSON config document, apply env overrides, validate."""
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError([f"<document>: not valid JSON ({exc.msg} at line {exc.lineno})"]) from None
    if not isinstance(data, dict):
        raise ConfigError(["<document>: top level must be an object"])
    if environ:
        data = apply_env_overrides(data, environ)
    return build_config(data)


def load_config(path: str, use_env: bool = True) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text, os.environ if use_env else None)


# --------------------------------------------------------------------------
# initial data


def _trig(grid: PeriodicGrid, terms, axis_default=0) -> np.ndarray:
    out = np.zeros(grid.shape)
    scale = 2 * math.pi / grid.length
    for t in terms:
        k = list(t.get("k", [1]))
        k = k + [0] * (grid.dim - len(k))
        phase = sum(scale * ki * x for ki, x in zip(k[: grid.dim], grid.coords))
        out = out + float(t.get("cos", 0.0)) * np.cos(phase) + float(t.get("sin", 0.0)) * np.sin(phase)
    return out


def _velocity(grid: PeriodicGrid, spec: Mapping, rng: np.random.Generator) -> np.ndarray:
    u = np.zeros((grid.dim,) + grid.shape)
    if not spec:
        return u
    if spec.get("random"):
        kmax = int(spec.get("kmax", 2))
        amp = float(spec.get("amplitude", 0.1))
        for c in range(grid.dim):
            u[c] = _random_band(grid, kmax, rng)
        peak = np.abs(u).max()
        return amp * u / peak if peak > 0 else u
    amp = float(spec.get("amplitude", 0.0))
    k = int(spec.get("wavenumber", 1))
    comp = int(spec.get("component", 0))
    axis = int(spec.get("axis", 0))
    kind = spec.get("kind", "sin")
    x = grid.coords[axis] * (2 * math.pi / grid.length)
    fn = {"sin": np.sin, "cos": np.cos}[kind]
    u[comp] = amp * fn(k * x)
    return u


def _random_band(grid: PeriodicGrid, kmax: int, rng: np.random.Generator) -> np.ndarray:
    """Random real trigonometric polynomial with |m_i| <= kmax, decaying spectrum."""
    out = np.zeros(grid.shape)
    scale = 2 * math.pi / grid.length
    ranges = [range(-kmax, kmax + 1)] * grid.dim
    for m in np.array(np.meshgrid(*ranges, indexing="ij")).reshape(grid.dim, -1).T:
        nz = m[m != 0]
        if nz.size == 0 or nz[0] < 0:
            continue
        a, b = rng.normal(size=2) / (1.0 + float(m @ m))
        phase = sum(scale * mi * x for mi, x in zip(m, grid.coords))
        out += a * np.cos(phase) + b * np.sin(phase)
    return out


def initial_fields(cfg: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    """Mollified initial density (>= nu) and momentum arrays."""
    g = cfg.grid
    spec = dict(cfg.initial)
    profile = spec.get("profile", "constant")
    rng = np.random.default_rng(cfg.seed)
    mean = float(spec.get("rho_mean", 1.0))
    x0 = g.coords[int(spec.get("axis", 0))] * (2 * math.pi / g.length)
    if profile == "constant":
        rho = np.full(g.shape, mean)
    elif profile == "single_mode":
        a = float(spec.get("amplitude", 0.2))
        k = int(spec.get("wavenumber", 1))
        rho = mean * (1.0 + a * np.sin(k * x0))
    elif profile == "random":
        a = float(spec.get("amplitude", 0.2))
        pert = _random_band(g, int(spec.get("kmax", 4)), rng)
        peak = np.abs(pert).max()
        rho = mean * (1.0 + (a * pert / peak if peak > 0 else pert))
    elif profile == "near_vacuum":
        a = float(spec.get("amplitude", 1.0))
        p = float(spec.get("power", 2.0))
        rho = cfg.nu + a * (1.0 + np.cos(x0)) ** p
    elif profile == "coefficients":
        rho = mean + _trig(g, spec.get("rho", []))
    else:  # guarded by build_config
        raise ValueError(f"unknown profile {profile!r}")

    rho = _dealias(g, rho)
    lo = float(rho.min())
    if lo < cfg.nu:
        rho = rho + (cfg.nu - lo)

    if profile == "coefficients":
        mom = spec.get("momentum", [])
        m0 = np.zeros((g.dim,) + g.shape)
        for c, terms in enumerate(mom[: g.dim]):
            m0[c] = _trig(g, terms)
    else:
        m0 = rho * _velocity(g, spec.get("velocity", {}), rng)
    return rho, m0
