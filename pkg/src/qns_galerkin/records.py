"""Per-step diagnostics records and their line-oriented JSON stream."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator

from .functionals import BDEntropyBreakdown, EnergyBreakdown


class RecordStreamError(ValueError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


@dataclass
class DiagnosticsRecord:
    step: int
    time: float
    energy: EnergyBreakdown
    dissipation: dict[str, float] = field(default_factory=dict)
    mass: float = 0.0
    min_rho: float = 0.0
    max_rho: float = 0.0
    iterations: int = 0
    floored: bool = False
    dt: float = 0.0
    minv_norm: float = 0.0
    max_div_u: float = 0.0
    picard_ratio: float = 0.0
    bd: BDEntropyBreakdown | None = None

    def to_dict(self) -> dict:
        d = {
            "step": self.step,
            "time": self.time,
            "dt": self.dt,
            "energy": {
                "kinetic": self.energy.kinetic,
                "pressure": self.energy.pressure,
                "cold": self.energy.cold,
                "quantum": self.energy.quantum,
                "hyper": self.energy.hyper,
            },
            "dissipation": dict(self.dissipation),
            "mass": self.mass,
            "min_rho": self.min_rho,
            "max_rho": self.max_rho,
            "iterations": self.iterations,
            "picard_ratio": self.picard_ratio,
            "floored": self.floored,
            "minv_norm": self.minv_norm,
            "max_div_u": self.max_div_u,
        }
        if self.bd is not None:
            b = self.bd
            d["bd"] = {
                "effective_kinetic": b.effective_kinetic,
                "hyper": b.hyper,
                "quantum": b.quantum,
                "pressure": b.pressure,
                "cold": b.cold,
                "log_term": b.log_term,
                "dissipations": dict(b.dissipations),
                "remainders": dict(b.remainders),
            }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DiagnosticsRecord":
        bd = d.get("bd")
        return cls(
            step=int(d["step"]),
            time=float(d["time"]),
            dt=float(d.get("dt", 0.0)),
            energy=EnergyBreakdown(**{k: float(v) for k, v in d["energy"].items()}),
            dissipation={k: float(v) for k, v in d.get("dissipation", {}).items()},
            mass=float(d["mass"]),
            min_rho=float(d["min_rho"]),
            max_rho=float(d["max_rho"]),
            iterations=int(d.get("iterations", 0)),
            picard_ratio=float(d.get("picard_ratio", 0.0)),
            floored=bool(d.get("floored", False)),
            minv_norm=float(d.get("minv_norm", 0.0)),
            max_div_u=float(d.get("max_div_u", 0.0)),
            bd=None if bd is None else BDEntropyBreakdown(**bd),
        )


def write_record(record: DiagnosticsRecord) -> bytes:
    """One record as a newline-terminated JSON line.

    Python's float repr round-trips exactly, so the encoding is lossless.
    """
    return (json.dumps(record.to_dict(), allow_nan=False, separators=(",", ":")) + "\n").encode()


def read_record(data: bytes, offset: int = 0) -> DiagnosticsRecord:
    try:
        obj = json.loads(data.decode("utf-8"))
        return DiagnosticsRecord.from_dict(obj)
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise RecordStreamError(f"corrupt record: {exc}", offset) from None


def iter_records(data: bytes) -> Iterator[DiagnosticsRecord]:
    offset = 0
    for line in data.splitlines(keepends=True):
        if not line.endswith(b"\n"):
            raise RecordStreamError("truncated record", offset)
        if line.strip():
            yield read_record(line, offset)
        offset += len(line)


def read_records(path: str | os.PathLike) -> list[DiagnosticsRecord]:
    with open(path, "rb") as fh:
        return list(iter_records(fh.read()))


class RecordWriter:
    """Append-only writer for a record stream."""

    def __init__(self, path: str | os.PathLike):
        self.path = path
        self._fh: IO[bytes] = open(path, "ab")

    def append(self, record: DiagnosticsRecord) -> None:
        self._fh.write(write_record(record))
        self._fh.flush()

    def extend(self, records: Iterable[DiagnosticsRecord]) -> None:
        for r in records:
            self.append(r)

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
