import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qns_galerkin.cli import main
from qns_galerkin.config import DEFAULTS, ConfigError, build_config, initial_fields, parse_config
from qns_galerkin.functionals import BDEntropyBreakdown, EnergyBreakdown
from qns_galerkin.records import (
    DiagnosticsRecord,
    RecordStreamError,
    RecordWriter,
    iter_records,
    read_record,
    read_records,
    write_record,
)

finite = st.floats(allow_nan=False, allow_infinity=False)


def record(step=3, **changes):
    fields = dict(
        step=step,
        time=step * 1e-3,
        dt=1e-3,
        energy=EnergyBreakdown(0.1, 2.0, 1e-6, 0.03, 1e-12),
        dissipation={"viscous": 0.5, "drag_linear": 1 / 3},
        mass=2 * math.pi,
        min_rho=0.8,
        max_rho=1.2,
        iterations=4,
        floored=False,
        minv_norm=1.25,
        max_div_u=0.7,
        picard_ratio=0.01,
        bd=BDEntropyBreakdown(1.0, 2.0, 3.0, 4.0, 5.0, -6.0, {"pressure": 0.1}, {"R1": -1e-300}),
    )
    fields.update(changes)
    return DiagnosticsRecord(**fields)


class TestConfig:
    def test_minimal_config_takes_defaults(self):
        cfg = parse_config("{}")
        assert cfg.grid.dim == DEFAULTS["grid"]["dim"] and cfg.grid.n == DEFAULTS["grid"]["n"]
        assert cfg.params.gamma == 1.5 and cfg.params.kappa == 0.0
        assert cfg.N == 7 and cfg.dt == 1e-3 and cfg.T == 0.5 and cfg.n_steps == 500
        assert cfg.initial == {"profile": "constant"}

    def test_gamma_one_rejected(self):
        with pytest.raises(ConfigError) as info:
            parse_config('{"params": {"gamma": 1}}')
        assert any("params.gamma" in v and "gamma > 1" in v for v in info.value.violations)

    def test_zero_step_rejected(self):
        with pytest.raises(ConfigError) as info:
            parse_config('{"dt": 0}')
        assert any(v.startswith("dt:") for v in info.value.violations)

    def test_all_violations_reported_with_paths(self):
        with pytest.raises(ConfigError) as info:
            parse_config('{"dt": -1, "nu": 0, "grid": {"n": 7}, "params": {"kappa": -1}, "bogus": 1}')
        paths = {v.split(":")[0] for v in info.value.violations}
        assert {"dt", "nu", "grid.n", "params.kappa", "bogus"} <= paths

    def test_not_json(self):
        with pytest.raises(ConfigError, match="not valid JSON"):
            parse_config("{")

    def test_oversized_basis_rejected(self):
        with pytest.raises(ConfigError, match="exceeds"):
            parse_config('{"grid": {"n": 16}, "N": 12}')

    def test_env_overrides(self):
        env = {"QNS_PARAMS__KAPPA": "0.25", "QNS_DT": "5e-4", "QNS_N": "3", "OTHER": "1"}
        cfg = parse_config('{"params": {"kappa": 0.1}}', env)
        assert cfg.params.kappa == 0.25 and cfg.dt == 5e-4 and cfg.N == 3

    def test_replace(self):
        cfg = parse_config("{}").replace(eta=1e-3, T=0.1)
        assert cfg.params.eta == 1e-3 and cfg.n_steps == 100
        with pytest.raises(KeyError):
            cfg.replace(nonsense=1)

    def test_to_dict_round_trip(self, standard_config):
        assert build_config(standard_config.to_dict()) == standard_config

    @pytest.mark.parametrize("name", ["standard", "stationary", "near_vacuum", "random_2d"])
    def test_shipped_initial_data_respect_floor(self, configs_dir, name):
        from qns_galerkin.config import load_config

        cfg = load_config(configs_dir / f"{name}.json", use_env=False)
        rho, m = initial_fields(cfg)
        assert rho.min() >= cfg.nu
        assert np.all(np.isfinite(m))

    def test_random_profile_is_seeded(self):
        cfg = parse_config('{"initial": {"profile": "random", "velocity": {"random": true}}, "seed": 4}')
        a, b = initial_fields(cfg), initial_fields(cfg)
        np.testing.assert_array_equal(a[0], b[0])
        c = initial_fields(cfg.replace(seed=5))
        assert not np.array_equal(a[0], c[0])


class TestRecords:
    def test_round_trip(self):
        r = record()
        assert read_record(write_record(r)) == r

    def test_empty_dissipation_map(self):
        r = record(dissipation={}, bd=None)
        back = read_record(write_record(r))
        assert back == r and back.dissipation == {}

    @given(finite, finite, finite, st.dictionaries(st.text(min_size=1, max_size=8), finite, max_size=4))
    def test_lossless_floats(self, a, b, c, diss):
        r = record(time=a, mass=b, energy=EnergyBreakdown(a, b, c, 0.0, -0.0), dissipation=diss)
        assert read_record(write_record(r)) == r

    def test_long_stream_in_order(self, tmp_path):
        path = tmp_path / "records.jsonl"
        with RecordWriter(path) as w:
            w.extend(record(step=i, bd=None) for i in range(10_000))
        back = read_records(path)
        assert [r.step for r in back] == list(range(10_000))

    def test_writer_appends(self, tmp_path):
        path = tmp_path / "records.jsonl"
        with RecordWriter(path) as w:
            w.append(record(step=0))
        with RecordWriter(path) as w:
            w.append(record(step=1))
        assert [r.step for r in read_records(path)] == [0, 1]

    def test_corrupt_record_reports_offset(self):
        good = write_record(record(step=0))
        data = good + b'{"step": 1, "time": \n' + good
        with pytest.raises(RecordStreamError) as info:
            list(iter_records(data))
        assert info.value.offset == len(good)
        assert f"byte offset {len(good)}" in str(info.value)

    def test_truncated_stream_reports_offset(self):
        good = write_record(record(step=0))
        data = good + good[:-10]
        with pytest.raises(RecordStreamError, match="truncated") as info:
            list(iter_records(data))
        assert info.value.offset == len(good)

    def test_non_finite_values_refused(self):
        with pytest.raises(ValueError):
            write_record(record(mass=float("nan")))


class TestCli:
    def test_unknown_subcommand(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["bogus"])
        assert info.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_verify_passes(self, capsys, tmp_path):
        assert main(["verify", "--checks", "20", "--seed", "7", "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out.splitlines()
        assert len(out) == 5 and all(line.startswith("PASS") for line in out)
        assert (tmp_path / "verify.csv").read_text().startswith("check,passed")

    def test_simulate_stationary(self, capsys, tmp_path, configs_dir):
        assert main(["simulate", "--config", str(configs_dir / "stationary.json"), "--out", str(tmp_path)]) == 0
        records = read_records(tmp_path / "records.jsonl")
        assert len(records) == 501
        e0 = records[0].energy.total
        assert max(abs(r.energy.total - e0) for r in records) <= 1e-10
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["status"] == "completed" and summary["label"] == "1D test vehicle"

    def test_simulate_refuses_existing_stream(self, capsys, tmp_path, configs_dir):
        (tmp_path / "records.jsonl").write_text("keep me\n")
        status = main(["simulate", "--config", str(configs_dir / "stationary.json"), "--out", str(tmp_path)])
        assert status == 1
        err = json.loads(capsys.readouterr().err)
        assert err["kind"] == "output"
        assert (tmp_path / "records.jsonl").read_text() == "keep me\n"

    def test_bad_config_is_machine_readable(self, capsys, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text('{"params": {"gamma": 0.5}}')
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 1
        err = json.loads(capsys.readouterr().err)
        assert err["kind"] == "config" and "gamma > 1" in err["error"]

    def test_failed_run_keeps_partial_stream(self, capsys, tmp_path):
        cfg = tmp_path / "fragile.json"
        cfg.write_text(json.dumps({
            "T": 0.01, "max_iter": 1, "retry_budget": 0,
            "initial": {"profile": "single_mode", "velocity": {"amplitude": 0.5}},
        }))
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 1
        assert json.loads(capsys.readouterr().err)["kind"] == "run"
        assert len(read_records(tmp_path / "records.jsonl")) == 1
        assert json.loads((tmp_path / "summary.json").read_text())["status"] == "failed"

    def test_report_is_deterministic(self, capsys, tmp_path, configs_dir):
        cfg = tmp_path / "short.json"
        data = json.loads((configs_dir / "standard.json").read_text())
        data["T"] = 0.01
        cfg.write_text(json.dumps(data))
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 0
        stream = tmp_path / "run" / "records.jsonl"
        assert main(["report", str(stream), "--out", str(tmp_path / "a.csv")]) == 0
        assert main(["report", str(stream), "--out", str(tmp_path / "b.csv")]) == 0
        a = (tmp_path / "a.csv").read_text()
        assert a == (tmp_path / "b.csv").read_text()
        lines = a.splitlines()
        assert lines[0].startswith("step,time,kinetic") and len(lines) == 12

    def test_report_corrupt_stream(self, capsys, tmp_path):
        stream = tmp_path / "records.jsonl"
        stream.write_bytes(write_record(record(step=0)) + b"garbage\n")
        assert main(["report", str(stream)]) == 1
        err = json.loads(capsys.readouterr().err.splitlines()[-1])
        assert err["kind"] == "records" and "byte offset" in err["error"]

    def test_sweep_and_report(self, capsys, tmp_path):
        cfg = tmp_path / "sweep.json"
        cfg.write_text(json.dumps({
            "grid": {"n": 32}, "N": 5, "T": 0.01, "params": {"mu": 1e-3},
            "initial": {"profile": "single_mode"},
        }))
        argv = ["sweep", "--config", str(cfg), "--out", str(tmp_path), "--parameter", "eta", "--values", "1e-2", "1e-3"]
        assert main(argv) == 0
        table = tmp_path / "sweep_eta.json"
        assert main(["report", str(table)]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[-3] == "eta,status,eta_metric"

    def test_sweep_rejects_increasing_values(self, capsys, tmp_path, configs_dir):
        argv = ["sweep", "--config", str(configs_dir / "standard.json"), "--out", str(tmp_path),
                "--parameter", "eta", "--values", "1e-3", "1e-2"]
        assert main(argv) == 2
        assert json.loads(capsys.readouterr().err)["kind"] == "usage"
