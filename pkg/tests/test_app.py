"""
Tests for mixkin.app — configuration parsing, presets, output layout and
short end-to-end scenario runs (including resume).
"""
import csv
import json
import os
import sys

import numpy as np
import pytest

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, REPO_ROOT)

from mixkin.app import (  # noqa: E402
    ENV_OUTPUT_ROOT,
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_NUMERICAL,
    RESOLVED_CONFIG_NAME,
    Scenario,
    exit_code_for,
    load_config,
    parse_config,
    resolve_output_root,
    run,
)
from mixkin.errors import (  # noqa: E402
    CFLError,
    ConfigError,
    ConvergenceError,
    DiagnosticsError,
    GeometryError,
    NonFiniteError,
    SnapshotError,
)
from mixkin.models import dshape_domain, perturb_gc, steady_state  # noqa: E402
from mixkin.store import RunLedger, read_snapshot  # noqa: E402

SMALL_GC = """
[mesh]
nx = 30
ny = 55

[run]
t_end = 0.02
"""

SMALL_DK = """
[mesh]
nx = 16
ny = 16
nz = 5
nv = 9

[run]
t_end = 8.0
"""


def _rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------
class TestConfig:
    def test_desk_defaults(self):
        cfg = parse_config("", "gc-persist")
        assert cfg.scenario is Scenario.GC_PERSIST
        assert (cfg.mesh.nx, cfg.mesh.ny) == (60, 110)
        assert cfg.run.dt == 0.005
        assert cfg.run.method == "fd"
        assert cfg.weno

    def test_dk_defaults(self):
        cfg = parse_config("", Scenario.DK_ITG)
        assert (cfg.mesh.nx, cfg.mesh.ny, cfg.mesh.nz, cfg.mesh.nv) == (32, 32, 8, 17)
        assert cfg.run.method == "mixed"

    def test_full_preset(self):
        cfg = parse_config('[run]\npreset = "full"\n', "dk-itg")
        assert (cfg.mesh.nx, cfg.mesh.ny, cfg.mesh.nz, cfg.mesh.nv) == (128, 128, 32, 65)
        assert cfg.run.t_end == 8000.0
        assert parse_config('[run]\npreset = "full"\n', "steady").mesh.nx == 240

    def test_explicit_values_beat_preset(self):
        cfg = parse_config("[mesh]\nnx = 30\n[run]\ndt = 1\n", "gc-perturb")
        assert cfg.mesh.nx == 30 and cfg.mesh.ny == 110
        assert cfg.run.dt == 1.0 and isinstance(cfg.run.dt, float)

    def test_gc_and_itg_overrides(self):
        cfg = parse_config("[gc]\nepsilon = 0.2\n[itg]\nm = 3\n", "gc-perturb")
        assert cfg.gc.epsilon == 0.2
        assert cfg.itg.m == 3
        assert cfg.to_dict()["gc"]["epsilon"] == 0.2

    def test_malformed_reports_line(self):
        with pytest.raises(ConfigError) as info:
            parse_config("[run]\npreset = \n", "steady")
        assert info.value.line == 2

    def test_unknown_key_reports_line(self):
        with pytest.raises(ConfigError) as info:
            parse_config("[run]\nthreads = 2\nbogus = 1\n", "steady")
        assert info.value.line == 3
        assert "line 3" in str(info.value)

    def test_unknown_section_reports_line(self):
        with pytest.raises(ConfigError) as info:
            parse_config("\n[extra]\nx = 1\n", "steady")
        assert info.value.line == 2

    def test_wrong_type(self):
        with pytest.raises(ConfigError) as info:
            parse_config("[mesh]\nnx = 'a'\n", "steady")
        assert info.value.line == 2

    def test_bad_choice(self):
        with pytest.raises(ConfigError):
            parse_config('[run]\nmethod = "rk"\n', "gc-persist")

    def test_invalid_ranges(self):
        with pytest.raises(ConfigError):
            parse_config("[run]\nthreads = 0\n", "steady")
        with pytest.raises(ConfigError):
            parse_config("[run]\ndt = -1.0\n", "gc-persist")

    def test_unknown_scenario(self):
        with pytest.raises(ConfigError):
            parse_config("", "vlasov")

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(str(tmp_path / "none.toml"), "steady")

    def test_output_root_precedence(self, monkeypatch):
        cfg = parse_config('[run]\noutput_dir = "from-file"\n', "steady")
        monkeypatch.delenv(ENV_OUTPUT_ROOT, raising=False)
        assert resolve_output_root(cfg) == "from-file"
        monkeypatch.setenv(ENV_OUTPUT_ROOT, "from-env")
        assert resolve_output_root(cfg) == "from-env"
        assert resolve_output_root(cfg, "from-flag") == "from-flag"


class TestExitCodes:
    @pytest.mark.parametrize("exc,code", [
        (ConfigError("x"), EXIT_CONFIG),
        (CFLError("x"), EXIT_CONFIG),
        (GeometryError("x"), EXIT_NUMERICAL),
        (ConvergenceError("x", [1.0]), EXIT_NUMERICAL),
        (NonFiniteError("x"), EXIT_NUMERICAL),
        (DiagnosticsError("x"), EXIT_NUMERICAL),
        (SnapshotError("x"), EXIT_IO),
        (PermissionError("x"), EXIT_IO),
    ])
    def test_mapping(self, exc, code):
        assert exit_code_for(exc) == code

    def test_unmapped(self):
        assert exit_code_for(KeyError("x")) is None


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------
@pytest.fixture(scope="module")
def steady_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("steady")
    cfg = parse_config("[mesh]\nnx = 30\nny = 55\n", "steady")
    assert run(cfg, output_root=str(root), emit_plot_data=True) == 0
    return root / "steady"


class TestSteadyRun:
    def test_outputs(self, steady_run):
        names = set(os.listdir(steady_run))
        assert {"steady_phi0_t0.000000.fld", "steady_rho_bar0_t0.000000.fld",
                RESOLVED_CONFIG_NAME, "run_log.jsonl", "steady_phi0.dat"} <= names

    def test_resolved_config_echo(self, steady_run):
        with open(steady_run / RESOLVED_CONFIG_NAME) as f:
            echo = json.load(f)
        assert echo["scenario"] == "steady"
        assert echo["mesh"]["nx"] == 30

    def test_ledger(self, steady_run):
        ledger = RunLedger(str(steady_run))
        assert ledger.count("run_start") == 1
        assert ledger.count("run_finish") == 1
        assert ledger.count("snapshot") == 2

    def test_snapshot_pair(self, steady_run):
        phi0 = read_snapshot(str(steady_run / "steady_phi0_t0.000000.fld"))
        rho0 = read_snapshot(str(steady_run / "steady_rho_bar0_t0.000000.fld"))
        assert phi0.data.shape == (30, 55)
        inside = rho0.data != 0.0
        assert np.allclose(rho0.data[inside], np.expm1(-phi0.data[inside]))

    def test_steady_cannot_resume(self, tmp_path):
        cfg = parse_config("[mesh]\nnx = 30\nny = 55\n", "steady")
        with pytest.raises(ConfigError):
            run(cfg, output_root=str(tmp_path), resume="whatever.fld")


class TestGuidingCentreRun:
    def test_persist_short_run(self, tmp_path):
        cfg = parse_config(SMALL_GC, "gc-persist")
        run(cfg, output_root=str(tmp_path))
        rows = _rows(tmp_path / "gc-persist" / "gc-persist_diagnostics.csv")
        assert len(rows) == 5
        assert float(rows[0]["time"]) == 0.0
        assert float(rows[-1]["time"]) == pytest.approx(0.02)
        assert float(rows[0]["relerr_rho"]) == 0.0
        assert float(rows[-1]["relerr_rho"]) < 1e-2
        masses = [float(r["mass"]) for r in rows]
        assert max(abs(m - masses[0]) for m in masses) <= 1e-12 * float(rows[0]["l1"])
        assert {r["phase"] for r in rows} == {"nonlinear-FD"}
        assert rows[0]["entropy"] == ""

    def test_exterior_keeps_steady_values(self, tmp_path):
        run(parse_config(SMALL_GC, "gc-persist"), output_root=str(tmp_path))
        snap = read_snapshot(str(tmp_path / "gc-persist" / "gc-persist_t0.020000.fld"))
        domain = dshape_domain(30, 55)
        pair = steady_state(domain)
        outside = ~domain.interior
        assert np.array_equal(snap.data[outside], pair.rho_bar0.data[outside])

    def test_perturb_writes_delta_rho(self, tmp_path):
        cfg = parse_config(SMALL_GC + "\n[gc]\nepsilon = 0.2\n", "gc-perturb")
        run(cfg, output_root=str(tmp_path), emit_plot_data=True)
        out = tmp_path / "gc-perturb"
        delta = read_snapshot(str(out / "gc-perturb_delta_rho_t0.020000.fld"))
        assert delta.name == "delta_rho"
        assert np.max(np.abs(delta.data)) > 0.0
        with open(out / RESOLVED_CONFIG_NAME) as f:
            assert json.load(f)["gc"]["epsilon"] == 0.2

    def test_resume_reproduces_diagnostics(self, tmp_path):
        text = SMALL_GC.replace("t_end = 0.02", "t_end = 0.04\nsnapshot_every = 4")
        cfg = parse_config(text, "gc-persist")
        run(cfg, output_root=str(tmp_path / "a"))
        run(cfg, output_root=str(tmp_path / "b"))
        out_b = tmp_path / "b" / "gc-persist"
        snap = sorted(p for p in os.listdir(out_b) if p.endswith(".fld"))[0]
        run(parse_config(text, "gc-persist"), output_root=str(tmp_path / "b"), resume=str(out_b / snap))
        full = (tmp_path / "a" / "gc-persist" / "gc-persist_diagnostics.csv").read_text()
        resumed = (out_b / "gc-persist_diagnostics.csv").read_text()
        assert resumed == full
        assert RunLedger(str(out_b)).count("run_start") == 2

    def test_resume_rejects_other_scenario(self, tmp_path, steady_run):
        cfg = parse_config(SMALL_GC, "gc-persist")
        with pytest.raises(ConfigError):
            run(cfg, output_root=str(tmp_path), resume=str(steady_run / "steady_phi0_t0.000000.fld"))


class TestDriftKineticRun:
    def test_short_sl_run(self, tmp_path):
        cfg = parse_config(SMALL_DK.replace("t_end = 8.0", 't_end = 8.0\nmethod = "sl"'), "dk-itg")
        run(cfg, output_root=str(tmp_path))
        out = tmp_path / "dk-itg"
        rows = _rows(out / "dk-itg_diagnostics.csv")
        assert [float(r["time"]) for r in rows] == pytest.approx([0.0, 4.0, 8.0])
        assert all(r["phase"] == "linear-SL" for r in rows)
        assert all(np.isfinite(float(r["phi_amplitude"])) for r in rows)
        assert all(r["entropy"] != "" for r in rows)
        f = read_snapshot(str(out / "dk-itg_t8.000000.fld"))
        assert f.data.shape == (16, 16, 5, 9)
        assert f.attrs["scenario"] == "dk-itg"
        assert RunLedger(str(out)).count("phase_switch") == 0

    def test_short_mixed_run(self, tmp_path):
        cfg = parse_config(SMALL_DK, "dk-itg")
        run(cfg, output_root=str(tmp_path))
        out = tmp_path / "dk-itg"
        rows = _rows(out / "dk-itg_diagnostics.csv")
        assert float(rows[1]["time"]) == pytest.approx(4.0)
        assert float(rows[-1]["time"]) == pytest.approx(8.0)
        switches = RunLedger(str(out)).count("phase_switch")
        assert switches <= 1
        assert (rows[-1]["phase"] == "nonlinear-FD") == (switches == 1)

    def test_fd_method(self, tmp_path):
        cfg = parse_config(SMALL_DK.replace("t_end = 8.0", 't_end = 2.0\nmethod = "fd"'), "dk-itg")
        run(cfg, output_root=str(tmp_path))
        rows = _rows(tmp_path / "dk-itg" / "dk-itg_diagnostics.csv")
        assert len(rows) == 3
        assert rows[-1]["phase"] == "nonlinear-FD"

    def test_cfl_violation_halves_fd_step(self, tmp_path):
        # z half-steps of 30 exceed 0.5 * dz / v_max = 18.8 on this mesh; 15 do not
        text = SMALL_DK.replace("t_end = 8.0", 't_end = 60.0\nmethod = "fd"\ndt = 60.0')
        run(parse_config(text, "dk-itg"), output_root=str(tmp_path))
        out = tmp_path / "dk-itg"
        assert RunLedger(str(out)).count("dt_reduced") == 1
        rows = _rows(out / "dk-itg_diagnostics.csv")
        assert [float(r["time"]) for r in rows] == pytest.approx([0.0, 30.0, 60.0])


def _best_growth_fit(times, amplitudes, stride=10, growth=1e3):
    """Largest R^2 of a log-linear fit over windows whose amplitude grows by ``growth``."""
    t = np.asarray(times)
    log_a = np.log(np.asarray(amplitudes))
    best = 0.0
    for i in range(0, len(t), stride):
        for j in range(i + 2, len(t)):
            if log_a[j] - log_a[i] < np.log(growth):
                continue
            r = np.corrcoef(t[i:j + 1], log_a[i:j + 1])[0, 1]
            best = max(best, r * r)
            break
    return best


@pytest.mark.slow
class TestDeskAcceptance:
    def test_itg_grows_then_switches_once(self, tmp_path):
        run(parse_config("", "dk-itg"), output_root=str(tmp_path))
        out = tmp_path / "dk-itg"
        assert RunLedger(str(out)).count("phase_switch") == 1
        rows = _rows(out / "dk-itg_diagnostics.csv")
        assert float(rows[-1]["time"]) == pytest.approx(2500.0)
        linear = [r for r in rows if r["phase"] == "linear-SL"]
        times = [float(r["time"]) for r in linear]
        amplitudes = [float(r["phi_amplitude"]) for r in linear]
        assert max(amplitudes) / amplitudes[0] >= 1e3
        assert _best_growth_fit(times, amplitudes) >= 0.95
        switched = [r for r in rows if r["phase"] == "nonlinear-FD"]
        masses = [float(r["mass"]) for r in switched]
        assert max(abs(m - masses[0]) for m in masses) <= 1e-12 * abs(masses[0])

    def test_gc_persist_errors(self, tmp_path):
        run(parse_config("", "gc-persist"), output_root=str(tmp_path))
        rows = _rows(tmp_path / "gc-persist" / "gc-persist_diagnostics.csv")
        assert float(rows[-1]["time"]) == pytest.approx(10.0)
        assert float(rows[-1]["relerr_phi"]) < 1e-2
        assert float(rows[-1]["relerr_rho"]) < 1e-2

    def test_gc_perturb_energy_and_bounds(self, tmp_path):
        run(parse_config("", "gc-perturb"), output_root=str(tmp_path))
        out = tmp_path / "gc-perturb"
        rows = _rows(out / "gc-perturb_diagnostics.csv")
        energy = [float(r["energy"]) for r in rows]
        assert abs(energy[-1] - energy[0]) <= 1e-2 * abs(energy[0])

        domain = dshape_domain(60, 110)
        pair = steady_state(domain)
        start = perturb_gc(pair.rho_bar0, pair.phi0, domain, 0.1, 5, -0.1).data[domain.interior]
        end = read_snapshot(str(out / "gc-perturb_t10.000000.fld")).data[domain.interior]
        delta = 1e-2 * (start.max() - start.min())
        assert end.min() >= start.min() - delta
        assert end.max() <= start.max() + delta
