import numpy as np
import pytest

from cm_euler3d import cli, driver
from cm_euler3d.config import parse_config
from cm_euler3d.diagnostics import CSV_FIELDS, read_diagnostics
from cm_euler3d.errors import ConfigError, NumericalError
from cm_euler3d.scenarios import Scenario, abc_w0, make_scenario

SMALL_ABC = """\
scenario = abc
t_final = {t_final}
dt = 0.5
checkpoint_every = {every}
[grids]
map_dims = 12
vel_dims = 12
diag_dims = 12
[numerics]
trunc_radius = 4
[diagnostics]
cadence = 0.5
spectra = true
[slice]
axis = 2
center = 0 0
half_widths = 1 1
resolution = 8 8
"""


def small_cfg(t_final=1.0, every=0, **kw):
    cfg = parse_config(SMALL_ABC.format(t_final=t_final, every=every))
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg


def quiet(_msg):
    pass


class TestStep:
    def test_zero_scenario_is_fixed_point(self):
        cfg = parse_config("scenario = zero\n")
        sim = driver.Simulation(cfg)
        sim.run_steps(3)
        assert len(sim.state.stack) == 0
        assert not sim.state.current.disp.data.any()
        assert sim.state.prev_frame.u_jets.data.max() == 0.0
        x = np.random.default_rng(0).uniform(-6, 6, (20, 3))
        assert not sim.vorticity(x).any()

    def test_abc_single_step(self):
        cfg = parse_config("scenario = abc\ndt = 1/12\n[numerics]\ntrunc_radius = 8\n")
        sim = driver.Simulation(cfg)
        sim.step()
        nodes = sim.M.nodes().reshape(-1, 3)
        assert np.abs(sim.vorticity(nodes) - abc_w0(nodes)).max() <= 1e-4

    def test_time_is_step_times_dt(self):
        cfg = parse_config("scenario = zero\ndt = 0.1\n")
        sim = driver.Simulation(cfg)
        times = []
        sim.run_steps(7, callback=lambda s: times.append(s.t))
        assert times == [k * 0.1 for k in range(1, 8)]
        assert sim.state.current.t_start == 7 * 0.1
        assert sim.state.current.steps[0] == 7

    def test_remap_resets_to_identity(self):
        cfg = small_cfg(det_tol=1e-12)
        sim = driver.Simulation(cfg)
        sim.run_steps(2)
        st = sim.state
        assert len(st.stack) == 2 and st.n_maps == 3
        assert [r["step"] for r in st.remaps] == [1, 2]
        assert st.current.det_error() == 0.0
        assert not st.current.disp.data.any()
        assert st.current.t_start == st.stack.maps[-1].t_start == 2 * cfg.dt
        assert st.stack.remap_times == [0.5, 1.0]

    def test_non_finite_vorticity_aborts(self):
        bad = Scenario("bad", make_scenario("zero").domain,
                       lambda x: np.full(np.shape(x), np.nan))
        sim = driver.Simulation(parse_config("scenario = zero\n"), bad)
        with pytest.raises(NumericalError):
            sim.step()


class TestRun:
    def test_t_final_zero(self, tmp_path):
        cfg = small_cfg(t_final=0.0)
        rows = driver.run(cfg, tmp_path, log=quiet)
        assert len(rows) == 1 and rows[0].t == 0.0
        assert rows[0].energy_rel_err == 0.0 and rows[0].helicity_drift == 0.0
        assert rows[0].n_maps == 1
        back = read_diagnostics(tmp_path / "diagnostics.csv")
        assert len(back) == 1
        assert (tmp_path / "spectra" / "enstrophy_s0000000.txt").exists()
        assert (tmp_path / "slices" / "slice00_w_s0000000.bin").exists()
        assert (tmp_path / "stack" / "scenario.cfg").exists()
        assert (tmp_path / "checkpoint" / "state.json").exists()
        assert "finished step=0" in (tmp_path / "manifest.txt").read_text()

    def test_outputs_and_manifest(self, tmp_path):
        cfg = small_cfg(t_final=1.0, det_tol=1e-12, oversample=[16])
        rows = driver.run(cfg, tmp_path, log=quiet)
        assert [r.t for r in rows] == [0.0, 0.5, 1.0]
        assert [r.n_maps for r in rows] == [1, 2, 3]
        text = (tmp_path / "manifest.txt").read_text()
        assert "# version numpy" in text and "#   scenario = abc" in text
        assert "remap step=1" in text and "remap step=2" in text
        assert "oversample n=16" in text
        assert (tmp_path / "spectra" / "enstrophy_16_s0000002.txt").exists()
        # slices default to the final time only
        assert sorted(p.name for p in (tmp_path / "slices").glob("*.bin")) == [
            "slice00_w_s0000002.bin"]
        header = (tmp_path / "diagnostics.csv").read_text().splitlines()[0]
        assert tuple(header.split(",")) == CSV_FIELDS

    def test_determinism(self, tmp_path):
        a = driver.run(small_cfg(), tmp_path / "a", log=quiet)
        b = driver.run(small_cfg(), tmp_path / "b", log=quiet)
        for ra, rb in zip(a, b):
            for k in CSV_FIELDS[:-1]:
                va, vb = getattr(ra, k), getattr(rb, k)
                assert abs(va - vb) <= 1e-13 * max(abs(va), 1e-300)

    def test_resume_reproduces_rows(self, tmp_path):
        full = driver.run(small_cfg(t_final=1.5), tmp_path / "full", log=quiet)
        driver.run(small_cfg(t_final=0.5), tmp_path / "part", log=quiet)
        more = driver.run(small_cfg(t_final=1.5), tmp_path / "part",
                          resume=tmp_path / "part" / "checkpoint", log=quiet)
        assert [r.t for r in more] == [1.0, 1.5]
        for ra, rb in zip(full[2:], more):
            for k in CSV_FIELDS[:-1]:
                va, vb = getattr(ra, k), getattr(rb, k)
                assert abs(va - vb) <= 1e-13 * max(abs(va), 1e-300)
        assert len(read_diagnostics(tmp_path / "part" / "diagnostics.csv")) == 4
        assert "resumed step=1" in (tmp_path / "part" / "manifest.txt").read_text()

    def test_resume_rejects_mismatched_checkpoint(self, tmp_path):
        driver.run(small_cfg(t_final=0.5), tmp_path / "a", log=quiet)
        cfg = small_cfg(t_final=1.0, dt=0.25)
        with pytest.raises(ConfigError):
            driver.run(cfg, tmp_path / "b", resume=tmp_path / "a" / "checkpoint", log=quiet)
        with pytest.raises(ConfigError):
            driver.run(small_cfg(), tmp_path / "c", resume=tmp_path / "none", log=quiet)

    def test_checkpoint_roundtrip(self, tmp_path):
        cfg = small_cfg()
        sim = driver.Simulation(cfg)
        sim.run_steps(2)
        q0 = sim.quantities()
        driver.save_checkpoint(tmp_path, sim.state, cfg, q0)
        st, q = driver.load_checkpoint(tmp_path, cfg, sim.M, sim.V)
        assert st.n == 2 and q.enstrophy == q0.enstrophy
        assert np.array_equal(st.current.disp.data, sim.state.current.disp.data)
        assert np.array_equal(st.prev_frame.u_jets.data, sim.state.prev_frame.u_jets.data)


@pytest.fixture(scope="module")
def stack_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    driver.run(small_cfg(t_final=0.5), out, log=quiet)
    return out / "stack"


class TestResample:
    @pytest.mark.parametrize("quantity", ["w", "u", "tracer"])
    def test_outputs(self, stack_dir, tmp_path, quantity):
        s = driver.resample(stack_dir, 16, quantity, tmp_path)
        spec = np.loadtxt(tmp_path / f"spectrum_{quantity}_16.txt")
        assert spec.shape[1] == 2 and np.allclose(spec[:, 1], s["spectrum"])
        assert (tmp_path / f"summary_{quantity}_16.txt").exists()

    def test_matches_in_memory(self, stack_dir, tmp_path):
        sim = driver.Simulation(small_cfg(t_final=0.5))
        sim.step()
        q = sim.quantities(sim.scenario.grid((16, 16, 16)))
        s = driver.resample(stack_dir, 16, "w", tmp_path)
        assert s["enstrophy"] == pytest.approx(q.enstrophy, rel=1e-13)

    def test_default_output_and_errors(self, stack_dir, tmp_path):
        driver.resample(stack_dir, 8, "w")
        assert (stack_dir.parent / "resample" / "spectrum_w_8.txt").exists()
        with pytest.raises(ConfigError):
            driver.resample(stack_dir, 8, "p")
        with pytest.raises(ConfigError):
            driver.resample(tmp_path, 8, "w")


class TestCli:
    def test_run_and_resample(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(SMALL_ABC.format(t_final=0.5, every=0))
        out = tmp_path / "out"
        assert cli.main(["-q", "run", "--config", str(cfg), "--output", str(out)]) == 0
        assert len(read_diagnostics(out / "diagnostics.csv")) == 2
        assert cli.main(["-q", "resample", "--stack", str(out / "stack"), "--grid", "16",
                         "--quantity", "tracer"]) == 0
        assert (out / "resample" / "spectrum_tracer_16.txt").exists()

    def test_config_errors_exit_2(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("dt = -0.1\n")
        assert cli.main(["-q", "run", "--config", str(bad)]) == 2
        assert cli.main(["-q", "run", "--config", str(tmp_path / "missing.cfg")]) == 2
        assert cli.main(["-q", "resample", "--stack", str(tmp_path), "--grid", "4"]) == 2

    def test_bad_thread_cap_exit_2(self, tmp_path, monkeypatch):
        monkeypatch.setenv("CM_THREADS", "many")
        assert cli.main(["-q", "resample", "--stack", str(tmp_path), "--grid", "16"]) == 2

    def test_numerical_abort_exit_3(self, tmp_path, monkeypatch):
        bad = Scenario("zero", make_scenario("zero").domain,
                       lambda x: np.full(np.shape(x), np.inf))
        monkeypatch.setattr(driver, "build_scenario", lambda cfg: bad)
        cfg = tmp_path / "run.cfg"
        cfg.write_text("scenario = zero\n")
        out = tmp_path / "out"
        assert cli.main(["-q", "run", "--config", str(cfg), "--output", str(out)]) == 3
        assert "aborted step=0" in (out / "manifest.txt").read_text()

    def test_convergence_command(self, tmp_path, capsys):
        report = tmp_path / "conv.txt"
        assert cli.main(["-q", "convergence", "--scenario", "abc", "--levels", "12", "24",
                         "--t-final", "2", "--output", str(report)]) == 0
        text = report.read_text()
        assert "slope" in text and text == capsys.readouterr().out
