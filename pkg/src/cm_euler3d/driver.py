"""Time stepping, run orchestration, checkpoints and offline resampling.

One step performs, in order: vorticity sampling on the velocity grid by
pullback, Biot-Savart inversion, spectral velocity jets, the advective
bracket and its velocity time derivative, the time-space velocity
interpolant, the backward one-step map on the map grid, the composition
update and the remapping check.
"""

from __future__ import annotations

import json
import platform
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__
from . import spectral as sp
from .config import RunConfig, load_config
from .diagnostics import (DiagnosticsRow, DiagnosticsWriter, FlowQuantities,
                          conserved_quantities, make_row, quantities_from_vorticity,
                          slice_sample, tracer_field, vorticity_evaluator, write_slice)
from .errors import ConfigError, NumericalError
from .field_jet import GridSpec, JetVectorField
from .flowmap import (DisplacementMap, RemapPolicy, SubmapStack, compose_update,
                      identity_map, maybe_remap, one_step_map, pullback_scalar,
                      pullback_vorticity, sample_on_grid)
from .fluid_state import VelocityFrame, VelocityInterpolant, build_frame, sample_vorticity
from .scenarios import Scenario, make_scenario


@dataclass
class RunState:
    """Loop state: step counter, maps and the previous velocity frame.

    The current time is ``n * dt``, computed by multiplication so that no
    rounding drift accumulates.
    """

    n: int
    dt: float
    stack: SubmapStack
    current: DisplacementMap
    prev_frame: Optional[VelocityFrame] = None
    remaps: list[dict] = field(default_factory=list)

    @property
    def t(self) -> float:
        return self.n * self.dt

    @property
    def n_maps(self) -> int:
        return len(self.stack) + 1


def build_scenario(cfg: RunConfig) -> Scenario:
    """Scenario object described by a configuration."""
    return make_scenario(cfg.scenario, cfg.construction_n, **cfg.scenario_params)


def grids_for(cfg: RunConfig, scenario: Scenario) -> tuple[GridSpec, GridSpec, GridSpec]:
    """Map, velocity and diagnostic grids."""
    return (scenario.grid(cfg.map_dims), scenario.grid(cfg.vel_dims),
            scenario.grid(cfg.resolved_diag_dims()))


def initial_state(cfg: RunConfig, map_grid: GridSpec) -> RunState:
    return RunState(0, cfg.dt, SubmapStack(), identity_map(map_grid, 0.0, 0))


def step(state: RunState, cfg: RunConfig, scenario: Scenario,
         grids: Optional[tuple[GridSpec, GridSpec]] = None) -> RunState:
    """Advance the run state by one time step.

    Raises
    ------
    NumericalError
        On non-finite vorticity or velocity, or a singular map.
    """
    M, V = grids if grids is not None else grids_for(cfg, scenario)[:2]
    dt = cfg.dt
    t_n = state.n * dt
    w = sample_vorticity(state.stack, state.current, scenario.w0_eval, V, cfg.sampling)
    if not np.all(np.isfinite(w)):
        raise NumericalError(f"non-finite vorticity sample at t={t_n}")
    frame = build_frame(w, V, cfg.trunc_radius, t_n)
    interp = VelocityInterpolant(state.prev_frame, frame, dt)
    X = one_step_map(interp, t_n, dt, M, cfg.eps)
    n1 = state.n + 1
    current = compose_update(state.current, X, n1 * dt, n1)
    n_before = len(state.stack)
    stack, current = maybe_remap(state.stack, current, RemapPolicy(cfg.det_tol))
    remaps = list(state.remaps)
    if len(stack) > n_before:
        remaps.append({"step": n1, "t": n1 * dt, "det_error": stack.det_errors[-1]})
    frame.u_hat = None
    frame.w_hat = None
    return RunState(n1, dt, stack, current, frame, remaps)


class Simulation:
    """In-memory run of a configuration (no files written).

    Parameters
    ----------
    cfg : RunConfig
    scenario : Scenario, optional
        Pre-built scenario (built from ``cfg`` when omitted).
    """

    def __init__(self, cfg: RunConfig, scenario: Optional[Scenario] = None):
        self.cfg = cfg
        self.scenario = scenario or build_scenario(cfg)
        self.M, self.V, self.D = grids_for(cfg, self.scenario)
        self.state = initial_state(cfg, self.M)

    @property
    def t(self) -> float:
        return self.state.t

    def step(self) -> None:
        self.state = step(self.state, self.cfg, self.scenario, (self.M, self.V))

    def run_steps(self, n: int, callback: Optional[Callable[["Simulation"], None]] = None):
        for _ in range(n):
            self.step()
            if callback is not None:
                callback(self)

    def vorticity(self, x) -> np.ndarray:
        return pullback_vorticity(self.state.stack, self.state.current,
                                  self.scenario.w0_eval, x)

    def tracer(self, x) -> np.ndarray:
        return pullback_scalar(self.state.stack, self.state.current, self.scenario.phi0, x)

    def quantities(self, grid: Optional[GridSpec] = None, spectra: bool = False
                   ) -> FlowQuantities:
        return conserved_quantities(self.state.stack, self.state.current,
                                    self.scenario.w0_eval, grid or self.D, spectra)


# ----------------------------------------------------------------------------
# Checkpoints
# ----------------------------------------------------------------------------

def save_checkpoint(directory: str | Path, state: RunState, cfg: RunConfig,
                    q0: Optional[FlowQuantities]) -> Path:
    """Persist everything needed to continue a run bit-for-bit."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    state.stack.save(directory / "stack", state.current)
    (directory / "stack" / "scenario.cfg").write_text(cfg.to_text())
    meta = {"n": state.n, "dt": state.dt, "remaps": state.remaps}
    if q0 is not None:
        meta["q0"] = {"enstrophy": q0.enstrophy, "energy": q0.energy,
                      "helicity": q0.helicity, "max_w": q0.max_w, "max_u": q0.max_u}
    (directory / "state.json").write_text(json.dumps(meta, indent=1))
    if state.prev_frame is not None:
        f = state.prev_frame
        np.savez(directory / "prev_frame.npz", t=f.t, u=f.u_jets.data, dudt=f.dudt_jets.data)
    elif (directory / "prev_frame.npz").exists():
        (directory / "prev_frame.npz").unlink()
    return directory


def load_checkpoint(directory: str | Path, cfg: RunConfig, map_grid: GridSpec,
                    vel_grid: GridSpec) -> tuple[RunState, Optional[FlowQuantities]]:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    directory = Path(directory)
    meta_path = directory / "state.json"
    if not meta_path.exists():
        raise ConfigError(f"{meta_path}: checkpoint state not found")
    meta = json.loads(meta_path.read_text())
    if abs(meta["dt"] - cfg.dt) > 1e-15:
        raise ConfigError("checkpoint time step differs from the configuration")
    stack, tail = SubmapStack.load(directory / "stack")
    if tail is None:
        raise ConfigError(f"{directory}: checkpoint has no current map")
    if tail.grid != map_grid:
        raise ConfigError("checkpoint map grid differs from the configuration")
    prev = None
    fpath = directory / "prev_frame.npz"
    if fpath.exists():
        with np.load(fpath) as z:
            prev = VelocityFrame(float(z["t"]), JetVectorField(vel_grid, z["u"]),
                                 JetVectorField(vel_grid, z["dudt"]))
    q0 = None
    if "q0" in meta:
        q0 = FlowQuantities(**meta["q0"])
    return RunState(int(meta["n"]), cfg.dt, stack, tail, prev, meta.get("remaps", [])), q0


# ----------------------------------------------------------------------------
# Full runs with outputs
# ----------------------------------------------------------------------------

def _versions() -> dict:
    import numba
    import scipy
    return {"cm_euler3d": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


class _Manifest:
    def __init__(self, path: Path, cfg: RunConfig):
        self.path = path
        self.header = ["# run manifest", f"# started {time.strftime('%Y-%m-%dT%H:%M:%S')}"]
        self.header += [f"# version {k} {v}" for k, v in _versions().items()]
        self.header += ["# configuration:"] + [f"#   {ln}" for ln in cfg.to_text().splitlines()]
        self.events: list[str] = []
        self.flush()

    def add(self, line: str) -> None:
        self.events.append(line)
        self.flush()

    def flush(self) -> None:
        self.path.write_text("\n".join(self.header + self.events) + "\n")


def _emit_spectra(outdir: Path, n: int, q: FlowQuantities, tag: str = "") -> None:
    """Spectrum files are keyed by step index rather than by time."""
    d = outdir / "spectra"
    d.mkdir(exist_ok=True)
    sp.write_spectrum(d / f"enstrophy{tag}_s{n:07d}.txt", q.enstrophy_spectrum)
    sp.write_spectrum(d / f"energy{tag}_s{n:07d}.txt", q.energy_spectrum)


def _emit_slices(outdir: Path, cfg: RunConfig, state: RunState, scenario: Scenario,
                 final: bool) -> None:
    for k, spec in enumerate(cfg.slices):
        times = spec.times
        due = final if times is None else any(abs(state.t - t) < 0.5 * cfg.dt for t in times)
        if not due:
            continue
        requests = [spec.request]
        if cfg.tracer_slices and spec.request.quantity != "tracer":
            requests.append(replace(spec.request, quantity="tracer"))
        for req in requests:
            if req.quantity == "tracer":
                ev = tracer_field(state.stack, state.current, scenario.phi0)
            else:
                ev = vorticity_evaluator(state.stack, state.current, scenario.w0_eval,
                                         req.quantity)
            arr, rng = slice_sample(req, ev)
            d = outdir / "slices"
            d.mkdir(exist_ok=True)
            write_slice(d / f"slice{k:02d}_{req.quantity}_s{state.n:07d}", req, arr, rng)


def run(cfg: RunConfig, output: Optional[str | Path] = None,
        resume: Optional[str | Path] = None, log: Callable[[str], None] = print,
        scenario: Optional[Scenario] = None) -> list[DiagnosticsRow]:
    """Execute a configured run and write all artifacts.

    Outputs in the output directory: ``diagnostics.csv``, ``manifest.txt``,
    ``stack/`` (final submaps plus the configuration), ``checkpoint/``,
    and optionally ``spectra/``, ``slices/`` and ``oversample/``.

    Returns the diagnostics rows written by this invocation.
    """
    outdir = Path(output or cfg.output_dir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {outdir}: {exc}") from None
    scenario = scenario or build_scenario(cfg)
    M, V, D = grids_for(cfg, scenario)
    manifest = _Manifest(outdir / "manifest.txt", cfg)
    rows: list[DiagnosticsRow] = []
    t_wall0 = time.monotonic()

    if resume is not None:
        state, q0 = load_checkpoint(resume, cfg, M, V)
        manifest.add(f"resumed step={state.n} from={resume}")
        writer = DiagnosticsWriter(outdir / "diagnostics.csv", append=True)
        if q0 is None:
            raise ConfigError(f"{resume}: checkpoint lacks initial diagnostics")
    else:
        state = initial_state(cfg, M)
        writer = DiagnosticsWriter(outdir / "diagnostics.csv")
        q0 = None

    def diagnostics(final: bool = False) -> None:
        nonlocal q0
        q = conserved_quantities(state.stack, state.current, scenario.w0_eval, D,
                                 spectra=cfg.spectra)
        if q0 is None:
            q0 = q
        row = make_row(state.t, q, q0, state.n_maps, time.monotonic() - t_wall0)
        writer.write(row)
        rows.append(row)
        log(f"t={row.t:.4f} enstrophy={row.enstrophy:.6f} dE/E0={row.energy_rel_err:.3e} "
            f"dH={row.helicity_drift:.3e} max|w|={row.max_w:.5f} max|u|={row.max_u:.5f} "
            f"maps={row.n_maps}")
        if cfg.spectra:
            _emit_spectra(outdir, state.n, q)
        _emit_slices(outdir, cfg, state, scenario, final)

    n_total = cfg.n_steps
    try:
        if resume is None:
            diagnostics(final=n_total == 0)
        while state.n < n_total:
            n_remaps = len(state.remaps)
            state = step(state, cfg, scenario, (M, V))
            if len(state.remaps) > n_remaps:
                r = state.remaps[-1]
                manifest.add(f"remap step={r['step']} t={r['t']:.6f} "
                             f"det_error={r['det_error']:.6e} maps={state.n_maps}")
            final = state.n == n_total
            if state.n % cfg.cadence_steps == 0 or final:
                diagnostics(final)
            if cfg.checkpoint_every and state.n % cfg.checkpoint_every == 0:
                save_checkpoint(outdir / "checkpoint", state, cfg, q0)
        save_checkpoint(outdir / "checkpoint", state, cfg, q0)
        state.stack.save(outdir / "stack", state.current)
        (outdir / "stack" / "scenario.cfg").write_text(cfg.to_text())
        for n in cfg.oversample:
            q = conserved_quantities(state.stack, state.current, scenario.w0_eval,
                                     scenario.grid((n, n, n)), spectra=True)
            _emit_spectra(outdir, state.n, q, tag=f"_{n}")
            manifest.add(f"oversample n={n} enstrophy={q.enstrophy:.10e} max_w={q.max_w:.6e}")
        manifest.add(f"finished step={state.n} t={state.t:.6f} maps={state.n_maps} "
                     f"wall_s={time.monotonic() - t_wall0:.1f}")
    except NumericalError as exc:
        manifest.add(f"aborted step={state.n} t={state.t:.6f} error={exc}")
        try:
            save_checkpoint(outdir / "checkpoint", state, cfg, q0)
        except OSError:
            pass
        raise
    finally:
        writer.close()
    return rows


# ----------------------------------------------------------------------------
# Offline resampling
# ----------------------------------------------------------------------------

def load_stack_run(stack_dir: str | Path) -> tuple[RunConfig, Scenario, SubmapStack,
                                                     Optional[DisplacementMap]]:
    """Stack, current map and scenario stored in a stack directory."""
    stack_dir = Path(stack_dir)
    cfg_path = stack_dir / "scenario.cfg"
    if not cfg_path.exists():
        raise ConfigError(f"{cfg_path}: stack directory has no scenario description")
    cfg = load_config(cfg_path)
    stack, tail = SubmapStack.load(stack_dir)
    return cfg, build_scenario(cfg), stack, tail


def resample(stack_dir: str | Path, n: int, quantity: str = "w",
             output: Optional[str | Path] = None, scenario: Optional[Scenario] = None
             ) -> dict:
    """Sample a stored solution on an ``n^3`` grid and write its spectrum.

    ``quantity`` is ``"w"`` (enstrophy spectrum), ``"u"`` (energy spectrum)
    or ``"tracer"`` (spectrum of the passive scalar ``|w0|`` transported by
    the maps).  Writes ``spectrum_<quantity>_<n>.txt`` and
    ``summary_<quantity>_<n>.txt`` and returns the summary values together
    with the spectrum.
    """
    if quantity not in ("w", "u", "tracer"):
        raise ConfigError(f"unknown resample quantity {quantity!r}")
    cfg, built, stack, tail = load_stack_run(stack_dir)
    scenario = scenario or built
    grid = scenario.grid((n, n, n))
    vol = float(np.prod(grid.lengths))
    if quantity == "tracer":
        phi = sample_on_grid(lambda p: pullback_scalar(stack, tail, scenario.phi0, p), grid, 1)
        f_hat = sp.forward(phi, grid)
        spec = sp.isotropic_spectrum(f_hat) * vol
        summary = {"l2_sq": vol * sp.l2_norm_sq(f_hat), "max": float(phi.max()),
                   "min": float(phi.min())}
    else:
        w = sample_on_grid(lambda p: pullback_vorticity(stack, tail, scenario.w0_eval, p),
                           grid, 3)
        q = quantities_from_vorticity(w, grid, spectra=True)
        spec = q.enstrophy_spectrum if quantity == "w" else q.energy_spectrum
        summary = {"enstrophy": q.enstrophy, "energy": q.energy, "helicity": q.helicity,
                   "max_w": q.max_w, "max_u": q.max_u}
    out = Path(output) if output is not None else Path(stack_dir).parent / "resample"
    out.mkdir(parents=True, exist_ok=True)
    sp.write_spectrum(out / f"spectrum_{quantity}_{n}.txt", spec)
    (out / f"summary_{quantity}_{n}.txt").write_text(
        "".join(f"{k} {v:.12e}\n" for k, v in summary.items()))
    summary["spectrum"] = spec
    return summary
