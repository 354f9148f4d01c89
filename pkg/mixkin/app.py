"""
app.py — Configuration and run orchestration for the four scenarios.

    steady      Newton solve for the D-shape steady pair (phi0, rho_bar0)
    gc-persist  advect the steady pair and track E(rho_bar), E(phi)
    gc-perturb  perturb rho_bar0 along streamlines, advect, write delta-rho
    dk-itg      drift-kinetic ITG run with the SL -> FD switch

Configuration is TOML with sections [run], [mesh], [gc], [itg]. Values not
given come from the ``preset`` ("desk" by default, or "full"). The output
root is resolved as flag > $MIXKIN_OUTPUT_ROOT > [run].output_dir.
"""

from __future__ import annotations

import json
import logging
import os
import re
try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Tuple, Type, Union, get_type_hints

import numpy as np

from .diagnostics import (CSV_COLUMNS, DiagnosticsRecord, conserved_dk, conserved_gc,
                          phi_amplitude, relative_error)
from .elliptic import QuasiNeutralitySolver, assemble, gradient, solve_linear
from .errors import (CFLError, ConfigError, ConvergenceError, GeometryError, MixkinError,
                     NonFiniteError, SnapshotError)
from .geometry import EmbeddedDomain
from .grid import Field
from .hweno import EPSILON
from .models import (ITGParameters, SteadyState, build_profiles, dshape_domain, init_itg,
                     itg_domain, itg_equilibrium, itg_grid, perturb_gc, steady_state)
from .store import (CSVSeries, RunLedger, deterministic_hash, read_snapshot, snapshot_name,
                    truncate_after, write_snapshot)
from .transport import (Method, StepperState, TransportSetup, VelocityField, advance, gc_step,
                        strang_step_dk)

logger = logging.getLogger(__name__)

ENV_OUTPUT_ROOT = "MIXKIN_OUTPUT_ROOT"
RESOLVED_CONFIG_NAME = "config.resolved.json"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


class Scenario(str, Enum):
    STEADY = "steady"
    GC_PERSIST = "gc-persist"
    GC_PERTURB = "gc-perturb"
    DK_ITG = "dk-itg"

    @property
    def is_gc(self) -> bool:
        return self in (Scenario.GC_PERSIST, Scenario.GC_PERTURB)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class RunOptions:
    preset: str = "desk"
    output_dir: str = "mixkin-output"
    threads: int = 1
    method: Optional[str] = None
    reconstruction: str = "hweno"
    flux_splitting: str = "upwind"
    interface: str = "arithmetic"
    cfl: float = 0.5
    weno_eps: float = EPSILON
    dt: Optional[float] = None
    dt_sl_factor: float = 4.0
    t_end: Optional[float] = None
    diag_every: int = 1
    snapshot_every: int = 0


@dataclass
class MeshOptions:
    nx: Optional[int] = None
    ny: Optional[int] = None
    nz: Optional[int] = None
    nv: Optional[int] = None


@dataclass
class GCOptions:
    epsilon: float = 0.1
    k: int = 5
    phi_p: float = -0.1
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    steady_input: Optional[str] = None


SECTIONS: Dict[str, Type[Any]] = {
    "run": RunOptions,
    "mesh": MeshOptions,
    "gc": GCOptions,
    "itg": ITGParameters,
}

CHOICES: Dict[Tuple[str, str], Tuple[str, ...]] = {
    ("run", "preset"): ("desk", "full"),
    ("run", "method"): ("sl", "fd", "mixed"),
    ("run", "reconstruction"): ("hweno", "hermite"),
    ("run", "flux_splitting"): ("upwind", "llf"),
    ("run", "interface"): ("arithmetic", "harmonic"),
}

# FD steps that trip the CFL limit are retried at half the step, at most this often
MAX_DT_HALVINGS = 8

# (mesh, dt, t_end, method) per preset and scenario family
PRESETS: Dict[Tuple[str, str], Dict[str, Any]] = {
    ("desk", "steady"): {"mesh": (60, 110)},
    ("desk", "gc"): {"mesh": (60, 110), "dt": 0.005, "t_end": 10.0, "method": "fd"},
    ("desk", "dk"): {"mesh": (32, 32, 8, 17), "dt": 1.0, "t_end": 2500.0, "method": "mixed"},
    ("full", "steady"): {"mesh": (240, 440)},
    ("full", "gc"): {"mesh": (240, 440), "dt": 0.001, "t_end": 10.0, "method": "fd"},
    ("full", "dk"): {"mesh": (128, 128, 32, 65), "dt": 1.0, "t_end": 8000.0, "method": "mixed"},
}


@dataclass
class ScenarioConfig:
    scenario: Scenario
    run: RunOptions = field(default_factory=RunOptions)
    mesh: MeshOptions = field(default_factory=MeshOptions)
    gc: GCOptions = field(default_factory=GCOptions)
    itg: ITGParameters = field(default_factory=ITGParameters)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scenario": self.scenario.value,
            "run": asdict(self.run),
            "mesh": asdict(self.mesh),
            "gc": asdict(self.gc),
            "itg": self.itg.to_dict(),
        }

    @property
    def weno(self) -> bool:
        return self.run.reconstruction == "hweno"


def _family(scenario: Scenario) -> str:
    if scenario is Scenario.STEADY:
        return "steady"
    return "dk" if scenario is Scenario.DK_ITG else "gc"


def _key_line(text: str, section: Optional[str], key: Optional[str]) -> Optional[int]:
    current: Optional[str] = None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        header = re.match(r"^\[\s*([^\]]+?)\s*\]", line)
        if header:
            current = header.group(1).strip().strip('"')
            if key is None and current == section:
                return number
            continue
        if key is not None and current == section and re.match(
            rf"^[\"']?{re.escape(key)}[\"']?\s*=", line
        ):
            return number
    return None


def _coerce(value: Any, hint: Any, where: str, line: Optional[int]) -> Any:
    args = getattr(hint, "__args__", None)
    if args and type(None) in args:
        if value is None:
            return None
        hint = next(a for a in args if a is not type(None))
    if hint is bool:
        ok = isinstance(value, bool)
    elif hint is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif hint is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif hint is str:
        ok = isinstance(value, str)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{where} expects {getattr(hint, '__name__', hint)}, got {value!r}", line)
    return value


def _build_section(name: str, table: Any, text: str) -> Any:
    cls = SECTIONS[name]
    if not isinstance(table, dict):
        raise ConfigError(f"[{name}] must be a table", _key_line(text, None, name))
    hints = get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    kwargs: Dict[str, Any] = {}
    for key, value in table.items():
        line = _key_line(text, name, key)
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{name}]", line)
        value = _coerce(value, hints[key], f"{name}.{key}", line)
        choices = CHOICES.get((name, key))
        if choices is not None and value is not None and value not in choices:
            raise ConfigError(f"{name}.{key} must be one of {choices}, got {value!r}", line)
        kwargs[key] = value
    return cls(**kwargs)


def _validate(cfg: ScenarioConfig) -> None:
    r = cfg.run
    if r.threads < 1:
        raise ConfigError("run.threads must be >= 1")
    if r.dt is not None and not r.dt > 0.0:
        raise ConfigError("run.dt must be positive")
    if r.t_end is not None and r.t_end < 0.0:
        raise ConfigError("run.t_end must be non-negative")
    if not r.cfl > 0.0 or not r.dt_sl_factor > 0.0 or not r.weno_eps > 0.0:
        raise ConfigError("run.cfl, run.dt_sl_factor and run.weno_eps must be positive")
    if r.diag_every < 1 or r.snapshot_every < 0:
        raise ConfigError("run.diag_every must be >= 1 and run.snapshot_every >= 0")
    if cfg.gc.newton_max_iter < 1 or not cfg.gc.newton_tol > 0.0:
        raise ConfigError("gc.newton_max_iter and gc.newton_tol must be positive")


def resolve_defaults(cfg: ScenarioConfig) -> ScenarioConfig:
    """Fill every preset-dependent ``None`` from the preset table."""
    preset = PRESETS[(cfg.run.preset, _family(cfg.scenario))]
    mesh = preset["mesh"]
    for name, value in zip(("nx", "ny", "nz", "nv"), mesh):
        if getattr(cfg.mesh, name) is None:
            setattr(cfg.mesh, name, value)
    for key in ("dt", "t_end", "method"):
        if key in preset and getattr(cfg.run, key) is None:
            setattr(cfg.run, key, preset[key])
    return cfg


def parse_config(text: str, scenario: Union[str, Scenario]) -> ScenarioConfig:
    try:
        scenario = Scenario(scenario)
    except ValueError as exc:
        raise ConfigError(f"unknown scenario {scenario!r}") from exc
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        found = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"malformed configuration: {exc}", int(found.group(1)) if found else None) from exc
    cfg = ScenarioConfig(scenario=scenario)
    for name, table in data.items():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section or key {name!r}", _key_line(text, name, None)
                              or _key_line(text, None, name))
        setattr(cfg, name, _build_section(name, table, text))
    _validate(cfg)
    return resolve_defaults(cfg)


def load_config(path: Optional[str], scenario: Union[str, Scenario]) -> ScenarioConfig:
    if path is None:
        return parse_config("", scenario)
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    return parse_config(text, scenario)


def resolve_output_root(cfg: ScenarioConfig, flag: Optional[str] = None) -> str:
    return flag or os.environ.get(ENV_OUTPUT_ROOT) or cfg.run.output_dir


def exit_code_for(exc: BaseException) -> Optional[int]:
    """Exit status for a failure, or None if it is not one we map."""
    if isinstance(exc, (ConfigError, CFLError)):
        return EXIT_CONFIG
    if isinstance(exc, (GeometryError, ConvergenceError, NonFiniteError)):
        return EXIT_NUMERICAL
    if isinstance(exc, (SnapshotError, OSError)):
        return EXIT_IO
    if isinstance(exc, MixkinError):
        return EXIT_NUMERICAL
    return None


# ---------------------------------------------------------------------------
# Run context
# ---------------------------------------------------------------------------

@dataclass
class RunContext:
    config: ScenarioConfig
    out_dir: str
    ledger: RunLedger
    emit_plot_data: bool = False

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def snapshot(self, fld: Field, label: Optional[str] = None) -> str:
        path = write_snapshot(self.path(snapshot_name(self.config.scenario.value, fld.time, label)), fld)
        self.ledger.append("snapshot", path=os.path.basename(path), time=fld.time, name=fld.name)
        return path

    def plot_data(self, name: str, matrix: np.ndarray) -> None:
        if not self.emit_plot_data:
            return
        path = self.path(f"{name}.dat")
        try:
            np.savetxt(path, np.asarray(matrix), fmt="%.10g")
        except OSError as exc:
            raise SnapshotError(f"cannot write {path}: {exc}") from exc


def _open_context(cfg: ScenarioConfig, output_root: Optional[str], emit_plot_data: bool) -> RunContext:
    out_dir = os.path.join(resolve_output_root(cfg, output_root), cfg.scenario.value)
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, RESOLVED_CONFIG_NAME), "w", encoding="utf-8") as f:
            json.dump(cfg.to_dict(), f, sort_keys=True, indent=2)
            f.write("\n")
    except OSError as exc:
        raise SnapshotError(f"cannot prepare output directory {out_dir}: {exc}") from exc
    return RunContext(cfg, out_dir, RunLedger(out_dir), emit_plot_data)


def _stepping(cfg: ScenarioConfig) -> Tuple[float, float, float]:
    dt = float(cfg.run.dt)  # type: ignore[arg-type]
    return dt, dt * cfg.run.dt_sl_factor, float(cfg.run.t_end)  # type: ignore[arg-type]


def _setup(cfg: ScenarioConfig, grid, domain: EmbeddedDomain, equilibrium=None) -> TransportSetup:
    return TransportSetup(
        grid=grid,
        interior=domain.interior,
        equilibrium=equilibrium,
        weno=cfg.weno,
        eps=cfg.run.weno_eps,
        splitting=cfg.run.flux_splitting,
        cfl=cfg.run.cfl,
        threads=cfg.run.threads,
    )


def _time_loop(
    ctx: RunContext,
    state: StepperState,
    t_end: float,
    step_fn: Callable[[Field, float, Method], Field],
    mass_fn: Callable[[np.ndarray], float],
    diagnose: Callable[[StepperState], DiagnosticsRecord],
    on_snapshot: Callable[[StepperState], None],
    csv: CSVSeries,
) -> None:
    cfg = ctx.config.run

    def clipped(f: Field, dt: float, method: Method) -> Field:
        return step_fn(f, min(dt, t_end - f.time), method)

    if state.step % cfg.diag_every == 0:
        csv.write(diagnose(state).to_row())
    dt_floor = state.dt_fd * 0.5 ** MAX_DT_HALVINGS
    while state.time < t_end - 1e-9 * max(state.dt_fd, 1e-300):
        try:
            switched = advance(state, clipped, mass_fn)
        except CFLError as exc:
            if state.dt_fd * 0.5 < dt_floor:
                raise
            state.dt_fd *= 0.5
            logger.warning(f"t={state.time:g}: {exc}; retrying with dt={state.dt_fd:g}")
            ctx.ledger.append("dt_reduced", time=state.time, step=state.step, dt=state.dt_fd)
            continue
        if switched:
            ctx.ledger.append("phase_switch", time=state.time, step=state.step, phase=state.phase.value)
        state.field.assert_finite()
        done = state.time >= t_end - 1e-9 * state.dt_fd
        if state.step % cfg.diag_every == 0 or done:
            csv.write(diagnose(state).to_row())
        if (cfg.snapshot_every and state.step % cfg.snapshot_every == 0) or done:
            on_snapshot(state)


def _open_series(ctx: RunContext, resumed_at: Optional[float]) -> CSVSeries:
    path = ctx.path(f"{ctx.config.scenario.value}_diagnostics.csv")
    if resumed_at is not None:
        truncate_after(path, resumed_at)
    return CSVSeries(path, CSV_COLUMNS, append=resumed_at is not None)


def _resume_state(state: StepperState, resume: Optional[str], scenario: Scenario) -> Optional[float]:
    if resume is None:
        return None
    snap = read_snapshot(resume)
    if snap.attrs.get("scenario") != scenario.value:
        raise ConfigError(f"{resume} was written by scenario {snap.attrs.get('scenario')!r}, not {scenario.value}")
    if snap.data.shape != state.field.data.shape:
        raise ConfigError(f"{resume} has shape {snap.data.shape}, mesh expects {state.field.data.shape}")
    state.field = state.field.copy(data=snap.data, time=snap.time)
    state.restore(snap.attrs)
    logger.info(f"Resumed from {resume} at t={state.time:g}, step {state.step}, phase {state.phase.value}")
    return state.time


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------

def _steady_pair(ctx: RunContext, domain: EmbeddedDomain) -> SteadyState:
    cfg = ctx.config
    if cfg.gc.steady_input:
        phi0 = read_snapshot(os.path.join(cfg.gc.steady_input, snapshot_name("steady", 0.0, "phi0")))
        rho0 = read_snapshot(os.path.join(cfg.gc.steady_input, snapshot_name("steady", 0.0, "rho_bar0")))
        if phi0.data.shape != domain.mask.shape:
            raise ConfigError(f"steady input has shape {phi0.data.shape}, mesh is {domain.mask.shape}")
        return SteadyState(phi0.copy(grid=domain.grid), rho0.copy(grid=domain.grid),
                           int(phi0.attrs.get("newton_iterations", 0)), float(phi0.attrs.get("residual", 0.0)))
    return steady_state(domain, tol=cfg.gc.newton_tol, max_iter=cfg.gc.newton_max_iter,
                        interface=cfg.run.interface)


def run_steady(ctx: RunContext) -> None:
    cfg = ctx.config
    domain = dshape_domain(cfg.mesh.nx, cfg.mesh.ny)  # type: ignore[arg-type]
    pair = _steady_pair(ctx, domain)
    logger.info(f"Steady state: {pair.iterations} Newton iterations, |F|_inf = {pair.residual:.3e}")
    ctx.ledger.append("newton", iterations=pair.iterations, residual=pair.residual)
    ctx.snapshot(pair.phi0, "phi0")
    ctx.snapshot(pair.rho_bar0, "rho_bar0")
    if ctx.emit_plot_data:
        velocity = gradient(pair.phi0.data, domain.grid, domain)
        ctx.plot_data("steady_phi0", pair.phi0.data)
        ctx.plot_data("steady_rho_bar0", pair.rho_bar0.data)
        ctx.plot_data("steady_ux", velocity.ux)
        ctx.plot_data("steady_uy", velocity.uy)
        ctx.plot_data("steady_speed", np.hypot(velocity.ux, velocity.uy))


def run_gc(ctx: RunContext, resume: Optional[str]) -> None:
    cfg = ctx.config
    domain = dshape_domain(cfg.mesh.nx, cfg.mesh.ny)  # type: ignore[arg-type]
    grid = domain.grid
    pair = _steady_pair(ctx, domain)
    if cfg.scenario is Scenario.GC_PERTURB:
        rho = perturb_gc(pair.rho_bar0, pair.phi0, domain, cfg.gc.epsilon, cfg.gc.k, cfg.gc.phi_p)
    else:
        rho = pair.rho_bar0.copy(name="rho_bar")
    rho.attrs = {"scenario": cfg.scenario.value}
    problem = assemble(domain, 1.0, 0.0, interface=cfg.run.interface)
    setup = _setup(cfg, grid, domain, pair.rho_bar0.data)
    interior = domain.interior

    def potential(data: np.ndarray) -> np.ndarray:
        return solve_linear(problem, data - 1.0)

    def velocity_of(data: np.ndarray) -> VelocityField:
        return gradient(potential(data), grid, domain)

    dt_fd, dt_sl, t_end = _stepping(cfg)
    state = StepperState(field=rho, dt_sl=dt_sl, dt_fd=dt_fd, h=grid.min_spacing,
                         mode=cfg.run.method)  # type: ignore[arg-type]
    resumed_at = _resume_state(state, resume, cfg.scenario)

    def diagnose(st: StepperState) -> DiagnosticsRecord:
        phi = potential(st.field.data)
        cons = conserved_gc(st.field, phi, interior)
        return DiagnosticsRecord(
            time=st.time, mass=cons.mass, l1=cons.l1, l2=cons.l2, energy=cons.energy,
            relerr_phi=relative_error(Field(grid, phi), pair.phi0, interior),
            relerr_rho=relative_error(st.field, pair.rho_bar0, interior),
            phase=st.phase.value,
        )

    def on_snapshot(st: StepperState) -> None:
        st.field.attrs = {"scenario": cfg.scenario.value, **st.to_attrs()}
        ctx.snapshot(st.field)
        if cfg.scenario is Scenario.GC_PERTURB:
            delta = st.field.copy(data=st.field.data - pair.rho_bar0.data, name="delta_rho",
                                   attrs={"derived_from": cfg.scenario.value})
            ctx.snapshot(delta, "delta_rho")
            ctx.plot_data(f"gc-perturb_delta_rho_t{st.time:.6f}", delta.data)

    with _open_series(ctx, resumed_at) as csv:
        _time_loop(ctx, state, t_end,
                   lambda f, dt, m: gc_step(f, velocity_of, dt, setup, m),
                   setup.mass, diagnose, on_snapshot, csv)


def run_itg(ctx: RunContext, resume: Optional[str]) -> None:
    cfg = ctx.config
    params = cfg.itg
    m = cfg.mesh
    grid = itg_grid(m.nx, m.ny, m.nz, m.nv, params)  # type: ignore[arg-type]
    domain = itg_domain(grid, params)
    profiles = build_profiles(params)
    eq = itg_equilibrium(grid, profiles)
    setup = _setup(cfg, grid, domain, eq.f_eq)
    f = init_itg(grid, profiles, params)
    f = f.copy(data=setup.apply_exterior(f.data), attrs={"scenario": cfg.scenario.value})
    qn = QuasiNeutralitySolver(domain, eq.rho0, eq.te, threads=cfg.run.threads, interface=cfg.run.interface)
    grid3 = grid.sub(("x", "y", "z"))
    v_weights = grid.axes[3].quadrature_weights()
    iv0 = int(np.argmin(np.abs(grid.axes[3].nodes())))

    def potential(data: np.ndarray) -> np.ndarray:
        return qn.solve(data @ v_weights).phi

    def step_fn(fld: Field, dt: float, method: Method) -> Field:
        velocity = gradient(potential(fld.data), grid3, domain)
        return strang_step_dk(fld, velocity, dt, setup, method)

    dt_fd, dt_sl, t_end = _stepping(cfg)
    state = StepperState(field=f, dt_sl=dt_sl, dt_fd=dt_fd, h=grid.min_spacing,
                         mode=cfg.run.method)  # type: ignore[arg-type]
    resumed_at = _resume_state(state, resume, cfg.scenario)

    def diagnose(st: StepperState) -> DiagnosticsRecord:
        phi = potential(st.field.data)
        cons = conserved_dk(st.field, phi, eq.f_eq, eq.rho0, domain.interior)
        return DiagnosticsRecord(
            time=st.time, mass=cons.mass, l1=cons.l1, l2=cons.l2, entropy=cons.entropy,
            energy=cons.energy, phi_amplitude=phi_amplitude(phi, grid3, params.r_p),
            phase=st.phase.value,
        )

    def on_snapshot(st: StepperState) -> None:
        st.field.attrs = {"scenario": cfg.scenario.value, **st.to_attrs()}
        ctx.snapshot(st.field)
        ctx.plot_data(f"dk-itg_f_v0_t{st.time:.6f}", st.field.data[:, :, 0, iv0])

    with _open_series(ctx, resumed_at) as csv:
        _time_loop(ctx, state, t_end, step_fn, setup.mass, diagnose, on_snapshot, csv)


def run(
    config: ScenarioConfig,
    output_root: Optional[str] = None,
    emit_plot_data: bool = False,
    resume: Optional[str] = None,
) -> int:
    """Execute one scenario end to end. Failures propagate as ``MixkinError``."""
    ctx = _open_context(config, output_root, emit_plot_data)
    payload = config.to_dict()
    ctx.ledger.append("run_start", scenario=config.scenario.value,
                      config_hash=deterministic_hash(payload), resume=resume)
    logger.info(f"Starting {config.scenario.value} ({config.run.preset} preset) in {ctx.out_dir}")
    if resume is not None and config.scenario is Scenario.STEADY:
        raise ConfigError("the steady scenario cannot be resumed")
    if config.scenario is Scenario.STEADY:
        run_steady(ctx)
    elif config.scenario.is_gc:
        run_gc(ctx, resume)
    else:
        run_itg(ctx, resume)
    ctx.ledger.append("run_finish", scenario=config.scenario.value)
    logger.info(f"Finished {config.scenario.value}")
    return EXIT_OK


__all__: List[str] = [
    "Scenario", "ScenarioConfig", "RunOptions", "MeshOptions", "GCOptions", "PRESETS",
    "parse_config", "load_config", "resolve_defaults", "resolve_output_root", "exit_code_for",
    "run", "EXIT_OK", "EXIT_CONFIG", "EXIT_NUMERICAL", "EXIT_IO",
]
