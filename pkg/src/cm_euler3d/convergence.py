"""Grid-refinement studies on the analytic scenarios.

Each level ``N`` uses ``M = V = N^3``, ``dt = 24 / N`` and truncation radius
``N / 3``.  The ABC flow is stationary, so the vorticity error is measured
against the initial field.  Taylor-Green has no closed-form solution; map,
Jacobian and vorticity errors are measured against a finer reference run
evaluated at each level's grid nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .config import RunConfig
from .driver import Simulation
from .errors import ConfigError
from .flowmap import composed_jacobian, pullback_vorticity
from .fluid_state import SamplingConfig


@dataclass
class ConvergenceResult:
    """Errors per level and least-squares slopes of ``log err`` vs ``log N``."""

    scenario: str
    levels: list[int]
    errors: dict[str, list[float]]
    slopes: dict[str, float] = field(default_factory=dict)

    def report(self) -> str:
        names = list(self.errors)
        lines = [f"# {self.scenario} convergence", "N " + " ".join(names)]
        for i, n in enumerate(self.levels):
            lines.append(f"{n} " + " ".join(f"{self.errors[k][i]:.6e}" for k in names))
        lines.append("slope " + " ".join(f"{self.slopes[k]:.3f}" for k in names))
        return "\n".join(lines) + "\n"


def fitted_order(levels: Sequence[int], errors: Sequence[float]) -> float:
    """Negated least-squares slope of ``log(err)`` against ``log(N)``."""
    slope = np.polyfit(np.log(np.asarray(levels, float)), np.log(np.asarray(errors, float)), 1)[0]
    return float(-slope)


def level_config(scenario: str, n: int, t_final: float = 2.0) -> RunConfig:
    """Configuration of one refinement level."""
    return RunConfig(scenario=scenario, map_dims=(n, n, n), vel_dims=(n, n, n),
                     diag_dims=(n, n, n), dt=24.0 / n, t_final=t_final, trunc_radius=n / 3.0,
                     sampling=SamplingConfig(mode="direct"))


def _simulate(scenario: str, n: int, t_final: float,
              log: Optional[Callable[[str], None]]) -> Simulation:
    sim = Simulation(level_config(scenario, n, t_final))
    sim.run_steps(sim.cfg.n_steps)
    if log is not None:
        log(f"{scenario} N={n} steps={sim.state.n} maps={sim.state.n_maps}")
    return sim


def _nodes(sim: Simulation) -> np.ndarray:
    return sim.V.nodes().reshape(-1, 3)


def _max_norm(a: np.ndarray) -> float:
    return float(np.sqrt((a ** 2).sum(axis=-1)).max())


def abc_study(levels: Sequence[int] = (24, 36, 48), t_final: float = 2.0,
              log: Optional[Callable[[str], None]] = None) -> ConvergenceResult:
    """L-infinity vorticity error against the stationary ABC solution."""
    errs = []
    for n in levels:
        sim = _simulate("abc", n, t_final, log)
        x = _nodes(sim)
        w = sim.vorticity(x)
        exact = sim.scenario.exact_solution(x, sim.t)
        errs.append(_max_norm(w - exact))
    res = ConvergenceResult("abc", list(levels), {"vorticity": errs})
    res.slopes["vorticity"] = fitted_order(levels, errs)
    return res


def taylor_green_study(levels: Sequence[int] = (24, 36, 48), reference: int = 72,
                       t_final: float = 2.0, log: Optional[Callable[[str], None]] = None
                       ) -> ConvergenceResult:
    """Self-convergence of map, Jacobian and vorticity against a reference level."""
    if reference <= max(levels):
        raise ConfigError("reference level must be finer than every study level")
    ref = _simulate("taylor_green", reference, t_final, log)
    errors: dict[str, list[float]] = {"map": [], "jacobian": [], "vorticity": []}
    for n in levels:
        sim = _simulate("taylor_green", n, t_final, log)
        x = _nodes(sim)
        y, J = composed_jacobian(sim.state.stack, sim.state.current, x)
        y_ref, J_ref = composed_jacobian(ref.state.stack, ref.state.current, x)
        errors["map"].append(_max_norm(y - y_ref))
        errors["jacobian"].append(float(np.abs(J - J_ref).max()))
        w = pullback_vorticity(sim.state.stack, sim.state.current, sim.scenario.w0_eval, x)
        w_ref = pullback_vorticity(ref.state.stack, ref.state.current, ref.scenario.w0_eval, x)
        errors["vorticity"].append(_max_norm(w - w_ref))
    res = ConvergenceResult("taylor_green", list(levels), errors)
    res.slopes = {k: fitted_order(levels, v) for k, v in errors.items()}
    return res


def convergence_study(scenario: str, levels: Sequence[int] = (24, 36, 48),
                      reference: int = 72, t_final: float = 2.0,
                      log: Optional[Callable[[str], None]] = None) -> ConvergenceResult:
    """Dispatch to :func:`abc_study` or :func:`taylor_green_study`."""
    if scenario == "abc":
        return abc_study(levels, t_final, log)
    if scenario == "taylor_green":
        return taylor_green_study(levels, reference, t_final, log)
    raise ConfigError(f"convergence study supports abc and taylor_green, not {scenario!r}")
