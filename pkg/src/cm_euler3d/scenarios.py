"""Initial vorticity fields.

Two analytic fields (ABC and Taylor-Green) and two vortex-tube
configurations built on a construction grid: a perturbed antiparallel pair
and a perturbed perpendicular pair.  Tube fields are sampled, smoothed with
the quartic spectral filter, rescaled, projected onto solenoidal fields and
then represented by spectral jets, so that later point evaluations use the
Hermite interpolant of the construction field.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import spectral as sp
from .errors import ConfigError
from .field_jet import GridSpec, JetVectorField

TWO_PI = 2.0 * np.pi
DOMAIN = GridSpec.cube(8)  # template: [-2 pi, 2 pi)^3


def _split(x):
    x = np.asarray(x, dtype=float)
    return x[..., 0], x[..., 1], x[..., 2]


def abc_w0(x) -> np.ndarray:
    """ABC vorticity ``(cos y + sin z, cos z + sin x, cos x + sin y) / 2``.

    Accepts a point ``(3,)`` or points ``(..., 3)``.
    """
    X, Y, Z = _split(x)
    return 0.5 * np.stack([np.cos(Y) + np.sin(Z), np.cos(Z) + np.sin(X),
                           np.cos(X) + np.sin(Y)], axis=-1)


def taylor_green_w0(x) -> np.ndarray:
    """Taylor-Green vorticity on the ``[-2 pi, 2 pi)^3`` box."""
    X, Y, Z = _split(x)
    cx, sx = np.cos(0.5 * X), np.sin(0.5 * X)
    cy, sy = np.cos(0.5 * Y), np.sin(0.5 * Y)
    return np.stack([cx * sy * np.sin(Z), sx * cy * np.sin(Z), -sx * sy * np.cos(Z)], axis=-1)


def tube_profile(r: np.ndarray) -> np.ndarray:
    """Compactly supported core profile ``exp(-r^2/(1-r^2) + r^4 (1 + r^2 + r^4))``.

    Exactly zero for ``r >= 1``.
    """
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    m = r < 1.0
    rr = r[m] ** 2
    out[m] = np.exp(-rr / (1.0 - rr) + rr * rr * (1.0 + rr + rr * rr))
    return out


def tube_plus(x, radius: float, x0: float, z0: float) -> np.ndarray:
    """Straight tube along ``y`` through ``(x0, z0)``: ``profile(r) e_y``."""
    X, Y, Z = _split(x)
    f = tube_profile(np.sqrt((X - x0) ** 2 + (Z - z0) ** 2) / radius)
    zero = np.zeros_like(f)
    return np.stack([zero, f, zero], axis=-1)


@dataclass(frozen=True)
class KerrParams:
    """Geometry of the perturbed antiparallel tube pair.

    ``s_form`` selects the stretched coordinate: ``"periodic"`` uses
    ``s = a + Ly dy1 sin(pi a / Ly)`` with ``a = y + Ly dy2 sin(pi y / Ly)``;
    ``"literal"`` uses ``sin(a)`` in place of ``sin(pi a / Ly)``.
    """

    radius: float = 0.75
    dy1: float = 0.5
    dy2: float = 0.4
    dx: float = -1.6
    dz: float = 0.0
    x0: float = 0.0
    z0: float = 1.57
    Lx: float = 4 * np.pi
    Ly: float = 4 * np.pi
    Lz: float = 2 * np.pi
    scale: float = 8.0
    s_form: str = "periodic"


def kerr_shift(y, p: KerrParams):
    """Shear offsets ``(gx, gz)`` and their ``y``-derivatives at ``y``."""
    y = np.asarray(y, dtype=float)
    a = y + p.Ly * p.dy2 * np.sin(np.pi * y / p.Ly)
    da = 1.0 + np.pi * p.dy2 * np.cos(np.pi * y / p.Ly)
    if p.s_form == "periodic":
        s = a + p.Ly * p.dy1 * np.sin(np.pi * a / p.Ly)
        ds = da * (1.0 + np.pi * p.dy1 * np.cos(np.pi * a / p.Ly))
    elif p.s_form == "literal":
        s = a + p.Ly * p.dy1 * np.sin(a)
        ds = da * (1.0 + p.Ly * p.dy1 * np.cos(a))
    else:
        raise ConfigError(f"unknown s_form {p.s_form!r}")
    gx = p.dx * np.cos(np.pi * s / p.Lx)
    gz = p.dz * np.cos(np.pi * s / p.Lz)
    dgx = -p.dx * np.sin(np.pi * s / p.Lx) * (np.pi / p.Lx) * ds
    dgz = -p.dz * np.sin(np.pi * s / p.Lz) * (np.pi / p.Lz) * ds
    return gx, gz, dgx, dgz


def kerr_phi(x, p: KerrParams = KerrParams()) -> np.ndarray:
    """Unfiltered antiparallel pair ``phi = phi_+(x, y, z) - phi_+(x, y, -z)``."""
    X, Y, Z = _split(x)
    a = tube_plus(np.stack([X, Y, Z], -1), p.radius, p.x0, p.z0)
    b = tube_plus(np.stack([X, Y, -Z], -1), p.radius, p.x0, p.z0)
    return a - b


def kerr_sheared(x, p: KerrParams = KerrParams()) -> np.ndarray:
    """Pullback of the tube pair by the inverse shear, before filtering.

    For fixed ``y`` the shear is a translation of the ``x-z`` plane, so
    ``(T^-1)^* phi (x) = grad T . phi(x - gx(y), y, z - gz(y))``.
    """
    X, Y, Z = _split(x)
    gx, gz, dgx, dgz = kerr_shift(Y, p)
    phi = kerr_phi(np.stack([X - gx, Y, Z - gz], -1), p)
    py = phi[..., 1]
    return np.stack([phi[..., 0] + dgx * py, py, phi[..., 2] + dgz * py], axis=-1)


@dataclass(frozen=True)
class PerpendicularParams:
    """Geometry of the perturbed perpendicular tube pair."""

    radius: float = 0.5
    x0: float = 0.0
    z0: float = -1.0
    shear_amp: float = 0.5
    shear_freq: float = 0.5
    shift: float = 2.0
    scale: float = 24.0


def perpendicular_sheared_tube(x, p: PerpendicularParams = PerpendicularParams()
                               ) -> np.ndarray:
    """Tube along ``y`` pulled back by the inverse of ``x -> x - A sin(k y)``."""
    X, Y, Z = _split(x)
    g = -p.shear_amp * np.sin(p.shear_freq * Y)
    dg = -p.shear_amp * p.shear_freq * np.cos(p.shear_freq * Y)
    phi = tube_plus(np.stack([X - g, Y, Z], -1), p.radius, p.x0, p.z0)
    py = phi[..., 1]
    return np.stack([dg * py, py, np.zeros_like(py)], axis=-1)


def perpendicular_phi(x, p: PerpendicularParams = PerpendicularParams()) -> np.ndarray:
    """Unfiltered pair: the sheared tube plus its image under ``(x,y,z) -> (y,x,z+shift)``.

    The image is the pullback by the inverse map ``(x,y,z) -> (y,x,z-shift)``;
    its constant Jacobian swaps the first two components.
    """
    X, Y, Z = _split(x)
    first = perpendicular_sheared_tube(np.stack([X, Y, Z], -1), p)
    moved = perpendicular_sheared_tube(np.stack([Y, X, Z - p.shift], -1), p)
    second = np.stack([moved[..., 1], moved[..., 0], moved[..., 2]], axis=-1)
    return first + second


def construct_field(phi_eval: Callable[[np.ndarray], np.ndarray], grid: GridSpec,
                    scale: float, filter_strength: float = 0.05,
                    project: bool = True) -> sp.SpectralVectorField:
    """Sample, filter, scale and (optionally) make solenoidal.

    Returns the spectrum of ``scale * K * phi`` on ``grid``.
    """
    nx, ny, nz = grid.dims
    phys = np.empty((3, nx, ny, nz))
    ax = grid.axes()
    for i in range(nx):
        Y, Z = np.meshgrid(ax[1], ax[2], indexing="ij")
        pts = np.stack([np.full_like(Y, ax[0][i]), Y, Z], axis=-1)
        phys[:, i] = np.moveaxis(phi_eval(pts), -1, 0)
    f_hat = sp.quartic_filter(sp.forward(phys, grid), filter_strength)
    f_hat.coeffs *= scale
    if project:
        f_hat = sp.leray_project(f_hat)
    return f_hat


@dataclass
class Scenario:
    """An initial condition together with default run parameters.

    Attributes
    ----------
    name : str
    domain : GridSpec
        Template carrying the periodic box (lengths and origin).
    w0_eval : callable
        Vectorized initial vorticity ``(P, 3) -> (P, 3)``.
    w0_jets : JetVectorField or None
        Construction-grid jets when ``w0_eval`` is their Hermite interpolant.
    w0_hat : SpectralVectorField or None
        Construction-grid spectrum of ``w0``.
    exact_solution : callable or None
        ``(points, t) -> vorticity`` when known in closed form.
    defaults : dict
        Default ``map_dims``, ``vel_dims``, ``dt``, ``t_final``,
        ``trunc_radius``, ``det_tol`` and ``sampling``.
    """

    name: str
    domain: GridSpec
    w0_eval: Callable[[np.ndarray], np.ndarray]
    w0_jets: Optional[JetVectorField] = None
    w0_hat: Optional[sp.SpectralVectorField] = None
    exact_solution: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    defaults: dict = field(default_factory=dict)

    def grid(self, dims) -> GridSpec:
        """Grid with the scenario's box and the given node counts."""
        return GridSpec(tuple(dims), self.domain.lengths, self.domain.origin)

    def phi0(self, x) -> np.ndarray:
        """Initial vorticity strength ``|w0|``, the default passive tracer."""
        w = np.asarray(self.w0_eval(np.asarray(x, dtype=float).reshape(-1, 3)))
        return np.sqrt((w ** 2).sum(axis=-1))


def _analytic_defaults(n: int) -> dict:
    return dict(map_dims=(n, n, n), vel_dims=(n, n, n), dt=24.0 / n, t_final=2.0,
                trunc_radius=n / 3.0, det_tol=1e-3, sampling="direct")


#: Default run parameters per scenario.
SCENARIO_DEFAULTS = {
    "abc": _analytic_defaults(24),
    "taylor_green": _analytic_defaults(24),
    "kerr": dict(map_dims=(64, 48, 32), vel_dims=(96, 72, 48), dt=1.0 / 50, t_final=17.0,
                 trunc_radius=32.0, det_tol=1e-3, sampling="direct"),
    "perpendicular": dict(map_dims=(48, 48, 48), vel_dims=(48, 48, 48), dt=1.0 / 50,
                          t_final=12.0, trunc_radius=32.0, det_tol=1e-3,
                          sampling="mollified_adaptive"),
    "zero": dict(map_dims=(8, 8, 8), vel_dims=(8, 8, 8), dt=0.5, t_final=1.0,
                 trunc_radius=4.0, det_tol=1e-3, sampling="direct"),
}


def _from_spectrum(name: str, w_hat: sp.SpectralVectorField, defaults: dict) -> Scenario:
    jets = sp.spectral_jets(w_hat)
    return Scenario(name, DOMAIN, jets.eval, jets, w_hat, None, defaults)


def kerr_w0(n: int = 128, params: KerrParams = KerrParams()) -> Scenario:
    """Perturbed antiparallel tubes built on an ``n^3`` construction grid."""
    grid = GridSpec.cube(n)
    w_hat = construct_field(lambda x: kerr_sheared(x, params), grid, params.scale)
    return _from_spectrum("kerr", w_hat, dict(SCENARIO_DEFAULTS["kerr"]))


def perpendicular_w0(n: int = 128, params: PerpendicularParams = PerpendicularParams()
                     ) -> Scenario:
    """Perturbed perpendicular tubes built on an ``n^3`` construction grid."""
    grid = GridSpec.cube(n)
    w_hat = construct_field(lambda x: perpendicular_phi(x, params), grid, params.scale)
    return _from_spectrum("perpendicular", w_hat, dict(SCENARIO_DEFAULTS["perpendicular"]))


def _zero_w0(x) -> np.ndarray:
    return np.zeros(np.asarray(x, dtype=float).shape)


SCENARIOS = ("abc", "taylor_green", "kerr", "perpendicular", "zero")


def make_scenario(name: str, construction_n: int = 128, **params) -> Scenario:
    """Scenario by name; ``params`` override tube geometry fields."""
    if name == "abc":
        return Scenario("abc", DOMAIN, abc_w0, exact_solution=lambda x, t: abc_w0(x),
                        defaults=dict(SCENARIO_DEFAULTS["abc"]))
    if name == "taylor_green":
        return Scenario("taylor_green", DOMAIN, taylor_green_w0,
                        defaults=dict(SCENARIO_DEFAULTS["taylor_green"]))
    if name == "zero":
        return Scenario("zero", DOMAIN, _zero_w0, exact_solution=lambda x, t: _zero_w0(x),
                        defaults=dict(SCENARIO_DEFAULTS["zero"]))
    if name == "kerr":
        return kerr_w0(construction_n, KerrParams(**params))
    if name == "perpendicular":
        return perpendicular_w0(construction_n, PerpendicularParams(**params))
    raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
