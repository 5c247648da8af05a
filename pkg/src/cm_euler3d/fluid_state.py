"""Vorticity sampling, velocity frames and the time-space velocity interpolant."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import spectral as sp
from .errors import ConfigError, ContractError
from .field_jet import GridSpec, JetVectorField
from .flowmap import DisplacementMap, SubmapStack, pullback_vorticity, sample_on_grid


@dataclass
class VelocityFrame:
    """Velocity jets and their time derivative at one time level.

    Attributes
    ----------
    t : float
    u_jets : JetVectorField
        Jets of the truncated Biot-Savart velocity on the sampling grid.
    dudt_jets : JetVectorField or None
        Jets of the time derivative of the velocity.
    u_hat, w_hat : SpectralVectorField or None
        Truncated spectra the jets were built from.
    """

    t: float
    u_jets: JetVectorField
    dudt_jets: Optional[JetVectorField] = None
    u_hat: Optional[sp.SpectralVectorField] = None
    w_hat: Optional[sp.SpectralVectorField] = None


def velocity_frame(w_phys: np.ndarray, grid: GridSpec, trunc_radius: float, t: float
                   ) -> VelocityFrame:
    """Velocity jets from sampled vorticity.

    Forward transform, truncation, Biot-Savart and spectral jets of all eight
    mixed partials.
    """
    w_hat = sp.truncate(sp.forward(w_phys, grid), trunc_radius)
    u_hat = sp.biot_savart(w_hat)
    return VelocityFrame(t, sp.spectral_jets(u_hat), None, u_hat, w_hat)


def advective_bracket(u_hat: sp.SpectralVectorField, w_hat: sp.SpectralVectorField
                      ) -> np.ndarray:
    """``(w . grad) u - (u . grad) w`` in physical space, shape ``(3, Nx, Ny, Nz)``."""
    u = sp.inverse(u_hat)
    w = sp.inverse(w_hat)
    gu = sp.gradient(u_hat)  # gu[c, m] = d_m u^c
    gw = sp.gradient(w_hat)
    return (np.einsum("mxyz,cmxyz->cxyz", w, gu)
            - np.einsum("mxyz,cmxyz->cxyz", u, gw))


def velocity_time_derivative(frame: VelocityFrame, w_phys: Optional[np.ndarray],
                             trunc_radius: float) -> JetVectorField:
    """Jets of the time derivative of the velocity.

    The vorticity tendency ``(w . grad) u - (u . grad) w`` is formed
    pointwise from spectral gradients of the truncated fields, transformed,
    truncated and inverted with Biot-Savart.
    """
    grid = frame.u_jets.grid
    if frame.w_hat is None:
        if w_phys is None:
            raise ConfigError("need the sampled vorticity to build the time derivative")
        w_hat = sp.truncate(sp.forward(w_phys, grid), trunc_radius)
    else:
        w_hat = frame.w_hat
    u_hat = frame.u_hat if frame.u_hat is not None else sp.biot_savart(w_hat)
    bracket = advective_bracket(u_hat, w_hat)
    b_hat = sp.truncate(sp.forward(bracket, grid), trunc_radius)
    return sp.spectral_jets(sp.biot_savart(b_hat))


def build_frame(w_phys: np.ndarray, grid: GridSpec, trunc_radius: float, t: float
                ) -> VelocityFrame:
    """Velocity frame with both the velocity and its time derivative."""
    frame = velocity_frame(w_phys, grid, trunc_radius, t)
    frame.dudt_jets = velocity_time_derivative(frame, w_phys, trunc_radius)
    return frame


class VelocityInterpolant:
    """Cubic Hermite-in-time velocity built from two consecutive frames.

    On ``[t_prev, t_prev + 2 dt]`` the velocity is the cubic Hermite
    polynomial through ``(u, du/dt)`` at ``t_prev`` and ``t_curr``, continued
    past ``t_curr`` to cover the next step.  Without a previous frame the
    first-order Taylor extension ``u + (t - t_curr) du/dt`` is used on
    ``[t_curr, t_curr + dt]``.

    Parameters
    ----------
    prev : VelocityFrame or None
    curr : VelocityFrame
    dt : float
        Frame spacing.
    """

    _TOL = 1e-9

    def __init__(self, prev: Optional[VelocityFrame], curr: VelocityFrame, dt: float):
        if not dt > 0:
            raise ConfigError("frame spacing must be positive")
        if curr.dudt_jets is None or (prev is not None and prev.dudt_jets is None):
            raise ConfigError("velocity frames need time-derivative jets")
        if prev is not None and abs(curr.t - prev.t - dt) > self._TOL * max(1.0, dt):
            raise ContractError("frames must be exactly one step apart")
        self.prev = prev
        self.curr = curr
        self.dt = float(dt)
        self._cache: dict[float, JetVectorField] = {}

    def weights(self, t: float) -> tuple[float, float, float, float]:
        """Coefficients of ``(u_prev, u_curr, du_prev, du_curr)`` at time ``t``."""
        dt = self.dt
        if self.prev is None:
            s = (t - self.curr.t) / dt
            if s < -self._TOL or s > 1 + self._TOL:
                raise ContractError(
                    f"time {t} outside [{self.curr.t}, {self.curr.t + dt}] of the start-up interpolant")
            return 0.0, 1.0, 0.0, t - self.curr.t
        sig = (t - self.prev.t) / dt
        if sig < -self._TOL or sig > 2 + self._TOL:
            raise ContractError(
                f"time {t} outside [{self.prev.t}, {self.prev.t + 2 * dt}] of the interpolant")
        s = sig - 1.0
        p0a = (1 + 2 * sig) * (1 - sig) ** 2
        p1a = sig * (1 - sig) ** 2
        p0b = (1 - 2 * s) * (1 + s) ** 2
        p1b = s * (1 + s) ** 2
        return p0a, p0b, dt * p1a, dt * p1b

    def stage_field(self, t: float) -> JetVectorField:
        """The velocity at time ``t`` as a single jet field on the sampling grid."""
        key = float(t)
        if key in self._cache:
            return self._cache[key]
        a_prev, a_curr, b_prev, b_curr = self.weights(t)
        data = a_curr * self.curr.u_jets.data + b_curr * self.curr.dudt_jets.data
        if self.prev is not None:
            data = data + a_prev * self.prev.u_jets.data + b_prev * self.prev.dudt_jets.data
        field = JetVectorField(self.curr.u_jets.grid, data)
        self._cache[key] = field
        return field


def time_eval(interp: VelocityInterpolant, x, t: float) -> np.ndarray:
    """Velocity at points ``x`` and time ``t``."""
    return interp.stage_field(t).eval(x)


@dataclass
class SamplingConfig:
    """Options for sampling vorticity on the velocity grid.

    Attributes
    ----------
    mode : {"direct", "mollified_adaptive"}
    mollifier_frac : float
        Mollifier half-width as a fraction of the cell width, in ``(0, 1]``.
    min_samples, max_samples : int
        Bounds on per-cell, per-dimension quadrature point counts.
    sample_cap : int
        Maximum total number of quadrature points.
    range_tol, tv_tol : float
        A cell is refined while its ``|w|`` range or largest line total
        variation, divided by the per-dimension count, exceeds the tolerance
        times the global maximum of ``|w|``.
    chunk : int
        Points per pullback batch.
    """

    mode: str = "direct"
    mollifier_frac: float = 1.0
    min_samples: int = 2
    max_samples: int = 16
    sample_cap: int = 192 ** 3
    range_tol: float = 0.02
    tv_tol: float = 0.05
    chunk: int = 1 << 18

    def __post_init__(self):
        if self.mode not in ("direct", "mollified_adaptive"):
            raise ConfigError(f"unknown sampling mode {self.mode!r}")
        if not 0 < self.mollifier_frac <= 1:
            raise ConfigError("mollifier half-width must be in (0, 1] cell widths")
        if self.min_samples < 1 or self.max_samples < self.min_samples:
            raise ConfigError("need 1 <= min_samples <= max_samples")
        if self.range_tol <= 0 or self.tv_tol <= 0:
            raise ConfigError("adaptivity tolerances must be positive")

    def validate_for(self, grid: GridSpec) -> None:
        if self.sample_cap < grid.n_nodes * self.min_samples ** 3:
            raise ConfigError("sample cap is below the minimum sample count")


def mollifier_1d(r: np.ndarray, h: float) -> np.ndarray:
    """Unit-mass bump ``cos^2(pi r / 2h) / h`` supported on ``|r| < h``."""
    r = np.asarray(r, dtype=float)
    return np.where(np.abs(r) < h, np.cos(0.5 * np.pi * r / h) ** 2 / h, 0.0)


def _cell_weights(n: int, dx: float, h: float) -> np.ndarray:
    """Weights ``(2, n)`` linking midpoint samples of a cell to its two end nodes.

    Includes the 1D quadrature measure ``dx / n``.
    """
    s = (np.arange(n) + 0.5) / n * dx
    return np.stack([mollifier_1d(s, h), mollifier_1d(dx - s, h)]) * (dx / n)


def _cell_samples(cells: np.ndarray, n: int, grid: GridSpec) -> np.ndarray:
    """Midpoint quadrature points of the listed cells, shape ``(C, n, n, n, 3)``."""
    dx = grid.spacing
    origin = np.asarray(grid.origin)
    frac = (np.arange(n) + 0.5) / n
    lo = origin + cells * dx  # (C, 3)
    offs = [frac * dx[m] for m in range(3)]
    X, Y, Z = np.meshgrid(*offs, indexing="ij")
    local = np.stack([X, Y, Z], axis=-1)  # (n, n, n, 3)
    return lo[:, None, None, None, :] + local[None]


def _variation(mag: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell range and largest line total variation of ``mag`` (C, n, n, n)."""
    c = mag.shape[0]
    rng = mag.reshape(c, -1).max(axis=1) - mag.reshape(c, -1).min(axis=1)
    tv = np.zeros(c)
    for ax in (1, 2, 3):
        if mag.shape[ax] > 1:
            line = np.abs(np.diff(mag, axis=ax)).sum(axis=ax)
            tv = np.maximum(tv, line.reshape(c, -1).max(axis=1))
    return rng, tv


def _sample_mollified(stack, tail, w0_eval, grid: GridSpec, cfg: SamplingConfig) -> np.ndarray:
    cfg.validate_for(grid)
    dims = np.array(grid.dims)
    dx = grid.spacing
    h = cfg.mollifier_frac * dx
    cells = np.stack(np.meshgrid(*[np.arange(n) for n in grid.dims], indexing="ij"),
                     axis=-1).reshape(-1, 3)
    ncell = cells.shape[0]

    def pull(pts):
        flat = pts.reshape(-1, 3)
        out = np.empty_like(flat)
        for s in range(0, flat.shape[0], cfg.chunk):
            out[s:s + cfg.chunk] = pullback_vorticity(stack, tail, w0_eval, flat[s:s + cfg.chunk])
        return out.reshape(pts.shape)

    # Adaptivity pass: grow per-cell counts from the starting samples.
    counts = np.full(ncell, cfg.min_samples, dtype=np.int64)
    samples: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    active = np.arange(ncell)
    n = cfg.min_samples
    wmax = 0.0
    while active.size:
        vals = pull(_cell_samples(cells[active], n, grid))
        samples[n] = (active, vals)
        mag = np.sqrt((vals ** 2).sum(axis=-1))
        wmax = max(wmax, float(mag.max(initial=0.0)))
        if 2 * n > cfg.max_samples or wmax == 0.0:
            break
        rng, tv = _variation(mag)
        grow = (rng / n > cfg.range_tol * wmax) | (tv / n > cfg.tv_tol * wmax)
        active = active[grow]
        counts[active] = 2 * n
        n *= 2

    # Proportional rescale if the counts exceed the global cap.
    total = float((counts.astype(float) ** 3).sum())
    if total > cfg.sample_cap:
        scale = (cfg.sample_cap / total) ** (1.0 / 3.0)
        counts = np.maximum(cfg.min_samples, np.floor(counts * scale)).astype(np.int64)

    acc = np.zeros((3, grid.n_nodes))
    mass = np.zeros(grid.n_nodes)
    for n_c in np.unique(counts):
        n_c = int(n_c)
        sel = np.flatnonzero(counts == n_c)
        vals = None
        if n_c in samples:
            done, done_vals = samples[n_c]
            pos = np.minimum(np.searchsorted(done, sel), done.size - 1)
            if np.array_equal(done[pos], sel):
                vals = done_vals[pos]
        if vals is None:
            vals = pull(_cell_samples(cells[sel], n_c, grid))
        wx, wy, wz = (_cell_weights(n_c, dx[m], h[m]) for m in range(3))
        contrib = np.einsum("ai,bj,ck,nijkv->nabcv", wx, wy, wz, vals)
        corner_mass = np.einsum("a,b,c->abc", wx.sum(1), wy.sum(1), wz.sum(1))
        for a in range(2):
            for b in range(2):
                for c in range(2):
                    idx = (cells[sel] + (a, b, c)) % dims
                    flat = np.ravel_multi_index(idx.T, grid.dims)
                    for v in range(3):
                        acc[v] += np.bincount(flat, weights=contrib[:, a, b, c, v],
                                              minlength=grid.n_nodes)
                    mass += np.bincount(flat, minlength=grid.n_nodes) * corner_mass[a, b, c]
    acc /= mass
    return acc.reshape(3, *grid.dims)


def sample_vorticity(stack: SubmapStack, tail: Optional[DisplacementMap],
                     w0_eval: Callable[[np.ndarray], np.ndarray], grid: GridSpec,
                     cfg: Optional[SamplingConfig] = None) -> np.ndarray:
    """Vorticity on the nodes of ``grid``, shape ``(3, Nx, Ny, Nz)``.

    In ``direct`` mode the pullback is evaluated at the nodes.  In
    ``mollified_adaptive`` mode each node receives the convolution of the
    pulled-back vorticity with a unit-mass ``cos^2`` mollifier, integrated
    cell by cell over its eight adjacent cells with midpoint rules whose
    resolution adapts to the local variation of ``|w|``.
    """
    cfg = cfg or SamplingConfig()
    if cfg.mode == "direct":
        return sample_on_grid(lambda p: pullback_vorticity(stack, tail, w0_eval, p),
                              grid, 3, cfg.chunk)
    return _sample_mollified(stack, tail, w0_eval, grid, cfg)
