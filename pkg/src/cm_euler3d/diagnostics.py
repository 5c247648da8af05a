"""Conserved quantities, maxima, spectra, passive tracers and plane slices."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import spectral as sp
from .errors import ConfigError
from .field_jet import GridSpec
from .flowmap import (DisplacementMap, SubmapStack, pullback_scalar, pullback_vorticity,
                      sample_on_grid)

CSV_FIELDS = ("t", "enstrophy", "energy_rel_err", "helicity_drift", "max_w", "max_u",
              "n_maps", "wall_s")


@dataclass
class FlowQuantities:
    """Integrals and maxima of one vorticity sample and its velocity.

    ``enstrophy``, ``energy`` and ``helicity`` are box integrals of
    ``|w|^2``, ``|u|^2`` and ``u . w``, evaluated with the equal-weight
    quadrature (equivalently by Parseval).
    """

    enstrophy: float
    energy: float
    helicity: float
    max_w: float
    max_u: float
    enstrophy_spectrum: Optional[np.ndarray] = field(default=None, repr=False)
    energy_spectrum: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass
class DiagnosticsRow:
    """One line of ``diagnostics.csv``."""

    t: float
    enstrophy: float
    energy_rel_err: float
    helicity: float
    helicity_drift: float
    max_w: float
    max_u: float
    n_maps: int
    wall_s: float

    def csv_values(self) -> list[str]:
        d = asdict(self)
        return [f"{d[k]:d}" if k == "n_maps" else f"{d[k]:.12e}" for k in CSV_FIELDS]


def quantities_from_vorticity(w_phys: np.ndarray, grid: GridSpec,
                              spectra: bool = False) -> FlowQuantities:
    """Integrals of a vorticity sample and its Biot-Savart velocity."""
    vol = float(np.prod(grid.lengths))
    max_w = float(np.sqrt((w_phys ** 2).sum(axis=0)).max(initial=0.0))
    w_hat = sp.forward(w_phys, grid)
    del w_phys
    u_hat = sp.biot_savart(w_hat)
    enst = vol * sp.l2_norm_sq(w_hat)
    energy = vol * sp.l2_norm_sq(u_hat)
    hel = vol * sp.inner(u_hat, w_hat)
    z_spec = sp.isotropic_spectrum(w_hat) * vol if spectra else None
    e_spec = sp.isotropic_spectrum(u_hat) * vol if spectra else None
    del w_hat
    u = sp.inverse(u_hat)
    del u_hat
    max_u = float(np.sqrt((u ** 2).sum(axis=0)).max(initial=0.0))
    return FlowQuantities(enst, energy, hel, max_w, max_u, z_spec, e_spec)


def conserved_quantities(stack: SubmapStack, tail: Optional[DisplacementMap],
                         w0_eval: Callable[[np.ndarray], np.ndarray], grid: GridSpec,
                         spectra: bool = False, chunk: int = 1 << 18) -> FlowQuantities:
    """Sample ``w`` by pullback on ``grid`` and integrate.

    Spectra (scaled so that ``sum_k 2 S(k)`` equals the box integral) are
    included when ``spectra`` is true.
    """
    w = sample_on_grid(lambda p: pullback_vorticity(stack, tail, w0_eval, p), grid, 3, chunk)
    return quantities_from_vorticity(w, grid, spectra)


def make_row(t: float, q: FlowQuantities, q0: FlowQuantities, n_maps: int,
             wall_s: float) -> DiagnosticsRow:
    """Diagnostics row relative to the initial quantities ``q0``."""
    rel = q.energy / q0.energy - 1.0 if q0.energy > 0 else 0.0
    return DiagnosticsRow(t, q.enstrophy, rel, q.helicity, q.helicity - q0.helicity,
                          q.max_w, q.max_u, n_maps, wall_s)


class DiagnosticsWriter:
    """Append-only CSV writer, flushed after every row."""

    def __init__(self, path: str | Path, append: bool = False):
        self.path = Path(path)
        exists = self.path.exists() and self.path.stat().st_size > 0
        self._fh = open(self.path, "a" if append else "w", newline="")
        self._w = csv.writer(self._fh)
        if not (append and exists):
            self._w.writerow(CSV_FIELDS)
            self._fh.flush()

    def write(self, row: DiagnosticsRow) -> None:
        self._w.writerow(row.csv_values())
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_diagnostics(path: str | Path) -> list[dict]:
    """Parse ``diagnostics.csv`` into a list of dicts of floats."""
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "n_maps" else float(v)) for k, v in r.items()} for r in rows]


def _box_points(center: np.ndarray, half: np.ndarray, n: Sequence[int]) -> list[np.ndarray]:
    return [np.linspace(center[m] - half[m], center[m] + half[m], n[m]) for m in range(3)]


def refine_max(field_eval: Callable[[np.ndarray], np.ndarray], grid: GridSpec,
               iterations: int = 3, window: float = 3.0) -> tuple[np.ndarray, float]:
    """Locate a maximum by recursive zooming.

    The field is sampled on ``grid``; then ``iterations`` times an equally
    sized lattice is laid over a box ``window`` current spacings wide around
    the best point so far.  The returned value never decreases across
    iterations.

    Parameters
    ----------
    field_eval : callable
        Vectorized scalar field ``(P, 3) -> (P,)``.
    """
    if iterations < 1:
        raise ConfigError("refine_max needs at least one iteration")
    vals = sample_on_grid(field_eval, grid, 1)[0]
    i = np.unravel_index(int(np.argmax(vals)), vals.shape)
    best_val = float(vals[i])
    best_loc = np.array([grid.axes()[m][i[m]] for m in range(3)])
    spacing = grid.spacing.copy()
    n = grid.dims
    for _ in range(iterations):
        half = 0.5 * window * spacing
        axes = _box_points(best_loc, half, n)
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        v = np.asarray(field_eval(pts), dtype=float).reshape(-1)
        j = int(np.argmax(v))
        if v[j] > best_val:
            best_val = float(v[j])
            best_loc = pts[j]
        spacing = 2 * half / (np.asarray(n) - 1)
    return best_loc, best_val


def tracer_field(stack: SubmapStack, tail: Optional[DisplacementMap],
                 phi0: Callable[[np.ndarray], np.ndarray]) -> Callable[[np.ndarray], np.ndarray]:
    """Passive scalar evaluator ``x -> phi0(label(x))``."""
    return lambda x: pullback_scalar(stack, tail, phi0, x)


def vorticity_evaluator(stack: SubmapStack, tail: Optional[DisplacementMap],
                        w0_eval: Callable[[np.ndarray], np.ndarray], quantity: str = "w"
                        ) -> Callable[[np.ndarray], np.ndarray]:
    """Scalar evaluator for ``|w|`` (``"w"``) or a component (``"wx"``, ``"wy"``, ``"wz"``)."""
    comps = {"wx": 0, "wy": 1, "wz": 2}
    if quantity == "w":
        return lambda x: np.sqrt((pullback_vorticity(stack, tail, w0_eval, x) ** 2).sum(-1))
    if quantity in comps:
        c = comps[quantity]
        return lambda x: pullback_vorticity(stack, tail, w0_eval, x)[..., c]
    raise ConfigError(f"unknown vorticity quantity {quantity!r}")


@dataclass
class SliceRequest:
    """A rectangular window on an axis-aligned plane.

    Attributes
    ----------
    axis : int
        Normal axis of the plane (0, 1 or 2).
    offset : float
        Coordinate of the plane along ``axis``.
    center : tuple of float
        Window centre in the two in-plane coordinates (ascending axis order).
    half_widths : tuple of float
        Window half-widths in the two in-plane coordinates.
    resolution : tuple of int
        Samples along the two in-plane coordinates.
    quantity : str
        ``"w"`` for ``|w|``, ``"tracer"``, or ``"wx"``, ``"wy"``, ``"wz"``.
    """

    axis: int
    offset: float
    center: tuple[float, float]
    half_widths: tuple[float, float]
    resolution: tuple[int, int] = (512, 512)
    quantity: str = "w"

    def __post_init__(self):
        if self.axis not in (0, 1, 2):
            raise ConfigError("slice axis must be 0, 1 or 2")
        if any(h <= 0 for h in self.half_widths) or any(n < 2 for n in self.resolution):
            raise ConfigError("slice window needs positive half-widths and >= 2 samples")

    def in_plane_axes(self) -> tuple[int, int]:
        return tuple(a for a in range(3) if a != self.axis)

    def points(self) -> np.ndarray:
        """Sample points ``(n1, n2, 3)`` of the window."""
        a1, a2 = self.in_plane_axes()
        s1 = np.linspace(self.center[0] - self.half_widths[0],
                         self.center[0] + self.half_widths[0], self.resolution[0])
        s2 = np.linspace(self.center[1] - self.half_widths[1],
                         self.center[1] + self.half_widths[1], self.resolution[1])
        S1, S2 = np.meshgrid(s1, s2, indexing="ij")
        pts = np.empty((*S1.shape, 3))
        pts[..., self.axis] = self.offset
        pts[..., a1] = S1
        pts[..., a2] = S2
        return pts


def slice_sample(request: SliceRequest, field_eval: Callable[[np.ndarray], np.ndarray],
                 chunk: int = 1 << 18) -> tuple[np.ndarray, tuple[float, float]]:
    """Evaluate a scalar field on a slice window; returns ``(array, (min, max))``."""
    pts = request.points().reshape(-1, 3)
    out = np.empty(pts.shape[0])
    for s in range(0, pts.shape[0], chunk):
        out[s:s + chunk] = np.asarray(field_eval(pts[s:s + chunk]), dtype=float).reshape(-1)
    arr = out.reshape(request.resolution)
    return arr, (float(arr.min()), float(arr.max()))


def write_slice(prefix: str | Path, request: SliceRequest, arr: np.ndarray,
                vrange: tuple[float, float]) -> tuple[Path, Path]:
    """Write ``<prefix>.bin`` (flat little-endian f64, C order) and ``<prefix>.txt``."""
    prefix = Path(prefix)
    data_path = prefix.with_suffix(".bin")
    meta_path = prefix.with_suffix(".txt")
    np.asarray(arr, dtype="<f8").tofile(data_path)
    a1, a2 = request.in_plane_axes()
    meta_path.write_text(
        f"dims {arr.shape[0]} {arr.shape[1]}\n"
        f"axes {a1} {a2}\n"
        f"plane_axis {request.axis}\nplane_offset {request.offset:.17g}\n"
        f"center {request.center[0]:.17g} {request.center[1]:.17g}\n"
        f"half_widths {request.half_widths[0]:.17g} {request.half_widths[1]:.17g}\n"
        f"quantity {request.quantity}\n"
        f"range {vrange[0]:.17g} {vrange[1]:.17g}\n")
    return data_path, meta_path
