"""Periodic grids and Hermite jet fields.

A jet field stores, at every node of a periodic Cartesian grid, the eight
raw mixed partial derivatives ``d^a f`` for ``a`` in ``{0,1}^3``.  Together
they define a globally C1 piecewise tricubic Hermite interpolant whose value
and mixed partials match the stored coefficients at every node.

The cell-width scaling of the slope basis functions is folded into the
evaluation kernel, so coefficients are resolution independent.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from ._kernels import hermite_eval
from .errors import ConfigError

#: Multi-indices of the stored mixed partials, in storage order.
MASKS: tuple[tuple[int, int, int], ...] = (
    (0, 0, 0),
    (1, 0, 0),
    (0, 1, 0),
    (0, 0, 1),
    (1, 1, 0),
    (1, 0, 1),
    (0, 1, 1),
    (1, 1, 1),
)
MASK_INDEX = {m: i for i, m in enumerate(MASKS)}

#: Value followed by the three first partials.
GRADIENT_ORDERS = np.array([(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)], dtype=np.int64)

#: Default offset of the epsilon-difference stencil.
DEFAULT_EPS = 2.5e-3

_DUMP_MAGIC = b"CMJF"
_DUMP_VERSION = 1
_DUMP_HEADER = struct.Struct("<4sI3I3d3d")


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic Cartesian grid.

    Parameters
    ----------
    dims : tuple of int
        Number of nodes ``(Nx, Ny, Nz)``; each at least 4.
    lengths : tuple of float
        Periods ``(Lx, Ly, Lz)``.
    origin : tuple of float
        Lower corner; node ``(i, j, k)`` sits at ``origin + (i, j, k) * spacing``.
    """

    dims: tuple[int, int, int]
    lengths: tuple[float, float, float] = (4 * np.pi,) * 3
    origin: tuple[float, float, float] = (-2 * np.pi,) * 3

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        lengths = tuple(float(v) for v in self.lengths)
        origin = tuple(float(v) for v in self.origin)
        if len(dims) != 3 or len(lengths) != 3 or len(origin) != 3:
            raise ConfigError("grid dims, lengths and origin need three entries each")
        if any(n < 4 for n in dims):
            raise ConfigError(f"grid dims must each be >= 4, got {dims}")
        if any(not np.isfinite(v) or v <= 0 for v in lengths):
            raise ConfigError(f"grid lengths must be positive, got {lengths}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def cube(cls, n: int | Sequence[int], length: float = 4 * np.pi,
             origin: float = -2 * np.pi) -> "GridSpec":
        """Grid on the box ``[origin, origin + length)^3``."""
        dims = (n, n, n) if np.isscalar(n) else tuple(n)
        return cls(dims, (length,) * 3, (origin,) * 3)

    @property
    def spacing(self) -> np.ndarray:
        return np.asarray(self.lengths) / np.asarray(self.dims)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.dims))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.dims

    def axes(self) -> list[np.ndarray]:
        """Node coordinates along each axis."""
        return [o + h * np.arange(n) for o, h, n in zip(self.origin, self.spacing, self.dims)]

    def nodes(self) -> np.ndarray:
        """All node coordinates, shape ``(Nx, Ny, Nz, 3)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def slab_points(self, i0: int, i1: int) -> np.ndarray:
        """Node coordinates of the x-slab ``i0 <= i < i1`` flattened to ``(P, 3)``."""
        ax = self.axes()
        X, Y, Z = np.meshgrid(ax[0][i0:i1], ax[1], ax[2], indexing="ij")
        return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=-1)

    def wrap(self, points: np.ndarray) -> np.ndarray:
        """Reduce points into ``[origin, origin + L)`` componentwise."""
        o = np.asarray(self.origin)
        L = np.asarray(self.lengths)
        r = np.mod(np.asarray(points, dtype=float) - o, L)
        r = np.where(r >= L, 0.0, r)
        return r + o

    def _as_arrays(self):
        return np.asarray(self.origin, dtype=float), self.spacing.astype(float)


def _as_points(x) -> tuple[np.ndarray, bool]:
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.ascontiguousarray(pts.reshape(-1, 3))
    return pts, single


def _orders_array(orders) -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(orders, dtype=np.int64).reshape(-1, 3))
    if arr.min(initial=0) < 0 or arr.max(initial=0) > 3:
        raise ConfigError("derivative orders must lie between 0 and 3 per axis")
    return arr


class _JetData:
    """Shared storage and evaluation logic for scalar and vector jet fields."""

    grid: GridSpec
    data: np.ndarray  # (Nx, Ny, Nz, C, 8)

    def eval_orders(self, points: np.ndarray, orders) -> np.ndarray:
        """Evaluate several derivatives at many points.

        Parameters
        ----------
        points : array_like, shape (P, 3)
        orders : array_like of int, shape (D, 3)
            Derivative order per axis for each requested derivative.

        Returns
        -------
        ndarray, shape (C, D, P)
        """
        pts, _ = _as_points(points)
        ords = _orders_array(orders)
        out = np.empty((self.data.shape[3], ords.shape[0], pts.shape[0]))
        origin, dx = self.grid._as_arrays()
        hermite_eval(self.data, origin, dx, pts, ords, out)
        return out


class JetScalarField(_JetData):
    """Scalar Hermite jet field.

    Parameters
    ----------
    grid : GridSpec
    coeffs : ndarray, shape (Nx, Ny, Nz, 8)
        Raw mixed partials per node in :data:`MASKS` order.
    """

    def __init__(self, grid: GridSpec, coeffs: np.ndarray):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (*grid.dims, 8):
            raise ConfigError(
                f"coefficient shape {coeffs.shape} does not match grid {(*grid.dims, 8)}")
        self.grid = grid
        self.data = np.ascontiguousarray(coeffs[:, :, :, None, :])

    @classmethod
    def _from_data(cls, grid: GridSpec, data: np.ndarray) -> "JetScalarField":
        obj = cls.__new__(cls)
        obj.grid = grid
        obj.data = data
        return obj

    @property
    def coeffs(self) -> np.ndarray:
        return self.data[:, :, :, 0, :]

    @classmethod
    def zeros(cls, grid: GridSpec) -> "JetScalarField":
        return cls(grid, np.zeros((*grid.dims, 8)))

    def eval(self, x, deriv_mask=(0, 0, 0)):
        """Evaluate ``d^a`` of the interpolant at one point or an array of points."""
        pts, single = _as_points(x)
        out = self.eval_orders(pts, [deriv_mask])[0, 0]
        return float(out[0]) if single else out


class JetVectorField(_JetData):
    """Three-component Hermite jet field on a single grid.

    Parameters
    ----------
    grid : GridSpec
    data : ndarray, shape (Nx, Ny, Nz, 3, 8)
        Raw mixed partials of each component.
    """

    def __init__(self, grid: GridSpec, data: np.ndarray):
        data = np.asarray(data, dtype=float)
        if data.shape != (*grid.dims, 3, 8):
            raise ConfigError(
                f"vector jet shape {data.shape} does not match grid {(*grid.dims, 3, 8)}")
        self.grid = grid
        self.data = np.ascontiguousarray(data)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "JetVectorField":
        return cls(grid, np.zeros((*grid.dims, 3, 8)))

    @classmethod
    def from_components(cls, comps: Sequence[JetScalarField]) -> "JetVectorField":
        if len(comps) != 3:
            raise ConfigError("a vector jet field needs exactly three components")
        grid = comps[0].grid
        if any(c.grid != grid for c in comps):
            raise ConfigError("vector components must share one grid")
        return cls(grid, np.stack([c.coeffs for c in comps], axis=3))

    @property
    def components(self) -> tuple[JetScalarField, ...]:
        return tuple(JetScalarField._from_data(self.grid, self.data[:, :, :, c:c + 1, :])
                     for c in range(3))

    def eval(self, x, deriv_mask=(0, 0, 0)) -> np.ndarray:
        """Evaluate ``d^a`` of every component; returns ``(3,)`` or ``(P, 3)``."""
        pts, single = _as_points(x)
        out = self.eval_orders(pts, [deriv_mask])[:, 0, :].T
        return out[0] if single else out

    def value_and_jacobian(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Values ``(P, 3)`` and Jacobians ``J[p, c, m] = d_m f^c``, shape ``(P, 3, 3)``."""
        pts, _ = _as_points(points)
        out = self.eval_orders(pts, GRADIENT_ORDERS)
        return out[:, 0, :].T, np.transpose(out[:, 1:, :], (2, 0, 1))

    def __add__(self, other: "JetVectorField") -> "JetVectorField":
        if other.grid != self.grid:
            raise ConfigError("cannot add jet fields on different grids")
        return JetVectorField(self.grid, self.data + other.data)


def basis_1d(s: float, which: str, deriv: int = 0) -> float:
    """One-dimensional Hermite cubic basis on ``[-1, 1]``.

    Parameters
    ----------
    s : float
        Local coordinate, ``|s| <= 1``.
    which : {"q0", "q1"}
        ``q0(s) = (1 + 2|s|)(1 - |s|)^2`` or ``q1(s) = s (1 - |s|)^2``.
    deriv : {0, 1}
        Derivative order in ``s``.
    """
    a = abs(s)
    sg = 1.0 if s >= 0 else -1.0
    if which == "q0":
        if deriv == 0:
            return (1 + 2 * a) * (1 - a) ** 2
        if deriv == 1:
            return sg * (-6 * a + 6 * a * a)
    elif which == "q1":
        if deriv == 0:
            return s * (1 - a) ** 2
        if deriv == 1:
            return (1 - a) ** 2 - 2 * a * (1 - a)
    raise ConfigError(f"unknown basis selection {which!r}, deriv={deriv}")


def evaluate(field: JetScalarField, x, deriv_mask=(0, 0, 0)):
    """Evaluate ``d^a`` of a scalar jet field interpolant at ``x``."""
    return field.eval(x, deriv_mask)


def evaluate_vec(field: JetVectorField, x, deriv_mask=(0, 0, 0)):
    """Componentwise :func:`evaluate` for vector fields."""
    return field.eval(x, deriv_mask)


def project(samples, grid: GridSpec) -> JetScalarField:
    """Build a scalar jet field from node samples of all eight mixed partials.

    Parameters
    ----------
    samples : ndarray of shape (8, Nx, Ny, Nz) or mapping mask -> (Nx, Ny, Nz)
        Node values of ``d^a f`` in :data:`MASKS` order.
    grid : GridSpec
    """
    if isinstance(samples, Mapping):
        missing = [m for m in MASKS if tuple(m) not in samples]
        if missing:
            raise ConfigError(f"missing derivative samples for masks {missing}")
        arrs = [np.asarray(samples[m], dtype=float) for m in MASKS]
    else:
        arr = np.asarray(samples, dtype=float)
        if arr.ndim != 4 or arr.shape[0] != 8:
            raise ConfigError(f"expected samples of shape (8, *dims), got {arr.shape}")
        arrs = list(arr)
    for a in arrs:
        if a.shape != grid.dims:
            raise ConfigError(f"sample shape {a.shape} does not match grid dims {grid.dims}")
    return JetScalarField(grid, np.stack(arrs, axis=-1))


def project_vec(samples: np.ndarray, grid: GridSpec) -> JetVectorField:
    """Vector version of :func:`project`; ``samples`` has shape ``(3, 8, Nx, Ny, Nz)``."""
    arr = np.asarray(samples, dtype=float)
    if arr.shape != (3, 8, *grid.dims):
        raise ConfigError(f"expected samples of shape (3, 8, *dims), got {arr.shape}")
    return JetVectorField(grid, np.moveaxis(arr, (0, 1), (3, 4)))


def _stencil():
    """Offsets and mask weights of the tensorized 5-point stencil.

    Returns
    -------
    offsets : ndarray, shape (125, 3)
        Integer offsets in ``{-2..2}^3``.
    weights : ndarray, shape (8, 125)
        Weight of each offset for every mask, excluding the ``1/eps^|a|`` factor.
    """
    d1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
    d0 = np.array([0.0, 0.0, 1.0, 0.0, 0.0])
    g = np.arange(-2, 3)
    offsets = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    weights = np.empty((8, 125))
    for k, m in enumerate(MASKS):
        w = [d1 if m[ax] else d0 for ax in range(3)]
        weights[k] = np.einsum("i,j,k->ijk", *w).ravel()
    return offsets, weights


_STENCIL_OFFSETS, _STENCIL_WEIGHTS = _stencil()
_MASK_ORDER = np.array([sum(m) for m in MASKS])


def eps_diff_jets(map_eval: Callable[[np.ndarray], np.ndarray], grid: GridSpec,
                  eps: float = DEFAULT_EPS, *, returns: str = "position",
                  chunk_nodes: int = 16384) -> JetVectorField:
    """Jets of a map's displacement by the epsilon-difference scheme.

    Every mixed partial ``d^a`` is a centred fourth-order finite difference
    with offsets ``+-eps, +-2 eps`` in each active direction of ``a``, taken
    tensorially for mixed partials.

    Parameters
    ----------
    map_eval : callable
        Vectorized map ``(P, 3) -> (P, 3)``.
    grid : GridSpec
        Nodes at which jets are produced.
    eps : float
        Stencil offset, ``0 < eps < min(dx) / 4``.
    returns : {"position", "displacement"}
        Whether ``map_eval`` returns mapped positions ``F(x)`` or the
        displacement ``F(x) - x``. Positions are converted to displacements
        before differencing, which keeps roundoff independent of ``|x|``.
    chunk_nodes : int
        Number of nodes processed per batch.

    Returns
    -------
    JetVectorField
        Jets of the displacement ``F(x) - x``; the Jacobian jets of ``F``
        are the identity plus the first-order displacement jets.
    """
    eps = float(eps)
    if not eps > 0:
        raise ConfigError(f"epsilon must be positive, got {eps}")
    if eps >= grid.spacing.min() / 4:
        raise ConfigError(f"epsilon {eps} must be below a quarter cell width")
    if returns not in ("position", "displacement"):
        raise ConfigError(f"unknown returns={returns!r}")
    nodes = grid.nodes().reshape(-1, 3)
    offs = _STENCIL_OFFSETS * eps
    W = _STENCIL_WEIGHTS / eps ** _MASK_ORDER[:, None]
    out = np.empty((nodes.shape[0], 3, 8))
    for s in range(0, nodes.shape[0], chunk_nodes):
        base = nodes[s:s + chunk_nodes]
        pts = (base[:, None, :] + offs[None, :, :]).reshape(-1, 3)
        val = np.asarray(map_eval(pts), dtype=float).reshape(pts.shape)
        if returns == "position":
            val = val - pts
        val = val.reshape(base.shape[0], 125, 3)
        out[s:s + chunk_nodes] = np.einsum("ao,noc->nca", W, val)
    return JetVectorField(grid, out.reshape(*grid.dims, 3, 8))


def write_field(path: str | Path, field: JetScalarField) -> None:
    """Write a scalar jet field in the little-endian ``CMJF`` dump format.

    The header is ``magic, version, Nx, Ny, Nz, Lx, Ly, Lz, origin[3]``,
    followed by the eight coefficient arrays in :data:`MASKS` order, each in
    x-fastest order.
    """
    g = field.grid
    header = _DUMP_HEADER.pack(_DUMP_MAGIC, _DUMP_VERSION, *g.dims, *g.lengths, *g.origin)
    with open(path, "wb") as fh:
        fh.write(header)
        for a in range(8):
            arr = np.asarray(field.coeffs[..., a], dtype="<f8")
            fh.write(np.asfortranarray(arr).tobytes(order="F"))


def read_field(path: str | Path) -> JetScalarField:
    """Read a scalar jet field written by :func:`write_field`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _DUMP_HEADER.size:
        raise ConfigError(f"{path}: truncated field dump")
    magic, version, nx, ny, nz, lx, ly, lz, ox, oy, oz = _DUMP_HEADER.unpack_from(raw)
    if magic != _DUMP_MAGIC or version != _DUMP_VERSION:
        raise ConfigError(f"{path}: not a CMJF version {_DUMP_VERSION} dump")
    grid = GridSpec((nx, ny, nz), (lx, ly, lz), (ox, oy, oz))
    n = nx * ny * nz
    body = np.frombuffer(raw, dtype="<f8", offset=_DUMP_HEADER.size)
    if body.size != 8 * n:
        raise ConfigError(f"{path}: expected {8 * n} coefficients, found {body.size}")
    coeffs = np.stack([body[a * n:(a + 1) * n].reshape((nx, ny, nz), order="F")
                       for a in range(8)], axis=-1)
    return JetScalarField(grid, coeffs.astype(float))
