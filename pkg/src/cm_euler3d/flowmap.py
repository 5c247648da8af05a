"""Backward characteristic maps and their submap decomposition.

A backward map ``chi`` sends a point at a later time to its position (its
label) at an earlier time.  It is stored as the displacement ``chi(x) - x``,
which is periodic on the torus, on a Hermite jet grid.  Long-time maps are
kept as a stack of short-time submaps that are composed on evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, NumericalError, SingularMapError
from .field_jet import (DEFAULT_EPS, GRADIENT_ORDERS, GridSpec, JetScalarField,
                        JetVectorField, eps_diff_jets, read_field, write_field)

#: Derivative orders up to total degree three, used by the chain rule.
_CHAIN_ORDERS = np.array(
    [(0, 0, 0),
     (1, 0, 0), (0, 1, 0), (0, 0, 1),
     (2, 0, 0), (0, 2, 0), (0, 0, 2), (1, 1, 0), (1, 0, 1), (0, 1, 1),
     (3, 0, 0), (0, 3, 0), (0, 0, 3), (2, 1, 0), (2, 0, 1), (1, 2, 0),
     (0, 2, 1), (1, 0, 2), (0, 1, 2), (1, 1, 1)], dtype=np.int64)
_ORDER_INDEX = {tuple(o): i for i, o in enumerate(_CHAIN_ORDERS)}


def _multi_index(*axes: int) -> int:
    o = [0, 0, 0]
    for a in axes:
        o[a] += 1
    return _ORDER_INDEX[tuple(o)]


@dataclass
class DisplacementMap:
    """Backward submap ``x -> x + disp(x)`` from time ``t_start`` to ``t_end``.

    Parameters
    ----------
    disp : JetVectorField
        Displacement jets on the map grid.
    t_start : float
        Time at which the map is applied (the later time).
    t_end : float
        Time of the returned labels (the earlier time).
    steps : tuple of int
        ``(start_step, end_step)`` step indices matching the two times.
    """

    disp: JetVectorField
    t_start: float = 0.0
    t_end: float = 0.0
    steps: tuple[int, int] = (0, 0)

    @property
    def grid(self) -> GridSpec:
        return self.disp.grid

    def eval(self, x) -> np.ndarray:
        """Mapped positions ``x + disp(x)``."""
        x = np.asarray(x, dtype=float)
        return x + self.disp.eval(x)

    def jacobian(self, x) -> np.ndarray:
        """``grad chi`` at points ``(P, 3)``, shape ``(P, 3, 3)``."""
        _, J = self.disp.value_and_jacobian(x)
        return J + np.eye(3)

    def node_jacobians(self) -> np.ndarray:
        """``grad chi`` at every node from the stored first-derivative jets."""
        d = self.disp.data.reshape(-1, 3, 8)
        return d[:, :, 1:4] + np.eye(3)

    def det_error(self) -> float:
        """``max |det grad chi - 1|`` over the grid nodes."""
        return float(np.abs(np.linalg.det(self.node_jacobians()) - 1.0).max())

    def save(self, directory: str | Path, index: int) -> list[Path]:
        """Write the three displacement components as CMJF dumps."""
        directory = Path(directory)
        paths = []
        for c, comp in enumerate(self.disp.components):
            p = directory / f"map_{index:04d}_c{c}.cmjf"
            write_field(p, comp)
            paths.append(p)
        return paths

    @classmethod
    def load(cls, directory: str | Path, index: int, t_start: float, t_end: float,
             steps: tuple[int, int] = (0, 0)) -> "DisplacementMap":
        directory = Path(directory)
        comps = [read_field(directory / f"map_{index:04d}_c{c}.cmjf") for c in range(3)]
        return cls(JetVectorField.from_components(comps), t_start, t_end, steps)


@dataclass
class RemapPolicy:
    """Remap when the volume-preservation error reaches ``det_tol``."""

    det_tol: float = 1e-3

    def __post_init__(self):
        if not self.det_tol > 0:
            raise ConfigError(f"det_tol must be positive, got {self.det_tol}")


@dataclass
class SubmapStack:
    """Finished submaps, oldest first.

    ``maps[0]`` covers ``[T_1, 0]``, ``maps[1]`` covers ``[T_2, T_1]`` and so
    on; ``remap_times`` lists the ``T_i``.
    """

    maps: list[DisplacementMap] = field(default_factory=list)
    remap_times: list[float] = field(default_factory=list)
    det_errors: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.maps)

    def push(self, m: DisplacementMap) -> None:
        if self.maps and abs(self.maps[-1].t_start - m.t_end) > 1e-12 * max(1.0, abs(m.t_end)):
            raise ConfigError("submap intervals must be contiguous")
        self.maps.append(m)
        self.remap_times.append(m.t_start)
        self.det_errors.append(m.det_error())

    def save(self, directory: str | Path, tail: Optional[DisplacementMap] = None) -> Path:
        """Persist the stack (and optionally the current map) with a manifest.

        The manifest lists one line per map: ``index t_start t_end
        start_step end_step det_error kind`` where ``kind`` is ``stack`` or
        ``current``.  Determinants are sampled at grid nodes.
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        lines = ["# index t_start t_end start_step end_step det_error_nodes kind"]
        entries = [(m, "stack") for m in self.maps]
        if tail is not None:
            entries.append((tail, "current"))
        for i, (m, kind) in enumerate(entries):
            m.save(directory, i)
            lines.append(f"{i} {m.t_start:.17g} {m.t_end:.17g} {m.steps[0]} {m.steps[1]} "
                         f"{m.det_error():.6e} {kind}")
        manifest = directory / "manifest.txt"
        manifest.write_text("\n".join(lines) + "\n")
        return manifest

    @classmethod
    def load(cls, directory: str | Path) -> tuple["SubmapStack", Optional[DisplacementMap]]:
        """Read a stack written by :meth:`save`; returns ``(stack, current)``."""
        directory = Path(directory)
        manifest = directory / "manifest.txt"
        if not manifest.exists():
            raise ConfigError(f"{manifest}: no submap manifest found")
        stack = cls()
        tail = None
        for line in manifest.read_text().splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split()
            i, ts, te, s0, s1 = int(parts[0]), float(parts[1]), float(parts[2]), \
                int(parts[3]), int(parts[4])
            kind = parts[6]
            m = DisplacementMap.load(directory, i, ts, te, (s0, s1))
            if kind == "current":
                tail = m
            else:
                stack.push(m)
        return stack, tail


def identity_map(grid: GridSpec, t: float = 0.0, step: int = 0) -> DisplacementMap:
    """Zero-displacement map labelled with the interval ``[t, t]``."""
    return DisplacementMap(JetVectorField.zeros(grid), t, t, (step, step))


def det_error(m: DisplacementMap) -> float:
    """``max |det grad chi - 1|`` over the map's grid nodes."""
    return m.det_error()


def one_step_map(vel, t_n: float, dt: float, grid: GridSpec,
                 eps: float = DEFAULT_EPS) -> JetVectorField:
    """Jets of the backward one-step map from ``t_n + dt`` to ``t_n``.

    Each stencil point is integrated backward with the three-stage Kutta
    scheme (stage times ``t_n + dt``, ``t_n + dt/2`` and ``t_n``) through the
    time-space velocity interpolant ``vel``; jets follow from the
    epsilon-difference scheme.

    Parameters
    ----------
    vel : VelocityInterpolant
        Must provide ``stage_field(t)`` returning a :class:`JetVectorField`.
    """
    if not dt > 0:
        raise ConfigError(f"time step must be positive, got {dt}")
    h = -dt
    t1 = t_n + dt
    f1 = vel.stage_field(t1)
    f2 = vel.stage_field(t1 + 0.5 * h)
    f3 = vel.stage_field(t_n)

    def values(f, pts):
        v = f.eval_orders(pts, GRADIENT_ORDERS[:1])[:, 0, :].T
        if not np.all(np.isfinite(v)):
            bad = np.argwhere(~np.isfinite(v).all(axis=1))[0, 0]
            raise NumericalError(f"non-finite velocity sample at point {pts[bad]}")
        return v

    def displacement(pts):
        k1 = values(f1, pts)
        k2 = values(f2, pts + (0.5 * h) * k1)
        k3 = values(f3, pts + h * (2.0 * k2 - k1))
        return (h / 6.0) * (k1 + 4.0 * k2 + k3)

    return eps_diff_jets(displacement, grid, eps, returns="displacement")


def compose_jets(outer: JetVectorField, inner: JetVectorField) -> JetVectorField:
    """Jets of the displacement of ``(x + outer) o (x + inner)`` at ``inner``'s nodes.

    The mixed partials of the composition are obtained by the chain rule
    from the interpolated derivatives of ``outer`` (up to third order) at the
    image points and the stored jets of ``inner``.
    """
    grid = inner.grid
    d = inner.data.reshape(-1, 3, 8)
    n = d.shape[0]
    nodes = grid.nodes().reshape(-1, 3)
    Y = nodes + d[:, :, 0]
    F = outer.eval_orders(Y, _CHAIN_ORDERS)  # (3, 20, n)
    F = np.transpose(F, (2, 0, 1))  # (n, 3, 20)

    F1 = F[:, :, 1:4]
    F2 = np.empty((n, 3, 3, 3))
    F3 = np.empty((n, 3, 3, 3, 3))
    for p in range(3):
        for q in range(3):
            F2[:, :, p, q] = F[:, :, _multi_index(p, q)]
            for r in range(3):
                F3[:, :, p, q, r] = F[:, :, _multi_index(p, q, r)]

    X1 = d[:, :, 1:4] + np.eye(3)  # X1[n, p, i] = d_i X^p
    X2 = {(0, 1): d[:, :, 4], (0, 2): d[:, :, 5], (1, 2): d[:, :, 6]}
    X3 = d[:, :, 7]

    out = np.empty_like(d)
    out[:, :, 0] = d[:, :, 0] + F[:, :, 0]
    for i in range(3):
        out[:, :, 1 + i] = d[:, :, 1 + i] + np.einsum("ncp,np->nc", F1, X1[:, :, i])
    for slot, (i, j) in zip((4, 5, 6), ((0, 1), (0, 2), (1, 2))):
        out[:, :, slot] = (d[:, :, slot]
                           + np.einsum("ncpq,np,nq->nc", F2, X1[:, :, i], X1[:, :, j])
                           + np.einsum("ncp,np->nc", F1, X2[(i, j)]))
    out[:, :, 7] = (d[:, :, 7]
                    + np.einsum("ncpqr,np,nq,nr->nc", F3, X1[:, :, 0], X1[:, :, 1], X1[:, :, 2])
                    + np.einsum("ncpq,np,nq->nc", F2, X2[(0, 1)], X1[:, :, 2])
                    + np.einsum("ncpq,np,nq->nc", F2, X2[(0, 2)], X1[:, :, 1])
                    + np.einsum("ncpq,np,nq->nc", F2, X1[:, :, 0], X2[(1, 2)])
                    + np.einsum("ncp,np->nc", F1, X3))
    return JetVectorField(grid, out.reshape(*grid.dims, 3, 8))


def compose_update(chi: DisplacementMap, step: JetVectorField,
                   t_new: Optional[float] = None, step_new: Optional[int] = None
                   ) -> DisplacementMap:
    """Projected composition ``H[chi o X]`` extending ``chi`` by one step.

    Parameters
    ----------
    chi : DisplacementMap
        Current map, applied second.
    step : JetVectorField
        Displacement jets of the one-step map ``X``, applied first.
    t_new, step_new : optional
        New start time and step index of the composed map.
    """
    if step.grid != chi.grid:
        raise ConfigError("one-step map and current map must share the map grid")
    disp = compose_jets(chi.disp, step)
    t_start = chi.t_start if t_new is None else float(t_new)
    s_start = chi.steps[0] if step_new is None else int(step_new)
    return DisplacementMap(disp, t_start, chi.t_end, (s_start, chi.steps[1]))


def _chain(stack: SubmapStack, tail: Optional[DisplacementMap]) -> list[DisplacementMap]:
    maps = [] if tail is None else [tail]
    maps.extend(reversed(stack.maps))
    return maps


def eval_composed(stack: SubmapStack, tail: Optional[DisplacementMap], x) -> np.ndarray:
    """Label points: apply ``tail`` then the stacked maps from newest to oldest."""
    y = np.array(x, dtype=float)
    for m in _chain(stack, tail):
        y = m.eval(y)
    return y


def composed_jacobian(stack: SubmapStack, tail: Optional[DisplacementMap], x
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Label points and the Jacobian of the full composition at ``x`` (P, 3)."""
    y = np.array(x, dtype=float).reshape(-1, 3)
    J = np.broadcast_to(np.eye(3), (y.shape[0], 3, 3)).copy()
    for m in _chain(stack, tail):
        v, Jm = m.disp.value_and_jacobian(y)
        J = np.einsum("pij,pjk->pik", Jm + np.eye(3), J)
        y = y + v
    return y, J


def adjugate(J: np.ndarray) -> np.ndarray:
    """Adjugate (transposed cofactor matrix) of a stack of 3x3 matrices."""
    a = J
    adj = np.empty_like(a)
    adj[..., 0, 0] = a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1]
    adj[..., 0, 1] = a[..., 0, 2] * a[..., 2, 1] - a[..., 0, 1] * a[..., 2, 2]
    adj[..., 0, 2] = a[..., 0, 1] * a[..., 1, 2] - a[..., 0, 2] * a[..., 1, 1]
    adj[..., 1, 0] = a[..., 1, 2] * a[..., 2, 0] - a[..., 1, 0] * a[..., 2, 2]
    adj[..., 1, 1] = a[..., 0, 0] * a[..., 2, 2] - a[..., 0, 2] * a[..., 2, 0]
    adj[..., 1, 2] = a[..., 0, 2] * a[..., 1, 0] - a[..., 0, 0] * a[..., 1, 2]
    adj[..., 2, 0] = a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0]
    adj[..., 2, 1] = a[..., 0, 1] * a[..., 2, 0] - a[..., 0, 0] * a[..., 2, 1]
    adj[..., 2, 2] = a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    return adj


def _det3(a: np.ndarray) -> np.ndarray:
    return (a[..., 0, 0] * (a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1])
            - a[..., 0, 1] * (a[..., 1, 0] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 0])
            + a[..., 0, 2] * (a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0]))


def pullback_vorticity(stack: SubmapStack, tail: Optional[DisplacementMap],
                       w0_eval: Callable[[np.ndarray], np.ndarray], x) -> np.ndarray:
    """Vorticity by pullback through the composed backward map.

    ``w(x) = adj(grad chi_tail) adj(grad chi_{m-1}) ... adj(grad chi_1) w0(label)``
    with every Jacobian evaluated at the partially composed point.  The
    adjugate equals the inverse for volume-preserving maps; the determinant
    is only checked for positivity.

    Raises
    ------
    SingularMapError
        If any Jacobian determinant is non-positive.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    y = x.reshape(-1, 3).copy()
    A = None
    for stage, m in enumerate(_chain(stack, tail)):
        v, Jd = m.disp.value_and_jacobian(y)
        J = Jd + np.eye(3)
        det = _det3(J)
        bad = ~(det > 0)
        if bad.any():
            i = int(np.argmax(bad))
            raise SingularMapError(x.reshape(-1, 3)[i], stage, float(det[i]))
        adj = adjugate(J)
        A = adj if A is None else np.einsum("pij,pjk->pik", A, adj)
        y = y + v
    w = np.asarray(w0_eval(y), dtype=float).reshape(-1, 3)
    if A is not None:
        w = np.einsum("pij,pj->pi", A, w)
    return w[0] if single else w


def pullback_scalar(stack: SubmapStack, tail: Optional[DisplacementMap],
                    phi0_eval: Callable[[np.ndarray], np.ndarray], x) -> np.ndarray:
    """Passive scalar ``phi0(label point)``."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    y = eval_composed(stack, tail, x.reshape(-1, 3))
    out = np.asarray(phi0_eval(y), dtype=float).reshape(-1)
    return float(out[0]) if single else out


def maybe_remap(stack: SubmapStack, current: DisplacementMap, policy: RemapPolicy
                ) -> tuple[SubmapStack, DisplacementMap]:
    """Push ``current`` and restart from the identity when its det error reaches tolerance.

    Returns the (possibly appended) stack and the map to continue with; the
    latter is a fresh identity map exactly when a remap happened.
    """
    if current.det_error() >= policy.det_tol:
        stack.push(current)
        return stack, identity_map(current.grid, current.t_start, current.steps[0])
    return stack, current


def sample_on_grid(func: Callable[[np.ndarray], np.ndarray], grid: GridSpec,
                   n_out: int, chunk: int = 1 << 18) -> np.ndarray:
    """Evaluate a vectorized point function at all nodes in x-slab chunks.

    Returns an array of shape ``(n_out, Nx, Ny, Nz)``.
    """
    nx, ny, nz = grid.dims
    out = np.empty((n_out, nx, ny, nz))
    per_slab = ny * nz
    step = max(1, chunk // per_slab)
    for i0 in range(0, nx, step):
        i1 = min(nx, i0 + step)
        vals = np.asarray(func(grid.slab_points(i0, i1)), dtype=float)
        out[:, i0:i1] = vals.reshape(i1 - i0, ny, nz, n_out).transpose(3, 0, 1, 2)
    return out
