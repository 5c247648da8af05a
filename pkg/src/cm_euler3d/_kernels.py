"""Compiled kernels for tricubic Hermite evaluation on periodic grids.

Coefficient arrays use a node-major layout ``(Nx, Ny, Nz, C, 8)`` where the
last axis enumerates the mixed-partial multi-indices in the order given by
:data:`cm_euler3d.field_jet.MASKS`.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _basis(t, h, maxo, B):
    """Fill ``B[corner, kind, order]`` with scaled 1D Hermite basis values.

    ``t`` is the local coordinate in ``[0, 1]`` measured from the lower node.
    Corner 0 is the lower node (``s = t``) and corner 1 the upper node
    (``s = t - 1``). ``kind`` 0 is the value basis ``q0`` and kind 1 the slope
    basis ``h * q1``; derivative order ``k`` is taken with respect to the
    physical coordinate, hence the ``1 / h**k`` factors.
    """
    u = t - 1.0
    B[0, 0, 0] = 1.0 - 3.0 * t * t + 2.0 * t * t * t
    B[0, 1, 0] = (t - 2.0 * t * t + t * t * t) * h
    B[1, 0, 0] = 1.0 - 3.0 * u * u - 2.0 * u * u * u
    B[1, 1, 0] = (u + 2.0 * u * u + u * u * u) * h
    if maxo >= 1:
        B[0, 0, 1] = (-6.0 * t + 6.0 * t * t) / h
        B[0, 1, 1] = 1.0 - 4.0 * t + 3.0 * t * t
        B[1, 0, 1] = (-6.0 * u - 6.0 * u * u) / h
        B[1, 1, 1] = 1.0 + 4.0 * u + 3.0 * u * u
    if maxo >= 2:
        B[0, 0, 2] = (-6.0 + 12.0 * t) / (h * h)
        B[0, 1, 2] = (-4.0 + 6.0 * t) / h
        B[1, 0, 2] = (-6.0 - 12.0 * u) / (h * h)
        B[1, 1, 2] = (4.0 + 6.0 * u) / h
    if maxo >= 3:
        B[0, 0, 3] = 12.0 / (h * h * h)
        B[0, 1, 3] = 6.0 / (h * h)
        B[1, 0, 3] = -12.0 / (h * h * h)
        B[1, 1, 3] = 6.0 / (h * h)


@njit(cache=True)
def _locate(x, o, h, n):
    """Return ``(cell index, local coordinate)`` of ``x`` on a periodic axis.

    Points exactly on a cell boundary are assigned to the lower cell with
    local coordinate 1, so a node is always the upper corner of its cell.
    """
    L = n * h
    r = (x - o) % L
    if r >= L:
        r = 0.0
    f = r / h
    i = int(np.floor(f))
    t = f - i
    if t <= 0.0:
        i -= 1
        t = 1.0
    elif t > 1.0:
        t = 1.0
    return i % n, t


@njit(cache=True)
def hermite_eval(data, origin, dx, pts, orders, out):
    """Evaluate derivatives of a tricubic Hermite interpolant.

    Parameters
    ----------
    data : ndarray, shape (Nx, Ny, Nz, C, 8)
        Raw jet coefficients.
    origin, dx : ndarray, shape (3,)
        Grid lower corner and cell widths.
    pts : ndarray, shape (P, 3)
        Query points (wrapped periodically).
    orders : ndarray of int64, shape (D, 3)
        Derivative orders per axis, each between 0 and 3.
    out : ndarray, shape (C, D, P)
        Output buffer, overwritten.
    """
    nx, ny, nz, nc, _ = data.shape
    npts = pts.shape[0]
    nd = orders.shape[0]
    maxo = 0
    for d in range(nd):
        for m in range(3):
            if orders[d, m] > maxo:
                maxo = orders[d, m]
    Bx = np.zeros((2, 2, 4))
    By = np.zeros((2, 2, 4))
    Bz = np.zeros((2, 2, 4))
    W = np.empty(8)
    acc = np.empty(nc)
    for p in range(npts):
        ix0, tx = _locate(pts[p, 0], origin[0], dx[0], nx)
        iy0, ty = _locate(pts[p, 1], origin[1], dx[1], ny)
        iz0, tz = _locate(pts[p, 2], origin[2], dx[2], nz)
        _basis(tx, dx[0], maxo, Bx)
        _basis(ty, dx[1], maxo, By)
        _basis(tz, dx[2], maxo, Bz)
        for d in range(nd):
            ox = orders[d, 0]
            oy = orders[d, 1]
            oz = orders[d, 2]
            for c in range(nc):
                acc[c] = 0.0
            for cx in range(2):
                ix = ix0 + cx
                if ix == nx:
                    ix = 0
                x0 = Bx[cx, 0, ox]
                x1 = Bx[cx, 1, ox]
                for cy in range(2):
                    iy = iy0 + cy
                    if iy == ny:
                        iy = 0
                    y0 = By[cy, 0, oy]
                    y1 = By[cy, 1, oy]
                    for cz in range(2):
                        iz = iz0 + cz
                        if iz == nz:
                            iz = 0
                        z0 = Bz[cz, 0, oz]
                        z1 = Bz[cz, 1, oz]
                        W[0] = x0 * y0 * z0
                        W[1] = x1 * y0 * z0
                        W[2] = x0 * y1 * z0
                        W[3] = x0 * y0 * z1
                        W[4] = x1 * y1 * z0
                        W[5] = x1 * y0 * z1
                        W[6] = x0 * y1 * z1
                        W[7] = x1 * y1 * z1
                        for c in range(nc):
                            s = 0.0
                            for a in range(8):
                                s += data[ix, iy, iz, c, a] * W[a]
                            acc[c] += s
            for c in range(nc):
                out[c, d, p] = acc[c]
