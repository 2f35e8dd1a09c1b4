"""Compiled connectivity kernels.

Edge arrays are ``h[y, x]`` (edge (x, y)-(x+1, y)) and ``v[y, x]``
(edge (x, y)-(x, y+1)), uint8 or bool.  A sub-box query names a vertex
box and inclusive index ranges of the horizontal and vertical edges it may
use, so rectangles with trimmed sides and dual boxes share one kernel.
"""

from __future__ import annotations

import importlib
import os

import numba
import numpy as np
from numba import njit, prange, types
from numba.typed import Dict

if "NUMBA_THREADING_LAYER" not in os.environ:
    # skip the TBB probe and its version warning
    try:
        importlib.import_module("numba.np.ufunc.omppool")
        numba.config.THREADING_LAYER = "omp"
    except ImportError:
        numba.config.THREADING_LAYER = "workqueue"


@njit(cache=True)
def _find(parent, a):
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


@njit(cache=True)
def _union(parent, rank, a, b):
    ra = _find(parent, a)
    rb = _find(parent, b)
    if ra == rb:
        return
    if rank[ra] < rank[rb]:
        ra, rb = rb, ra
    parent[rb] = ra
    if rank[ra] == rank[rb]:
        rank[ra] += 1


@njit(cache=True)
def _components(h, v, x0, x1, y0, y1, hx0, hx1, hy0, hy1, vx0, vx1, vy0, vy1):
    nx = x1 - x0 + 1
    ny = y1 - y0 + 1
    n = nx * ny
    parent = np.arange(n + 2)
    rank = np.zeros(n + 2, dtype=np.int32)
    for y in range(max(hy0, y0), min(hy1, y1) + 1):
        for x in range(max(hx0, x0), min(hx1, x1 - 1) + 1):
            if h[y, x]:
                a = (y - y0) * nx + (x - x0)
                _union(parent, rank, a, a + 1)
    for y in range(max(vy0, y0), min(vy1, y1 - 1) + 1):
        for x in range(max(vx0, x0), min(vx1, x1) + 1):
            if v[y, x]:
                a = (y - y0) * nx + (x - x0)
                _union(parent, rank, a, a + nx)
    return parent, rank, nx, ny


@njit(cache=True)
def crossing_sub(h, v, x0, x1, y0, y1, hx0, hx1, hy0, hy1, vx0, vx1, vy0, vy1, direction):
    """Does an open path inside the sub-box join its opposite sides?

    direction 0 joins x = x0 to x = x1; direction 1 joins y = y0 to y = y1.
    """
    parent, rank, nx, ny = _components(h, v, x0, x1, y0, y1, hx0, hx1, hy0, hy1,
                                       vx0, vx1, vy0, vy1)
    n = nx * ny
    src = n
    dst = n + 1
    if direction == 0:
        for j in range(ny):
            _union(parent, rank, src, j * nx)
            _union(parent, rank, dst, j * nx + nx - 1)
    else:
        for i in range(nx):
            _union(parent, rank, src, i)
            _union(parent, rank, dst, (ny - 1) * nx + i)
    return _find(parent, src) == _find(parent, dst)


@njit(cache=True)
def rect_crossing(h, v, a, b, c, d, direction):
    """Crossing of R([a,b) x [c,d)): right and top sides carry no edges."""
    return crossing_sub(h, v, a, b, c, d, a, b - 1, c, d - 1, a, b - 1, c, d - 1, direction)


@njit(cache=True, parallel=True)
def rect_crossing_batch(h3, v3, a, b, c, d, direction):
    n = h3.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    for r in prange(n):
        out[r] = rect_crossing(h3[r], v3[r], a, b, c, d, direction)
    return out


@njit(cache=True)
def component_labels(h, v, x0, x1, y0, y1, hx0, hx1, hy0, hy1, vx0, vx1, vy0, vy1):
    """Root label of every vertex of the sub-box, shape (ny, nx)."""
    parent, rank, nx, ny = _components(h, v, x0, x1, y0, y1, hx0, hx1, hy0, hy1,
                                       vx0, vx1, vy0, vy1)
    out = np.empty((ny, nx), dtype=np.int64)
    for j in range(ny):
        for i in range(nx):
            out[j, i] = _find(parent, j * nx + i)
    return out


@njit(cache=True)
def cluster_radius(h, v, W, H):
    """max(max(x, y)) over the open cluster of the origin in R([0,W) x [0,H))."""
    nx = W + 1
    seen = np.zeros((H + 1) * nx, dtype=np.bool_)
    stack = np.empty((H + 1) * nx, dtype=np.int64)
    top = 0
    stack[0] = 0
    top = 1
    seen[0] = True
    best = 0
    while top > 0:
        top -= 1
        a = stack[top]
        y = a // nx
        x = a - y * nx
        r = x if x > y else y
        if r > best:
            best = r
        # right, left, up, down
        if x < W and y < H and h[y, x] and not seen[a + 1]:
            seen[a + 1] = True
            stack[top] = a + 1
            top += 1
        if x > 0 and y < H and h[y, x - 1] and not seen[a - 1]:
            seen[a - 1] = True
            stack[top] = a - 1
            top += 1
        if y < H and x < W and v[y, x] and not seen[a + nx]:
            seen[a + nx] = True
            stack[top] = a + nx
            top += 1
        if y > 0 and x < W and v[y - 1, x] and not seen[a - nx]:
            seen[a - nx] = True
            stack[top] = a - nx
            top += 1
    return best


@njit(cache=True, parallel=True)
def cluster_radius_batch(h3, v3, W, H):
    n = h3.shape[0]
    out = np.zeros(n, dtype=np.int64)
    for r in prange(n):
        out[r] = cluster_radius(h3[r], v3[r], W, H)
    return out


# --------------------------------------------------------------------------
# lazily generated configurations for unbounded windows
# --------------------------------------------------------------------------
# Uniforms come from a counter-based hash of (key, x, y, kind), so a
# configuration of any size is fixed by its key and never stored.

@njit(cache=True)
def mix64(z):
    """splitmix64 finaliser."""
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def hashed_uniform(key, x, y, kind):
    """Uniform in [0, 1) for edge kind 0 (horizontal) or 1 (vertical) at (x, y)."""
    z = mix64(key ^ mix64(np.uint64(x) * np.uint64(4) + np.uint64(kind))
              ^ mix64(np.uint64(y) + np.uint64(0x1234567)))
    return (z >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def origin_radius_lazy(key, ph, pv, nmax, budget):
    """Radius of the origin's cluster, stopping once it reaches ``nmax``.

    Horizontal edges from column x are open with probability ``ph[x]``
    (needs ``len(ph) >= nmax``), verticals with ``pv``.  Returns
    ``(radius, steps)``: radius is ``nmax`` on reaching the box boundary and
    -1 if the search exceeded ``budget`` visited vertices.
    """
    seen = Dict.empty(types.int64, types.boolean)
    stack = np.empty(1 << 16, dtype=np.int64)
    M = np.int64(1) << 32
    stack[0] = 0
    top = 1
    seen[0] = True
    steps = 0
    best = 0
    while top > 0:
        top -= 1
        a = stack[top]
        y = a // M
        x = a - y * M
        steps += 1
        if steps > budget:
            return -1, steps
        r = max(x, y)
        if r >= nmax:
            return nmax, steps
        if r > best:
            best = r
        for k in range(4):
            if k == 0:
                nx, ny, ok = x + 1, y, hashed_uniform(key, x, y, 0) < ph[x]
            elif k == 1:
                nx, ny, ok = x, y + 1, hashed_uniform(key, x, y, 1) < pv
            elif k == 2:
                if x == 0:
                    continue
                nx, ny, ok = x - 1, y, hashed_uniform(key, x - 1, y, 0) < ph[x - 1]
            else:
                if y == 0:
                    continue
                nx, ny, ok = x, y - 1, hashed_uniform(key, x, y - 1, 1) < pv
            if ok:
                b = ny * M + nx
                if b not in seen:
                    seen[b] = True
                    if top >= stack.shape[0]:
                        grown = np.empty(stack.shape[0] * 2, dtype=np.int64)
                        grown[:top] = stack[:top]
                        stack = grown
                    stack[top] = b
                    top += 1
    return best, steps


@njit(cache=True)
def _small_find(par, a):
    while par[a] != a:
        par[a] = par[par[a]]
        a = par[a]
    return a


@njit(cache=True)
def strip_crossing_lazy(key, ph, pv, width, rows, direction):
    """Crossing of the tall strip R([0, width) x [0, rows)) on hashed uniforms.

    Sweeps rows keeping only the connectivity profile of the current row,
    so memory is O(width) whatever ``rows`` is.  direction 0 joins x = 0 to
    x = width, direction 1 joins y = 0 to y = rows.
    """
    n = width + 1
    lab = np.arange(n)            # component label of each vertex of the current row
    flag = np.zeros(2 * n, dtype=np.bool_)    # joined to the source side
    rflag = np.zeros(2 * n, dtype=np.bool_)   # joined to x = width (direction 0)
    par = np.arange(2 * n)
    # row 0
    for x in range(n):
        par[x] = x
    for x in range(width):
        if hashed_uniform(key, x, 0, 0) < ph[x]:
            ra = _small_find(par, x)
            rb = _small_find(par, x + 1)
            if ra != rb:
                par[rb] = ra
    for x in range(n):
        lab[x] = _small_find(par, x)
    for x in range(2 * n):
        flag[x] = False
    if direction == 1:
        for x in range(n):
            flag[lab[x]] = True
    else:
        flag[lab[0]] = True
        rflag[lab[width]] = True
        if flag[lab[width]]:
            return True
    newflag = np.zeros(2 * n, dtype=np.bool_)
    newr = np.zeros(2 * n, dtype=np.bool_)
    for y in range(rows):
        # nodes 0..n-1: row y (by label), n..2n-1: row y+1
        for a in range(2 * n):
            par[a] = a
        for x in range(n):
            if lab[x] != x:
                ra = _small_find(par, x)
                rb = _small_find(par, lab[x])
                if ra != rb:
                    par[ra] = rb
        for x in range(width):
            if hashed_uniform(key, x, y, 1) < pv[x]:
                ra = _small_find(par, x)
                rb = _small_find(par, n + x)
                if ra != rb:
                    par[rb] = ra
        if y + 1 < rows:
            for x in range(width):
                if hashed_uniform(key, x, y + 1, 0) < ph[x]:
                    ra = _small_find(par, n + x)
                    rb = _small_find(par, n + x + 1)
                    if ra != rb:
                        par[rb] = ra
        for a in range(2 * n):
            newflag[a] = False
            newr[a] = False
        for x in range(n):
            if flag[lab[x]]:
                newflag[_small_find(par, x)] = True
            if rflag[lab[x]]:
                newr[_small_find(par, x)] = True
        if direction == 0:
            newflag[_small_find(par, n)] = True
            newr[_small_find(par, n + width)] = True
            for a in range(2 * n):
                if newflag[a] and newr[a]:
                    return True
        # canonical label of a row-(y+1) vertex: smallest x in its component
        alive = False
        for x in range(n):
            r = _small_find(par, n + x)
            canon = x
            for x2 in range(x):
                if _small_find(par, n + x2) == r:
                    canon = x2
                    break
            lab[x] = canon
            if canon == x:
                flag[x] = newflag[r]
                rflag[x] = newr[r]
                if newflag[r]:
                    alive = True
        if direction == 1 and not alive:
            return False
    return direction == 1


@njit(cache=True)
def hashed_uniforms(key, width, height):
    """Materialise the hashed uniforms of R([0, width) x [0, height)) as (uh, uv)."""
    uh = np.empty((height, width))
    uv = np.empty((height, width))
    for y in range(height):
        for x in range(width):
            uh[y, x] = hashed_uniform(key, x, y, 0)
            uv[y, x] = hashed_uniform(key, x, y, 1)
    return uh, uv
