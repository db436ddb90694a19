"""Uniform-grid spatial index for deterministic radius queries."""

from __future__ import annotations

import math

import numpy as np

from ._jit import njit


@njit(cache=True)
def pair_repulsion_forces(
    pos, src_col, radius, amp_table, reach_table, pidx,
    order, cell_lo, cell_hi, cx, cy, nx, ny, pair_radius,
    lo_row, hi_row, fx, fy,
):
    """Accumulate per-source exponential repulsion over grid neighbours.

    Covers rows lo_row:hi_row against all indexed points; per-row term order
    is fixed (cell offset, then insertion order), so any row chunking gives
    bit-identical sums.
    """
    r2 = pair_radius * pair_radius
    for i in range(lo_row, hi_row):
        acc_x = 0.0
        acc_y = 0.0
        for ox in range(-1, 2):
            tx = cx[i] + ox
            if tx < 0 or tx >= nx:
                continue
            for oy in range(-1, 2):
                ty = cy[i] + oy
                if ty < 0 or ty >= ny:
                    continue
                h = tx * ny + ty
                for k in range(cell_lo[h], cell_hi[h]):
                    j = order[k]
                    if j == i:
                        continue
                    dx = pos[i, 0] - pos[j, 0]
                    dy = pos[i, 1] - pos[j, 1]
                    d2 = dx * dx + dy * dy
                    if d2 > r2:
                        continue
                    dist = math.sqrt(d2)
                    if dist < 1e-9:
                        dist = 1e-9
                    col = src_col[j]
                    amp = amp_table[pidx[i], col]
                    reach = reach_table[pidx[i], col]
                    rsum = radius[i] + radius[j]
                    mag = amp * math.exp((rsum - dist) / reach) / dist
                    acc_x += mag * dx
                    acc_y += mag * dy
        fx[i - lo_row] += acc_x
        fy[i - lo_row] += acc_y


class UniformGrid:
    """Bins 2-D points into square cells; answers closed-ball radius queries.

    Results are index arrays into the position array handed to the
    constructor, in ascending index order, so queries are deterministic.
    """

    def __init__(self, positions: np.ndarray, cell_size: float):
        if cell_size <= 0.0:
            raise ValueError("cell_size must be > 0")
        self.positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
        self.cell_size = float(cell_size)
        n = len(self.positions)
        if n == 0:
            self._order = np.empty(0, dtype=np.int64)
            self._hashes = np.empty(0, dtype=np.int64)
            self._cmin = np.zeros(2, dtype=np.int64)
            self._cmax = np.zeros(2, dtype=np.int64)
            self._ny = 1
            self._cell_lo = None
            self._cell_hi = None
            return
        cells = np.floor(self.positions / self.cell_size).astype(np.int64)
        self._cmin = cells.min(axis=0)
        self._cmax = cells.max(axis=0)
        self._ny = int(self._cmax[1] - self._cmin[1]) + 1
        h = (cells[:, 0] - self._cmin[0]) * self._ny + (cells[:, 1] - self._cmin[1])
        order = np.argsort(h, kind="stable")
        self._order = order
        self._hashes = h[order]
        self._cells_rel = cells - self._cmin
        # dense per-cell [start, end) table for O(1) lookups on compact grids
        nx = int(self._cmax[0] - self._cmin[0]) + 1
        self._nx = nx
        ncells = nx * self._ny
        if ncells <= 4 * n + 1024:
            self._cell_lo = np.zeros(ncells + 1, dtype=np.int64)
            self._cell_hi = np.zeros(ncells + 1, dtype=np.int64)
            hs = self._hashes
            bounds = np.flatnonzero(np.diff(hs)) + 1
            starts = np.concatenate([[0], bounds])
            ends = np.concatenate([bounds, [n]])
            self._cell_lo[hs[starts]] = starts
            self._cell_hi[hs[starts]] = ends
        else:
            self._cell_lo = None
            self._cell_hi = None

    def _candidate_pairs(self, points: np.ndarray, radius: float) -> tuple[np.ndarray, np.ndarray]:
        """(query index, grid index) for all points in cells touching the ball.

        All cell offsets are resolved with one batched binary search; the pair
        stream is ordered by offset, then query index, then grid order, and
        that order is part of the engine's determinism contract.
        """
        points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        nq = len(points)
        if nq == 0 or len(self.positions) == 0:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        reach = int(math.ceil(radius / self.cell_size))
        span = 2 * reach + 1
        qcells = np.floor(points / self.cell_size).astype(np.int64)
        qx = qcells[:, 0] - self._cmin[0]
        qy = qcells[:, 1] - self._cmin[1]
        nx = int(self._cmax[0] - self._cmin[0]) + 1
        ny = self._ny
        offsets_x = np.repeat(np.arange(-reach, reach + 1), span)
        offsets_y = np.tile(np.arange(-reach, reach + 1), span)
        # (n_offsets, nq) target hashes; out-of-bounds cells get a sentinel
        tx = qx[None, :] + offsets_x[:, None]
        ty = qy[None, :] + offsets_y[:, None]
        valid = (tx >= 0) & (tx < nx) & (ty >= 0) & (ty < ny)
        h = tx * ny + ty
        h[~valid] = -1
        flat_h = h.ravel()
        if self._cell_lo is not None:
            lo = self._cell_lo[flat_h]
            counts = self._cell_hi[flat_h] - lo
        else:
            lo = np.searchsorted(self._hashes, flat_h, side="left")
            hi = np.searchsorted(self._hashes, flat_h, side="right")
            counts = hi - lo
        counts[flat_h < 0] = 0
        nonzero = np.nonzero(counts)[0]
        if not len(nonzero):
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        lo = lo[nonzero]
        counts = counts[nonzero]
        total = int(counts.sum())
        startrep = np.repeat(lo, counts)
        base = np.repeat(np.cumsum(counts) - counts, counts)
        flat = startrep + (np.arange(total, dtype=np.int64) - base)
        qi = np.repeat(nonzero % nq, counts)
        return qi, self._order[flat]

    def query_many(self, points: np.ndarray, radius: float) -> tuple[np.ndarray, np.ndarray]:
        """All (query index, grid index) pairs with distance <= radius.

        Pairs come back sorted by query index, then grid index.
        """
        if radius <= 0.0:
            raise ValueError("radius must be > 0")
        points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        qi, gj = self._candidate_pairs(points, radius)
        if len(qi) == 0:
            return qi, gj
        d = self.positions[gj] - points[qi]
        keep = (d[:, 0] ** 2 + d[:, 1] ** 2) <= radius * radius
        qi, gj = qi[keep], gj[keep]
        order = np.lexsort((gj, qi))
        return qi[order], gj[order]

    def query(self, point, radius: float) -> np.ndarray:
        """Indices of grid points within `radius` of `point` (closed ball)."""
        qi, gj = self.query_many(np.asarray(point, dtype=np.float64).reshape(1, 2), radius)
        return gj

    def dense_context(self):
        """Kernel-facing view for self-queries, or None on sparse grids."""
        if self._cell_lo is None:
            return None
        return (
            self._order,
            self._cell_lo,
            self._cell_hi,
            self._cells_rel[:, 0],
            self._cells_rel[:, 1],
            self._nx,
            self._ny,
        )


def brute_force_query(positions: np.ndarray, point, radius: float) -> np.ndarray:
    """Reference O(n) scan used to cross-check the grid."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    d = positions - np.asarray(point, dtype=np.float64)
    return np.nonzero(d[:, 0] ** 2 + d[:, 1] ** 2 <= radius * radius)[0]
