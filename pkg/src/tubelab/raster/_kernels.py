"""Numba kernels for tube rasterization.

Fields are stored slice-major: an array of shape (nt, ncross) where nt is
the number of cells along the last (time) axis and the cross-section index
is C-ordered over the first n-1 axes.  Every kernel that writes a field
owns whole slices per parallel iteration, so results never depend on the
thread count.
"""

import numpy as np
from numba import njit, prange


@njit(cache=True)
def slice_cells(x, v, vv, delta, lo, cell, cdims, t, ilo, ihi, idx, buf):
    """Cross-section indices of cells at height t whose centres lie in T_l.

    Writes indices into ``buf`` and returns how many were written.
    """
    nc = x.shape[0]
    inv = 1.0 / (1.0 + vv)
    # |y - (x + v t)| <= delta sqrt(1 + |v|^2) for every point of the tube
    reach = delta * np.sqrt(1.0 + vv) + 1e-12 * cell
    for j in range(nc):
        c = x[j] + v[j] * t
        a = int(np.ceil((c - reach - lo[j]) / cell - 0.5))
        b = int(np.floor((c + reach - lo[j]) / cell - 0.5))
        if a < 0:
            a = 0
        if b > cdims[j] - 1:
            b = cdims[j] - 1
        if a > b:
            return 0
        ilo[j] = a
        ihi[j] = b
        idx[j] = a
    d2 = delta * delta
    last = nc - 1
    vl = v[last]
    base_last = lo[last] + (ilo[last] + 0.5) * cell - x[last]
    count = 0
    while True:
        # outer axes contribute sum w^2, sum w v, sum v^2 to |w - v s|^2
        flat = 0
        aw = 0.0
        bw = 0.0
        cv = 0.0
        for j in range(last):
            flat = flat * cdims[j] + idx[j]
            w = lo[j] + (idx[j] + 0.5) * cell - x[j]
            aw += w * w
            bw += w * v[j]
            cv += v[j] * v[j]
        flat = flat * cdims[last]
        for q in range(ilo[last], ihi[last] + 1):
            wl = base_last + (q - ilo[last]) * cell
            s = (bw + wl * vl + t) * inv
            if s < 0.0:
                s = 0.0
            elif s > 1.0:
                s = 1.0
            rl = wl - vl * s
            dist2 = aw - 2.0 * s * bw + s * s * cv + rl * rl + (t - s) * (t - s)
            if dist2 <= d2:
                buf[count] = flat + q
                count += 1
        j = last - 1
        while j >= 0:
            idx[j] += 1
            if idx[j] <= ihi[j]:
                break
            idx[j] = ilo[j]
            j -= 1
        if j < 0:
            break
    return count


@njit(parallel=True, cache=True)
def rasterize_block(xs, vs, delta, lo, cell, dims, k0, out, maxcells, occupancy):
    """Accumulate tubes into slices k0 .. k0 + out.shape[0] - 1.

    ``occupancy`` sets cells to 1 instead of counting tubes.
    """
    nc = dims.shape[0] - 1
    cdims = dims[:nc]
    ntubes = xs.shape[0]
    vv = np.empty(ntubes)
    for i in range(ntubes):
        acc = 0.0
        for j in range(nc):
            acc += vs[i, j] * vs[i, j]
        vv[i] = acc
    for kk in prange(out.shape[0]):
        t = lo[nc] + (k0 + kk + 0.5) * cell
        if t < -delta or t > 1.0 + delta:
            continue
        buf = np.empty(maxcells, np.int64)
        ilo = np.empty(nc, np.int64)
        ihi = np.empty(nc, np.int64)
        idx = np.empty(nc, np.int64)
        for i in range(ntubes):
            cnt = slice_cells(xs[i], vs[i], vv[i], delta, lo, cell, cdims, t, ilo, ihi, idx, buf)
            if occupancy:
                for q in range(cnt):
                    out[kk, buf[q]] = 1
            else:
                for q in range(cnt):
                    out[kk, buf[q]] += 1


@njit(parallel=True, cache=True)
def tube_sums(xs, vs, delta, lo, cell, dims, values, maxcells, count_only):
    """Sum of ``values`` (slice-major) over the cells of each tube.

    With ``count_only`` the number of cells is returned and ``values`` is
    never read.
    """
    nc = dims.shape[0] - 1
    cdims = dims[:nc]
    nt = dims[nc]
    ntubes = xs.shape[0]
    out = np.zeros(ntubes)
    for i in prange(ntubes):
        vv = 0.0
        for j in range(nc):
            vv += vs[i, j] * vs[i, j]
        buf = np.empty(maxcells, np.int64)
        ilo = np.empty(nc, np.int64)
        ihi = np.empty(nc, np.int64)
        idx = np.empty(nc, np.int64)
        acc = 0.0
        for k in range(nt):
            t = lo[nc] + (k + 0.5) * cell
            if t < -delta or t > 1.0 + delta:
                continue
            cnt = slice_cells(xs[i], vs[i], vv, delta, lo, cell, cdims, t, ilo, ihi, idx, buf)
            if count_only:
                acc += cnt
            else:
                for q in range(cnt):
                    acc += values[k, buf[q]]
        out[i] = acc
    return out


@njit(cache=True)
def tube_cells(x, v, delta, lo, cell, dims, maxcells):
    """(slice, cross) indices of every cell whose centre lies in the tube."""
    nc = dims.shape[0] - 1
    cdims = dims[:nc]
    nt = dims[nc]
    vv = 0.0
    for j in range(nc):
        vv += v[j] * v[j]
    buf = np.empty(maxcells, np.int64)
    ilo = np.empty(nc, np.int64)
    ihi = np.empty(nc, np.int64)
    idx = np.empty(nc, np.int64)
    ks = np.empty(nt * maxcells, np.int64)
    cs = np.empty(nt * maxcells, np.int64)
    total = 0
    for k in range(nt):
        t = lo[nc] + (k + 0.5) * cell
        if t < -delta or t > 1.0 + delta:
            continue
        cnt = slice_cells(x, v, vv, delta, lo, cell, cdims, t, ilo, ihi, idx, buf)
        for q in range(cnt):
            ks[total] = k
            cs[total] = buf[q]
            total += 1
    return ks[:total].copy(), cs[:total].copy()
