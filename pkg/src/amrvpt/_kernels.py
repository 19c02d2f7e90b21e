"""JIT kernels: the production path for tracking and rendering.

Every routine here mirrors a pure-python reference (traversal.py,
sampling.py, transport.py) operation for operation; tests pin the two
implementations together bit-for-bit on shared inputs. Structures arrive
as a nested tuple of flat arrays (see engine.Scene.pack) so one compiled
kernel serves every dataset.

RNG is counter-based: draws are keyed by (seed, frame, pixel) plus a
(context, index) pair, so results do not depend on scheduling or thread
count. Parallel kernels write only to per-pixel slots.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

# method / sampler codes (match TraversalMethod / SamplerKind order in engine)
M_GRID_DDA = 0
M_GRID_BVH = 1
M_BRICK_KD = 2
M_BRICK_BVH = 3
M_ABR_BVH = 4
S_ABR_QUERY = 0
S_ABR_DIRECT = 1
S_EXT_BRICK = 2

MODE_DL = 0
MODE_MS = 1

# stats row layout
ST_PARTITIONS = 0
ST_SAMPLES = 1
ST_NULLS = 2
ST_REALS = 3
ST_RAYS = 4
N_STATS = 5

N_HIST_BINS = 24

# tracking statuses
T_ESCAPED = 0
T_SCATTERED = 1
T_ERR_SOUNDNESS = -1
T_ERR_CAPACITY = -2

# free-flight xi cap keeps -log(1-xi) finite
XI_CAP = 1.0 - 2.0 ** -33
INV_4PI = 1.0 / (4.0 * math.pi)

_STACK = 128
_LEAF_BUF = 64

U64 = np.uint64


@njit(cache=True, inline="always")
def _mix64(x):
    x = U64(x)
    x = (x ^ (x >> U64(30))) * U64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> U64(27))) * U64(0x94D049BB133111EB)
    return x ^ (x >> U64(31))


@njit(cache=True, inline="always")
def pixel_key(seed, frame, pixel):
    return _mix64(_mix64(U64(seed)) ^ _mix64(U64(frame))
                  ^ (U64(pixel) * U64(0x9E3779B97F4A7C15)))


@njit(cache=True, inline="always")
def u01(key, ctx, idx):
    h = _mix64(U64(key) ^ _mix64(U64(ctx) * U64(0xD1B54A32D192ED03)
                                 + U64(idx) * U64(0x9E3779B97F4A7C15)))
    return (h >> U64(11)) * (1.0 / 9007199254740992.0)


# rng draw contexts: camera jitter, then 4 purposes per bounce
CTX_CAMERA = 0


@njit(cache=True, inline="always")
def _ctx_track(bounce):
    return 1 + 4 * bounce


@njit(cache=True, inline="always")
def _ctx_shadow(bounce):
    return 2 + 4 * bounce


@njit(cache=True, inline="always")
def _ctx_phase(bounce):
    return 3 + 4 * bounce


@njit(cache=True, inline="always")
def _ctx_rr(bounce):
    return 4 + 4 * bounce


@njit(cache=True, inline="always")
def _bin_idx(n):
    if n <= 0:
        return 0
    b = 0
    m = n
    while m > 0:
        m >>= 1
        b += 1
    if b > N_HIST_BINS - 1:
        return N_HIST_BINS - 1
    return b


@njit(cache=True, inline="always")
def _slab(blox, bloy, bloz, bhix, bhiy, bhiz, ox, oy, oz, dx, dy, dz, t0, t1):
    e = t0
    x = t1
    if dx != 0.0:
        ta = (blox - ox) / dx
        tb = (bhix - ox) / dx
        if ta > tb:
            ta, tb = tb, ta
        if ta > e:
            e = ta
        if tb < x:
            x = tb
    elif ox < blox or ox > bhix:
        return math.inf, -math.inf
    if dy != 0.0:
        ta = (bloy - oy) / dy
        tb = (bhiy - oy) / dy
        if ta > tb:
            ta, tb = tb, ta
        if ta > e:
            e = ta
        if tb < x:
            x = tb
    elif oy < bloy or oy > bhiy:
        return math.inf, -math.inf
    if dz != 0.0:
        ta = (bloz - oz) / dz
        tb = (bhiz - oz) / dz
        if ta > tb:
            ta, tb = tb, ta
        if ta > e:
            e = ta
        if tb < x:
            x = tb
    elif oz < bloz or oz > bhiz:
        return math.inf, -math.inf
    return e, x


# ---------------------------------------------------------------------------
# field sampling


@njit(cache=True)
def _acc_brick(bricks, bid, x, y, z, wsum, vsum, indom):
    blo, bsize, bwidth, bvoff, bvalues = bricks
    h = bwidth[bid]
    lx = blo[bid, 0]
    ly = blo[bid, 1]
    lz = blo[bid, 2]
    sx = bsize[bid, 0]
    sy = bsize[bid, 1]
    sz = bsize[bid, 2]
    if (x >= lx and x < lx + sx * h and y >= ly and y < ly + sy * h
            and z >= lz and z < lz + sz * h):
        indom = True
    relx = (x - lx) / h
    rely = (y - ly) / h
    relz = (z - lz) / h
    j0x = int(math.floor(relx - 0.5))
    j0y = int(math.floor(rely - 0.5))
    j0z = int(math.floor(relz - 0.5))
    voff = bvoff[bid]
    for dz_ in range(2):
        jz = j0z + dz_
        if jz < 0 or jz >= sz:
            continue
        wz = 1.0 - abs(relz - (jz + 0.5))
        if wz <= 0.0:
            continue
        for dy_ in range(2):
            jy = j0y + dy_
            if jy < 0 or jy >= sy:
                continue
            wy = 1.0 - abs(rely - (jy + 0.5))
            if wy <= 0.0:
                continue
            for dx_ in range(2):
                jx = j0x + dx_
                if jx < 0 or jx >= sx:
                    continue
                wx = 1.0 - abs(relx - (jx + 0.5))
                if wx <= 0.0:
                    continue
                w = wx * wy * wz
                wsum += w
                vsum += w * bvalues[voff + jx + sx * (jy + sy * jz)]
    return wsum, vsum, indom


@njit(cache=True, inline="always")
def _tf_alpha(tf, v):
    d_lo, d_hi, rgba, unit = tf
    e = rgba.shape[0]
    u = (v - d_lo) / (d_hi - d_lo)
    if u < 0.0:
        u = 0.0
    elif u > 1.0:
        u = 1.0
    s = u * (e - 1)
    i = int(s)
    if i > e - 2:
        i = e - 2
    t = s - i
    return (1.0 - t) * rgba[i, 3] + t * rgba[i + 1, 3]


@njit(cache=True, inline="always")
def _tf_rgb(tf, v):
    d_lo, d_hi, rgba, unit = tf
    e = rgba.shape[0]
    u = (v - d_lo) / (d_hi - d_lo)
    if u < 0.0:
        u = 0.0
    elif u > 1.0:
        u = 1.0
    s = u * (e - 1)
    i = int(s)
    if i > e - 2:
        i = e - 2
    t = s - i
    return ((1.0 - t) * rgba[i, 0] + t * rgba[i + 1, 0],
            (1.0 - t) * rgba[i, 1] + t * rgba[i + 1, 1],
            (1.0 - t) * rgba[i, 2] + t * rgba[i + 1, 2])


@njit(cache=True)
def _abr_find(akd, x, y, z):
    axis, plane, left, right, leaf, wlo, whi = akd
    if (x < wlo[0] or x > whi[0] or y < wlo[1] or y > whi[1]
            or z < wlo[2] or z > whi[2]):
        return np.int64(-1)
    node = 0
    while axis[node] >= 0:
        a = axis[node]
        if a == 0:
            c = x
        elif a == 1:
            c = y
        else:
            c = z
        if c < plane[node]:
            node = left[node]
        else:
            node = right[node]
    return leaf[node]


@njit(cache=True)
def _sample_at(bricks, abrs, akd, ext, tf, sampler, abr_hint, x, y, z):
    """Returns (status, value, ext, ar, ag, ab). status 0 ok."""
    wsum = 0.0
    vsum = 0.0
    indom = False
    if sampler == S_ABR_DIRECT or sampler == S_ABR_QUERY:
        a_off, a_cnt, a_ids = abrs[2], abrs[3], abrs[4]
        if sampler == S_ABR_DIRECT:
            abr = abr_hint
        else:
            abr = _abr_find(akd, x, y, z)
        if abr >= 0:
            o = a_off[abr]
            for k in range(o, o + a_cnt[abr]):
                wsum, vsum, indom = _acc_brick(bricks, a_ids[k], x, y, z,
                                               wsum, vsum, indom)
    else:
        n_lo, n_hi, left, right, prim = ext[0], ext[1], ext[2], ext[3], ext[4]
        ids = np.empty(_LEAF_BUF, dtype=np.int64)
        cnt = 0
        stack = np.empty(_STACK, dtype=np.int64)
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if (x < n_lo[node, 0] or x > n_hi[node, 0]
                    or y < n_lo[node, 1] or y > n_hi[node, 1]
                    or z < n_lo[node, 2] or z > n_hi[node, 2]):
                continue
            p = prim[node]
            if p >= 0:
                if cnt >= _LEAF_BUF:
                    return T_ERR_CAPACITY, 0.0, 0.0, 0.0, 0.0, 0.0
                ids[cnt] = p
                cnt += 1
            else:
                if sp + 2 > _STACK:
                    return T_ERR_CAPACITY, 0.0, 0.0, 0.0, 0.0, 0.0
                stack[sp] = right[node]
                sp += 1
                stack[sp] = left[node]
                sp += 1
        # ascending brick ids: fixed accumulation order across backends
        for i in range(1, cnt):
            key = ids[i]
            j = i - 1
            while j >= 0 and ids[j] > key:
                ids[j + 1] = ids[j]
                j -= 1
            ids[j + 1] = key
        for i in range(cnt):
            wsum, vsum, indom = _acc_brick(bricks, ids[i], x, y, z,
                                           wsum, vsum, indom)

    if indom and wsum > 0.0:
        value = vsum / wsum
    else:
        value = 0.0
    ar, ag, ab = _tf_rgb(tf, value)
    if indom:
        mu = tf[3] * _tf_alpha(tf, value)
    else:
        mu = 0.0
    return 0, value, mu, ar, ag, ab


# ---------------------------------------------------------------------------
# woodcock span within one partition


@njit(cache=True)
def _track_span(bricks, abrs, akd, ext, tf, sampler, abr_hint, maj,
                t0, t1, ox, oy, oz, dx, dy, dz, key, ctx, idx, stats):
    """Free-flight steps through [t0, t1] under majorant `maj`.

    Returns (status, t, value, ext, ar, ag, ab, idx, nsamples).
    status: T_SCATTERED / T_ESCAPED / error codes.
    """
    t = t0
    nsamples = 0
    while True:
        xi = u01(key, ctx, idx)
        idx += 1
        if xi > XI_CAP:
            xi = XI_CAP
        t = t - math.log(1.0 - xi) / maj
        if t > t1:
            return T_ESCAPED, t1, 0.0, 0.0, 0.0, 0.0, 0.0, idx, nsamples
        x = ox + t * dx
        y = oy + t * dy
        z = oz + t * dz
        st, value, mu, ar, ag, ab = _sample_at(bricks, abrs, akd, ext, tf,
                                               sampler, abr_hint, x, y, z)
        if st != 0:
            return st, t, 0.0, 0.0, 0.0, 0.0, 0.0, idx, nsamples
        nsamples += 1
        stats[ST_SAMPLES] += 1
        if mu > maj:
            # majorant soundness violation: never clamp silently
            return T_ERR_SOUNDNESS, t, value, mu, ar, ag, ab, idx, nsamples
        xi2 = u01(key, ctx, idx)
        idx += 1
        if xi2 * maj < mu:
            stats[ST_REALS] += 1
            return T_SCATTERED, t, value, mu, ar, ag, ab, idx, nsamples
        stats[ST_NULLS] += 1


# ---------------------------------------------------------------------------
# fused traversal + tracking


@njit(cache=True)
def _track(bricks, abrs, akd, grid, kd, bp, tbvh, ext, tf,
           method, sampler, ox, oy, oz, dx, dy, dz, tmin, tmax,
           key, ctx, stats, hist_part, hist_samp):
    """Traverse partitions front to back, woodcock-tracking inside each.

    Counts this invocation as one ray. Returns
    (status, t, value, ext, ar, ag, ab).
    """
    idx = 0
    parts = 0
    status = T_ESCAPED
    rt = tmax
    rv = 0.0
    rmu = 0.0
    rar = 0.0
    rag = 0.0
    rab = 0.0

    if method == M_GRID_DDA:
        dims, glo, ghi, h, gmaj = grid
        t0, t1 = _slab(glo[0], glo[1], glo[2], ghi[0], ghi[1], ghi[2],
                       ox, oy, oz, dx, dy, dz, tmin, tmax)
        if t0 < t1:
            px = ox + t0 * dx
            py = oy + t0 * dy
            pz = oz + t0 * dz
            ix = int(math.floor((px - glo[0]) / h[0]))
            iy = int(math.floor((py - glo[1]) / h[1]))
            iz = int(math.floor((pz - glo[2]) / h[2]))
            if ix < 0:
                ix = 0
            elif ix > dims[0] - 1:
                ix = dims[0] - 1
            if iy < 0:
                iy = 0
            elif iy > dims[1] - 1:
                iy = dims[1] - 1
            if iz < 0:
                iz = 0
            elif iz > dims[2] - 1:
                iz = dims[2] - 1
            stx = 1 if dx > 0 else -1
            sty = 1 if dy > 0 else -1
            stz = 1 if dz > 0 else -1
            if dx != 0.0:
                tnx = (glo[0] + (ix + (1 if dx > 0 else 0)) * h[0] - ox) / dx
            else:
                tnx = math.inf
            if dy != 0.0:
                tny = (glo[1] + (iy + (1 if dy > 0 else 0)) * h[1] - oy) / dy
            else:
                tny = math.inf
            if dz != 0.0:
                tnz = (glo[2] + (iz + (1 if dz > 0 else 0)) * h[2] - oz) / dz
            else:
                tnz = math.inf
            while True:
                blox = glo[0] + ix * h[0]
                bloy = glo[1] + iy * h[1]
                bloz = glo[2] + iz * h[2]
                e, xx = _slab(blox, bloy, bloz,
                              glo[0] + (ix + 1) * h[0],
                              glo[1] + (iy + 1) * h[1],
                              glo[2] + (iz + 1) * h[2],
                              ox, oy, oz, dx, dy, dz, t0, t1)
                if e < xx:
                    parts += 1
                    stats[ST_PARTITIONS] += 1
                    f = ix + dims[0] * (iy + dims[1] * iz)
                    maj = gmaj[f]
                    if maj > 0.0:
                        st, t, v, mu, ar, ag, ab, idx, ns = _track_span(
                            bricks, abrs, akd, ext, tf, sampler, np.int64(-1),
                            maj, e, xx, ox, oy, oz, dx, dy, dz, key, ctx,
                            idx, stats)
                        if ns >= 1:
                            hist_samp[_bin_idx(ns)] += 1
                        if st == T_SCATTERED:
                            status = T_SCATTERED
                            rt = t
                            rv = v
                            rmu = mu
                            rar = ar
                            rag = ag
                            rab = ab
                            break
                        if st < 0:
                            status = st
                            break
                if tnx <= tny and tnx <= tnz:
                    if tnx > t1:
                        break
                    ix += stx
                    if ix < 0 or ix >= dims[0]:
                        break
                    tnx = (glo[0] + (ix + (1 if dx > 0 else 0)) * h[0] - ox) / dx
                elif tny <= tnz:
                    if tny > t1:
                        break
                    iy += sty
                    if iy < 0 or iy >= dims[1]:
                        break
                    tny = (glo[1] + (iy + (1 if dy > 0 else 0)) * h[1] - oy) / dy
                else:
                    if tnz > t1:
                        break
                    iz += stz
                    if iz < 0 or iz >= dims[2]:
                        break
                    tnz = (glo[2] + (iz + (1 if dz > 0 else 0)) * h[2] - oz) / dz

    elif method == M_BRICK_KD:
        axis, plane, left, right, loff, lcnt, prims, wlo, whi = kd
        p_lo, p_hi, bmaj = bp
        t0, t1 = _slab(wlo[0], wlo[1], wlo[2], whi[0], whi[1], whi[2],
                       ox, oy, oz, dx, dy, dz, tmin, tmax)
        if t0 < t1:
            s_node = np.empty(40, dtype=np.int64)
            s_tn0 = np.empty(40)
            s_tn1 = np.empty(40)
            sp = 0
            node = 0
            tn0 = t0
            tn1 = t1
            le = np.empty(_LEAF_BUF)
            lx = np.empty(_LEAF_BUF)
            lp = np.empty(_LEAF_BUF, dtype=np.int64)
            done = False
            while not done:
                a = axis[node]
                if a >= 0:
                    p = plane[node]
                    if a == 0:
                        oa = ox
                        da = dx
                    elif a == 1:
                        oa = oy
                        da = dy
                    else:
                        oa = oz
                        da = dz
                    pa = oa + tn0 * da
                    if pa < p or (pa == p and da < 0.0):
                        near = left[node]
                        far = right[node]
                    else:
                        near = right[node]
                        far = left[node]
                    if da == 0.0:
                        node = near
                        continue
                    ts = (p - oa) / da
                    if ts <= tn0 or ts >= tn1:
                        node = near
                    else:
                        s_node[sp] = far
                        s_tn0[sp] = ts
                        s_tn1[sp] = tn1
                        sp += 1
                        node = near
                        tn1 = ts
                    continue
                # leaf: gather prims whose entry lies in this interval
                o_ = loff[node]
                c_ = lcnt[node]
                n_hits = 0
                for k in range(o_, o_ + c_):
                    pid = prims[k]
                    e, xx = _slab(p_lo[pid, 0], p_lo[pid, 1], p_lo[pid, 2],
                                  p_hi[pid, 0], p_hi[pid, 1], p_hi[pid, 2],
                                  ox, oy, oz, dx, dy, dz, t0, t1)
                    if e < xx and tn0 <= e < tn1:
                        le[n_hits] = e
                        lx[n_hits] = xx
                        lp[n_hits] = pid
                        n_hits += 1
                for i in range(1, n_hits):
                    ke = le[i]
                    kx = lx[i]
                    kp = lp[i]
                    j = i - 1
                    while j >= 0 and (le[j] > ke or (le[j] == ke and lp[j] > kp)):
                        le[j + 1] = le[j]
                        lx[j + 1] = lx[j]
                        lp[j + 1] = lp[j]
                        j -= 1
                    le[j + 1] = ke
                    lx[j + 1] = kx
                    lp[j + 1] = kp
                for i in range(n_hits):
                    parts += 1
                    stats[ST_PARTITIONS] += 1
                    maj = bmaj[lp[i]]
                    if maj > 0.0:
                        st, t, v, mu, ar, ag, ab, idx, ns = _track_span(
                            bricks, abrs, akd, ext, tf, sampler, np.int64(-1),
                            maj, le[i], lx[i], ox, oy, oz, dx, dy, dz, key,
                            ctx, idx, stats)
                        if ns >= 1:
                            hist_samp[_bin_idx(ns)] += 1
                        if st == T_SCATTERED:
                            status = T_SCATTERED
                            rt = t
                            rv = v
                            rmu = mu
                            rar = ar
                            rag = ag
                            rab = ab
                            done = True
                            break
                        if st < 0:
                            status = st
                            done = True
                            break
                if done:
                    break
                if sp == 0:
                    break
                sp -= 1
                node = s_node[sp]
                tn0 = s_tn0[sp]
                tn1 = s_tn1[sp]

    else:
        # BVH restart backends (an empty build is one zero-volume node
        # that can never satisfy e < x, so no special case is needed)
        n_lo, n_hi, left, right, prim, pmaj = tbvh
        cursor = tmin
        stack = np.empty(_STACK, dtype=np.int64)
        while cursor < tmax:
            best_e = math.inf
            best_x = math.inf
            best_node = -1
            best_pid = np.int64(0x7FFFFFFFFFFFFFFF)
            sp = 0
            stack[sp] = 0
            sp += 1
            while sp > 0:
                sp -= 1
                node = stack[sp]
                e, xx = _slab(n_lo[node, 0], n_lo[node, 1], n_lo[node, 2],
                              n_hi[node, 0], n_hi[node, 1], n_hi[node, 2],
                              ox, oy, oz, dx, dy, dz, cursor, tmax)
                if not e < xx or xx <= cursor or e > best_e:
                    continue
                p = prim[node]
                if p >= 0:
                    if e < best_e or (e == best_e and p < best_pid):
                        best_e = e
                        best_x = xx
                        best_node = node
                        best_pid = p
                else:
                    if sp + 2 > _STACK:
                        return T_ERR_CAPACITY, rt, rv, rmu, rar, rag, rab
                    stack[sp] = right[node]
                    sp += 1
                    stack[sp] = left[node]
                    sp += 1
            if best_node < 0:
                break
            parts += 1
            stats[ST_PARTITIONS] += 1
            maj = pmaj[best_node]
            hint = best_pid if method == M_ABR_BVH else np.int64(-1)
            st, t, v, mu, ar, ag, ab, idx, ns = _track_span(
                bricks, abrs, akd, ext, tf, sampler, hint, maj,
                best_e, best_x, ox, oy, oz, dx, dy, dz, key, ctx,
                idx, stats)
            if ns >= 1:
                hist_samp[_bin_idx(ns)] += 1
            if st == T_SCATTERED:
                status = T_SCATTERED
                rt = t
                rv = v
                rmu = mu
                rar = ar
                rag = ag
                rab = ab
                break
            if st < 0:
                status = st
                break
            cursor = best_x

    stats[ST_RAYS] += 1
    hist_part[_bin_idx(parts)] += 1
    return status, rt, rv, rmu, rar, rag, rab


# ---------------------------------------------------------------------------
# path tracing modes


@njit(cache=True)
def _trace_dl(bricks, abrs, akd, grid, kd, bp, tbvh, ext, tf, method, sampler,
              ox, oy, oz, dx, dy, dz, tmin, tmax, key,
              lpx, lpy, lpz, lir, lig, lib, amr, amg, amb,
              stats, hist_part, hist_samp):
    st, t, v, mu, ar, ag, ab = _track(
        bricks, abrs, akd, grid, kd, bp, tbvh, ext, tf, method, sampler,
        ox, oy, oz, dx, dy, dz, tmin, tmax, key, _ctx_track(0),
        stats, hist_part, hist_samp)
    if st < 0:
        return st, 0.0, 0.0, 0.0
    if st == T_ESCAPED:
        return 0, amr, amg, amb
    sx = ox + t * dx
    sy = oy + t * dy
    sz = oz + t * dz
    wx = lpx - sx
    wy = lpy - sy
    wz = lpz - sz
    dist = math.sqrt(wx * wx + wy * wy + wz * wz)
    if dist <= 0.0:
        return 0, 0.0, 0.0, 0.0
    inv = 1.0 / dist
    st2, _, _, _, _, _, _ = _track(
        bricks, abrs, akd, grid, kd, bp, tbvh, ext, tf, method, sampler,
        sx, sy, sz, wx * inv, wy * inv, wz * inv, 0.0, dist, key,
        _ctx_shadow(0), stats, hist_part, hist_samp)
    if st2 < 0:
        return st2, 0.0, 0.0, 0.0
    if st2 == T_SCATTERED:
        return 0, 0.0, 0.0, 0.0
    scale = INV_4PI / (dist * dist)
    return 0, ar * lir * scale, ag * lig * scale, ab * lib * scale


@njit(cache=True)
def _trace_ms(bricks, abrs, akd, grid, kd, bp, tbvh, ext, tf, method, sampler,
              ox, oy, oz, dx, dy, dz, tmin, tmax, key,
              amr, amg, amb, max_bounces, rr_start,
              stats, hist_part, hist_samp):
    thr_r = 1.0
    thr_g = 1.0
    thr_b = 1.0
    cox = ox
    coy = oy
    coz = oz
    cdx = dx
    cdy = dy
    cdz = dz
    ct0 = tmin
    ct1 = tmax
    bounce = 0
    while True:
        st, t, v, mu, ar, ag, ab = _track(
            bricks, abrs, akd, grid, kd, bp, tbvh, ext, tf, method, sampler,
            cox, coy, coz, cdx, cdy, cdz, ct0, ct1, key, _ctx_track(bounce),
            stats, hist_part, hist_samp)
        if st < 0:
            return st, 0.0, 0.0, 0.0
        if st == T_ESCAPED:
            return 0, thr_r * amr, thr_g * amg, thr_b * amb
        thr_r *= ar
        thr_g *= ag
        thr_b *= ab
        scatters = bounce + 1
        if scatters >= max_bounces:
            return 0, 0.0, 0.0, 0.0
        if scatters >= rr_start:
            p = thr_r
            if thr_g > p:
                p = thr_g
            if thr_b > p:
                p = thr_b
            if p < 0.05:
                p = 0.05
            elif p > 0.95:
                p = 0.95
            if u01(key, _ctx_rr(bounce), 0) > p:
                return 0, 0.0, 0.0, 0.0
            thr_r /= p
            thr_g /= p
            thr_b /= p
        u1 = u01(key, _ctx_phase(bounce), 0)
        u2 = u01(key, _ctx_phase(bounce), 1)
        zz = 1.0 - 2.0 * u1
        rr = math.sqrt(max(0.0, 1.0 - zz * zz))
        phi = 2.0 * math.pi * u2
        cox = cox + t * cdx
        coy = coy + t * cdy
        coz = coz + t * cdz
        cdx = rr * math.cos(phi)
        cdy = rr * math.sin(phi)
        cdz = zz
        ct0 = 0.0
        ct1 = math.inf
        bounce += 1


# ---------------------------------------------------------------------------
# batch drivers


@njit(cache=True, parallel=True)
def render_pass(bricks, abrs, akd, grid, kd, bp, tbvh, ext, tf,
                method, sampler, mode, width, height,
                ex, ey, ez, rx, ry, rz, ux, uy, uz, fx, fy, fz,
                tanx, tany,
                lpx, lpy, lpz, lir, lig, lib, amr, amg, amb,
                max_bounces, rr_start, seed, frame0, nframes,
                acc, accsq, stats_rows, hist_part, hist_samp, err_flags):
    """Accumulate `nframes` one-sample-per-pixel passes.

    Every output is indexed by pixel, so scheduling cannot affect results.
    """
    npix = width * height
    for pix in prange(npix):
        iy = pix // width
        ix = pix - iy * width
        srow = stats_rows[pix]
        hp = hist_part[pix]
        hs = hist_samp[pix]
        for f in range(frame0, frame0 + nframes):
            key = pixel_key(seed, f, pix)
            jx = u01(key, CTX_CAMERA, 0)
            jy = u01(key, CTX_CAMERA, 1)
            px = 2.0 * ((ix + jx) / width) - 1.0
            py = 1.0 - 2.0 * ((iy + jy) / height)
            ddx = fx + px * tanx * rx + py * tany * ux
            ddy = fy + px * tanx * ry + py * tany * uy
            ddz = fz + px * tanx * rz + py * tany * uz
            il = 1.0 / math.sqrt(ddx * ddx + ddy * ddy + ddz * ddz)
            ddx *= il
            ddy *= il
            ddz *= il
            if mode == MODE_DL:
                st, r, g, b = _trace_dl(
                    bricks, abrs, akd, grid, kd, bp, tbvh, ext, tf,
                    method, sampler, ex, ey, ez, ddx, ddy, ddz, 0.0,
                    math.inf, key, lpx, lpy, lpz, lir, lig, lib,
                    amr, amg, amb, srow, hp, hs)
            else:
                st, r, g, b = _trace_ms(
                    bricks, abrs, akd, grid, kd, bp, tbvh, ext, tf,
                    method, sampler, ex, ey, ez, ddx, ddy, ddz, 0.0,
                    math.inf, key, amr, amg, amb, max_bounces, rr_start,
                    srow, hp, hs)
            if st < 0:
                err_flags[pix] = st
                break
            acc[pix, 0] += r
            acc[pix, 1] += g
            acc[pix, 2] += b
            accsq[pix, 0] += r * r
            accsq[pix, 1] += g * g
            accsq[pix, 2] += b * b


@njit(cache=True, parallel=True)
def transmittance_batch(bricks, abrs, akd, grid, kd, bp, tbvh, ext, tf,
                        method, sampler, ox, oy, oz, dx, dy, dz, tmin, tmax,
                        seed, out, stats_rows, hist_part, hist_samp,
                        err_flags):
    """Binary transmittance estimates for `len(out)` independent rays."""
    n = out.shape[0]
    for i in prange(n):
        key = pixel_key(seed, 0, i)
        st, t, v, mu, ar, ag, ab = _track(
            bricks, abrs, akd, grid, kd, bp, tbvh, ext, tf, method, sampler,
            ox, oy, oz, dx, dy, dz, tmin, tmax, key, _ctx_shadow(0),
            stats_rows[i], hist_part[i], hist_samp[i])
        if st < 0:
            err_flags[i] = st
            out[i] = 0.0
        else:
            out[i] = 1.0 if st == T_ESCAPED else 0.0


@njit(cache=True, parallel=True)
def track_batch(bricks, abrs, akd, grid, kd, bp, tbvh, ext, tf,
                method, sampler, ox, oy, oz, dx, dy, dz, tmin, tmax,
                seed, out_status, out_t, out_value,
                stats_rows, hist_part, hist_samp):
    """Independent tracking runs; used by statistical estimator tests."""
    n = out_status.shape[0]
    for i in prange(n):
        key = pixel_key(seed, 0, i)
        st, t, v, mu, ar, ag, ab = _track(
            bricks, abrs, akd, grid, kd, bp, tbvh, ext, tf, method, sampler,
            ox, oy, oz, dx, dy, dz, tmin, tmax, key, _ctx_track(0),
            stats_rows[i], hist_part[i], hist_samp[i])
        out_status[i] = st
        out_t[i] = t
        out_value[i] = v


@njit(cache=True)
def sample_batch(bricks, abrs, akd, ext, tf, sampler, pts, out_value,
                 out_ext, out_albedo):
    """Point samples for kernel-vs-reference equality tests."""
    for i in range(pts.shape[0]):
        st, v, mu, ar, ag, ab = _sample_at(bricks, abrs, akd, ext, tf,
                                           sampler, np.int64(-1),
                                           pts[i, 0], pts[i, 1], pts[i, 2])
        out_value[i] = v
        out_ext[i] = mu
        out_albedo[i, 0] = ar
        out_albedo[i, 1] = ag
        out_albedo[i, 2] = ab
