"""Compiled BVH kernels: build, ray queries, parity counting, closest point.

All kernels take the flat node arrays produced by :func:`build_bvh` plus the
triangle array ``tri`` of shape (F, 3, 3) in BVH leaf order.
"""

import numba as nb
import numpy as np

LEAF_SIZE = 4
BARY_EPS = 1e-9
# barycentric margin under which a parity crossing counts as grazing an edge
GRAZE_EPS = 1e-7
STACK_SIZE = 128

_jit = nb.njit(cache=True, error_model="numpy")


@_jit
def build_bvh(tri):
    """Median split over face centroids along the widest centroid axis."""
    n_faces = tri.shape[0]
    lo_f = np.empty((n_faces, 3))
    hi_f = np.empty((n_faces, 3))
    cent = np.empty((n_faces, 3))
    for f in range(n_faces):
        for k in range(3):
            a, b, c = tri[f, 0, k], tri[f, 1, k], tri[f, 2, k]
            lo_f[f, k] = min(a, min(b, c))
            hi_f[f, k] = max(a, max(b, c))
            cent[f, k] = (a + b + c) / 3.0

    max_nodes = max(1, 2 * n_faces)
    node_lo = np.empty((max_nodes, 3))
    node_hi = np.empty((max_nodes, 3))
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)
    start = np.zeros(max_nodes, dtype=np.int64)
    count = np.zeros(max_nodes, dtype=np.int64)
    order = np.arange(n_faces)

    stack_node = np.empty(STACK_SIZE, dtype=np.int64)
    stack_s = np.empty(STACK_SIZE, dtype=np.int64)
    stack_e = np.empty(STACK_SIZE, dtype=np.int64)
    sp = 0
    stack_node[0] = 0
    stack_s[0] = 0
    stack_e[0] = n_faces
    sp = 1
    n_nodes = 1
    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        s = stack_s[sp]
        e = stack_e[sp]
        for k in range(3):
            node_lo[node, k] = np.inf
            node_hi[node, k] = -np.inf
        clo = np.full(3, np.inf)
        chi = np.full(3, -np.inf)
        for i in range(s, e):
            f = order[i]
            for k in range(3):
                node_lo[node, k] = min(node_lo[node, k], lo_f[f, k])
                node_hi[node, k] = max(node_hi[node, k], hi_f[f, k])
                clo[k] = min(clo[k], cent[f, k])
                chi[k] = max(chi[k], cent[f, k])
        if e - s <= LEAF_SIZE:
            start[node] = s
            count[node] = e - s
            continue
        axis = 0
        ext = chi[0] - clo[0]
        for k in range(1, 3):
            if chi[k] - clo[k] > ext:
                ext = chi[k] - clo[k]
                axis = k
        seg = order[s:e].copy()
        keys = np.empty(e - s)
        for i in range(e - s):
            keys[i] = cent[seg[i], axis]
        perm = np.argsort(keys, kind="mergesort")
        for i in range(e - s):
            order[s + i] = seg[perm[i]]
        mid = (s + e) // 2
        l_node = n_nodes
        r_node = n_nodes + 1
        n_nodes += 2
        left[node] = l_node
        right[node] = r_node
        stack_node[sp] = r_node
        stack_s[sp] = mid
        stack_e[sp] = e
        sp += 1
        stack_node[sp] = l_node
        stack_s[sp] = s
        stack_e[sp] = mid
        sp += 1
    return (node_lo[:n_nodes].copy(), node_hi[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), start[:n_nodes].copy(), count[:n_nodes].copy(), order)


@_jit
def _slab(lo, hi, o, inv, tmin, tmax):
    t0 = tmin
    t1 = tmax
    for k in range(3):
        ta = (lo[k] - o[k]) * inv[k]
        tb = (hi[k] - o[k]) * inv[k]
        if ta > tb:
            ta, tb = tb, ta
        # nan from 0*inf: origin on the slab plane with parallel ray, keep
        if ta == ta and ta > t0:
            t0 = ta
        if tb == tb and tb < t1:
            t1 = tb
        if t0 > t1:
            return False
    return True


@_jit
def _tri_hit(tri, f, o, d):
    """Moller-Trumbore; returns (t, u, v, det) with t=nan on a miss."""
    v0x, v0y, v0z = tri[f, 0, 0], tri[f, 0, 1], tri[f, 0, 2]
    e1x = tri[f, 1, 0] - v0x
    e1y = tri[f, 1, 1] - v0y
    e1z = tri[f, 1, 2] - v0z
    e2x = tri[f, 2, 0] - v0x
    e2y = tri[f, 2, 1] - v0y
    e2z = tri[f, 2, 2] - v0z
    px = d[1] * e2z - d[2] * e2y
    py = d[2] * e2x - d[0] * e2z
    pz = d[0] * e2y - d[1] * e2x
    det = e1x * px + e1y * py + e1z * pz
    if det == 0.0:
        return np.nan, 0.0, 0.0, det
    inv = 1.0 / det
    sx = o[0] - v0x
    sy = o[1] - v0y
    sz = o[2] - v0z
    u = (sx * px + sy * py + sz * pz) * inv
    if u < -BARY_EPS or u > 1.0 + BARY_EPS:
        return np.nan, u, 0.0, det
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    v = (d[0] * qx + d[1] * qy + d[2] * qz) * inv
    if v < -BARY_EPS or u + v > 1.0 + BARY_EPS:
        return np.nan, u, v, det
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    return t, u, v, det


@_jit
def intersect_first(node_lo, node_hi, left, right, start, count, tri,
                    origins, dirs, tmins, tmaxs):
    """Nearest hit per ray; t=inf and face=-1 on a miss."""
    n = origins.shape[0]
    t_out = np.full(n, np.inf)
    f_out = np.full(n, -1, dtype=np.int64)
    stack = np.empty(STACK_SIZE, dtype=np.int64)
    inv = np.empty(3)
    for r in range(n):
        o = origins[r]
        d = dirs[r]
        for k in range(3):
            inv[k] = 1.0 / d[k]
        best = tmaxs[r]
        tmin = tmins[r]
        hit = -1
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if not _slab(node_lo[node], node_hi[node], o, inv, tmin, best):
                continue
            if count[node] > 0:
                for i in range(start[node], start[node] + count[node]):
                    t, u, v, det = _tri_hit(tri, i, o, d)
                    if t == t and t >= tmin and t <= best:
                        if hit < 0 or t < best or (t == best and i < hit):
                            best = t
                            hit = i
            else:
                stack[sp] = right[node]
                sp += 1
                stack[sp] = left[node]
                sp += 1
        if hit >= 0:
            t_out[r] = best
            f_out[r] = hit
    return t_out, f_out


@_jit
def intersect_any(node_lo, node_hi, left, right, start, count, tri,
                  origins, dirs, tmins, tmaxs):
    """True where a ray hits anything within [tmin, tmax]."""
    n = origins.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    stack = np.empty(STACK_SIZE, dtype=np.int64)
    inv = np.empty(3)
    for r in range(n):
        o = origins[r]
        d = dirs[r]
        for k in range(3):
            inv[k] = 1.0 / d[k]
        tmin = tmins[r]
        tmax = tmaxs[r]
        if not tmax > tmin:
            continue
        sp = 0
        stack[sp] = 0
        sp += 1
        found = False
        while sp > 0 and not found:
            sp -= 1
            node = stack[sp]
            if not _slab(node_lo[node], node_hi[node], o, inv, tmin, tmax):
                continue
            if count[node] > 0:
                for i in range(start[node], start[node] + count[node]):
                    t, u, v, det = _tri_hit(tri, i, o, d)
                    if t == t and t >= tmin and t <= tmax:
                        found = True
                        break
            else:
                stack[sp] = right[node]
                sp += 1
                stack[sp] = left[node]
                sp += 1
        out[r] = found
    return out


@_jit
def count_crossings(node_lo, node_hi, left, right, start, count, tri, origins, d):
    """Number of surface crossings along a half-line per origin.

    ``grazing`` flags rays that pass within GRAZE_EPS (barycentric) of an
    edge or run parallel to a face they touch; their count is unreliable.
    """
    n = origins.shape[0]
    counts = np.zeros(n, dtype=np.int64)
    grazing = np.zeros(n, dtype=np.bool_)
    stack = np.empty(STACK_SIZE, dtype=np.int64)
    inv = np.empty(3)
    for k in range(3):
        inv[k] = 1.0 / d[k]
    for r in range(n):
        o = origins[r]
        sp = 0
        stack[sp] = 0
        sp += 1
        c = 0
        bad = False
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if not _slab(node_lo[node], node_hi[node], o, inv, 0.0, np.inf):
                continue
            if count[node] > 0:
                for i in range(start[node], start[node] + count[node]):
                    t, u, v, det = _tri_hit(tri, i, o, d)
                    if t == t and t > 0.0:
                        c += 1
                        w = 1.0 - u - v
                        if u < GRAZE_EPS or v < GRAZE_EPS or w < GRAZE_EPS:
                            bad = True
                        if abs(det) < 1e-14:
                            bad = True
            else:
                stack[sp] = right[node]
                sp += 1
                stack[sp] = left[node]
                sp += 1
        counts[r] = c
        grazing[r] = bad
    return counts, grazing


@_jit
def _closest_on_tri(p, a, b, c):
    # Ericson, Real-Time Collision Detection, 5.1.5
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = ab[0] * ap[0] + ab[1] * ap[1] + ab[2] * ap[2]
    d2 = ac[0] * ap[0] + ac[1] * ap[1] + ac[2] * ap[2]
    if d1 <= 0.0 and d2 <= 0.0:
        return a.copy()
    bp = p - b
    d3 = ab[0] * bp[0] + ab[1] * bp[1] + ab[2] * bp[2]
    d4 = ac[0] * bp[0] + ac[1] * bp[1] + ac[2] * bp[2]
    if d3 >= 0.0 and d4 <= d3:
        return b.copy()
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        return a + ab * (d1 / (d1 - d3))
    cp = p - c
    d5 = ab[0] * cp[0] + ab[1] * cp[1] + ab[2] * cp[2]
    d6 = ac[0] * cp[0] + ac[1] * cp[1] + ac[2] * cp[2]
    if d6 >= 0.0 and d5 <= d6:
        return c.copy()
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        return a + ac * (d2 / (d2 - d6))
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)))
    denom = 1.0 / (va + vb + vc)
    return a + ab * (vb * denom) + ac * (vc * denom)


@_jit
def _box_dist2(lo, hi, p):
    s = 0.0
    for k in range(3):
        if p[k] < lo[k]:
            s += (lo[k] - p[k]) ** 2
        elif p[k] > hi[k]:
            s += (p[k] - hi[k]) ** 2
    return s


@_jit
def closest_points(node_lo, node_hi, left, right, start, count, tri, points, max_dist):
    """Nearest surface point per query; dist=inf where none lies within max_dist."""
    n = points.shape[0]
    dist = np.full(n, np.inf)
    foot = np.full((n, 3), np.nan)
    face = np.full(n, -1, dtype=np.int64)
    stack = np.empty(STACK_SIZE, dtype=np.int64)
    for r in range(n):
        p = points[r]
        best = max_dist * max_dist if max_dist < np.inf else np.inf
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if _box_dist2(node_lo[node], node_hi[node], p) > best:
                continue
            if count[node] > 0:
                for i in range(start[node], start[node] + count[node]):
                    q = _closest_on_tri(p, tri[i, 0], tri[i, 1], tri[i, 2])
                    d2 = (q[0] - p[0]) ** 2 + (q[1] - p[1]) ** 2 + (q[2] - p[2]) ** 2
                    if d2 < best or (d2 == best and face[r] < 0):
                        best = d2
                        face[r] = i
                        foot[r, 0] = q[0]
                        foot[r, 1] = q[1]
                        foot[r, 2] = q[2]
            else:
                l_node = left[node]
                r_node = right[node]
                dl = _box_dist2(node_lo[l_node], node_hi[l_node], p)
                dr = _box_dist2(node_lo[r_node], node_hi[r_node], p)
                # nearer child popped first
                if dl <= dr:
                    stack[sp] = r_node
                    sp += 1
                    stack[sp] = l_node
                    sp += 1
                else:
                    stack[sp] = l_node
                    sp += 1
                    stack[sp] = r_node
                    sp += 1
        if face[r] >= 0:
            dist[r] = np.sqrt(best)
    return dist, foot, face
