"""Compiled inner loops: inverse bilinear, cell search, warping, local FD deltas.

Vertex arrays are ``(rows+1, cols+1, 2)`` float64 with ``[..., 0] = x`` and
``[..., 1] = y``.  Images are ``(height, width, channels)`` float64.
"""

import math

import numpy as np
from numba import njit

NEWTON_MAX_ITER = 20
NEWTON_TOL = 1e-9
INSIDE_TOL = 1e-9
ROOT_TOL = 1e-6
SNAP_TOL = 1e-9


@njit(cache=True)
def bilinear_point(verts, i, j, u, v):
    a = (1.0 - u) * (1.0 - v)
    b = (1.0 - u) * v
    c = u * (1.0 - v)
    d = u * v
    x = a * verts[i, j, 0] + b * verts[i, j + 1, 0] + c * verts[i + 1, j, 0] + d * verts[i + 1, j + 1, 0]
    y = a * verts[i, j, 1] + b * verts[i, j + 1, 1] + c * verts[i + 1, j, 1] + d * verts[i + 1, j + 1, 1]
    return x, y


@njit(cache=True)
def _cross(ax, ay, bx, by):
    return ax * by - ay * bx


@njit(cache=True)
def _quadratic_inverse(verts, i, j, px, py):
    # p = p00 + v*e + u*f + u*v*g, solved for v first
    x00 = verts[i, j, 0]
    y00 = verts[i, j, 1]
    ex = verts[i, j + 1, 0] - x00
    ey = verts[i, j + 1, 1] - y00
    fx = verts[i + 1, j, 0] - x00
    fy = verts[i + 1, j, 1] - y00
    gx = x00 - verts[i, j + 1, 0] - verts[i + 1, j, 0] + verts[i + 1, j + 1, 0]
    gy = y00 - verts[i, j + 1, 1] - verts[i + 1, j, 1] + verts[i + 1, j + 1, 1]
    hx = px - x00
    hy = py - y00

    qa = _cross(ex, ey, gx, gy)
    qb = _cross(ex, ey, fx, fy) - _cross(hx, hy, gx, gy)
    qc = -_cross(hx, hy, fx, fy)

    roots = np.empty(2)
    nroots = 0
    scale = abs(qb) + abs(qc) + 1e-300
    if abs(qa) <= 1e-12 * scale:
        if qb != 0.0:
            roots[0] = -qc / qb
            nroots = 1
    else:
        disc = qb * qb - 4.0 * qa * qc
        if disc >= 0.0:
            sq = math.sqrt(disc)
            # numerically stable pair
            if qb >= 0.0:
                t = -0.5 * (qb + sq)
            else:
                t = -0.5 * (qb - sq)
            roots[0] = t / qa
            nroots = 1
            if t != 0.0:
                roots[1] = qc / t
                nroots = 2

    for k in range(nroots):
        v = roots[k]
        if v < -ROOT_TOL or v > 1.0 + ROOT_TOL:
            continue
        dx = fx + v * gx
        dy = fy + v * gy
        den = dx * dx + dy * dy
        if den == 0.0:
            continue
        u = ((hx - v * ex) * dx + (hy - v * ey) * dy) / den
        if u < -ROOT_TOL or u > 1.0 + ROOT_TOL:
            continue
        return u, v, True
    return 0.5, 0.5, False


@njit(cache=True)
def inverse_bilinear(verts, i, j, px, py):
    """Return ``(u, v, ok)`` with bilinear(cell i,j; u, v) == (px, py).

    ``ok`` only says the solver converged; callers test the range.
    """
    return inverse_bilinear_from(verts, i, j, px, py, 0.5, 0.5)


@njit(cache=True)
def inverse_bilinear_from(verts, i, j, px, py, u, v):
    """Newton from the guess ``(u, v)``, quadratic fallback on stall."""
    for _ in range(NEWTON_MAX_ITER):
        x, y = bilinear_point(verts, i, j, u, v)
        rx = x - px
        ry = y - py
        if abs(rx) <= NEWTON_TOL and abs(ry) <= NEWTON_TOL:
            return u, v, True
        # partials of the bilinear map
        dxu = (1.0 - v) * (verts[i + 1, j, 0] - verts[i, j, 0]) + v * (verts[i + 1, j + 1, 0] - verts[i, j + 1, 0])
        dyu = (1.0 - v) * (verts[i + 1, j, 1] - verts[i, j, 1]) + v * (verts[i + 1, j + 1, 1] - verts[i, j + 1, 1])
        dxv = (1.0 - u) * (verts[i, j + 1, 0] - verts[i, j, 0]) + u * (verts[i + 1, j + 1, 0] - verts[i + 1, j, 0])
        dyv = (1.0 - u) * (verts[i, j + 1, 1] - verts[i, j, 1]) + u * (verts[i + 1, j + 1, 1] - verts[i + 1, j, 1])
        det = dxu * dyv - dxv * dyu
        if det == 0.0 or not math.isfinite(det):
            break
        du = (rx * dyv - ry * dxv) / det
        dv = (ry * dxu - rx * dyu) / det
        u -= du
        v -= dv
        if not (math.isfinite(u) and math.isfinite(v)) or abs(u) > 1e6 or abs(v) > 1e6:
            break
    return _quadratic_inverse(verts, i, j, px, py)


@njit(cache=True)
def _in_cell(verts, i, j, px, py):
    return _in_cell_from(verts, i, j, px, py, 0.5, 0.5)


@njit(cache=True)
def _in_cell_from(verts, i, j, px, py, u0, v0):
    u, v, ok = inverse_bilinear_from(verts, i, j, px, py, u0, v0)
    if not ok:
        return 0.0, 0.0, False
    if u < -INSIDE_TOL or u > 1.0 + INSIDE_TOL or v < -INSIDE_TOL or v > 1.0 + INSIDE_TOL:
        return u, v, False
    u = min(max(u, 0.0), 1.0)
    v = min(max(v, 0.0), 1.0)
    return u, v, True


@njit(cache=True)
def _canonical(verts, rows, cols, i, j, u, v, px, py):
    # a point on an interior grid line belongs to the cell it starts
    if v >= 1.0 - INSIDE_TOL and j < cols - 1:
        u2, v2, ok = _in_cell(verts, i, j + 1, px, py)
        if ok:
            j += 1
            u = u2
            v = v2
    if u >= 1.0 - INSIDE_TOL and i < rows - 1:
        u2, v2, ok = _in_cell(verts, i + 1, j, px, py)
        if ok:
            i += 1
            u = u2
            v = v2
    return i, j, u, v


@njit(cache=True)
def locate(verts, rows, cols, px, py, hint_i, hint_j):
    """Cell search: hint cell, its 8 neighbours, then a full scan.

    Returns ``(i, j, u, v, found)``.
    """
    if 0 <= hint_i < rows and 0 <= hint_j < cols:
        u, v, ok = _in_cell(verts, hint_i, hint_j, px, py)
        if ok:
            i, j, u, v = _canonical(verts, rows, cols, hint_i, hint_j, u, v, px, py)
            return i, j, u, v, True
        for di in range(-1, 2):
            for dj in range(-1, 2):
                if di == 0 and dj == 0:
                    continue
                ii = hint_i + di
                jj = hint_j + dj
                if ii < 0 or jj < 0 or ii >= rows or jj >= cols:
                    continue
                u, v, ok = _in_cell(verts, ii, jj, px, py)
                if ok:
                    i, j, u, v = _canonical(verts, rows, cols, ii, jj, u, v, px, py)
                    return i, j, u, v, True
    for ii in range(rows):
        for jj in range(cols):
            u, v, ok = _in_cell(verts, ii, jj, px, py)
            if ok:
                i, j, u, v = _canonical(verts, rows, cols, ii, jj, u, v, px, py)
                return i, j, u, v, True
    return -1, -1, 0.0, 0.0, False


@njit(cache=True)
def _snap_axis(coord, size):
    # clamp to the pixel-centre range, then snap near-centre hits
    if coord < 0.5:
        coord = 0.5
    elif coord > size - 0.5:
        coord = size - 0.5
    f = coord - 0.5
    c0 = int(math.floor(f))
    t = f - c0
    if t < SNAP_TOL:
        t = 0.0
    elif t > 1.0 - SNAP_TOL:
        c0 += 1
        t = 0.0
    if c0 >= size - 1:
        c0 = size - 1
        t = 0.0
    c1 = c0 + 1 if c0 + 1 < size else c0
    return c0, c1, t


@njit(cache=True)
def sample(img, x, y, out):
    h = img.shape[0]
    w = img.shape[1]
    c0, c1, tx = _snap_axis(x, w)
    r0, r1, ty = _snap_axis(y, h)
    for ch in range(img.shape[2]):
        top = img[r0, c0, ch] * (1.0 - tx) + img[r0, c1, ch] * tx
        bot = img[r1, c0, ch] * (1.0 - tx) + img[r1, c1, ch] * tx
        out[ch] = top * (1.0 - ty) + bot * ty


@njit(cache=True)
def resize(img, out_h, out_w):
    h = img.shape[0]
    w = img.shape[1]
    out = np.empty((out_h, out_w, img.shape[2]))
    sx = w / out_w
    sy = h / out_h
    for r in range(out_h):
        y = (r + 0.5) * sy
        for c in range(out_w):
            sample(img, (c + 0.5) * sx, y, out[r, c])
    return out


@njit(cache=True)
def warp(img, src, dst, rows, cols, out_h, out_w):
    """Backward warp: locate each output pixel centre in ``dst``, read ``src``.

    Returns ``(image, cell_map, uv_map, uncovered)``; ``cell_map`` holds
    ``i*cols+j`` or -1 for pixels outside ``dst`` and ``uv_map`` the local
    coordinates inside that cell.
    """
    out = np.zeros((out_h, out_w, img.shape[2]))
    cell_map = np.full((out_h, out_w), -1, dtype=np.int64)
    uv_map = np.zeros((out_h, out_w, 2))
    uncovered = 0
    hint_i = 0
    hint_j = 0
    for r in range(out_h):
        py = r + 0.5
        if r > 0 and cell_map[r - 1, 0] >= 0:
            hint_i = cell_map[r - 1, 0] // cols
            hint_j = cell_map[r - 1, 0] % cols
        for c in range(out_w):
            px = c + 0.5
            i, j, u, v, found = locate(dst, rows, cols, px, py, hint_i, hint_j)
            if not found:
                uncovered += 1
                continue
            hint_i = i
            hint_j = j
            cell_map[r, c] = i * cols + j
            uv_map[r, c, 0] = u
            uv_map[r, c, 1] = v
            sx, sy = bilinear_point(src, i, j, u, v)
            sample(img, sx, sy, out[r, c])
    return out, cell_map, uv_map, uncovered


@njit(cache=True)
def _cell_may_contain(verts, i, j, px, py):
    tol = 1e-6
    x0 = min(min(verts[i, j, 0], verts[i, j + 1, 0]), min(verts[i + 1, j, 0], verts[i + 1, j + 1, 0]))
    if px < x0 - tol:
        return False
    x1 = max(max(verts[i, j, 0], verts[i, j + 1, 0]), max(verts[i + 1, j, 0], verts[i + 1, j + 1, 0]))
    if px > x1 + tol:
        return False
    y0 = min(min(verts[i, j, 1], verts[i, j + 1, 1]), min(verts[i + 1, j, 1], verts[i + 1, j + 1, 1]))
    if py < y0 - tol:
        return False
    y1 = max(max(verts[i, j, 1], verts[i, j + 1, 1]), max(verts[i + 1, j, 1], verts[i + 1, j + 1, 1]))
    return py <= y1 + tol


@njit(cache=True)
def _star_value(img, src, dst, rows, cols, vi, vj, px, py, buf, first, u0, v0):
    # search only the cells incident to vertex (vi, vj); ``first`` (i*cols+j
    # or -1) is tried before the others, with Newton started at (u0, v0)
    if first >= 0:
        i = first // cols
        j = first % cols
        if (i == vi - 1 or i == vi) and (j == vj - 1 or j == vj) and _cell_may_contain(dst, i, j, px, py):
            u, v, ok = _in_cell_from(dst, i, j, px, py, u0, v0)
            if ok:
                sx, sy = bilinear_point(src, i, j, u, v)
                sample(img, sx, sy, buf)
                return True
    for i in range(vi - 1, vi + 1):
        if i < 0 or i >= rows:
            continue
        for j in range(vj - 1, vj + 1):
            if j < 0 or j >= cols or i * cols + j == first:
                continue
            if not _cell_may_contain(dst, i, j, px, py):
                continue
            u, v, ok = _in_cell(dst, i, j, px, py)
            if ok:
                sx, sy = bilinear_point(src, i, j, u, v)
                sample(img, sx, sy, buf)
                return True
    return False


@njit(cache=True)
def _star_delta(img, src, dst, rows, cols, vi, vj, base, cell_map, uv_map,
                crops, targets, weights, active, c_lo, c_hi, r_lo, r_hi, buf):
    nch = img.shape[2]
    delta = 0.0
    for r in range(r_lo, r_hi):
        py = r + 0.5
        for c in range(c_lo, c_hi):
            in_any = False
            for k in range(crops.shape[0]):
                if active[k] and crops[k, 0] <= c < crops[k, 2] and crops[k, 1] <= r < crops[k, 3]:
                    in_any = True
                    break
            if not in_any:
                continue
            px = c + 0.5
            cm = cell_map[r, c]
            if not _star_value(img, src, dst, rows, cols, vi, vj, px, py, buf, cm, uv_map[r, c, 0], uv_map[r, c, 1]):
                if cm < 0:
                    continue
                ci = cm // cols
                cj = cm % cols
                if not ((ci == vi - 1 or ci == vi) and (cj == vj - 1 or cj == vj)):
                    continue
                for ch in range(nch):
                    buf[ch] = 0.0
            for k in range(crops.shape[0]):
                if not active[k]:
                    continue
                x0 = crops[k, 0]
                y0 = crops[k, 1]
                if not (x0 <= c < crops[k, 2] and y0 <= r < crops[k, 3]):
                    continue
                acc = 0.0
                for ch in range(nch):
                    t = targets[k, r - y0, c - x0, ch]
                    dn = buf[ch] - t
                    do = base[r, c, ch] - t
                    acc += dn * dn - do * do
                delta += weights[k] * acc
    return delta


@njit(cache=True)
def _pixel_value(img, src, dst, rows, cols, vi, vj, base, cell_map, uv_map, r, c,
                 c_lo, c_hi, r_lo, r_hi, buf):
    # warped value at (r, c) with only vertex (vi, vj) moved; result in buf
    nch = img.shape[2]
    if c_lo <= c < c_hi and r_lo <= r < r_hi:
        cm = cell_map[r, c]
        if _star_value(img, src, dst, rows, cols, vi, vj, c + 0.5, r + 0.5, buf, cm, uv_map[r, c, 0], uv_map[r, c, 1]):
            return
        if cm >= 0:
            ci = cm // cols
            cj = cm % cols
            if (ci == vi - 1 or ci == vi) and (cj == vj - 1 or cj == vj):
                for ch in range(nch):
                    buf[ch] = 0.0
                return
    for ch in range(nch):
        buf[ch] = base[r, c, ch]


@njit(cache=True)
def map_box_samples(dst, samples):
    """Hull ``(x0, y0, x1, y1)`` of box sample points given as (row, col, u, v) rows."""
    x0 = 1e300
    y0 = 1e300
    x1 = -1e300
    y1 = -1e300
    for s in range(samples.shape[0]):
        x, y = bilinear_point(dst, int(samples[s, 0]), int(samples[s, 1]), samples[s, 2], samples[s, 3])
        x0 = min(x0, x)
        y0 = min(y0, y)
        x1 = max(x1, x)
        y1 = max(y1, y)
    return x0, y0, x1, y1


@njit(cache=True)
def crop_rect(x0, y0, x1, y1, width, height):
    """Integer end-exclusive pixel rectangle of a box, clipped to the image."""
    ox = int(math.floor(x0 + 0.5))
    oy = int(math.floor(y0 + 0.5))
    ex = ox + max(1, int(math.floor((x1 - x0) + 0.5)))
    ey = oy + max(1, int(math.floor((y1 - y0) + 0.5)))
    cx0 = min(max(ox, 0), width)
    cy0 = min(max(oy, 0), height)
    cx1 = max(min(max(ex, 0), width), cx0)
    cy1 = max(min(max(ey, 0), height), cy0)
    return cx0, cy0, cx1, cy1


@njit(cache=True)
def _rect_sum(base, target, th, tw, x0, y0, hj, wj, hc, wc):
    # sum of squared differences over the common rectangle, unmodified image
    nch = base.shape[2]
    acc = 0.0
    for rr in range(hc):
        for cc in range(wc):
            inside_o = rr < hj and cc < wj
            inside_t = rr < th and cc < tw
            for ch in range(nch):
                t = target[rr, cc, ch] if inside_t else 0.0
                o = base[y0 + rr, x0 + cc, ch] if inside_o else 0.0
                d = o - t
                acc += d * d
    return acc


CACHE_SPAN = 2


@njit(cache=True)
def _moved_term(img, src, dst, rows, cols, vi, vj, base, cell_map, uv_map, samples, target, th, tw,
                n_objects, c_lo, c_hi, r_lo, r_hi, buf, crop0, cache, cached):
    # object term with the output box re-mapped through the perturbed mesh
    nch = img.shape[2]
    out_h = base.shape[0]
    out_w = base.shape[1]
    bx0, by0, bx1, by1 = map_box_samples(dst, samples)
    x0, y0, x1, y1 = crop_rect(bx0, by0, bx1, by1, out_w, out_h)
    hj = y1 - y0
    wj = x1 - x0
    hc = max(th, hj)
    wc = max(tw, wj)
    # base part, cached per crop rectangle near the current one
    a = x0 - crop0[0] + CACHE_SPAN
    b = y0 - crop0[1] + CACHE_SPAN
    c2 = x1 - crop0[2] + CACHE_SPAN
    d2 = y1 - crop0[3] + CACHE_SPAN
    span = 2 * CACHE_SPAN + 1
    if 0 <= a < span and 0 <= b < span and 0 <= c2 < span and 0 <= d2 < span:
        if not cached[a, b, c2, d2]:
            cache[a, b, c2, d2] = _rect_sum(base, target, th, tw, x0, y0, hj, wj, hc, wc)
            cached[a, b, c2, d2] = True
        acc = cache[a, b, c2, d2]
    else:
        acc = _rect_sum(base, target, th, tw, x0, y0, hj, wj, hc, wc)
    # correction where the perturbed vertex changes the image
    r0 = max(r_lo, y0)
    r1 = min(r_hi, y1)
    q0 = max(c_lo, x0)
    q1 = min(c_hi, x1)
    for r in range(r0, r1):
        rr = r - y0
        for c in range(q0, q1):
            cc = c - x0
            _pixel_value(img, src, dst, rows, cols, vi, vj, base, cell_map, uv_map,
                         r, c, c_lo, c_hi, r_lo, r_hi, buf)
            inside_t = rr < th and cc < tw
            for ch in range(nch):
                t = target[rr, cc, ch] if inside_t else 0.0
                dn = buf[ch] - t
                do = base[r, c, ch] - t
                acc += dn * dn - do * do
    return acc / (n_objects * hc * wc * nch)


@njit(cache=True)
def object_fd_gradient(img, src, dst, rows, cols, base, cell_map, uv_map,
                       crops, targets, weights, active, step, grad, evaluated,
                       samples, tshape, terms):
    """Central differences of the object loss, one vertex at a time.

    For objects whose mapped box does not depend on the vertex only pixels
    inside the vertex's incident cells and the object's crop are revisited;
    everything else cancels in the difference.  Objects whose box does
    depend on it (``samples`` holds each box's sample points as
    (row, col, u, v) in the input mesh) are re-mapped and re-evaluated in
    full.  ``terms`` holds the current per-object terms.
    """
    out_h = base.shape[0]
    out_w = base.shape[1]
    n = crops.shape[0]
    buf = np.empty(img.shape[2])
    work = dst.copy()
    local = np.zeros(n, dtype=np.bool_)
    moved = np.zeros(n, dtype=np.bool_)
    span = 2 * CACHE_SPAN + 1
    cache = np.zeros((n, span, span, span, span))
    cached = np.zeros((n, span, span, span, span), dtype=np.bool_)
    for vi in range(rows + 1):
        for vj in range(cols + 1):
            i_lo = max(vi - 1, 0)
            i_hi = min(vi + 1, rows)
            j_lo = max(vj - 1, 0)
            j_hi = min(vj + 1, cols)
            xmin = 1e300
            xmax = -1e300
            ymin = 1e300
            ymax = -1e300
            for ii in range(i_lo, i_hi + 1):
                for jj in range(j_lo, j_hi + 1):
                    xmin = min(xmin, work[ii, jj, 0])
                    xmax = max(xmax, work[ii, jj, 0])
                    ymin = min(ymin, work[ii, jj, 1])
                    ymax = max(ymax, work[ii, jj, 1])
            xmin -= step
            ymin -= step
            xmax += step
            ymax += step
            c_lo = max(int(math.floor(xmin - 0.5)), 0)
            c_hi = min(int(math.ceil(xmax - 0.5)) + 1, out_w)
            r_lo = max(int(math.floor(ymin - 0.5)), 0)
            r_hi = min(int(math.ceil(ymax - 0.5)) + 1, out_h)
            hit = False
            for k in range(n):
                local[k] = False
                moved[k] = False
                if not active[k]:
                    continue
                for s in range(samples.shape[1]):
                    sr = int(samples[k, s, 0])
                    sc = int(samples[k, s, 1])
                    if sr <= vi <= sr + 1 and sc <= vj <= sc + 1:
                        moved[k] = True
                        break
                if moved[k]:
                    hit = True
                elif (c_lo < c_hi and r_lo < r_hi and crops[k, 0] < c_hi and crops[k, 2] > c_lo
                      and crops[k, 1] < r_hi and crops[k, 3] > r_lo):
                    local[k] = True
                    hit = True
            if not hit:
                grad[vi, vj, 0] = 0.0
                grad[vi, vj, 1] = 0.0
                continue
            evaluated[vi, vj] = True
            for comp in range(2):
                orig = work[vi, vj, comp]
                diff = 0.0
                for sign in (1.0, -1.0):
                    work[vi, vj, comp] = orig + sign * step
                    d = 0.0
                    if c_lo < c_hi and r_lo < r_hi:
                        d = _star_delta(img, src, work, rows, cols, vi, vj, base, cell_map, uv_map,
                                        crops, targets, weights, local, c_lo, c_hi, r_lo, r_hi, buf)
                    for k in range(n):
                        if moved[k]:
                            d += _moved_term(img, src, work, rows, cols, vi, vj, base, cell_map, uv_map,
                                             samples[k], targets[k], tshape[k, 0], tshape[k, 1], n,
                                             c_lo, c_hi, r_lo, r_hi, buf, crops[k], cache[k],
                                             cached[k]) - terms[k]
                    diff += sign * d
                work[vi, vj, comp] = orig
                grad[vi, vj, comp] = diff / (2.0 * step)
