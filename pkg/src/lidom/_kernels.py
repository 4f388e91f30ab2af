"""Compiled inner loops.

Everything latency-critical lives here as serial numba kernels: pixel
projection, the deterministic per-cell reductions used by the map builders,
windowed normal estimation, and the association/accumulation passes of the
optimizer.  Kernels avoid Python-level temporaries so per-frame cost stays
linear in point count with a small constant.

All reductions are single-threaded with explicit lexicographic tie-breaks,
so outputs are bit-identical for any input ordering and any machine thread
configuration.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _spherical_pixel(x, y, z, width, height, fov_up, fov):
    """(u, v, r) of one point; shared by the builders and the association
    pass so both quantize identically at pixel boundaries."""
    r = np.sqrt(x * x + y * y + z * z)
    if r <= 0.0:
        return 0, -(1 << 30), 0.0
    theta = np.arctan2(y, x)
    sz = z / r
    if sz > 1.0:
        sz = 1.0
    elif sz < -1.0:
        sz = -1.0
    phi = np.arcsin(sz)
    u = int(np.floor(0.5 * (1.0 - theta / np.pi) * width)) % width
    v = int(np.floor((1.0 - (phi + fov - fov_up) / fov) * height))
    return u, v, r


@njit(cache=True)
def _bev_cell(x, y, z, half_x, half_y, res_x, res_y):
    """(u, v, norm, inside) of one point on the top-down grid."""
    d = np.sqrt(x * x + y * y + z * z)
    u = int(np.floor((x + half_x) / res_x))
    v = int(np.floor((y + half_y) / res_y))
    inside = (-half_x <= x) and (x < half_x) and (-half_y <= y) and (y < half_y)
    return u, v, d, inside


@njit(cache=True)
def spherical_pixels(points, width, height, fov_up, fov):
    """Pixel coordinates and ranges for a batch of points.

    Returns (u, v, r).  u is wrapped into [0, width); v may fall outside
    [0, height) for out-of-view elevations and is left unclipped so the
    caller can mask.  Points at the origin get r = 0 and pixel (0, huge).
    """
    n = points.shape[0]
    u = np.empty(n, np.int64)
    v = np.empty(n, np.int64)
    r = np.empty(n, np.float64)
    for i in range(n):
        u[i], v[i], r[i] = _spherical_pixel(
            points[i, 0], points[i, 1], points[i, 2], width, height, fov_up, fov
        )
    return u, v, r


@njit(cache=True)
def bev_pixels(points, half_x, half_y, res_x, res_y):
    """Cell coordinates and 3D norms for a batch of points.

    Returns (u, v, norm, inside).  u indexes x, v indexes y.
    """
    n = points.shape[0]
    u = np.empty(n, np.int64)
    v = np.empty(n, np.int64)
    d = np.empty(n, np.float64)
    inside = np.empty(n, np.bool_)
    for i in range(n):
        u[i], v[i], d[i], inside[i] = _bev_cell(
            points[i, 0], points[i, 1], points[i, 2], half_x, half_y, res_x, res_y
        )
    return u, v, d, inside


@njit(cache=True)
def _odd_floor_clamp(x, lo, hi):
    """Largest odd integer <= x, clamped into [lo, hi]."""
    k = int(np.floor(x))
    if k % 2 == 0:
        k -= 1
    if k < lo:
        return lo
    if k > hi:
        return hi
    return k


@njit(cache=True)
def _sym3_eigenvalues(a00, a01, a02, a11, a12, a22):
    """Eigenvalues of a symmetric 3x3 matrix, descending.

    Closed-form trigonometric solution; exact symmetry of the input keeps
    the roots real, and the acos argument is clamped against round-off.
    """
    q = (a00 + a11 + a22) / 3.0
    b00 = a00 - q
    b11 = a11 - q
    b22 = a22 - q
    p2 = b00 * b00 + b11 * b11 + b22 * b22 + 2.0 * (
        a01 * a01 + a02 * a02 + a12 * a12
    )
    p = np.sqrt(p2 / 6.0)
    if p < 1e-300:
        return q, q, q
    det_b = (
        b00 * (b11 * b22 - a12 * a12)
        - a01 * (a01 * b22 - a12 * a02)
        + a02 * (a01 * a12 - b11 * a02)
    )
    r = det_b / (2.0 * p * p * p)
    if r > 1.0:
        r = 1.0
    elif r < -1.0:
        r = -1.0
    phi = np.arccos(r) / 3.0
    lam1 = q + 2.0 * p * np.cos(phi)
    lam3 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    # The acos route loses ~sqrt(eps) accuracy when two roots are close;
    # polish the extreme roots with Newton on the characteristic cubic
    # det(lam*I - A) = lam^3 - c2*lam^2 + c1*lam - c0.
    c2 = a00 + a11 + a22
    c1 = (
        a00 * a11
        - a01 * a01
        + a00 * a22
        - a02 * a02
        + a11 * a22
        - a12 * a12
    )
    c0 = (
        a00 * (a11 * a22 - a12 * a12)
        - a01 * (a01 * a22 - a12 * a02)
        + a02 * (a01 * a12 - a11 * a02)
    )
    # The trig estimate is already within ~sqrt(eps)*scale of the truth, so
    # a legitimate polish step is tiny; near a double root f and df are both
    # rounding noise and their ratio can be huge, so oversized steps are
    # rejected rather than applied.
    max_step = 1e-6 * (np.abs(lam1) + np.abs(lam3) + np.abs(q))
    for _ in range(2):
        f = ((lam3 - c2) * lam3 + c1) * lam3 - c0
        df = (3.0 * lam3 - 2.0 * c2) * lam3 + c1
        if df != 0.0:
            step = f / df
            if np.abs(step) <= max_step:
                lam3 -= step
        f = ((lam1 - c2) * lam1 + c1) * lam1 - c0
        df = (3.0 * lam1 - 2.0 * c2) * lam1 + c1
        if df != 0.0:
            step = f / df
            if np.abs(step) <= max_step:
                lam1 -= step
    lam2 = c2 - lam1 - lam3
    if lam2 < lam3:
        lam2, lam3 = lam3, lam2
    if lam1 < lam2:
        lam1, lam2 = lam2, lam1
    return lam1, lam2, lam3


@njit(cache=True)
def _smallest_eigenvector(a00, a01, a02, a11, a12, a22, lam):
    """Unit eigenvector for eigenvalue lam of a symmetric 3x3 matrix.

    Takes the largest cross product of rows of (A - lam*I); for a
    well-separated smallest eigenvalue this is numerically stable and the
    deterministic argmax keeps the output order-independent.
    """
    m00 = a00 - lam
    m11 = a11 - lam
    m22 = a22 - lam
    # rows: (m00, a01, a02), (a01, m11, a12), (a02, a12, m22)
    c0x = a01 * a12 - a02 * m11
    c0y = a02 * a01 - m00 * a12
    c0z = m00 * m11 - a01 * a01
    c1x = a01 * m22 - a02 * a12
    c1y = a02 * a02 - m00 * m22
    c1z = m00 * a12 - a01 * a02
    c2x = m11 * m22 - a12 * a12
    c2y = a12 * a02 - a01 * m22
    c2z = a01 * a12 - m11 * a02
    n0 = c0x * c0x + c0y * c0y + c0z * c0z
    n1 = c1x * c1x + c1y * c1y + c1z * c1z
    n2 = c2x * c2x + c2y * c2y + c2z * c2z
    best = n0
    x, y, z = c0x, c0y, c0z
    if n1 > best:
        best = n1
        x, y, z = c1x, c1y, c1z
    if n2 > best:
        best = n2
        x, y, z = c2x, c2y, c2z
    if best < 1e-300:
        return 0.0, 0.0, 0.0, False
    inv = 1.0 / np.sqrt(best)
    return x * inv, y * inv, z * inv, True


@njit(cache=True)
def _canonical_orient(nx, ny, nz, px, py, pz):
    """Fix the eigenvector sign: lexicographic convention, then flip the
    normal toward the sensor (n . p <= 0)."""
    if nx < 0.0 or (nx == 0.0 and (ny < 0.0 or (ny == 0.0 and nz < 0.0))):
        nx, ny, nz = -nx, -ny, -nz
    if nx * px + ny * py + nz * pz > 0.0:
        nx, ny, nz = -nx, -ny, -nz
    return nx, ny, nz


@njit(cache=True, fastmath=True)
def normal_map(
    vertices,
    ranges,
    skip_center,
    gatherable,
    fov,
    min_cols,
    max_cols,
    min_rows,
    max_rows,
    extent,
    range_gate,
    curvature_max,
):
    """Windowed plane-fit normals for every valid, non-skipped pixel.

    The window is range-adaptive (wider for close pixels), wraps in
    azimuth and clips in elevation.  ``skip_center`` excludes pixels as
    estimation targets; ``gatherable`` marks the pixels allowed as window
    neighbours (valid and not excluded).  Returns (normals, sigma,
    valid) where sigma is the curvature with -1 marking pixels never
    fitted and valid applies the curvature gate on top of a successful
    fit.
    """
    height, width = ranges.shape
    normals = np.zeros((height, width, 3))
    sigma = np.full((height, width), -1.0)
    valid = np.zeros((height, width), np.bool_)
    for v in range(height):
        for u in range(width):
            r_c = ranges[v, u]
            if r_c <= 0.0 or skip_center[v, u]:
                continue
            l_x = _odd_floor_clamp(
                extent / (r_c * np.pi) * width, min_cols, max_cols
            )
            l_y = _odd_floor_clamp(extent / (r_c * fov) * height, min_rows, max_rows)
            half_x = l_x // 2
            half_y = l_y // 2
            cx = vertices[v, u, 0]
            cy = vertices[v, u, 1]
            cz = vertices[v, u, 2]
            gathered = 0
            fails = 0
            s0 = s1 = s2 = 0.0
            m00 = m01 = m02 = m11 = m12 = m22 = 0.0
            row_lo = v - half_y
            if row_lo < 0:
                row_lo = 0
            row_hi = v + half_y
            if row_hi > height - 1:
                row_hi = height - 1
            wraps = u - half_x < 0 or u + half_x >= width
            for row in range(row_lo, row_hi + 1):
                for du in range(-half_x, half_x + 1):
                    # LLVM unswitches this loop-invariant branch.
                    if wraps:
                        col = (u + du) % width
                    else:
                        col = u + du
                    if not gatherable[row, col]:
                        continue
                    gathered += 1
                    dr = ranges[row, col] - r_c
                    if dr < 0.0:
                        dr = -dr
                    if dr > range_gate:
                        fails += 1
                        continue
                    d0 = vertices[row, col, 0] - cx
                    d1 = vertices[row, col, 1] - cy
                    d2 = vertices[row, col, 2] - cz
                    s0 += d0
                    s1 += d1
                    s2 += d2
                    m00 += d0 * d0
                    m01 += d0 * d1
                    m02 += d0 * d2
                    m11 += d1 * d1
                    m12 += d1 * d2
                    m22 += d2 * d2
            if 2 * fails > gathered:
                continue
            k = gathered - fails
            if k < 3:
                continue
            inv = 1.0 / k
            e0 = s0 * inv
            e1 = s1 * inv
            e2 = s2 * inv
            c00 = m00 * inv - e0 * e0
            c01 = m01 * inv - e0 * e1
            c02 = m02 * inv - e0 * e2
            c11 = m11 * inv - e1 * e1
            c12 = m12 * inv - e1 * e2
            c22 = m22 * inv - e2 * e2
            lam1, lam2, lam3 = _sym3_eigenvalues(c00, c01, c02, c11, c12, c22)
            if lam1 <= 1e-30 or lam2 <= 1e-9 * lam1:
                continue
            nx, ny, nz, ok = _smallest_eigenvector(
                c00, c01, c02, c11, c12, c22, lam3
            )
            if not ok:
                continue
            sig = lam3 / (lam1 + lam2 + lam3)
            if sig < 0.0:
                sig = 0.0
            nx, ny, nz = _canonical_orient(nx, ny, nz, cx, cy, cz)
            normals[v, u, 0] = nx
            normals[v, u, 1] = ny
            normals[v, u, 2] = nz
            sigma[v, u] = sig
            valid[v, u] = sig <= curvature_max
    return normals, sigma, valid


@njit(cache=True)
def cross_normal_map(vertices, ranges, skip_center, skip_gather):
    """Central-difference cross-product normals (comparison baseline).

    Requires all four in-image neighbours valid and unskipped; no
    curvature is defined, so sigma is reported as 0 for every valid pixel.
    """
    height, width = ranges.shape
    normals = np.zeros((height, width, 3))
    sigma = np.full((height, width), -1.0)
    valid = np.zeros((height, width), np.bool_)
    for v in range(height):
        for u in range(width):
            if ranges[v, u] <= 0.0 or skip_center[v, u]:
                continue
            if v - 1 < 0 or v + 1 >= height:
                continue
            left = (u - 1) % width
            right = (u + 1) % width
            ok = True
            for row, col in ((v, left), (v, right), (v - 1, u), (v + 1, u)):
                if ranges[row, col] <= 0.0 or skip_gather[row, col]:
                    ok = False
                    break
            if not ok:
                continue
            ax = vertices[v, right, 0] - vertices[v, left, 0]
            ay = vertices[v, right, 1] - vertices[v, left, 1]
            az = vertices[v, right, 2] - vertices[v, left, 2]
            bx = vertices[v + 1, u, 0] - vertices[v - 1, u, 0]
            by = vertices[v + 1, u, 1] - vertices[v - 1, u, 1]
            bz = vertices[v + 1, u, 2] - vertices[v - 1, u, 2]
            nx = ay * bz - az * by
            ny = az * bx - ax * bz
            nz = ax * by - ay * bx
            norm = np.sqrt(nx * nx + ny * ny + nz * nz)
            if norm < 1e-300:
                continue
            nx, ny, nz = _canonical_orient(nx / norm, ny / norm, nz / norm,
                                           vertices[v, u, 0],
                                           vertices[v, u, 1],
                                           vertices[v, u, 2])
            normals[v, u, 0] = nx
            normals[v, u, 1] = ny
            normals[v, u, 2] = nz
            sigma[v, u] = 0.0
            valid[v, u] = True
    return normals, sigma, valid


@njit(cache=True)
def ground_labels(vertices, ranges, z_lo, z_hi, reach, max_angle):
    """Ground/non-ground/invalid labels from a range image.

    Labels: 0 invalid, 1 non-ground, 2 ground.  A valid pixel is ground
    when its height lies in [z_lo, z_hi] and the slope angle against the
    nearest valid pixel above and below in its column (searching at most
    ``reach`` rows each way) stays below ``max_angle``; a missing
    neighbour passes, but a pixel with no neighbour at all stays
    non-ground.
    """
    height, width = ranges.shape
    labels = np.zeros((height, width), np.uint8)
    for u in range(width):
        for v in range(height):
            if ranges[v, u] <= 0.0:
                continue
            labels[v, u] = 1
            z = vertices[v, u, 2]
            if z < z_lo or z > z_hi:
                continue
            up = -1
            lo = v - reach
            if lo < 0:
                lo = 0
            for k in range(v - 1, lo - 1, -1):
                if ranges[k, u] > 0.0:
                    up = k
                    break
            down = -1
            hi = v + reach
            if hi > height - 1:
                hi = height - 1
            for k in range(v + 1, hi + 1):
                if ranges[k, u] > 0.0:
                    down = k
                    break
            if up < 0 and down < 0:
                continue
            ok = True
            for nb in (up, down):
                if nb < 0:
                    continue
                dx = vertices[nb, u, 0] - vertices[v, u, 0]
                dy = vertices[nb, u, 1] - vertices[v, u, 1]
                dz = vertices[nb, u, 2] - vertices[v, u, 2]
                angle = np.arctan2(abs(dz), np.sqrt(dx * dx + dy * dy))
                if angle >= max_angle:
                    ok = False
                    break
            if ok:
                labels[v, u] = 2
    return labels


@njit(cache=True)
def min_by_cell(cells, key, source, xs, ys, zs, n_cells):
    """Deterministic argmin over points sharing a cell.

    Winner per cell is the point with the smallest (key, source, x, y, z)
    tuple; returns an int64 winner index per cell with -1 for empty cells.
    The lexicographic tie-break makes the result independent of input
    order, so shuffled scans reduce to bit-identical maps.
    """
    best = np.full(n_cells, -1, np.int64)
    for i in range(cells.shape[0]):
        c = cells[i]
        j = best[c]
        if j < 0:
            best[c] = i
            continue
        ki = key[i]
        kj = key[j]
        if ki > kj:
            continue
        if ki < kj:
            best[c] = i
            continue
        si = source[i]
        sj = source[j]
        if si > sj:
            continue
        if si < sj:
            best[c] = i
            continue
        if xs[i] > xs[j]:
            continue
        if xs[i] < xs[j]:
            best[c] = i
            continue
        if ys[i] > ys[j]:
            continue
        if ys[i] < ys[j]:
            best[c] = i
            continue
        if zs[i] < zs[j]:
            best[c] = i
    return best


@njit(cache=True)
def min_by_cell_compact(cells, key, source, xs, ys, zs):
    """Packed deterministic argmin over points sharing a cell.

    Same winner rule as ``min_by_cell`` -- the smallest
    (key, source, x, y, z) tuple takes the cell -- but the result is
    returned packed as (occupied cells ascending, winner point index per
    cell), with no dense per-cell table, so the cost scales with the
    number of points rather than the grid area.  The winner rule is a
    total order, so the output is independent of input order.
    """
    m = cells.shape[0]
    out_cells = np.empty(m, np.int64)
    out_win = np.empty(m, np.int64)
    if m == 0:
        return out_cells[:0], out_win[:0]
    order = np.argsort(cells)
    k = -1
    for oi in range(m):
        i = order[oi]
        c = cells[i]
        if k < 0 or c != out_cells[k]:
            k += 1
            out_cells[k] = c
            out_win[k] = i
            continue
        j = out_win[k]
        ki = key[i]
        kj = key[j]
        if ki > kj:
            continue
        if ki < kj:
            out_win[k] = i
            continue
        si = source[i]
        sj = source[j]
        if si > sj:
            continue
        if si < sj:
            out_win[k] = i
            continue
        if xs[i] > xs[j]:
            continue
        if xs[i] < xs[j]:
            out_win[k] = i
            continue
        if ys[i] > ys[j]:
            continue
        if ys[i] < ys[j]:
            out_win[k] = i
            continue
        if zs[i] < zs[j]:
            out_win[k] = i
    return out_cells[: k + 1], out_win[: k + 1]


@njit(cache=True)
def _lex_orient(nx, ny, nz):
    """Flip a unit vector so its first nonzero component is positive."""
    s = nx
    if s == 0.0:
        s = ny
    if s == 0.0:
        s = nz
    if s < 0.0:
        return -nx, -ny, -nz
    return nx, ny, nz


@njit(cache=True)
def associate_spherical(
    src,
    rot,
    trans,
    m_vertices,
    m_ranges,
    m_normals,
    m_normal_valid,
    width,
    height,
    fov_up,
    fov,
    gate,
):
    """Point-to-plane pairs between warped scan vertices and the model image.

    Each source vertex is warped by (rot, trans), projected into the model
    image, and paired with the vertex/normal stored at the hit pixel.  A pair
    is kept when the pixel holds a valid vertex with a valid normal and the
    plane distance n.(q - v) passes the gate.  Returns packed arrays of the
    accepted pairs plus the accepted count; entries past the count are junk.
    """
    n = src.shape[0]
    warped = np.empty((n, 3), np.float64)
    model = np.empty((n, 3), np.float64)
    normal = np.empty((n, 3), np.float64)
    residual = np.empty(n, np.float64)
    index = np.empty(n, np.int64)
    count = 0
    for i in range(n):
        x = src[i, 0]
        y = src[i, 1]
        z = src[i, 2]
        qx = rot[0, 0] * x + rot[0, 1] * y + rot[0, 2] * z + trans[0]
        qy = rot[1, 0] * x + rot[1, 1] * y + rot[1, 2] * z + trans[1]
        qz = rot[2, 0] * x + rot[2, 1] * y + rot[2, 2] * z + trans[2]
        u, v, r = _spherical_pixel(qx, qy, qz, width, height, fov_up, fov)
        if r <= 0.0 or v < 0 or v >= height:
            continue
        if m_ranges[v, u] <= 0.0 or not m_normal_valid[v, u]:
            continue
        nx = m_normals[v, u, 0]
        ny = m_normals[v, u, 1]
        nz = m_normals[v, u, 2]
        e = (
            nx * (qx - m_vertices[v, u, 0])
            + ny * (qy - m_vertices[v, u, 1])
            + nz * (qz - m_vertices[v, u, 2])
        )
        if np.abs(e) > gate:
            continue
        warped[count, 0] = qx
        warped[count, 1] = qy
        warped[count, 2] = qz
        model[count, 0] = m_vertices[v, u, 0]
        model[count, 1] = m_vertices[v, u, 1]
        model[count, 2] = m_vertices[v, u, 2]
        normal[count, 0] = nx
        normal[count, 1] = ny
        normal[count, 2] = nz
        residual[count] = e
        index[count] = i
        count += 1
    return warped, model, normal, residual, index, count


@njit(cache=True)
def _patch_plane_normal(
    slots, p_vertices, rows, cols, center, cu, cv, patch_half, min_gap, neighbors
):
    """Plane normal from the ``neighbors`` closest occupied cells around (cu, cv).

    The grid is given packed: ``slots`` maps a flat cell index to its row in
    ``p_vertices`` (-1 when empty) and ``center`` is the centre cell's row.
    Candidates live in a (2*patch_half+1)^2 cell patch and are ranked by 3D
    distance to the centre cell's vertex with the flat cell index as
    tie-break, so the selected set is independent of visit order.  The patch
    is walked in growing Chebyshev rings and abandoned once the ring's
    distance lower bound (min_gap per ring step) cannot beat the current
    worst keeper.  Returns (nx, ny, nz, ok).
    """
    px = p_vertices[center, 0]
    py = p_vertices[center, 1]
    pz = p_vertices[center, 2]
    best_d = np.empty(neighbors, np.float64)
    best_i = np.empty(neighbors, np.int64)
    best_p = np.empty((neighbors, 3), np.float64)
    found = 0
    for ring in range(patch_half + 1):
        if found >= neighbors:
            # A vertex in Chebyshev ring k sits at least (k - 1) cell pitches
            # from any point of the centre cell, so that is the only distance
            # floor the early exit may rely on.
            gap = min_gap * (ring - 1)
            if gap * gap > best_d[neighbors - 1]:
                break
        for dv in range(-ring, ring + 1):
            v = cv + dv
            if v < 0 or v >= rows:
                continue
            edge = dv == -ring or dv == ring
            for du in range(-ring, ring + 1):
                if not edge and du != -ring and du != ring:
                    continue
                u = cu + du
                if u < 0 or u >= cols:
                    continue
                flat = v * cols + u
                s = slots[flat]
                if s < 0:
                    continue
                dx = p_vertices[s, 0] - px
                dy = p_vertices[s, 1] - py
                dz = p_vertices[s, 2] - pz
                d2 = dx * dx + dy * dy + dz * dz
                if found == neighbors:
                    worst = neighbors - 1
                    if d2 > best_d[worst]:
                        continue
                    if d2 == best_d[worst] and flat > best_i[worst]:
                        continue
                else:
                    found += 1
                j = found - 1
                while j > 0:
                    k = j - 1
                    if d2 > best_d[k]:
                        break
                    if d2 == best_d[k] and flat > best_i[k]:
                        break
                    best_d[j] = best_d[k]
                    best_i[j] = best_i[k]
                    best_p[j, 0] = best_p[k, 0]
                    best_p[j, 1] = best_p[k, 1]
                    best_p[j, 2] = best_p[k, 2]
                    j -= 1
                best_d[j] = d2
                best_i[j] = flat
                best_p[j, 0] = p_vertices[s, 0]
                best_p[j, 1] = p_vertices[s, 1]
                best_p[j, 2] = p_vertices[s, 2]
    if found < neighbors:
        return 0.0, 0.0, 0.0, False
    ex = 0.0
    ey = 0.0
    ez = 0.0
    for j in range(found):
        ex += best_p[j, 0]
        ey += best_p[j, 1]
        ez += best_p[j, 2]
    ex /= found
    ey /= found
    ez /= found
    m00 = 0.0
    m01 = 0.0
    m02 = 0.0
    m11 = 0.0
    m12 = 0.0
    m22 = 0.0
    for j in range(found):
        dx = best_p[j, 0] - ex
        dy = best_p[j, 1] - ey
        dz = best_p[j, 2] - ez
        m00 += dx * dx
        m01 += dx * dy
        m02 += dx * dz
        m11 += dy * dy
        m12 += dy * dz
        m22 += dz * dz
    m00 /= found
    m01 /= found
    m02 /= found
    m11 /= found
    m12 /= found
    m22 /= found
    lam1, lam2, lam3 = _sym3_eigenvalues(m00, m01, m02, m11, m12, m22)
    if lam1 <= 1e-30 or lam2 <= 1e-9 * lam1:
        return 0.0, 0.0, 0.0, False
    nx, ny, nz, ok = _smallest_eigenvector(m00, m01, m02, m11, m12, m22, lam3)
    if not ok:
        return 0.0, 0.0, 0.0, False
    nx, ny, nz = _lex_orient(nx, ny, nz)
    return nx, ny, nz, True


@njit(cache=True)
def associate_bev(
    src,
    rot,
    trans,
    slots,
    p_vertices,
    rows,
    cols,
    half_x,
    half_y,
    res_x,
    res_y,
    patch_half,
    neighbors,
    gate,
    cache_normal,
    cache_state,
):
    """Point-to-plane pairs between warped ground vertices and the top-down map.

    The map arrives packed: ``slots`` maps a flat cell index to a row of
    ``p_vertices`` (-1 for empty cells).  Each source vertex is warped,
    binned into the model grid, and paired with the vertex stored at the hit
    cell.  The plane normal at that cell comes from a least-squares fit of
    the ``neighbors`` closest occupied cells in the surrounding patch; fits
    are memoised per packed row in (cache_normal, cache_state) with state
    0 = unknown, 1 = fitted, 2 = degenerate, since the model is frozen for
    the duration of one alignment.  Acceptance requires an occupied hit
    cell, a non-degenerate fit, and a gated plane distance.
    """
    n = src.shape[0]
    warped = np.empty((n, 3), np.float64)
    model = np.empty((n, 3), np.float64)
    normal = np.empty((n, 3), np.float64)
    residual = np.empty(n, np.float64)
    index = np.empty(n, np.int64)
    min_gap = res_x if res_x < res_y else res_y
    count = 0
    for i in range(n):
        x = src[i, 0]
        y = src[i, 1]
        z = src[i, 2]
        qx = rot[0, 0] * x + rot[0, 1] * y + rot[0, 2] * z + trans[0]
        qy = rot[1, 0] * x + rot[1, 1] * y + rot[1, 2] * z + trans[1]
        qz = rot[2, 0] * x + rot[2, 1] * y + rot[2, 2] * z + trans[2]
        cu, cv, _, inside = _bev_cell(qx, qy, qz, half_x, half_y, res_x, res_y)
        if not inside:
            continue
        s0 = slots[cv * cols + cu]
        if s0 < 0:
            continue
        state = cache_state[s0]
        if state == 0:
            nx, ny, nz, ok = _patch_plane_normal(
                slots, p_vertices, rows, cols, s0, cu, cv,
                patch_half, min_gap, neighbors,
            )
            if ok:
                cache_state[s0] = 1
                cache_normal[s0, 0] = nx
                cache_normal[s0, 1] = ny
                cache_normal[s0, 2] = nz
                state = 1
            else:
                cache_state[s0] = 2
                state = 2
        if state == 2:
            continue
        nx = cache_normal[s0, 0]
        ny = cache_normal[s0, 1]
        nz = cache_normal[s0, 2]
        e = (
            nx * (qx - p_vertices[s0, 0])
            + ny * (qy - p_vertices[s0, 1])
            + nz * (qz - p_vertices[s0, 2])
        )
        if np.abs(e) > gate:
            continue
        warped[count, 0] = qx
        warped[count, 1] = qy
        warped[count, 2] = qz
        model[count, 0] = p_vertices[s0, 0]
        model[count, 1] = p_vertices[s0, 1]
        model[count, 2] = p_vertices[s0, 2]
        normal[count, 0] = nx
        normal[count, 1] = ny
        normal[count, 2] = nz
        residual[count] = e
        index[count] = i
        count += 1
    return warped, model, normal, residual, index, count


@njit(cache=True)
def normal_equations(warped, normal, residual, domain, weight):
    """Weighted Gauss-Newton system for point-to-plane rows.

    Row i is J = [n | q x n] with residual e = n.(q - v); its contribution is
    scaled once by the domain weight c (``weight`` for domain 0, 1 - weight
    for domain 1) on both sides: H += c J J^T, b += c J e.  Also returns the
    matching quadratic cost sum(c e^2).
    """
    h = np.zeros((6, 6), np.float64)
    b = np.zeros(6, np.float64)
    cost = 0.0
    row = np.empty(6, np.float64)
    n = warped.shape[0]
    for i in range(n):
        nx = normal[i, 0]
        ny = normal[i, 1]
        nz = normal[i, 2]
        qx = warped[i, 0]
        qy = warped[i, 1]
        qz = warped[i, 2]
        row[0] = nx
        row[1] = ny
        row[2] = nz
        row[3] = qy * nz - qz * ny
        row[4] = qz * nx - qx * nz
        row[5] = qx * ny - qy * nx
        c = weight if domain[i] == 0 else 1.0 - weight
        e = residual[i]
        cost += c * e * e
        ce = c * e
        for a in range(6):
            b[a] += ce * row[a]
            ca = c * row[a]
            for bb in range(a, 6):
                h[a, bb] += ca * row[bb]
    for a in range(6):
        for bb in range(a):
            h[a, bb] = h[bb, a]
    return h, b, cost
