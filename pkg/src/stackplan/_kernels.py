"""Compiled inner loops: box-box contact generation and the impulse solver.

Everything here works on flat float64 arrays so the same code serves the
geometric queries in ``scene_model`` and the stepping loop in ``physics``.
Quaternions are stored as (w, x, y, z).
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

KIND_DYNAMIC = 0
KIND_STATIC = 1
KIND_DRIVEN = 2
KIND_REMOVED = 3

STATUS_DONE = 0
STATUS_CLEARED = 1
STATUS_EXPLODED = 2
STATUS_RESTED = 3

# params vector layout
P_GRAVITY = 0
P_DT = 1
P_MU = 2
P_MU_SPIN = 3
P_SLOP = 4
P_PEN_ALLOW = 5
P_BETA = 6
P_ITERS = 7
P_POS_ITERS = 8
P_EXTRACT_SPEED = 9
P_REST_LIN = 10
P_REST_ANG = 11
P_MAX_SPEED = 12
P_WARM_TOL = 13
N_PARAMS = 14

MAX_RAW_POINTS = 8


@njit(cache=True)
def quat_to_mat(q, out):
    w, x, y, z = q[0], q[1], q[2], q[3]
    n = w * w + x * x + y * y + z * z
    s = 2.0 / n if n > 0.0 else 0.0
    out[0, 0] = 1.0 - s * (y * y + z * z)
    out[0, 1] = s * (x * y - w * z)
    out[0, 2] = s * (x * z + w * y)
    out[1, 0] = s * (x * y + w * z)
    out[1, 1] = 1.0 - s * (x * x + z * z)
    out[1, 2] = s * (y * z - w * x)
    out[2, 0] = s * (x * z - w * y)
    out[2, 1] = s * (y * z + w * x)
    out[2, 2] = 1.0 - s * (x * x + y * y)


@njit(cache=True)
def _clip_plane(src, n, dst, cx, cy, cz, ax, ay, az, h):
    """Sutherland-Hodgman against the half-space (p - c).a <= h."""
    m = 0
    for k in range(n):
        k2 = k + 1 if k + 1 < n else 0
        dp = (src[k, 0] - cx) * ax + (src[k, 1] - cy) * ay + (src[k, 2] - cz) * az - h
        dq = (src[k2, 0] - cx) * ax + (src[k2, 1] - cy) * ay + (src[k2, 2] - cz) * az - h
        if dp <= 0.0:
            dst[m, 0] = src[k, 0]
            dst[m, 1] = src[k, 1]
            dst[m, 2] = src[k, 2]
            m += 1
        if (dp < 0.0 and dq > 0.0) or (dp > 0.0 and dq < 0.0):
            t = dp / (dp - dq)
            dst[m, 0] = src[k, 0] + t * (src[k2, 0] - src[k, 0])
            dst[m, 1] = src[k, 1] + t * (src[k2, 1] - src[k, 1])
            dst[m, 2] = src[k, 2] + t * (src[k2, 2] - src[k, 2])
            m += 1
    return m


@njit(cache=True)
def _face_contact(pR, RR, hR, pI, RI, hI, i, sgn, margin, pts, seps, buf_a, buf_b):
    nx = sgn * RR[0, i]
    ny = sgn * RR[1, i]
    nz = sgn * RR[2, i]
    # incident face: the face of I most anti-parallel to the reference normal
    best_k = 0
    best_d = -1.0
    best_dot = 0.0
    for k in range(3):
        dk = RI[0, k] * nx + RI[1, k] * ny + RI[2, k] * nz
        if abs(dk) > best_d:
            best_d = abs(dk)
            best_k = k
            best_dot = dk
    sk = -1.0 if best_dot > 0.0 else 1.0
    k = best_k
    k1 = (k + 1) % 3
    k2 = (k + 2) % 3
    cx = pI[0] + sk * hI[k] * RI[0, k]
    cy = pI[1] + sk * hI[k] * RI[1, k]
    cz = pI[2] + sk * hI[k] * RI[2, k]
    e1x = hI[k1] * RI[0, k1]
    e1y = hI[k1] * RI[1, k1]
    e1z = hI[k1] * RI[2, k1]
    e2x = hI[k2] * RI[0, k2]
    e2y = hI[k2] * RI[1, k2]
    e2z = hI[k2] * RI[2, k2]
    buf_a[0, 0] = cx + e1x + e2x
    buf_a[0, 1] = cy + e1y + e2y
    buf_a[0, 2] = cz + e1z + e2z
    buf_a[1, 0] = cx - e1x + e2x
    buf_a[1, 1] = cy - e1y + e2y
    buf_a[1, 2] = cz - e1z + e2z
    buf_a[2, 0] = cx - e1x - e2x
    buf_a[2, 1] = cy - e1y - e2y
    buf_a[2, 2] = cz - e1z - e2z
    buf_a[3, 0] = cx + e1x - e2x
    buf_a[3, 1] = cy + e1y - e2y
    buf_a[3, 2] = cz + e1z - e2z

    i1 = (i + 1) % 3
    i2 = (i + 2) % 3
    rcx = pR[0] + nx * hR[i]
    rcy = pR[1] + ny * hR[i]
    rcz = pR[2] + nz * hR[i]
    m = 4
    m = _clip_plane(buf_a, m, buf_b, rcx, rcy, rcz, RR[0, i1], RR[1, i1], RR[2, i1], hR[i1])
    m = _clip_plane(buf_b, m, buf_a, rcx, rcy, rcz, -RR[0, i1], -RR[1, i1], -RR[2, i1], hR[i1])
    m = _clip_plane(buf_a, m, buf_b, rcx, rcy, rcz, RR[0, i2], RR[1, i2], RR[2, i2], hR[i2])
    m = _clip_plane(buf_b, m, buf_a, rcx, rcy, rcz, -RR[0, i2], -RR[1, i2], -RR[2, i2], hR[i2])
    count = 0
    for c in range(m):
        s = (buf_a[c, 0] - rcx) * nx + (buf_a[c, 1] - rcy) * ny + (buf_a[c, 2] - rcz) * nz
        if s <= margin and count < MAX_RAW_POINTS:
            pts[count, 0] = buf_a[c, 0] - s * nx
            pts[count, 1] = buf_a[c, 1] - s * ny
            pts[count, 2] = buf_a[c, 2] - s * nz
            seps[count] = s
            count += 1
    return count


@njit(cache=True)
def box_box(pa, Ra, ha, pb, Rb, hb, margin, pts, seps, normal):
    """Contact points between two oriented boxes.

    Returns the number of raw points (up to 8) written to ``pts`` with their
    signed separations in ``seps`` (negative means penetration); ``normal``
    receives the unit normal pointing from a to b.  Zero means a separating
    axis wider than ``margin`` exists.
    """
    dx = pb[0] - pa[0]
    dy = pb[1] - pa[1]
    dz = pb[2] - pa[2]
    C = np.empty((3, 3))
    absC = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            C[i, j] = Ra[0, i] * Rb[0, j] + Ra[1, i] * Rb[1, j] + Ra[2, i] * Rb[2, j]
            absC[i, j] = abs(C[i, j]) + 1e-12
    best_a = -1
    sep_a = -1e30
    for i in range(3):
        da = Ra[0, i] * dx + Ra[1, i] * dy + Ra[2, i] * dz
        rb = hb[0] * absC[i, 0] + hb[1] * absC[i, 1] + hb[2] * absC[i, 2]
        s = abs(da) - ha[i] - rb
        if s > margin:
            return 0
        if s > sep_a:
            sep_a = s
            best_a = i
    best_b = -1
    sep_b = -1e30
    for j in range(3):
        db = Rb[0, j] * dx + Rb[1, j] * dy + Rb[2, j] * dz
        ra = ha[0] * absC[0, j] + ha[1] * absC[1, j] + ha[2] * absC[2, j]
        s = abs(db) - hb[j] - ra
        if s > margin:
            return 0
        if s > sep_b:
            sep_b = s
            best_b = j
    best_ei = -1
    best_ej = -1
    sep_e = -1e30
    ex = 0.0
    ey = 0.0
    ez = 0.0
    for i in range(3):
        for j in range(3):
            lx = Ra[1, i] * Rb[2, j] - Ra[2, i] * Rb[1, j]
            ly = Ra[2, i] * Rb[0, j] - Ra[0, i] * Rb[2, j]
            lz = Ra[0, i] * Rb[1, j] - Ra[1, i] * Rb[0, j]
            ln = math.sqrt(lx * lx + ly * ly + lz * lz)
            if ln < 1e-5:
                continue
            lx /= ln
            ly /= ln
            lz /= ln
            ra = 0.0
            rb = 0.0
            for k in range(3):
                ra += ha[k] * abs(Ra[0, k] * lx + Ra[1, k] * ly + Ra[2, k] * lz)
                rb += hb[k] * abs(Rb[0, k] * lx + Rb[1, k] * ly + Rb[2, k] * lz)
            dl = dx * lx + dy * ly + dz * lz
            s = abs(dl) - ra - rb
            if s > margin:
                return 0
            if s > sep_e:
                sep_e = s
                best_ei = i
                best_ej = j
                if dl < 0.0:
                    ex, ey, ez = -lx, -ly, -lz
                else:
                    ex, ey, ez = lx, ly, lz

    rel = 0.98
    absol = 0.0005
    use_b = sep_b > rel * sep_a + absol
    face_sep = sep_b if use_b else sep_a
    buf_a = np.empty((16, 3))
    buf_b = np.empty((16, 3))
    if best_ei >= 0 and sep_e > rel * face_sep + absol:
        # edge-edge: single point midway between the closest points
        i = best_ei
        j = best_ej
        cax = pa[0]
        cay = pa[1]
        caz = pa[2]
        for k in range(3):
            if k == i:
                continue
            d = Ra[0, k] * ex + Ra[1, k] * ey + Ra[2, k] * ez
            sg = 1.0 if d > 0.0 else -1.0
            cax += sg * ha[k] * Ra[0, k]
            cay += sg * ha[k] * Ra[1, k]
            caz += sg * ha[k] * Ra[2, k]
        cbx = pb[0]
        cby = pb[1]
        cbz = pb[2]
        for k in range(3):
            if k == j:
                continue
            d = Rb[0, k] * ex + Rb[1, k] * ey + Rb[2, k] * ez
            sg = 1.0 if d > 0.0 else -1.0
            cbx -= sg * hb[k] * Rb[0, k]
            cby -= sg * hb[k] * Rb[1, k]
            cbz -= sg * hb[k] * Rb[2, k]
        uax, uay, uaz = Ra[0, i], Ra[1, i], Ra[2, i]
        ubx, uby, ubz = Rb[0, j], Rb[1, j], Rb[2, j]
        px = cbx - cax
        py = cby - cay
        pz = cbz - caz
        uaub = uax * ubx + uay * uby + uaz * ubz
        q1 = uax * px + uay * py + uaz * pz
        q2 = ubx * px + uby * py + ubz * pz
        den = 1.0 - uaub * uaub
        alpha = 0.0
        beta = 0.0
        if den > 1e-12:
            alpha = (q1 - uaub * q2) / den
            beta = (uaub * q1 - q2) / den
        alpha = min(max(alpha, -ha[i]), ha[i])
        beta = min(max(beta, -hb[j]), hb[j])
        pts[0, 0] = 0.5 * (cax + alpha * uax + cbx + beta * ubx)
        pts[0, 1] = 0.5 * (cay + alpha * uay + cby + beta * uby)
        pts[0, 2] = 0.5 * (caz + alpha * uaz + cbz + beta * ubz)
        seps[0] = sep_e
        normal[0] = ex
        normal[1] = ey
        normal[2] = ez
        return 1

    if use_b:
        db = Rb[0, best_b] * dx + Rb[1, best_b] * dy + Rb[2, best_b] * dz
        # reference is b, its normal must point from b toward a
        sgn = -1.0 if db > 0.0 else 1.0
        count = _face_contact(pb, Rb, hb, pa, Ra, ha, best_b, sgn, margin, pts, seps, buf_a, buf_b)
        normal[0] = -sgn * Rb[0, best_b]
        normal[1] = -sgn * Rb[1, best_b]
        normal[2] = -sgn * Rb[2, best_b]
        return count
    da = Ra[0, best_a] * dx + Ra[1, best_a] * dy + Ra[2, best_a] * dz
    sgn = -1.0 if da < 0.0 else 1.0
    count = _face_contact(pa, Ra, ha, pb, Rb, hb, best_a, sgn, margin, pts, seps, buf_a, buf_b)
    normal[0] = sgn * Ra[0, best_a]
    normal[1] = sgn * Ra[1, best_a]
    normal[2] = sgn * Ra[2, best_a]
    return count


@njit(cache=True)
def sat_separation(pa, Ra, ha, pb, Rb, hb):
    """Largest separation over the 15 candidate axes (negative = overlap depth)."""
    dx = pb[0] - pa[0]
    dy = pb[1] - pa[1]
    dz = pb[2] - pa[2]
    best = -1e30
    for i in range(3):
        for side in range(2):
            R = Ra if side == 0 else Rb
            lx, ly, lz = R[0, i], R[1, i], R[2, i]
            ra = 0.0
            rb = 0.0
            for k in range(3):
                ra += ha[k] * abs(Ra[0, k] * lx + Ra[1, k] * ly + Ra[2, k] * lz)
                rb += hb[k] * abs(Rb[0, k] * lx + Rb[1, k] * ly + Rb[2, k] * lz)
            s = abs(dx * lx + dy * ly + dz * lz) - ra - rb
            if s > best:
                best = s
    for i in range(3):
        for j in range(3):
            lx = Ra[1, i] * Rb[2, j] - Ra[2, i] * Rb[1, j]
            ly = Ra[2, i] * Rb[0, j] - Ra[0, i] * Rb[2, j]
            lz = Ra[0, i] * Rb[1, j] - Ra[1, i] * Rb[0, j]
            ln = math.sqrt(lx * lx + ly * ly + lz * lz)
            if ln < 1e-5:
                continue
            lx /= ln
            ly /= ln
            lz /= ln
            ra = 0.0
            rb = 0.0
            for k in range(3):
                ra += ha[k] * abs(Ra[0, k] * lx + Ra[1, k] * ly + Ra[2, k] * lz)
                rb += hb[k] * abs(Rb[0, k] * lx + Rb[1, k] * ly + Rb[2, k] * lz)
            s = abs(dx * lx + dy * ly + dz * lz) - ra - rb
            if s > best:
                best = s
    return best


@njit(cache=True)
def reduce_points(pts, seps, n, normal, keep):
    """Pick at most four of ``n`` raw points spanning the largest area."""
    if n <= 4:
        for k in range(n):
            keep[k] = k
        return n
    i0 = 0
    for k in range(1, n):
        if seps[k] < seps[i0]:
            i0 = k
    i1 = i0
    best = -1.0
    for k in range(n):
        d = 0.0
        for c in range(3):
            d += (pts[k, c] - pts[i0, c]) ** 2
        if d > best:
            best = d
            i1 = k
    ux = pts[i1, 0] - pts[i0, 0]
    uy = pts[i1, 1] - pts[i0, 1]
    uz = pts[i1, 2] - pts[i0, 2]
    i2 = -1
    i3 = -1
    amax = 0.0
    amin = 0.0
    for k in range(n):
        vx = pts[k, 0] - pts[i0, 0]
        vy = pts[k, 1] - pts[i0, 1]
        vz = pts[k, 2] - pts[i0, 2]
        cx = uy * vz - uz * vy
        cy = uz * vx - ux * vz
        cz = ux * vy - uy * vx
        a = cx * normal[0] + cy * normal[1] + cz * normal[2]
        if a > amax:
            amax = a
            i2 = k
        if a < amin:
            amin = a
            i3 = k
    m = 0
    keep[m] = i0
    m += 1
    if i1 != i0:
        keep[m] = i1
        m += 1
    if i2 >= 0:
        keep[m] = i2
        m += 1
    if i3 >= 0:
        keep[m] = i3
        m += 1
    return m


@njit(cache=True)
def _tangents(nx, ny, nz):
    if abs(nx) < 0.57735:
        # n x e_x
        tx, ty, tz = 0.0, nz, -ny
    else:
        # n x e_y
        tx, ty, tz = -nz, 0.0, nx
    ln = math.sqrt(tx * tx + ty * ty + tz * tz)
    tx /= ln
    ty /= ln
    tz /= ln
    bx = ny * tz - nz * ty
    by = nz * tx - nx * tz
    bz = nx * ty - ny * tx
    return tx, ty, tz, bx, by, bz


@njit(cache=True)
def _inv_mass_along(I, rx, ry, rz, dx, dy, dz):
    # (r x d) . I^-1 (r x d)
    cx = ry * dz - rz * dy
    cy = rz * dx - rx * dz
    cz = rx * dy - ry * dx
    ix = I[0, 0] * cx + I[0, 1] * cy + I[0, 2] * cz
    iy = I[1, 0] * cx + I[1, 1] * cy + I[1, 2] * cz
    iz = I[2, 0] * cx + I[2, 1] * cy + I[2, 2] * cz
    return cx * ix + cy * iy + cz * iz


@njit(cache=True)
def _apply(v, w, b, im3, I, rx, ry, rz, px, py, pz, sign):
    v[b, 0] += sign * px * im3[b, 0]
    v[b, 1] += sign * py * im3[b, 1]
    v[b, 2] += sign * pz * im3[b, 2]
    cx = ry * pz - rz * py
    cy = rz * px - rx * pz
    cz = rx * py - ry * px
    w[b, 0] += sign * (I[0, 0] * cx + I[0, 1] * cy + I[0, 2] * cz)
    w[b, 1] += sign * (I[1, 0] * cx + I[1, 1] * cy + I[1, 2] * cz)
    w[b, 2] += sign * (I[2, 0] * cx + I[2, 1] * cy + I[2, 2] * cz)


@njit(cache=True)
def _apply_angular(w, b, I, ax, ay, az, sign):
    w[b, 0] += sign * (I[0, 0] * ax + I[0, 1] * ay + I[0, 2] * az)
    w[b, 1] += sign * (I[1, 0] * ax + I[1, 1] * ay + I[1, 2] * az)
    w[b, 2] += sign * (I[2, 0] * ax + I[2, 1] * ay + I[2, 2] * az)


@njit(cache=True)
def _rel_normal_velocity(v, w, a, b, rax, ray, raz, rbx, rby, rbz, nx, ny, nz):
    vax = v[a, 0] + w[a, 1] * raz - w[a, 2] * ray
    vay = v[a, 1] + w[a, 2] * rax - w[a, 0] * raz
    vaz = v[a, 2] + w[a, 0] * ray - w[a, 1] * rax
    vbx = v[b, 0] + w[b, 1] * rbz - w[b, 2] * rby
    vby = v[b, 1] + w[b, 2] * rbx - w[b, 0] * rbz
    vbz = v[b, 2] + w[b, 0] * rby - w[b, 1] * rbx
    return (vbx - vax) * nx + (vby - vay) * ny + (vbz - vaz) * nz


@njit(cache=True, nogil=True)
def run_steps(pos, quat, vel, angvel, half, inv_mass, inv_inertia, kind, params,
              forces, nsteps, stop_on_clear, rest_steps,
              wc_pair, wc_local, wc_imp, wc_count,
              hist_speed, hist_spin, hist_pos, hist_quat):
    """Advance the bodies ``nsteps`` fixed steps.

    ``forces`` is either empty or shaped (nsteps, n, 3) and applied at the
    centroids of dynamic bodies.  History arrays are filled per step when they
    have at least ``nsteps`` rows (pass zero-row arrays to skip recording).
    Returns (steps_done, status).
    """
    n = pos.shape[0]
    g = params[P_GRAVITY]
    dt = params[P_DT]
    mu = params[P_MU]
    mu_spin = params[P_MU_SPIN]
    slop = params[P_SLOP]
    pen_allow = params[P_PEN_ALLOW]
    beta = params[P_BETA]
    iters = int(params[P_ITERS])
    pos_iters = int(params[P_POS_ITERS])
    speed = params[P_EXTRACT_SPEED]
    rest_lin = params[P_REST_LIN]
    rest_ang = params[P_REST_ANG]
    max_speed = params[P_MAX_SPEED]
    warm_tol2 = params[P_WARM_TOL] ** 2

    cap = wc_pair.shape[0]
    R = np.zeros((n, 3, 3))
    Iw = np.zeros((n, 3, 3))
    ext = np.zeros((n, 3))
    im3 = np.zeros((n, 3))
    raw_pts = np.empty((MAX_RAW_POINTS, 3))
    raw_seps = np.empty(MAX_RAW_POINTS)
    nrm = np.empty(3)
    keep = np.empty(4, dtype=np.int64)

    c_a = np.empty(cap, dtype=np.int64)
    c_b = np.empty(cap, dtype=np.int64)
    c_r = np.empty((cap, 6))
    c_n = np.empty((cap, 3))
    c_t = np.empty((cap, 6))
    c_sep = np.empty(cap)
    c_f = np.empty(cap)
    c_m = np.empty((cap, 4))
    c_l = np.empty((cap, 5))
    pv = np.zeros((n, 3))
    pw = np.zeros((n, 3))

    record = hist_speed.shape[0] >= nsteps
    record_q = hist_quat.shape[0] >= nsteps
    has_forces = forces.shape[0] >= nsteps
    rest_count = 0

    for step in range(nsteps):
        has_driven = False
        # external forces and gravity
        for b in range(n):
            if kind[b] == KIND_DYNAMIC:
                vel[b, 1] -= g * dt
                if has_forces:
                    vel[b, 0] += dt * forces[step, b, 0] * inv_mass[b]
                    vel[b, 1] += dt * forces[step, b, 1] * inv_mass[b]
                    vel[b, 2] += dt * forces[step, b, 2] * inv_mass[b]
            elif kind[b] == KIND_DRIVEN:
                has_driven = True
                vel[b, 0] = 0.0
                vel[b, 1] = 0.0
                vel[b, 2] = -speed
                angvel[b, 0] = 0.0
                angvel[b, 1] = 0.0
                angvel[b, 2] = 0.0

        for b in range(n):
            if kind[b] == KIND_DYNAMIC:
                im3[b, 0] = inv_mass[b]
                im3[b, 1] = inv_mass[b]
                im3[b, 2] = inv_mass[b]
            else:
                im3[b, 0] = 0.0
                im3[b, 1] = 0.0
                im3[b, 2] = 0.0
            quat_to_mat(quat[b], R[b])
            for r in range(3):
                ext[b, r] = (abs(R[b, r, 0]) * half[b, 0] + abs(R[b, r, 1]) * half[b, 1]
                             + abs(R[b, r, 2]) * half[b, 2])
            if kind[b] == KIND_DYNAMIC:
                for r in range(3):
                    for c in range(3):
                        acc = 0.0
                        for k in range(3):
                            acc += R[b, r, k] * inv_inertia[b, k] * R[b, c, k]
                        Iw[b, r, c] = acc
            else:
                for r in range(3):
                    for c in range(3):
                        Iw[b, r, c] = 0.0

        # narrow phase
        nc = 0
        for a in range(n):
            if kind[a] == KIND_REMOVED:
                continue
            for b in range(a + 1, n):
                if kind[b] == KIND_REMOVED:
                    continue
                if kind[a] != KIND_DYNAMIC and kind[b] != KIND_DYNAMIC:
                    continue
                overlap = True
                for r in range(3):
                    if abs(pos[a, r] - pos[b, r]) > ext[a, r] + ext[b, r] + slop:
                        overlap = False
                        break
                if not overlap:
                    continue
                m = box_box(pos[a], R[a], half[a], pos[b], R[b], half[b], slop,
                            raw_pts, raw_seps, nrm)
                if m == 0:
                    continue
                m2 = reduce_points(raw_pts, raw_seps, m, nrm, keep)
                for kk in range(m2):
                    if nc >= cap:
                        break
                    k = keep[kk]
                    c_a[nc] = a
                    c_b[nc] = b
                    c_n[nc, 0] = nrm[0]
                    c_n[nc, 1] = nrm[1]
                    c_n[nc, 2] = nrm[2]
                    for c in range(3):
                        c_r[nc, c] = raw_pts[k, c] - pos[a, c]
                        c_r[nc, 3 + c] = raw_pts[k, c] - pos[b, c]
                    c_sep[nc] = raw_seps[k]
                    nc += 1

        # prepare, warm start
        for c in range(nc):
            a = c_a[c]
            b = c_b[c]
            nx, ny, nz = c_n[c, 0], c_n[c, 1], c_n[c, 2]
            rax, ray, raz = c_r[c, 0], c_r[c, 1], c_r[c, 2]
            rbx, rby, rbz = c_r[c, 3], c_r[c, 4], c_r[c, 5]
            t1x, t1y, t1z, t2x, t2y, t2z = _tangents(nx, ny, nz)
            c_t[c, 0] = t1x
            c_t[c, 1] = t1y
            c_t[c, 2] = t1z
            c_t[c, 3] = t2x
            c_t[c, 4] = t2y
            c_t[c, 5] = t2z
            ixx = im3[a, 0] + im3[b, 0]
            iyy = im3[a, 1] + im3[b, 1]
            izz = im3[a, 2] + im3[b, 2]
            kn = ixx * nx * nx + iyy * ny * ny + izz * nz * nz + \
                _inv_mass_along(Iw[a], rax, ray, raz, nx, ny, nz) + \
                _inv_mass_along(Iw[b], rbx, rby, rbz, nx, ny, nz)
            k1 = ixx * t1x * t1x + iyy * t1y * t1y + izz * t1z * t1z + \
                _inv_mass_along(Iw[a], rax, ray, raz, t1x, t1y, t1z) + \
                _inv_mass_along(Iw[b], rbx, rby, rbz, t1x, t1y, t1z)
            k2 = ixx * t2x * t2x + iyy * t2y * t2y + izz * t2z * t2z + \
                _inv_mass_along(Iw[a], rax, ray, raz, t2x, t2y, t2z) + \
                _inv_mass_along(Iw[b], rbx, rby, rbz, t2x, t2y, t2z)
            ks = 0.0
            for r in range(3):
                for cc in range(3):
                    ks += c_n[c, r] * (Iw[a, r, cc] + Iw[b, r, cc]) * c_n[c, cc]
            # the gripper carries a driven box and slides it out without
            # dragging what it touches; only boxes resting on it ride along
            c_f[c] = mu
            if kind[a] == KIND_DRIVEN and ny <= 0.7:
                c_f[c] = 0.0
            if kind[b] == KIND_DRIVEN and ny >= -0.7:
                c_f[c] = 0.0
            c_m[c, 0] = 1.0 / kn if kn > 0.0 else 0.0
            c_m[c, 1] = 1.0 / k1 if k1 > 0.0 else 0.0
            c_m[c, 2] = 1.0 / k2 if k2 > 0.0 else 0.0
            c_m[c, 3] = 1.0 / ks if ks > 1e-12 else 0.0
            for r in range(5):
                c_l[c, r] = 0.0
            # match against last step's contacts in a's body frame
            lx = R[a, 0, 0] * rax + R[a, 1, 0] * ray + R[a, 2, 0] * raz
            ly = R[a, 0, 1] * rax + R[a, 1, 1] * ray + R[a, 2, 1] * raz
            lz = R[a, 0, 2] * rax + R[a, 1, 2] * ray + R[a, 2, 2] * raz
            best = -1
            bestd = warm_tol2
            for o in range(wc_count[0]):
                if wc_pair[o, 0] != a or wc_pair[o, 1] != b:
                    continue
                d2 = ((wc_local[o, 0] - lx) ** 2 + (wc_local[o, 1] - ly) ** 2
                      + (wc_local[o, 2] - lz) ** 2)
                if d2 < bestd:
                    bestd = d2
                    best = o
            if best >= 0:
                ln_ = wc_imp[best, 0]
                fx, fy, fz = wc_imp[best, 1], wc_imp[best, 2], wc_imp[best, 3]
                lt1 = fx * t1x + fy * t1y + fz * t1z
                lt2 = fx * t2x + fy * t2y + fz * t2z
                lim = c_f[c] * ln_
                lt1 = min(max(lt1, -lim), lim)
                lt2 = min(max(lt2, -lim), lim)
                ls = wc_imp[best, 4]
                lims = mu_spin * ln_ * (c_f[c] > 0.0)
                ls = min(max(ls, -lims), lims)
                c_l[c, 0] = ln_
                c_l[c, 1] = lt1
                c_l[c, 2] = lt2
                c_l[c, 3] = ls
                px = ln_ * nx + lt1 * t1x + lt2 * t2x
                py = ln_ * ny + lt1 * t1y + lt2 * t2y
                pz = ln_ * nz + lt1 * t1z + lt2 * t2z
                _apply(vel, angvel, a, im3, Iw[a], rax, ray, raz, px, py, pz, -1.0)
                _apply(vel, angvel, b, im3, Iw[b], rbx, rby, rbz, px, py, pz, 1.0)
                _apply_angular(angvel, a, Iw[a], ls * nx, ls * ny, ls * nz, -1.0)
                _apply_angular(angvel, b, Iw[b], ls * nx, ls * ny, ls * nz, 1.0)

        # velocity iterations
        for it in range(iters):
            for c in range(nc):
                a = c_a[c]
                b = c_b[c]
                nx, ny, nz = c_n[c, 0], c_n[c, 1], c_n[c, 2]
                rax, ray, raz = c_r[c, 0], c_r[c, 1], c_r[c, 2]
                rbx, rby, rbz = c_r[c, 3], c_r[c, 4], c_r[c, 5]
                # spinning friction
                if c_m[c, 3] > 0.0:
                    wr = ((angvel[b, 0] - angvel[a, 0]) * nx + (angvel[b, 1] - angvel[a, 1]) * ny
                          + (angvel[b, 2] - angvel[a, 2]) * nz)
                    dl = -c_m[c, 3] * wr
                    lims = mu_spin * c_l[c, 0] * (c_f[c] > 0.0)
                    old = c_l[c, 3]
                    new = min(max(old + dl, -lims), lims)
                    dl = new - old
                    c_l[c, 3] = new
                    _apply_angular(angvel, a, Iw[a], dl * nx, dl * ny, dl * nz, -1.0)
                    _apply_angular(angvel, b, Iw[b], dl * nx, dl * ny, dl * nz, 1.0)
                # friction
                lim = c_f[c] * c_l[c, 0]
                for t in range(2):
                    tx, ty, tz = c_t[c, 3 * t], c_t[c, 3 * t + 1], c_t[c, 3 * t + 2]
                    vt = _rel_normal_velocity(vel, angvel, a, b, rax, ray, raz,
                                              rbx, rby, rbz, tx, ty, tz)
                    dl = -c_m[c, 1 + t] * vt
                    old = c_l[c, 1 + t]
                    new = min(max(old + dl, -lim), lim)
                    dl = new - old
                    c_l[c, 1 + t] = new
                    _apply(vel, angvel, a, im3, Iw[a], rax, ray, raz, dl * tx, dl * ty, dl * tz, -1.0)
                    _apply(vel, angvel, b, im3, Iw[b], rbx, rby, rbz, dl * tx, dl * ty, dl * tz, 1.0)
                # normal, speculative for separated points
                vn = _rel_normal_velocity(vel, angvel, a, b, rax, ray, raz, rbx, rby, rbz, nx, ny, nz)
                spec = c_sep[c] / dt if c_sep[c] > 0.0 else 0.0
                dl = -c_m[c, 0] * (vn + spec)
                old = c_l[c, 0]
                new = max(old + dl, 0.0)
                dl = new - old
                c_l[c, 0] = new
                _apply(vel, angvel, a, im3, Iw[a], rax, ray, raz, dl * nx, dl * ny, dl * nz, -1.0)
                _apply(vel, angvel, b, im3, Iw[b], rbx, rby, rbz, dl * nx, dl * ny, dl * nz, 1.0)

        # store impulses for the next step
        stored = min(nc, cap)
        for c in range(stored):
            a = c_a[c]
            rax, ray, raz = c_r[c, 0], c_r[c, 1], c_r[c, 2]
            wc_pair[c, 0] = a
            wc_pair[c, 1] = c_b[c]
            wc_local[c, 0] = R[a, 0, 0] * rax + R[a, 1, 0] * ray + R[a, 2, 0] * raz
            wc_local[c, 1] = R[a, 0, 1] * rax + R[a, 1, 1] * ray + R[a, 2, 1] * raz
            wc_local[c, 2] = R[a, 0, 2] * rax + R[a, 1, 2] * ray + R[a, 2, 2] * raz
            wc_imp[c, 0] = c_l[c, 0]
            wc_imp[c, 1] = c_l[c, 1] * c_t[c, 0] + c_l[c, 2] * c_t[c, 3]
            wc_imp[c, 2] = c_l[c, 1] * c_t[c, 1] + c_l[c, 2] * c_t[c, 4]
            wc_imp[c, 3] = c_l[c, 1] * c_t[c, 2] + c_l[c, 2] * c_t[c, 5]
            wc_imp[c, 4] = c_l[c, 3]
        wc_count[0] = stored

        # split-impulse position correction on pseudo velocities
        for b in range(n):
            for r in range(3):
                pv[b, r] = 0.0
                pw[b, r] = 0.0
        for it in range(pos_iters):
            for c in range(nc):
                err = -c_sep[c] - pen_allow
                if err <= 0.0:
                    continue
                a = c_a[c]
                b = c_b[c]
                nx, ny, nz = c_n[c, 0], c_n[c, 1], c_n[c, 2]
                rax, ray, raz = c_r[c, 0], c_r[c, 1], c_r[c, 2]
                rbx, rby, rbz = c_r[c, 3], c_r[c, 4], c_r[c, 5]
                vn = _rel_normal_velocity(pv, pw, a, b, rax, ray, raz, rbx, rby, rbz, nx, ny, nz)
                dl = c_m[c, 0] * (beta * err / dt - vn)
                old = c_l[c, 4]
                new = max(old + dl, 0.0)
                dl = new - old
                c_l[c, 4] = new
                _apply(pv, pw, a, im3, Iw[a], rax, ray, raz, dl * nx, dl * ny, dl * nz, -1.0)
                _apply(pv, pw, b, im3, Iw[b], rbx, rby, rbz, dl * nx, dl * ny, dl * nz, 1.0)

        # integrate
        status = STATUS_DONE
        max_lin = 0.0
        max_ang = 0.0
        for b in range(n):
            k = kind[b]
            if k == KIND_STATIC or k == KIND_REMOVED:
                continue
            for r in range(3):
                pos[b, r] += (vel[b, r] + pv[b, r]) * dt
            if k == KIND_DRIVEN:
                zmax = pos[b, 2] + ext[b, 2]
                if zmax < 0.0:
                    kind[b] = KIND_REMOVED
                    for r in range(3):
                        vel[b, r] = 0.0
                        angvel[b, r] = 0.0
                    status = STATUS_CLEARED
                continue
            wx = angvel[b, 0] + pw[b, 0]
            wy = angvel[b, 1] + pw[b, 1]
            wz = angvel[b, 2] + pw[b, 2]
            qw, qx, qy, qz = quat[b, 0], quat[b, 1], quat[b, 2], quat[b, 3]
            h = 0.5 * dt
            nw = qw + h * (-wx * qx - wy * qy - wz * qz)
            nx_ = qx + h * (wx * qw + wy * qz - wz * qy)
            ny_ = qy + h * (wy * qw + wz * qx - wx * qz)
            nz_ = qz + h * (wz * qw + wx * qy - wy * qx)
            ln = math.sqrt(nw * nw + nx_ * nx_ + ny_ * ny_ + nz_ * nz_)
            quat[b, 0] = nw / ln
            quat[b, 1] = nx_ / ln
            quat[b, 2] = ny_ / ln
            quat[b, 3] = nz_ / ln
            if k == KIND_DYNAMIC:
                sp = math.sqrt(vel[b, 0] ** 2 + vel[b, 1] ** 2 + vel[b, 2] ** 2)
                sw = math.sqrt(angvel[b, 0] ** 2 + angvel[b, 1] ** 2 + angvel[b, 2] ** 2)
                if sp > max_lin:
                    max_lin = sp
                if sw > max_ang:
                    max_ang = sw
                if sp > max_speed:
                    status = STATUS_EXPLODED

        if record:
            for b in range(n):
                hist_speed[step, b] = math.sqrt(vel[b, 0] ** 2 + vel[b, 1] ** 2 + vel[b, 2] ** 2)
                hist_spin[step, b] = math.sqrt(angvel[b, 0] ** 2 + angvel[b, 1] ** 2
                                               + angvel[b, 2] ** 2)
                for r in range(3):
                    hist_pos[step, b, r] = pos[b, r]
        if record_q:
            for b in range(n):
                for r in range(4):
                    hist_quat[step, b, r] = quat[b, r]

        if status == STATUS_EXPLODED:
            return step + 1, STATUS_EXPLODED
        if status == STATUS_CLEARED and stop_on_clear:
            return step + 1, STATUS_CLEARED
        if rest_steps > 0 and not has_driven:
            if max_lin < rest_lin and max_ang < rest_ang:
                rest_count += 1
                if rest_count >= rest_steps:
                    return step + 1, STATUS_RESTED
            else:
                rest_count = 0
    return nsteps, STATUS_DONE
