"""Small planar and rotation helpers used by the oracle and the scene code."""
from __future__ import annotations

import math

import numpy as np


def yaw_quat(yaw: float) -> np.ndarray:
    """Quaternion (w, x, y, z) for a rotation of ``yaw`` about +z."""
    return np.array([math.cos(0.5 * yaw), 0.0, 0.0, math.sin(0.5 * yaw)])


def quat_matrix(q) -> np.ndarray:
    w, x, y, z = (float(c) for c in q)
    n = w * w + x * x + y * y + z * z
    s = 2.0 / n
    return np.array([
        [1 - s * (y * y + z * z), s * (x * y - w * z), s * (x * z + w * y)],
        [s * (x * y + w * z), 1 - s * (x * x + z * z), s * (y * z - w * x)],
        [s * (x * z - w * y), s * (y * z + w * x), 1 - s * (x * x + y * y)],
    ])


def quat_yaw(q) -> float:
    """In-plane angle (about +z) of a possibly slightly tilted orientation."""
    R = quat_matrix(q)
    return math.atan2(R[1, 0], R[0, 0])


def box_vertices(position, R, half) -> np.ndarray:
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], float)
    return np.asarray(position) + (signs * np.asarray(half)) @ np.asarray(R).T


def convex_hull(points) -> np.ndarray:
    """Andrew's monotone chain; returns CCW vertices without repetition."""
    pts = sorted({(round(float(p[0]), 12), round(float(p[1]), 12)) for p in points})
    if len(pts) <= 2:
        return np.array(pts, dtype=float).reshape(-1, 2)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=float)


def polygon_area(poly) -> float:
    poly = np.asarray(poly, dtype=float)
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def clip_convex(subject, clipper) -> np.ndarray:
    """Intersection of two convex polygons (clipper must be CCW)."""
    out = [tuple(p) for p in np.asarray(subject, dtype=float)]
    clip = np.asarray(clipper, dtype=float)
    for i in range(len(clip)):
        if not out:
            break
        a, b = clip[i], clip[(i + 1) % len(clip)]
        inp, out = out, []

        def side(p):
            return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])

        for j in range(len(inp)):
            p, q = np.array(inp[j]), np.array(inp[(j + 1) % len(inp)])
            sp, sq = side(p), side(q)
            if sp >= 0:
                out.append(tuple(p))
            if (sp > 0 > sq) or (sp < 0 < sq):
                t = sp / (sp - sq)
                out.append(tuple(p + t * (q - p)))
    return np.array(out, dtype=float).reshape(-1, 2)


def inside_with_margin(point, hull, margin: float) -> bool:
    """True when ``point`` lies in the CCW ``hull`` at least ``margin`` from every edge."""
    hull = np.asarray(hull, dtype=float)
    if len(hull) < 3:
        return False
    px, py = float(point[0]), float(point[1])
    for i in range(len(hull)):
        a, b = hull[i], hull[(i + 1) % len(hull)]
        ex, ey = b[0] - a[0], b[1] - a[1]
        length = math.hypot(ex, ey)
        if length == 0.0:
            continue
        if (ex * (py - a[1]) - ey * (px - a[0])) / length < margin:
            return False
    return True
