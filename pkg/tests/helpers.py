"""Shared test utilities (random geometry generators, brute-force oracles)."""

import math
import random

import numpy as np

from opgkit.geometry import PolygonMask


def random_star_polygon(rng: random.Random, cx: float, cy: float, n_max: int = 8) -> PolygonMask:
    """Random simple polygon: vertices at sorted angles around a center are
    guaranteed non-self-intersecting (star-shaped about the center)."""
    n = rng.randint(3, n_max)
    while True:
        angles = sorted(rng.uniform(0.0, 2.0 * math.pi) for _ in range(n))
        gaps = [b - a for a, b in zip(angles, angles[1:])]
        gaps.append(2.0 * math.pi - angles[-1] + angles[0])
        # Simplicity needs the center inside the polygon, which holds exactly
        # when every consecutive angular gap is < pi; tiny gaps would make
        # near-degenerate edges, so keep a margin on both sides.
        if min(gaps) > 0.05 and max(gaps) < 3.0:
            break
    verts = []
    for a in angles:
        r = rng.uniform(0.3, 1.0)
        verts.append((cx + r * math.cos(a), cy + r * math.sin(a)))
    return PolygonMask(tuple(verts))


def sampled_boundary_points(poly: PolygonMask, spacing: float) -> np.ndarray:
    """Points along the boundary, vertices included, at most `spacing` apart."""
    pts = []
    for (ax, ay), (bx, by) in poly.edges():
        length = math.hypot(bx - ax, by - ay)
        n = max(1, math.ceil(length / spacing))
        for i in range(n + 1):
            t = i / n
            pts.append((ax + t * (bx - ax), ay + t * (by - ay)))
    return np.asarray(pts)


def brute_force_contour_distance(a: PolygonMask, b: PolygonMask, spacing: float) -> float:
    """Dense boundary sampling with exact point-to-segment distances.

    Because the boundary-to-boundary distance is stationary at an interior
    minimum (and vertices are sampled exactly), the sampling error is second
    order: at most spacing^2 / (8 * d) for true distance d.
    """
    best = math.inf
    for src, dst in ((a, b), (b, a)):
        pts = sampled_boundary_points(src, spacing)
        for (ex, ey), (fx, fy) in dst.edges():
            dx, dy = fx - ex, fy - ey
            seg2 = dx * dx + dy * dy
            if seg2 == 0.0:
                d = np.hypot(pts[:, 0] - ex, pts[:, 1] - ey)
            else:
                t = np.clip(((pts[:, 0] - ex) * dx + (pts[:, 1] - ey) * dy) / seg2, 0.0, 1.0)
                d = np.hypot(pts[:, 0] - (ex + t * dx), pts[:, 1] - (ey + t * dy))
            best = min(best, float(d.min()))
    return best
