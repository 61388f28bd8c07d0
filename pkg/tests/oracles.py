"""Independent reference implementations used as test oracles.

These are deliberately naive (pure Python loops over every candidate
threshold, textbook geometry) so they share no code path with the library.
"""

import math

import numpy as np


def sweep(bona, attack):
    """(threshold, apcer, bpcer) at +inf, each distinct score (descending), -inf."""
    bona, attack = list(map(float, bona)), list(map(float, attack))
    cands = [math.inf] + sorted(set(bona) | set(attack), reverse=True) + [-math.inf]
    out = []
    for t in cands:
        apcer = sum(1 for s in attack if s < t) / len(attack)
        bpcer = sum(1 for s in bona if s >= t) / len(bona)
        out.append((t, apcer, bpcer))
    return out


def sweep_d_eer(bona, attack):
    best = None
    for t, a, b in sweep(bona, attack):
        key = (abs(a - b), (a + b) / 2, -t)
        if best is None or key < best[0]:
            best = (key, (a + b) / 2)
    return best[1]


def sweep_bpcer_at_apcer(bona, attack, target):
    return min(b for _, a, b in sweep(bona, attack) if a <= target)


def circumcircle_contains(p, q, r, s):
    """True when s lies strictly inside the circumcircle of triangle pqr (any orientation)."""
    m = np.array(
        [
            [p[0] - s[0], p[1] - s[1], (p[0] - s[0]) ** 2 + (p[1] - s[1]) ** 2],
            [q[0] - s[0], q[1] - s[1], (q[0] - s[0]) ** 2 + (q[1] - s[1]) ** 2],
            [r[0] - s[0], r[1] - s[1], (r[0] - s[0]) ** 2 + (r[1] - s[1]) ** 2],
        ]
    )
    orient = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
    return np.linalg.det(m) * np.sign(orient) > 1e-9


def bilinear(img, x, y):
    """Textbook bilinear sample at a real coordinate inside the raster."""
    x0, y0 = int(math.floor(x)), int(math.floor(y))
    x1, y1 = min(x0 + 1, img.shape[1] - 1), min(y0 + 1, img.shape[0] - 1)
    fx, fy = x - x0, y - y0
    return (
        img[y0, x0] * (1 - fx) * (1 - fy)
        + img[y0, x1] * fx * (1 - fy)
        + img[y1, x0] * (1 - fx) * fy
        + img[y1, x1] * fx * fy
    )


def numeric_gradient(f, w, b, h=1e-6):
    gw = np.zeros_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = h
        gw[i] = (f(w + e, b) - f(w - e, b)) / (2 * h)
    gb = (f(w, b + h) - f(w, b - h)) / (2 * h)
    return gw, gb


def random_unit(rng, n, d):
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)
