"""Independent reference implementations used only by the test suite.

The renderer here deliberately mirrors none of the library's vectorization:
it walks Gaussians one at a time per tile in globally depth-sorted order,
filtering by a scalar footprint-overlap test, and maintains per-pixel
transmittance with masked updates. The PLRU reference uses half-interval
recursion instead of heap-indexed tree bits.
"""

from __future__ import annotations

import numpy as np

from splatlab.pipeline import ALPHA_MAX, SIGNIFICANT_ALPHA, project_cloud


def blend_pixel(alphas, rgbs, term_threshold=1e-4, background=(0.0, 0.0, 0.0),
                skip_insignificant=True):
    """Scalar front-to-back compositing of one pixel's sorted contributors."""
    t = 1.0
    c = np.zeros(3)
    for alpha, rgb in zip(alphas, rgbs):
        alpha = min(alpha, ALPHA_MAX)
        if skip_insignificant and alpha <= SIGNIFICANT_ALPHA:
            continue
        c = c + t * alpha * np.asarray(rgb, dtype=np.float64)
        t = t * (1.0 - alpha)
        if t < term_threshold:
            break
    return c + t * np.asarray(background, dtype=np.float64)


def render_reference(cloud, cam, tile_size=16, term_threshold=1e-4,
                     background=(0.0, 0.0, 0.0), skip_insignificant=True):
    """Brute-force render evaluating the color integral per pixel.

    A Gaussian contributes to pixel p iff its bounding square (mean +- radius)
    strictly overlaps the tile containing p; contributors are taken in global
    (depth, id) order.
    """
    proj = project_cloud(cloud, cam)
    h, w = cam.height, cam.width
    bg = np.asarray(background, dtype=np.float64)
    img = np.full((h, w, 3), bg, dtype=np.float64)

    order = sorted(range(len(proj)), key=lambda i: (proj.depth[i], proj.ids[i]))
    tiles_x = -(-w // tile_size)
    tiles_y = -(-h // tile_size)

    for ty in range(tiles_y):
        for tx in range(tiles_x):
            lo_x, hi_x = tx * tile_size, (tx + 1) * tile_size
            lo_y, hi_y = ty * tile_size, (ty + 1) * tile_size
            cand = [
                i for i in order
                if proj.mean2d[i, 0] - proj.radius[i] < hi_x
                and proj.mean2d[i, 0] + proj.radius[i] > lo_x
                and proj.mean2d[i, 1] - proj.radius[i] < hi_y
                and proj.mean2d[i, 1] + proj.radius[i] > lo_y
            ]
            x1 = min(hi_x, w)
            y1 = min(hi_y, h)
            xs = np.arange(lo_x, x1) + 0.5
            ys = np.arange(lo_y, y1) + 0.5
            px, py = np.meshgrid(xs, ys)
            px = px.ravel()
            py = py.ravel()
            n_px = px.size

            trans = np.ones(n_px)
            color = np.zeros((n_px, 3))
            alive = np.ones(n_px, dtype=bool)
            for i in cand:
                if not alive.any():
                    break
                dx = px - proj.mean2d[i, 0]
                dy = py - proj.mean2d[i, 1]
                a, b, c = proj.conic[i]
                alpha = np.minimum(
                    proj.opacity[i] * np.exp(-0.5 * (a * dx * dx + 2 * b * dx * dy + c * dy * dy)),
                    ALPHA_MAX,
                )
                use = alive & (alpha > SIGNIFICANT_ALPHA) if skip_insignificant \
                    else alive & (alpha > 0)
                if not use.any():
                    continue
                color[use] += (trans[use] * alpha[use])[:, None] * proj.rgb[i]
                trans[use] *= 1.0 - alpha[use]
                alive &= trans >= term_threshold

            tile_img = color + trans[:, None] * bg
            img[lo_y:y1, lo_x:x1] = tile_img.reshape(y1 - lo_y, x1 - lo_x, 3)
    return img


class PlruReference:
    """Tree pseudo-LRU over `ways` leaves, written as half-interval recursion."""

    def __init__(self, ways: int):
        self.ways = ways
        self.lru_side: dict[tuple, int] = {}

    def touch(self, way: int) -> None:
        lo, hi = 0, self.ways
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if way < mid:
                self.lru_side[(lo, hi)] = 1  # other half is now least recent
                hi = mid
            else:
                self.lru_side[(lo, hi)] = 0
                lo = mid

    def victim(self) -> int:
        lo, hi = 0, self.ways
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if self.lru_side.get((lo, hi), 0) == 0:
                hi = mid
            else:
                lo = mid
        return lo


class SetReference:
    """One cache set driven by the PLRU reference, for lockstep comparison."""

    def __init__(self, ways: int):
        self.ways = ways
        self.tags: list = [None] * ways
        self.plru = PlruReference(ways)

    def lookup(self, tag):
        for w in range(self.ways):
            if self.tags[w] == tag:
                self.plru.touch(w)
                return w
        return None

    def insert(self, tag):
        """Returns (way, evicted_tag_or_None)."""
        for w in range(self.ways):
            if self.tags[w] == tag:
                self.plru.touch(w)
                return w, None
        for w in range(self.ways):
            if self.tags[w] is None:
                self.tags[w] = tag
                self.plru.touch(w)
                return w, None
        w = self.plru.victim()
        evicted = self.tags[w]
        self.tags[w] = tag
        self.plru.touch(w)
        return w, evicted
