"""Three-step tile renderer: projection, tile binning + depth sort, rasterization.

Per pixel, rasterization walks the tile's depth-sorted list front to back,
skips Gaussians whose screen-space transparency is at most 1/255, accumulates
C += T * alpha * rgb, attenuates T *= (1 - alpha), and stops once T drops
below the termination threshold. An optional pixel cache short-circuits the
walk after the first k significant Gaussians have been identified.

The math is vectorized per tile but follows the exact per-pixel semantics, so
output is bit-identical regardless of worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .scene import CameraPose, GaussianCloud, Gaussian, eval_sh_colors, quat_to_rotmat

# Transparency below which a Gaussian is skipped entirely; matches the 1/255
# quantization floor of 8-bit output.
SIGNIFICANT_ALPHA = 1.0 / 255.0
ALPHA_MAX = 0.99
DEFAULT_TERM_THRESHOLD = 1e-4
COV2D_BLUR = 0.3
RADIUS_SIGMAS = 3.0
SENTINEL_ID = np.uint32(0xFFFFFFFF)
DEFAULT_TILE_SIZE = 16

CACHE_UNCACHED = 0
CACHE_HIT = 1
CACHE_MISS = 2


@dataclass
class ProjectedGaussian:
    """Screen-space footprint of one Gaussian."""

    gaussian_id: int
    mean2d: np.ndarray
    conic: np.ndarray  # (a, b, c) of the inverse 2D covariance
    depth: float
    rgb: np.ndarray
    opacity: float
    radius: int


class ProjectedCloud:
    """Struct-of-arrays result of projecting a whole cloud at one pose."""

    def __init__(self, n_source: int, ids, mean2d, conic, depth, rgb, opacity, radius,
                 n_culled_depth=0, n_culled_frustum=0, n_culled_nonfinite=0):
        self.ids = np.asarray(ids, dtype=np.uint32)
        self.mean2d = np.asarray(mean2d, dtype=np.float64).reshape(-1, 2)
        self.conic = np.asarray(conic, dtype=np.float64).reshape(-1, 3)
        self.depth = np.asarray(depth, dtype=np.float64).reshape(-1)
        self.rgb = np.asarray(rgb, dtype=np.float64).reshape(-1, 3)
        self.opacity = np.asarray(opacity, dtype=np.float64).reshape(-1)
        self.radius = np.asarray(radius, dtype=np.float64).reshape(-1)
        self.n_culled_depth = n_culled_depth
        self.n_culled_frustum = n_culled_frustum
        self.n_culled_nonfinite = n_culled_nonfinite
        # Map Gaussian ID -> row in these arrays (-1 when culled).
        self.id_to_slot = np.full(n_source, -1, dtype=np.int64)
        self.id_to_slot[self.ids] = np.arange(len(self.ids))

    def __len__(self) -> int:
        return len(self.ids)


def project_cloud(cloud: GaussianCloud, cam: CameraPose) -> ProjectedCloud:
    """Project every Gaussian; cull by depth range, image overlap, non-finite math."""
    n = len(cloud)
    if n == 0:
        return ProjectedCloud(0, np.zeros(0, np.uint32), np.zeros((0, 2)), np.zeros((0, 3)),
                              np.zeros(0), np.zeros((0, 3)), np.zeros(0), np.zeros(0))

    r_c2w = cam.rotation_c2w()
    t = (cloud.positions - cam.position) @ r_c2w  # camera-space means
    depth = t[:, 2]
    in_depth = (depth > cam.near) & (depth < cam.far)
    n_culled_depth = int(n - in_depth.sum())

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        inv_z = 1.0 / depth
        u = cam.fx * t[:, 0] * inv_z + cam.cx
        v = cam.fy * t[:, 1] * inv_z + cam.cy

        # 3D covariance R diag(s^2) R^T, then the EWA screen-space approximation
        # J W Sigma W^T J^T + blur.
        rot = quat_to_rotmat(cloud.rotations)
        cov3d = np.einsum("nij,nj,nkj->nik", rot, cloud.scales**2, rot)
        j = np.zeros((n, 2, 3))
        j[:, 0, 0] = cam.fx * inv_z
        j[:, 0, 2] = -cam.fx * t[:, 0] * inv_z * inv_z
        j[:, 1, 1] = cam.fy * inv_z
        j[:, 1, 2] = -cam.fy * t[:, 1] * inv_z * inv_z
        m = j @ r_c2w.T[None, :, :]
        cov2d = np.einsum("nij,njk,nlk->nil", m, cov3d, m)
        a = cov2d[:, 0, 0] + COV2D_BLUR
        b = cov2d[:, 0, 1]
        c = cov2d[:, 1, 1] + COV2D_BLUR
        det = a * c - b * b
        conic = np.stack([c / det, -b / det, a / det], axis=1)
        mid = 0.5 * (a + c)
        lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
        radius = np.ceil(RADIUS_SIGMAS * np.sqrt(lam_max))

        dirs = cloud.positions - cam.position
        dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        rgb = eval_sh_colors(cloud.sh_coeffs, dirs)

    finite = (
        np.isfinite(u) & np.isfinite(v) & np.isfinite(radius)
        & np.all(np.isfinite(conic), axis=1) & np.all(np.isfinite(rgb), axis=1)
        & (det > 0)
    )
    n_culled_nonfinite = int((in_depth & ~finite).sum())
    candidate = in_depth & finite

    on_image = (
        (u + radius > 0) & (u - radius < cam.width)
        & (v + radius > 0) & (v - radius < cam.height)
    )
    n_culled_frustum = int((candidate & ~on_image).sum())
    keep = candidate & on_image

    idx = np.flatnonzero(keep)
    return ProjectedCloud(
        n, idx.astype(np.uint32),
        np.column_stack([u[idx], v[idx]]), conic[idx], depth[idx],
        rgb[idx], cloud.opacities[idx], radius[idx],
        n_culled_depth, n_culled_frustum, n_culled_nonfinite,
    )


def project_gaussian(g: Gaussian, cam: CameraPose) -> ProjectedGaussian | None:
    """Project a single Gaussian; None means culled."""
    cloud = GaussianCloud(g.position[None], g.rotation[None], g.scale[None],
                          np.array([g.opacity]), g.sh_coeffs[None])
    proj = project_cloud(cloud, cam)
    if len(proj) == 0:
        return None
    return ProjectedGaussian(
        gaussian_id=0, mean2d=proj.mean2d[0], conic=proj.conic[0],
        depth=float(proj.depth[0]), rgb=proj.rgb[0],
        opacity=float(proj.opacity[0]), radius=int(proj.radius[0]),
    )


@dataclass(frozen=True)
class TileGrid:
    tiles_x: int
    tiles_y: int
    tile_size: int

    @staticmethod
    def for_image(width: int, height: int, tile_size: int = DEFAULT_TILE_SIZE) -> "TileGrid":
        return TileGrid(-(-width // tile_size), -(-height // tile_size), tile_size)

    @property
    def n_tiles(self) -> int:
        return self.tiles_x * self.tiles_y


class SortedSplattingTable:
    """Per-tile Gaussian ID lists in ascending depth order (ties by ID).

    Stored CSR-style: tile (tx, ty) owns entries offsets[i]:offsets[i+1] with
    i = ty * tiles_x + tx. `slots` are row indices into the projection the
    table was built from; `provenance` records the pose (and margin) used.
    """

    def __init__(self, grid: TileGrid, offsets, ids, slots, depths,
                 provenance: CameraPose, margin_px: int = 0):
        self.grid = grid
        self.offsets = offsets
        self.ids = ids
        self.slots = slots
        self.depths = depths
        self.provenance = provenance
        self.margin_px = margin_px
        # Reference depth for estimating image shift between viewports.
        self.z_ref = float(np.median(depths)) if len(depths) \
            else 0.5 * (provenance.near + provenance.far)

    def tile_index(self, tx: int, ty: int) -> int:
        return ty * self.grid.tiles_x + tx

    def tile_ids(self, tx: int, ty: int) -> np.ndarray:
        i = self.tile_index(tx, ty)
        return self.ids[self.offsets[i]:self.offsets[i + 1]]

    def tile_slots(self, tx: int, ty: int) -> np.ndarray:
        i = self.tile_index(tx, ty)
        return self.slots[self.offsets[i]:self.offsets[i + 1]]

    def tile_depths(self, tx: int, ty: int) -> np.ndarray:
        i = self.tile_index(tx, ty)
        return self.depths[self.offsets[i]:self.offsets[i + 1]]

    def lookup_offset_tiles(self, cam: CameraPose) -> tuple[int, int]:
        """Whole-tile offset mapping cam's tiles into this table's grid.

        The point cam looks at (on its axis, at the table's reference depth)
        is reprojected into the provenance viewport; the displacement of its
        pixel from cam's principal point, rounded to tiles, aligns the two
        tile grids. Sub-tile pose differences are approximated by the nearest
        tile; identical poses reduce to the expansion margin exactly.
        """
        ts = self.grid.tile_size
        forward = cam.position + cam.rotation_c2w() @ np.array([0.0, 0.0, self.z_ref])
        xc = self.provenance.world_to_camera(forward)[0]
        if not np.all(np.isfinite(xc)) or xc[2] <= 0:
            return (round((self.provenance.cx - cam.cx) / ts),
                    round((self.provenance.cy - cam.cy) / ts))
        u = self.provenance.fx * xc[0] / xc[2] + self.provenance.cx
        v = self.provenance.fy * xc[1] / xc[2] + self.provenance.cy
        return (int(np.rint((u - cam.cx) / ts)), int(np.rint((v - cam.cy) / ts)))


def tile_range(lo: float, hi: float, n_tiles: int, tile_size: int):
    """Tiles whose [t*size, (t+1)*size] span strictly overlaps the open (lo, hi)."""
    t0 = int(np.floor(lo / tile_size))
    t1 = int(np.ceil(hi / tile_size)) - 1
    return max(t0, 0), min(t1, n_tiles - 1)


def bin_and_sort(proj: ProjectedCloud, grid: TileGrid, provenance: CameraPose,
                 margin_px: int = 0) -> SortedSplattingTable:
    """Assign each footprint's bounding square to tiles and depth-sort per tile."""
    ts = grid.tile_size
    m = len(proj)
    if m == 0:
        offsets = np.zeros(grid.n_tiles + 1, dtype=np.int64)
        empty = np.zeros(0, dtype=np.uint32)
        return SortedSplattingTable(grid, offsets, empty, np.zeros(0, np.int64),
                                    np.zeros(0), provenance, margin_px)

    x0 = proj.mean2d[:, 0] - proj.radius
    x1 = proj.mean2d[:, 0] + proj.radius
    y0 = proj.mean2d[:, 1] - proj.radius
    y1 = proj.mean2d[:, 1] + proj.radius
    tx0 = np.maximum(np.floor(x0 / ts).astype(np.int64), 0)
    tx1 = np.minimum(np.ceil(x1 / ts).astype(np.int64) - 1, grid.tiles_x - 1)
    ty0 = np.maximum(np.floor(y0 / ts).astype(np.int64), 0)
    ty1 = np.minimum(np.ceil(y1 / ts).astype(np.int64) - 1, grid.tiles_y - 1)

    nx = np.maximum(tx1 - tx0 + 1, 0)
    ny = np.maximum(ty1 - ty0 + 1, 0)
    counts = nx * ny
    total = int(counts.sum())

    src = np.repeat(np.arange(m), counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    ordinal = np.arange(total) - np.repeat(starts, counts)
    w = nx[src]
    tx = tx0[src] + ordinal % w
    ty = ty0[src] + ordinal // w
    tile_lin = ty * grid.tiles_x + tx

    order = np.lexsort((proj.ids[src], proj.depth[src], tile_lin))
    tile_sorted = tile_lin[order]
    src_sorted = src[order]

    offsets = np.zeros(grid.n_tiles + 1, dtype=np.int64)
    np.cumsum(np.bincount(tile_sorted, minlength=grid.n_tiles), out=offsets[1:])

    return SortedSplattingTable(
        grid, offsets, proj.ids[src_sorted], src_sorted.astype(np.int64),
        proj.depth[src_sorted], provenance, margin_px,
    )


def compute_alpha(pg: ProjectedGaussian, pixel) -> float:
    """Transparency of one footprint at integer pixel (x, y); center +0.5."""
    d = np.array([pixel[0] + 0.5, pixel[1] + 0.5]) - pg.mean2d
    a, b, c = pg.conic
    quad = a * d[0] * d[0] + 2.0 * b * d[0] * d[1] + c * d[1] * d[1]
    return min(ALPHA_MAX, pg.opacity * float(np.exp(-0.5 * quad)))


@dataclass
class TileTrace:
    """Per-pixel scan record of one tile, for the hardware models."""

    ids: np.ndarray        # (L,) list in rasterization order
    sig: np.ndarray        # (P, L) bool, significance at each list position
    n_scan: np.ndarray     # (P,) positions actually walked (post cache exit)
    lookup_pos: np.ndarray  # (P,) scan position after the k-th significant, -1 if none
    outcome: np.ndarray    # (P,) CACHE_* code
    rect: tuple            # (x0, y0, w, h) pixel rectangle
    contrib: np.ndarray | None = None  # (P, L) luma-weighted contributions


class FrameStats:
    """Per-pixel significance accounting plus per-tile traces."""

    def __init__(self, width: int, height: int, grid: TileGrid, k: int):
        self.width = width
        self.height = height
        self.grid = grid
        self.k = k
        self.iterated = np.zeros((height, width), dtype=np.int32)
        self.significant = np.zeros((height, width), dtype=np.int32)
        self.termination_index = np.zeros((height, width), dtype=np.int32)
        self.first_ids = np.full((height, width, k), SENTINEL_ID, dtype=np.uint32)
        self.cache_outcome = np.zeros((height, width), dtype=np.int8)
        self.lookup_pos = np.full((height, width), -1, dtype=np.int32)
        self.tile_traces: list[TileTrace | None] = [None] * grid.n_tiles
        self.tile_list_len = np.zeros(grid.n_tiles, dtype=np.int64)
        self.coverage_misses = 0
        self.n_projected = 0
        self.n_culled_depth = 0
        self.n_culled_frustum = 0
        self.n_culled_nonfinite = 0


@dataclass
class RenderConfig:
    tile_size: int = DEFAULT_TILE_SIZE
    term_threshold: float = DEFAULT_TERM_THRESHOLD
    background: tuple = (0.0, 0.0, 0.0)
    workers: int = 1
    cache_manager: object | None = None  # cache.CacheGroupManager for cached mode
    cache_k: int = 5
    capture_contributions: bool = False


_LUMA = np.array([0.299, 0.587, 0.114])


def _first_k_positions(sig_counted: np.ndarray, k: int):
    """Positions of the first k significant entries per row, sentinel-safe."""
    p, l = sig_counted.shape
    n_sig = sig_counted.sum(axis=1).astype(np.int64)
    kk = min(k, l)
    if kk == 0:
        return np.zeros((p, 0), dtype=np.int64), n_sig
    order = np.argsort(~sig_counted, axis=1, kind="stable")[:, :kk]
    return order, n_sig


def rasterize_tile(tx: int, ty: int, list_ids: np.ndarray, list_slots: np.ndarray,
                   proj: ProjectedCloud, cam: CameraPose, config: RenderConfig,
                   cache=None, stats: FrameStats | None = None) -> np.ndarray:
    """Rasterize one tile; returns its (h, w, 3) pixels and fills stats in place."""
    ts = config.tile_size
    x0, y0 = tx * ts, ty * ts
    tw = min(ts, cam.width - x0)
    th = min(ts, cam.height - y0)
    p = tw * th
    l = len(list_ids)
    bg = np.asarray(config.background, dtype=np.float64)
    k = config.cache_k

    px = x0 + np.tile(np.arange(tw), th) + 0.5
    py = y0 + np.repeat(np.arange(th), tw) + 0.5

    if l == 0:
        out = np.tile(bg, (p, 1))
        sig = np.zeros((p, 0), dtype=bool)
        n_scan = np.zeros(p, dtype=np.int64)
        n_sig = np.zeros(p, dtype=np.int64)
        pos = np.zeros((p, 0), dtype=np.int64)
        color_full = out.copy()
        contrib = np.zeros((p, 0), dtype=np.float32)
    else:
        mean2d = proj.mean2d[list_slots]
        conic = proj.conic[list_slots]
        rgb = proj.rgb[list_slots]
        opac = proj.opacity[list_slots]

        dx = px[:, None] - mean2d[None, :, 0]
        dy = py[:, None] - mean2d[None, :, 1]
        quad = conic[:, 0] * dx * dx + 2.0 * conic[:, 1] * dx * dy + conic[:, 2] * dy * dy
        alpha = np.minimum(opac[None, :] * np.exp(-0.5 * quad), ALPHA_MAX)

        sig = alpha > SIGNIFICANT_ALPHA
        a_eff = np.where(sig, alpha, 0.0)
        g_incl = np.cumprod(1.0 - a_eff, axis=1)
        g_excl = np.concatenate([np.ones((p, 1)), g_incl[:, :-1]], axis=1)

        below = g_incl < config.term_threshold
        has_term = below.any(axis=1)
        first_term = np.argmax(below, axis=1)
        n_scan = np.where(has_term, first_term + 1, l).astype(np.int64)
        scan_mask = np.arange(l)[None, :] < n_scan[:, None]

        weights = g_excl * a_eff * scan_mask
        color = np.sum(weights[:, :, None] * rgb[None, :, :], axis=1)
        trans = np.where(has_term, g_incl[np.arange(p), first_term], g_incl[:, -1])
        color_full = color + trans[:, None] * bg

        sig_counted = sig & scan_mask
        pos, n_sig = _first_k_positions(sig_counted, k)
        out = color_full.copy()
        contrib = (weights * (rgb @ _LUMA)[None, :]).astype(np.float32) \
            if config.capture_contributions else None

    kk = pos.shape[1]
    ids_k = np.full((p, k), SENTINEL_ID, dtype=np.uint32)
    if kk:
        valid = np.arange(kk)[None, :] < np.minimum(n_sig, k)[:, None]
        ids_k[:, :kk][valid] = list_ids[pos[valid]]

    lookup_pos = np.full(p, -1, dtype=np.int64)
    outcome = np.zeros(p, dtype=np.int8)
    n_sig_eff = np.minimum(n_sig, np.iinfo(np.int32).max).astype(np.int64)
    n_scan_eff = n_scan.copy()

    if cache is not None:
        from .cache import make_key  # local import to avoid a module cycle

        queryable = n_sig >= k
        if kk == k:
            lookup_pos[queryable] = pos[queryable, k - 1] + 1
        quant = np.rint(np.clip(color_full, 0.0, 1.0) * 255.0).astype(np.uint8)
        for i in range(p):
            key = make_key(ids_k[i], cache.config)
            if queryable[i]:
                hit = cache.lookup(key)
                if hit is not None:
                    out[i] = hit / 255.0
                    outcome[i] = CACHE_HIT
                    n_scan_eff[i] = lookup_pos[i]
                    n_sig_eff[i] = k
                    continue
                outcome[i] = CACHE_MISS
            cache.insert(key, quant[i])

    if stats is not None:
        sl = (slice(y0, y0 + th), slice(x0, x0 + tw))
        stats.iterated[sl] = n_scan_eff.reshape(th, tw)
        stats.termination_index[sl] = n_scan_eff.reshape(th, tw)
        stats.significant[sl] = n_sig_eff.reshape(th, tw)
        stats.first_ids[sl] = ids_k.reshape(th, tw, k)
        stats.cache_outcome[sl] = outcome.reshape(th, tw)
        stats.lookup_pos[sl] = lookup_pos.astype(np.int32).reshape(th, tw)
        ti = ty * stats.grid.tiles_x + tx
        stats.tile_list_len[ti] = l
        stats.tile_traces[ti] = TileTrace(
            ids=list_ids.copy(), sig=sig, n_scan=n_scan_eff,
            lookup_pos=lookup_pos, outcome=outcome,
            rect=(x0, y0, tw, th), contrib=contrib,
        )

    return out.reshape(th, tw, 3)


@dataclass
class ReuseContext:
    """Tile lists borrowed from a previously built table, offset in whole tiles."""

    table: SortedSplattingTable
    offset_tiles: tuple[int, int]


def _tile_lists(tx, ty, table, reuse, proj):
    if reuse is None:
        return table.tile_ids(tx, ty), table.tile_slots(tx, ty), False
    ox, oy = reuse.offset_tiles
    etx, ety = tx + ox, ty + oy
    src = reuse.table
    if not (0 <= etx < src.grid.tiles_x and 0 <= ety < src.grid.tiles_y):
        return np.zeros(0, dtype=np.uint32), np.zeros(0, dtype=np.int64), True
    ids = src.tile_ids(etx, ety)
    slots = proj.id_to_slot[ids]
    live = slots >= 0
    return ids[live], slots[live], False


def render_frame(cloud: GaussianCloud, cam: CameraPose, config: RenderConfig | None = None,
                 reuse: ReuseContext | None = None):
    """Render one frame; returns (image float64 (h, w, 3), FrameStats).

    With `reuse`, projection and per-Gaussian color still run at `cam` but the
    per-tile lists (membership and order) come from the reused table.
    """
    config = config or RenderConfig()
    grid = TileGrid.for_image(cam.width, cam.height, config.tile_size)
    proj = project_cloud(cloud, cam)
    table = None if reuse is not None else bin_and_sort(proj, grid, cam)

    stats = FrameStats(cam.width, cam.height, grid, config.cache_k)
    stats.n_projected = len(proj)
    stats.n_culled_depth = proj.n_culled_depth
    stats.n_culled_frustum = proj.n_culled_frustum
    stats.n_culled_nonfinite = proj.n_culled_nonfinite

    image = np.zeros((cam.height, cam.width, 3), dtype=np.float64)

    manager = config.cache_manager
    if manager is not None:
        gx, gy = manager.config.group_tiles
    else:
        gx, gy = grid.tiles_x, 1  # one row of tiles per task

    groups = []
    for gy0 in range(0, grid.tiles_y, gy):
        for gx0 in range(0, grid.tiles_x, gx):
            tiles = [(tx, ty)
                     for ty in range(gy0, min(gy0 + gy, grid.tiles_y))
                     for tx in range(gx0, min(gx0 + gx, grid.tiles_x))]
            cache = manager.acquire((gx0 // gx, gy0 // gy)) if manager is not None else None
            groups.append((tiles, cache))

    def run_group(group):
        tiles, cache = group
        misses = 0
        for tx, ty in tiles:
            ids, slots, missed = _tile_lists(tx, ty, table, reuse, proj)
            misses += int(missed)
            ts = config.tile_size
            tile_img = rasterize_tile(tx, ty, ids, slots, proj, cam, config, cache, stats)
            image[ty * ts:ty * ts + tile_img.shape[0],
                  tx * ts:tx * ts + tile_img.shape[1]] = tile_img
        return misses

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            stats.coverage_misses = sum(pool.map(run_group, groups))
    else:
        stats.coverage_misses = sum(run_group(g) for g in groups)

    return image, stats
