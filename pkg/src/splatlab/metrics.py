"""Image quality metrics and workload characterization analyses.

PSNR and SSIM operate in the 8-bit domain (float inputs are quantized first).
The characterization side measures what the renderer traces expose: the
fraction of walked Gaussians that were significant, how pixel radiance
concentrates in a few contributors, how pixel color varies with the length of
the shared significant-ID prefix, and how stable per-tile depth orders are
between two sorts.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .images import quantize
from .pipeline import FrameStats, SortedSplattingTable

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 8
SSIM_C1 = (0.01 * 255.0) ** 2
SSIM_C2 = (0.03 * 255.0) ** 2
_LUMA = np.array([0.299, 0.587, 0.114])


def _as_u8(img: np.ndarray) -> np.ndarray:
    return img if img.dtype == np.uint8 else quantize(img)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs report the 99 dB cap."""
    qa = _as_u8(a).astype(np.float64)
    qb = _as_u8(b).astype(np.float64)
    if qa.shape != qb.shape:
        raise ValueError(f"shape mismatch {qa.shape} vs {qb.shape}")
    mse = np.mean((qa - qb) ** 2)
    if mse == 0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(255.0**2 / mse))


def _window_means(x: np.ndarray, w: int) -> np.ndarray:
    """Means of all w x w windows (integral image), shape (h-w+1, w-w+1)."""
    s = np.zeros((x.shape[0] + 1, x.shape[1] + 1))
    np.cumsum(np.cumsum(x, axis=0), axis=1, out=s[1:, 1:])
    return (s[w:, w:] - s[:-w, w:] - s[w:, :-w] + s[:-w, :-w]) / (w * w)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity over sliding 8x8 windows of the luma plane."""
    qa = _as_u8(a)
    qb = _as_u8(b)
    if qa.shape != qb.shape:
        raise ValueError(f"shape mismatch {qa.shape} vs {qb.shape}")
    la = qa.astype(np.float64) @ _LUMA if qa.ndim == 3 else qa.astype(np.float64)
    lb = qb.astype(np.float64) @ _LUMA if qb.ndim == 3 else qb.astype(np.float64)
    if min(la.shape) < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")

    mu_a = _window_means(la, SSIM_WINDOW)
    mu_b = _window_means(lb, SSIM_WINDOW)
    var_a = _window_means(la * la, SSIM_WINDOW) - mu_a * mu_a
    var_b = _window_means(lb * lb, SSIM_WINDOW) - mu_b * mu_b
    cov = _window_means(la * lb, SSIM_WINDOW) - mu_a * mu_b

    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


def significant_fraction(stats: FrameStats) -> dict:
    """Mean per-pixel fraction of walked Gaussians that were significant."""
    iterated = stats.iterated.ravel().astype(np.float64)
    sig = stats.significant.ravel().astype(np.float64)
    covered = iterated > 0
    if not covered.any():
        return {"mean_fraction": 0.0, "std_fraction": 0.0, "mean_iterated": 0.0}
    frac = sig[covered] / iterated[covered]
    return {
        "mean_fraction": float(frac.mean()),
        "std_fraction": float(frac.std()),
        "mean_iterated": float(iterated[covered].mean()),
    }


def contribution_curve(contributions: np.ndarray) -> np.ndarray:
    """Cumulative radiance share of one pixel's contributors, largest first."""
    c = np.asarray(contributions, dtype=np.float64)
    c = c[c > 0]
    if c.size == 0:
        return np.zeros(0)
    c = np.sort(c)[::-1]
    cum = np.cumsum(c)
    return cum / cum[-1]


def aggregate_contribution_curve(stats: FrameStats, n_points: int = 101,
                                 max_pixels: int = 4096) -> np.ndarray:
    """Mean contribution curve over pixels, resampled on a [0, 1] rank grid.

    Requires the renderer to have captured contributions
    (RenderConfig.capture_contributions).
    """
    grid = np.linspace(0.0, 1.0, n_points)
    acc = np.zeros(n_points)
    count = 0
    for trace in stats.tile_traces:
        if trace is None or trace.contrib is None or trace.contrib.shape[1] == 0:
            continue
        for row in trace.contrib:
            curve = contribution_curve(row)
            if curve.size == 0:
                continue
            ranks = np.arange(1, curve.size + 1) / curve.size
            acc += np.interp(grid, ranks, curve, left=0.0)
            count += 1
            if count >= max_pixels:
                break
        if count >= max_pixels:
            break
    return acc / count if count else np.zeros(0)


def color_difference_vs_k(stats_a: FrameStats, img_a: np.ndarray,
                          stats_b: FrameStats, img_b: np.ndarray,
                          k_values=None) -> list[dict]:
    """Color error of answering each ray with a same-prefix ray from frame A.

    For each k, frame A's pixels with at least k significant Gaussians are
    indexed by their k-ID prefix (first writer in row-major order, like a
    cold cache). Every frame-B pixel whose prefix is present reports the mean
    absolute 8-bit channel difference against the indexed pixel. Longer
    prefixes select geometrically closer rays, so the mean falls as k grows.
    """
    k_max = stats_a.first_ids.shape[2]
    k_values = list(k_values) if k_values is not None else list(range(1, k_max + 1))
    for k in k_values:
        if k < 1 or k > k_max:
            raise ValueError(f"k={k} outside recorded prefix length {k_max}")
    qa = _as_u8(img_a).astype(np.float64).reshape(-1, 3)
    qb = _as_u8(img_b).astype(np.float64).reshape(-1, 3)

    rows = []
    for k in k_values:
        ids_a = stats_a.first_ids[:, :, :k].reshape(len(qa), k)
        ids_b = stats_b.first_ids[:, :, :k].reshape(len(qb), k)
        ok_a = np.flatnonzero(stats_a.significant.ravel() >= k)
        ok_b = np.flatnonzero(stats_b.significant.ravel() >= k)
        table: dict[bytes, int] = {}
        for i in ok_a:
            table.setdefault(ids_a[i].tobytes(), i)
        total = 0.0
        n = 0
        for i in ok_b:
            j = table.get(ids_b[i].tobytes())
            if j is None:
                continue
            total += float(np.abs(qb[i] - qa[j]).mean())
            n += 1
        rows.append({
            "k": k,
            "mean_abs_diff": total / n if n else 0.0,
            "matched_pixels": n,
        })
    return rows


def significant_sets(stats: FrameStats) -> list[np.ndarray]:
    """Per tile, the IDs that were significant for at least one pixel."""
    out = []
    for trace in stats.tile_traces:
        if trace is None or trace.sig.shape[1] == 0:
            out.append(np.zeros(0, dtype=np.uint32))
            continue
        l = trace.sig.shape[1]
        mask = trace.sig & (np.arange(l)[None, :] < trace.n_scan[:, None])
        out.append(np.unique(trace.ids[mask.any(axis=0)]))
    return out


def order_inversion_rate(table_a: SortedSplattingTable, table_b: SortedSplattingTable,
                         sig_sets: list[np.ndarray],
                         offset_tiles: tuple[int, int] = (0, 0)) -> dict:
    """Fraction of significant co-occurring pairs whose depth order flips.

    table_b is the reference grid that sig_sets is indexed by; tile (tx, ty)
    of table_b corresponds to tile (tx + ox, ty + oy) of table_a.
    """
    ox, oy = offset_tiles
    inversions = 0
    pairs = 0
    for ty in range(table_b.grid.tiles_y):
        for tx in range(table_b.grid.tiles_x):
            sig = sig_sets[ty * table_b.grid.tiles_x + tx]
            if sig.size < 2:
                continue
            atx, aty = tx + ox, ty + oy
            if not (0 <= atx < table_a.grid.tiles_x and 0 <= aty < table_a.grid.tiles_y):
                continue
            ids_a = table_a.tile_ids(atx, aty)
            ids_b = table_b.tile_ids(tx, ty)
            pos_a = {int(g): i for i, g in enumerate(ids_a)}
            pos_b = {int(g): i for i, g in enumerate(ids_b)}
            common = [int(g) for g in sig if int(g) in pos_a and int(g) in pos_b]
            m = len(common)
            if m < 2:
                continue
            pa = np.array([pos_a[g] for g in common])
            pb = np.array([pos_b[g] for g in common])
            da = pa[:, None] - pa[None, :]
            db = pb[:, None] - pb[None, :]
            upper = np.triu(np.ones((m, m), dtype=bool), 1)
            inversions += int(((da * db) < 0)[upper].sum())
            pairs += m * (m - 1) // 2
    rate = inversions / pairs if pairs else 0.0
    return {"rate": rate, "inversions": inversions, "pairs": pairs}


def write_csv(path, fieldnames: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


@dataclass
class CharzReport:
    """All characterization outputs for one rendered trace."""

    significant: list[dict] = field(default_factory=list)   # per frame
    contribution: np.ndarray = field(default_factory=lambda: np.zeros(0))
    color_difference: list[dict] = field(default_factory=list)  # per k
    inversions: list[dict] = field(default_factory=list)     # per frame pair
    quality: list[dict] = field(default_factory=list)        # per frame vs reference


def build_charz_report(frames, tables=None, reference_frames=None,
                       with_ssim: bool = True) -> CharzReport:
    """Run the characterization suite over (image, FrameStats) pairs.

    `tables` (one per frame) enables the order-inversion analysis between
    consecutive sorts; `reference_frames` enables the PSNR/SSIM series.
    """
    report = CharzReport()
    for i, (_, stats) in enumerate(frames):
        row = significant_fraction(stats)
        assert 0.0 <= row["mean_fraction"] <= 1.0
        report.significant.append({"frame": i, **row})

    if frames:
        report.contribution = aggregate_contribution_curve(frames[0][1])

    acc: dict[int, list] = {}
    for (img_a, st_a), (img_b, st_b) in zip(frames[:-1], frames[1:]):
        for row in color_difference_vs_k(st_a, img_a, st_b, img_b):
            acc.setdefault(row["k"], []).append(row)
    for k in sorted(acc):
        rows = acc[k]
        total = sum(r["matched_pixels"] for r in rows)
        mean = (sum(r["mean_abs_diff"] * r["matched_pixels"] for r in rows) / total
                if total else 0.0)
        report.color_difference.append(
            {"k": k, "mean_abs_diff": mean, "matched_pixels": total})

    if tables is not None:
        for i in range(len(tables) - 1):
            sig_sets = significant_sets(frames[i + 1][1])
            out = order_inversion_rate(tables[i], tables[i + 1], sig_sets)
            report.inversions.append({"frame_pair": f"{i}-{i + 1}", **out})

    if reference_frames is not None:
        for i, ((img, _), (ref, _)) in enumerate(zip(frames, reference_frames)):
            row = {"frame": i, "psnr_db": psnr(img, ref)}
            if with_ssim:
                row["ssim"] = ssim(img, ref)
            report.quality.append(row)
    return report
