"""Trace-driven cycle and energy models of two rasterizer backends.

Both models replay per-tile scan traces recorded by the renderer:

* A SIMT GPU model: one pixel per lane, warp-wide lockstep over the tile's
  depth-sorted list in shared-memory batches. A lane does useful blend work
  only where its pixel's Gaussian is significant and unterminated, so sparse
  integration shows up as masked-lane cycles.
* An accelerator model: an array of render units, each with `pes_per_unit`
  streaming frontends (3-stage, one Gaussian per cycle per PE) feeding one
  color-integration backend (one significant Gaussian per cycle) through a
  bounded FIFO. A remapped mode lets a unit's PEs stride one cache-missed
  pixel's remaining list instead of idling after cache hits.

This is an analytical/cycle hybrid with stall accounting, not RTL: absolute
constants are configurable defaults and all conclusions drawn from it in the
tests are relative.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .pipeline import FrameStats, TileTrace


@dataclass
class HwConfig:
    # accelerator array
    unit_grid: tuple[int, int] = (8, 8)
    pes_per_unit: int = 4
    clock_hz: float = 1e9
    fifo_depth: int = 16
    frontend_pipeline_stages: int = 3
    # GPU model (per-Gaussian instruction slots; exp/transcendentals dominate)
    warp_size: int = 32
    gpu_sync_cycles: float = 4.0
    gpu_alpha_cycles: float = 10.0
    gpu_blend_cycles: float = 12.0
    gpu_concurrent_warps: int = 16
    gpu_cache_lookup_cycles: float = 30.0
    # GPU-side projection/sorting cost model
    proj_cycles_per_gaussian: float = 4.0
    sort_cycles_per_key: float = 8.0
    # memory and energy (arbitrary energy units; only ratios matter)
    bytes_per_gaussian_feature: int = 48
    fetch_bytes_per_cycle: float = 64.0
    feature_buffer_bytes: int = 176 * 1024  # double-buffered pair
    output_buffer_bytes: int = 6 * 1024
    alpha_record_bytes_per_pixel: int = 20  # k ids of 4 bytes each
    dram_sram_energy_ratio: float = 25.0
    energy_sram_per_byte: float = 1.0
    energy_frontend_op: float = 2.0
    energy_backend_op: float = 4.0
    energy_proj_gaussian: float = 4.0
    energy_sort_key: float = 2.0

    def __post_init__(self):
        for name in ("clock_hz", "gpu_sync_cycles", "gpu_alpha_cycles", "gpu_blend_cycles",
                     "proj_cycles_per_gaussian", "sort_cycles_per_key"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.fifo_depth < 1 or self.pes_per_unit < 1 or self.warp_size < 1:
            raise ValueError("fifo_depth, pes_per_unit, warp_size must be >= 1")

    @property
    def n_units(self) -> int:
        return self.unit_grid[0] * self.unit_grid[1]


def _scan_masked_sig(trace: TileTrace) -> np.ndarray:
    """(P, L) significance restricted to each pixel's walked prefix."""
    l = trace.sig.shape[1]
    return trace.sig & (np.arange(l)[None, :] < trace.n_scan[:, None])


def simulate_gpu_tile(trace: TileTrace, cfg: HwConfig) -> dict:
    """Warp-lockstep replay of one tile; cycles are summed over its warps."""
    sig = _scan_masked_sig(trace)
    p = sig.shape[0]
    ws = cfg.warp_size
    cycles = 0.0
    lane_cycles_total = 0.0
    lane_cycles_masked = 0.0
    integrations = 0

    for w0 in range(0, p, ws):
        lanes = slice(w0, min(w0 + ws, p))
        n_lanes = lanes.stop - lanes.start
        n = trace.n_scan[lanes]
        max_scan = int(n.max()) if n.size else 0
        if max_scan > 0:
            counts = sig[lanes, :max_scan].sum(axis=0)
            any_active = counts > 0
            n_batches = -(-max_scan // ws)
            cycles += n_batches * cfg.gpu_sync_cycles
            cycles += max_scan * cfg.gpu_alpha_cycles
            cycles += int(any_active.sum()) * cfg.gpu_blend_cycles
            lane_cycles_total += int(any_active.sum()) * n_lanes * cfg.gpu_blend_cycles
            lane_cycles_masked += float(((n_lanes - counts)[any_active]).sum()) * cfg.gpu_blend_cycles
            integrations += int(counts.sum())
        if (trace.lookup_pos[lanes] >= 0).any():
            cycles += cfg.gpu_cache_lookup_cycles

    masked_fraction = lane_cycles_masked / lane_cycles_total if lane_cycles_total else 0.0
    return {
        "cycles": cycles,
        "masked_fraction": masked_fraction,
        "active_lane_fraction": 1.0 - masked_fraction if lane_cycles_total else 0.0,
        "integrations": integrations,
    }


def _run_fifo(arrivals: np.ndarray, depth: int):
    """Single-server FIFO fed by per-cycle arrival counts.

    Returns (elapsed_source_cycles, completion_cycle, stall_cycles). When the
    queue never fills, both come from a vectorized Lindley recursion; a full
    queue stretches the source timeline (producers hold the cycle's overflow).
    """
    s = int(arrivals.sum())
    if s == 0:
        return len(arrivals), 0, 0
    cum = np.cumsum(arrivals)
    t = np.arange(len(arrivals))
    # served[c] = min_j<=c (cum[j] + (c - j)), capped by the 1/cycle rate.
    served = np.minimum(t + np.minimum.accumulate(cum - t), t + 1)
    np.minimum(served, cum, out=served)
    queue = cum - served
    if queue.max() <= depth:
        if served[-1] >= s:
            done = int(np.argmax(served >= s)) + 1
        else:
            done = len(arrivals) + (s - int(served[-1]))
        return len(arrivals), done, 0

    # Stall path: replay cycle by cycle, carrying blocked arrivals. Push and
    # pop share a cycle, so the push cap is depth - queue + 1 while serving.
    queue_n = 0
    pending = 0
    src = 0
    cycle = 0
    stalls = 0
    elapsed_source = 0
    last_service = 0
    n_src = len(arrivals)
    while src < n_src or pending or queue_n:
        if pending == 0 and src < n_src:
            pending = int(arrivals[src])
            src += 1
            elapsed_source = cycle + 1
        cap = depth - queue_n + (1 if queue_n else 0)
        take = min(pending, cap)
        queue_n += take
        pending -= take
        if pending:
            stalls += 1
            elapsed_source = cycle + 1
        if queue_n:
            queue_n -= 1
            last_service = cycle + 1
        cycle += 1
    return elapsed_source, last_service, stalls


def simulate_accel_tile(trace: TileTrace, cfg: HwConfig, mode: str = "per_pixel") -> dict:
    """One render unit processing one tile, pixel groups of pes_per_unit.

    per_pixel: each PE streams its own pixel's list. remapped: lanes run
    per-pixel until every cache lookup in the group has resolved (the
    reconfiguration point); from there the unit's PEs stride each
    unfinished pixel's remaining list together, one pixel at a time.
    """
    if mode not in ("per_pixel", "remapped"):
        raise ValueError(f"unknown mode {mode!r}")
    sig = _scan_masked_sig(trace)
    p = sig.shape[0]
    pes = cfg.pes_per_unit
    fill = cfg.frontend_pipeline_stages

    cycles = 0.0
    stalls = 0
    backend_busy = 0
    frontend_busy = 0

    for g0 in range(0, p, pes):
        rows = slice(g0, min(g0 + pes, p))
        n = trace.n_scan[rows].astype(np.int64)
        gsig = sig[rows]
        lp = trace.lookup_pos[rows].astype(np.int64)
        if mode == "per_pixel" or not (lp >= 0).any():
            span = int(n.max()) if n.size else 0
            mask = np.arange(span)[None, :] < n[:, None]
            arrivals = (gsig[:, :span] & mask).sum(axis=0)
            fe_busy = int(n.sum())
        else:
            barrier = int(lp[lp >= 0].max())
            solo = np.minimum(n, barrier)
            span = int(solo.max()) if solo.size else 0
            mask = np.arange(span)[None, :] < solo[:, None]
            parts = [(gsig[:, :span] & mask).sum(axis=0)]
            fe_busy = int(n.sum())
            for i in np.flatnonzero(n > solo):
                rem = gsig[i, solo[i]:n[i]].astype(np.int64)
                if len(rem) % pes:
                    rem = np.concatenate([rem, np.zeros(pes - len(rem) % pes, np.int64)])
                parts.append(rem.reshape(-1, pes).sum(axis=1))
            arrivals = np.concatenate(parts)

        elapsed_src, done, g_stalls = _run_fifo(np.asarray(arrivals, dtype=np.int64),
                                                cfg.fifo_depth)
        s = int(arrivals.sum())
        group_cycles = (max(elapsed_src, done) + fill) if (s or elapsed_src) else 0
        cycles += group_cycles
        stalls += g_stalls
        backend_busy += s
        frontend_busy += fe_busy

    # Double-buffered feature loads overlap compute; only the excess of the
    # tile's DMA time over its compute time surfaces as stall cycles.
    fetch_cycles = trace.ids.size * cfg.bytes_per_gaussian_feature / cfg.fetch_bytes_per_cycle
    memory_stall = max(0.0, fetch_cycles - cycles)
    cycles += memory_stall

    return {
        "cycles": cycles,
        "frontend_util": frontend_busy / (pes * cycles) if cycles else 0.0,
        "backend_util": backend_busy / cycles if cycles else 0.0,
        "fifo_stalls": stalls,
        "memory_stall_cycles": memory_stall,
        "integrations": backend_busy,
    }


@dataclass
class SimReport:
    engine: str
    mode: str
    frames: int
    projection_cycles: float
    sorting_cycles: float
    raster_cycles: float
    masked_fraction: float
    frontend_util: float
    backend_util: float
    fifo_stalls: int
    integrations: int
    energy_compute: float
    energy_sram: float
    energy_dram: float
    per_frame: list = field(default_factory=list)

    @property
    def total_cycles(self) -> float:
        return self.projection_cycles + self.sorting_cycles + self.raster_cycles

    @property
    def energy_total(self) -> float:
        return self.energy_compute + self.energy_sram + self.energy_dram

    def fps(self, clock_hz: float) -> float | None:
        if self.total_cycles <= 0 or self.frames == 0:
            return None
        return clock_hz / (self.total_cycles / self.frames)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["total_cycles"] = self.total_cycles
        d["energy_total"] = self.energy_total
        return d


def account_frame(stats_list: list[FrameStats], cfg: HwConfig, engine: str = "gpu",
                  accel_mode: str = "per_pixel", events=None, cache_swaps: int = 0,
                  cache_size_bytes: int = 53248) -> SimReport:
    """Aggregate cycle and energy totals over a rendered trace.

    `events` (one per frame, or None) controls sorting cost: frames that
    reused a shared table charge zero sorting cycles on the critical path;
    frames that sorted charge their own key count. Without events every frame
    sorts its own table.
    """
    if engine not in ("gpu", "accel"):
        raise ValueError(f"unknown engine {engine!r}")

    proj_cycles = 0.0
    sort_cycles = 0.0
    raster_cycles = 0.0
    masked_num = masked_den = 0.0
    fe_util_num = be_util_num = util_den = 0.0
    stalls = 0
    integrations = 0
    iterated_total = 0
    keys_sorted_total = 0
    per_frame = []

    for f, stats in enumerate(stats_list):
        n_source = (stats.n_projected + stats.n_culled_depth
                    + stats.n_culled_frustum + stats.n_culled_nonfinite)
        frame_proj = n_source * cfg.proj_cycles_per_gaussian
        if events is not None:
            ev = events[f]
            frame_keys = ev.sort_keys if ev.sorted_this_frame else 0
        else:
            frame_keys = int(stats.tile_list_len.sum())
        frame_sort = frame_keys * cfg.sort_cycles_per_key
        keys_sorted_total += frame_keys

        traces = [t for t in stats.tile_traces if t is not None]
        if engine == "gpu":
            tile_cycles = 0.0
            for t in traces:
                r = simulate_gpu_tile(t, cfg)
                tile_cycles += r["cycles"]
                masked_num += r["masked_fraction"] * r["cycles"]
                masked_den += r["cycles"]
                integrations += r["integrations"]
            frame_raster = tile_cycles / cfg.gpu_concurrent_warps
        else:
            unit_load = np.zeros(cfg.n_units)
            for i, t in enumerate(traces):
                r = simulate_accel_tile(t, cfg, accel_mode)
                unit_load[i % cfg.n_units] += r["cycles"]
                fe_util_num += r["frontend_util"] * r["cycles"]
                be_util_num += r["backend_util"] * r["cycles"]
                util_den += r["cycles"]
                stalls += r["fifo_stalls"]
                integrations += r["integrations"]
            frame_raster = float(unit_load.max()) if traces else 0.0

        iterated_total += int(stats.iterated.sum())
        proj_cycles += frame_proj
        sort_cycles += frame_sort
        raster_cycles += frame_raster
        per_frame.append({"frame": f, "projection": frame_proj, "sorting": frame_sort,
                          "rasterization": frame_raster})

    feat = cfg.bytes_per_gaussian_feature
    sram_bytes = iterated_total * feat
    # DRAM: feature loads per sorted key, plus cache save + reload per group swap.
    dram_bytes = keys_sorted_total * feat + cache_swaps * 2 * cache_size_bytes

    energy_compute = (
        integrations * cfg.energy_backend_op
        + iterated_total * cfg.energy_frontend_op
        + sum((s.n_projected + s.n_culled_depth + s.n_culled_frustum + s.n_culled_nonfinite)
              for s in stats_list) * cfg.energy_proj_gaussian
        + keys_sorted_total * cfg.energy_sort_key
    )
    energy_sram = sram_bytes * cfg.energy_sram_per_byte
    energy_dram = dram_bytes * cfg.energy_sram_per_byte * cfg.dram_sram_energy_ratio

    return SimReport(
        engine=engine, mode=accel_mode, frames=len(stats_list),
        projection_cycles=proj_cycles, sorting_cycles=sort_cycles,
        raster_cycles=raster_cycles,
        masked_fraction=masked_num / masked_den if masked_den else 0.0,
        frontend_util=fe_util_num / util_den if util_den else 0.0,
        backend_util=be_util_num / util_den if util_den else 0.0,
        fifo_stalls=stalls, integrations=integrations,
        energy_compute=energy_compute, energy_sram=energy_sram, energy_dram=energy_dram,
        per_frame=per_frame,
    )


def report_to_json(report: SimReport) -> str:
    return json.dumps(report.to_dict(), indent=2)
