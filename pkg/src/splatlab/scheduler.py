"""Cross-frame sort reuse: predict a future pose, sort once, render a window.

A sorting result built at a predicted pose (with an expanded viewport) is
shared by a window of consecutive frames. Each frame still projects the cloud
and re-evaluates per-Gaussian color at its own pose; only tile membership and
depth order come from the shared table, looked up through a whole-tile offset.
The speculative sort for the next window is staged from the last two observed
poses at the end of each window and executed when adopted, which is
equivalent to running it concurrently since its inputs are frozen at staging
time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.transform import Rotation

from .pipeline import (
    DEFAULT_TILE_SIZE,
    RenderConfig,
    ReuseContext,
    TileGrid,
    bin_and_sort,
    project_cloud,
    render_frame,
)
from .scene import CameraPose, GaussianCloud, quat_multiply


@dataclass
class SortReuseConfig:
    window: int = 6            # frames sharing one sorting result
    margin_px: int = 4         # viewport expansion per side, rounded up to tiles
    frame_interval: float = 1.0 / 90.0

    def __post_init__(self):
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.frame_interval <= 0:
            raise ValueError(f"frame_interval must be positive, got {self.frame_interval}")
        if self.margin_px < 0:
            raise ValueError(f"margin_px must be >= 0, got {self.margin_px}")


@dataclass
class Velocity:
    linear: np.ndarray   # world units / s
    angular: np.ndarray  # axis-angle rate, rad / s


def _to_scipy(q):
    return Rotation.from_quat(np.asarray(q)[[1, 2, 3, 0]])


def estimate_velocity(prev: CameraPose, cur: CameraPose, dt: float) -> Velocity:
    """Finite-difference velocity from the last two observed poses."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    linear = (cur.position - prev.position) / dt
    rel = _to_scipy(prev.orientation).inv() * _to_scipy(cur.orientation)
    angular = rel.as_rotvec() / dt
    return Velocity(linear=linear, angular=np.asarray(angular))


def predict_pose(cur: CameraPose, vel: Velocity, t_r: float) -> CameraPose:
    """Extrapolate the pose t_r seconds ahead under constant velocity."""
    position = cur.position + vel.linear * t_r
    step = Rotation.from_rotvec(vel.angular * t_r).as_quat()  # xyzw
    step_wxyz = np.array([step[3], step[0], step[1], step[2]])
    orientation = quat_multiply(cur.orientation, step_wxyz)
    return replace(cur, position=position, orientation=orientation)


def expand_viewport(pose: CameraPose, margin_px: int,
                    tile_size: int = DEFAULT_TILE_SIZE) -> CameraPose:
    """Grow the viewport by whole tiles per side, keeping the image centered."""
    m_t = -(-margin_px // tile_size)
    if m_t == 0:
        return pose
    pad = m_t * tile_size
    return pose.with_image(pose.width + 2 * pad, pose.height + 2 * pad,
                           pose.cx + pad, pose.cy + pad)


def margin_tiles(margin_px: int, tile_size: int = DEFAULT_TILE_SIZE) -> int:
    return -(-margin_px // tile_size)


@dataclass
class ScheduleEvent:
    frame: int
    sorted_this_frame: bool   # a projection+sort ran for this frame's table
    reused: bool              # rendered from a shared table
    cold_start: bool
    coverage_misses: int = 0
    sort_keys: int = 0        # (gaussian, tile) pairs sorted, when a sort ran


class SortReuseScheduler:
    """Drives per-frame rendering with shared sorting results.

    The first two frames run the full pipeline (no velocity estimate yet).
    After that, each window of `window` frames renders from one table built at
    the predicted, viewport-expanded pose; a non-finite prediction falls back
    to per-frame sorting for that window.
    """

    def __init__(self, cloud: GaussianCloud, cfg: SortReuseConfig | None = None,
                 render_config: RenderConfig | None = None):
        self.cloud = cloud
        self.cfg = cfg or SortReuseConfig()
        self.render_config = render_config or RenderConfig()
        self.frame_index = -1
        self.history: list[CameraPose] = []
        self.active_table = None
        self.frames_used = 0
        self.fallback_window = False
        self.pending_pose: CameraPose | None = None
        self.pending_staged = False
        self.events: list[ScheduleEvent] = []

    def _stage_prediction(self) -> None:
        self.pending_staged = True
        self.pending_pose = None
        if len(self.history) < 2:
            return
        prev, cur = self.history[-2], self.history[-1]
        vel = estimate_velocity(prev, cur, self.cfg.frame_interval)
        t_r = 0.5 * self.cfg.window * self.cfg.frame_interval
        pred = predict_pose(cur, vel, t_r)
        if not (np.all(np.isfinite(pred.position)) and np.all(np.isfinite(pred.orientation))):
            return
        self.pending_pose = expand_viewport(pred, self.cfg.margin_px,
                                            self.render_config.tile_size)

    def _build_table(self, pose: CameraPose):
        grid = TileGrid.for_image(pose.width, pose.height, self.render_config.tile_size)
        proj = project_cloud(self.cloud, pose)
        return bin_and_sort(proj, grid, pose, margin_px=self.cfg.margin_px)

    def step(self, new_pose: CameraPose):
        """Render the next frame of the trace; returns (image, stats, event)."""
        self.frame_index += 1
        self.history = (self.history + [new_pose])[-2:]

        if self.frame_index < 2:
            image, stats = render_frame(self.cloud, new_pose, self.render_config)
            if self.frame_index == 1:
                self._stage_prediction()
            event = ScheduleEvent(self.frame_index, sorted_this_frame=True,
                                  reused=False, cold_start=True,
                                  sort_keys=int(stats.tile_list_len.sum()))
            self.events.append(event)
            return image, stats, event

        sorted_now = False
        sort_keys = 0
        if self.active_table is None or self.frames_used >= self.cfg.window:
            if self.pending_pose is not None:
                # Execute the speculative sort staged at the end of the
                # previous window.
                self.active_table = self._build_table(self.pending_pose)
                self.fallback_window = False
                sorted_now = True
                sort_keys = len(self.active_table.ids)
            else:
                self.active_table = None
                self.fallback_window = True
            self.frames_used = 0
            self.pending_pose = None
            self.pending_staged = False

        if self.fallback_window:
            image, stats = render_frame(self.cloud, new_pose, self.render_config)
            reused = False
            sorted_now = True
            sort_keys = int(stats.tile_list_len.sum())
        else:
            off = self.active_table.lookup_offset_tiles(new_pose)
            reuse = ReuseContext(self.active_table, off)
            image, stats = render_frame(self.cloud, new_pose, self.render_config, reuse=reuse)
            reused = True

        self.frames_used += 1
        if self.frames_used >= self.cfg.window and not self.pending_staged:
            self._stage_prediction()

        event = ScheduleEvent(self.frame_index, sorted_this_frame=sorted_now,
                              reused=reused, cold_start=False,
                              coverage_misses=stats.coverage_misses,
                              sort_keys=sort_keys)
        self.events.append(event)
        return image, stats, event


def write_pose_trace(path, poses: list[CameraPose], times=None) -> None:
    """JSON-lines trace: one header record with intrinsics, one record per pose."""
    if not poses:
        raise ValueError("empty pose list")
    p0 = poses[0]
    header = {"intrinsics": {
        "fx": p0.fx, "fy": p0.fy, "cx": p0.cx, "cy": p0.cy,
        "width": p0.width, "height": p0.height, "near": p0.near, "far": p0.far,
    }}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for i, pose in enumerate(poses):
            t = times[i] if times is not None else i / 90.0
            rec = {"t": t, "position": [float(x) for x in pose.position],
                   "quaternion": [float(x) for x in pose.orientation]}
            fh.write(json.dumps(rec) + "\n")


def read_pose_trace(path) -> tuple[list[CameraPose], list[float]]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise ValueError(f"{path}: empty pose trace")
    header = json.loads(lines[0])
    if "intrinsics" not in header:
        raise ValueError(f"{path}: first record must carry intrinsics")
    intr = header["intrinsics"]
    poses = []
    times = []
    for line in lines[1:]:
        rec = json.loads(line)
        poses.append(CameraPose(
            position=np.array(rec["position"], dtype=np.float64),
            orientation=np.array(rec["quaternion"], dtype=np.float64),
            fx=intr["fx"], fy=intr["fy"], cx=intr["cx"], cy=intr["cy"],
            width=int(intr["width"]), height=int(intr["height"]),
            near=float(intr.get("near", 0.1)), far=float(intr.get("far", 100.0)),
        ))
        times.append(float(rec.get("t", len(times) / 90.0)))
    return poses, times
