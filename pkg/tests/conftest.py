import numpy as np
import pytest

from splatlab import CameraPose, SceneSpec, generate_synthetic_cloud


def make_camera(width=128, height=128, fov_px=120.0, z=-3.0, x=0.0, y=0.0,
                near=0.1, far=50.0):
    """Camera on the -z side looking toward the origin (+z forward)."""
    return CameraPose(
        position=(x, y, z), orientation=(1.0, 0.0, 0.0, 0.0),
        fx=fov_px, fy=fov_px, cx=width / 2.0, cy=height / 2.0,
        width=width, height=height, near=near, far=far,
    )


def desk_cloud(count=800, seed=7, extent=0.8, scale_range=(0.03, 0.12),
               opacity_range=(0.3, 1.0), sh_degree=1):
    spec = SceneSpec(count=count, extent=extent, scale_range=scale_range,
                     opacity_range=opacity_range, sh_degree=sh_degree)
    return generate_synthetic_cloud(spec, seed)


@pytest.fixture
def camera():
    return make_camera()


@pytest.fixture
def small_cloud():
    return desk_cloud(count=300, seed=3)


def linear_trace(base_cam, n_frames, step, axis=0):
    """Constant-velocity translation trace starting at base_cam."""
    poses = []
    for i in range(n_frames):
        pos = np.array(base_cam.position, dtype=np.float64)
        pos[axis] += step * i
        poses.append(CameraPose(
            position=pos, orientation=base_cam.orientation.copy(),
            fx=base_cam.fx, fy=base_cam.fy, cx=base_cam.cx, cy=base_cam.cy,
            width=base_cam.width, height=base_cam.height,
            near=base_cam.near, far=base_cam.far,
        ))
    return poses
