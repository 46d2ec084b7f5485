import struct
from pathlib import Path

import numpy as np
import pytest

from splatlab import (
    Gaussian,
    SceneError,
    SceneSpec,
    eval_sh_color,
    eval_sh_colors,
    generate_synthetic_cloud,
    load_ply,
    load_ply_file,
    save_ply,
)
from splatlab.plyio import PlyFormatError
from splatlab.scene import SH_C0, SH_C1

FIXTURES = Path(__file__).parent / "fixtures"


def minimal_ply(opacity_logit=0.0, scale_log=(0.0, 0.0, 0.0), n_rest=0, drop=None,
                nan_record=False):
    names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(n_rest)]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    if drop:
        names.remove(drop)
    header = ["ply", "format binary_little_endian 1.0", "element vertex 1"]
    header += [f"property float {n}" for n in names]
    header += ["end_header"]
    values = {n: 0.0 for n in names}
    values.update({"opacity": opacity_logit, "rot_0": 1.0,
                   "scale_0": scale_log[0], "scale_1": scale_log[1], "scale_2": scale_log[2]})
    if nan_record:
        values["y"] = float("nan")
    body = b"".join(struct.pack("<f", values[n]) for n in names)
    return ("\n".join(header) + "\n").encode() + body


class TestLoadPly:
    def test_opacity_logit_zero_gives_half(self):
        cloud = load_ply(minimal_ply(opacity_logit=0.0))
        assert len(cloud) == 1
        assert cloud.opacities[0] == pytest.approx(0.5)

    def test_zero_scale_log_gives_unit_scale(self):
        cloud = load_ply(minimal_ply(scale_log=(0.0, 0.0, 0.0)))
        assert np.allclose(cloud.scales[0], 1.0)

    def test_missing_property_named_in_error(self):
        with pytest.raises(PlyFormatError, match="f_dc_1"):
            load_ply(minimal_ply(drop="f_dc_1"))

    def test_nan_rejected_with_record_index(self):
        with pytest.raises(PlyFormatError, match="record 0"):
            load_ply(minimal_ply(nan_record=True))

    def test_truncated_body(self):
        data = minimal_ply()
        with pytest.raises(PlyFormatError, match="truncated"):
            load_ply(data[:-4])

    def test_non_binary_format_rejected(self):
        data = minimal_ply().replace(b"binary_little_endian", b"ascii")
        with pytest.raises(PlyFormatError, match="binary_little_endian"):
            load_ply(data)

    def test_fixture_ids_follow_file_order_and_roundtrip(self):
        raw = (FIXTURES / "three_points.ply").read_bytes()
        cloud = load_ply(raw)
        assert len(cloud) == 3
        # Record order defines IDs: depths increase 1, 2, 3 in the fixture.
        assert np.allclose(cloud.positions[:, 2], [1.0, 2.0, 3.0])
        assert save_ply(cloud) == raw

    def test_quaternions_normalized(self):
        cloud = load_ply_file(FIXTURES / "three_points.ply")
        assert np.allclose(np.linalg.norm(cloud.rotations, axis=1), 1.0, atol=1e-12)


class TestEvalSh:
    def test_degree0_constant_basis(self):
        g = Gaussian(position=np.zeros(3), rotation=np.array([1.0, 0, 0, 0]),
                     scale=np.ones(3), opacity=1.0,
                     sh_coeffs=np.array([[0.3, -0.2, 1.8]]))
        rgb = eval_sh_color(g, np.array([0.0, 0.0, 1.0]))
        expected = np.maximum(np.array([0.3, -0.2, 1.8]) * SH_C0 + 0.5, 0.0)
        assert np.allclose(rgb, expected)

    def test_degree0_zero_coeff_gives_half_gray(self):
        g = Gaussian(position=np.zeros(3), rotation=np.array([1.0, 0, 0, 0]),
                     scale=np.ones(3), opacity=1.0, sh_coeffs=np.zeros((1, 3)))
        for d in ([0, 0, 1], [1, 0, 0], [0.577, 0.577, 0.577]):
            d = np.asarray(d) / np.linalg.norm(d)
            assert np.allclose(eval_sh_color(g, d), 0.5)

    def test_degree1_z_linear_difference(self):
        # Independent direct-basis evaluation: the z-linear band contributes
        # +SH_C1 * z * c, so the z axis difference is 2 * c * SH_C1.
        c = 0.4
        sh = np.zeros((4, 3))
        sh[2, :] = c
        g = Gaussian(position=np.zeros(3), rotation=np.array([1.0, 0, 0, 0]),
                     scale=np.ones(3), opacity=1.0, sh_coeffs=sh)
        up = eval_sh_color(g, np.array([0.0, 0.0, 1.0]))
        down = eval_sh_color(g, np.array([0.0, 0.0, -1.0]))
        assert np.allclose(up - down, 2 * c * SH_C1)

    def test_degree0_is_direction_independent(self):
        rng = np.random.Generator(np.random.Philox(5))
        sh = rng.uniform(-1, 1, size=(8, 1, 3))
        dirs = rng.normal(size=(8, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        ref = eval_sh_colors(sh, np.tile([0.0, 0.0, 1.0], (8, 1)))
        assert np.allclose(eval_sh_colors(sh, dirs), ref)

    def test_bad_coeff_count_rejected(self):
        g = Gaussian(position=np.zeros(3), rotation=np.array([1.0, 0, 0, 0]),
                     scale=np.ones(3), opacity=1.0, sh_coeffs=np.zeros((5, 3)))
        with pytest.raises(SceneError):
            eval_sh_color(g, np.array([0.0, 0.0, 1.0]))


class TestSyntheticCloud:
    def test_zero_count_rejected(self):
        with pytest.raises(SceneError):
            generate_synthetic_cloud(SceneSpec(count=0), seed=1)

    def test_determinism_byte_equal(self):
        spec = SceneSpec(count=64, sh_degree=2)
        a = save_ply(generate_synthetic_cloud(spec, seed=42))
        b = save_ply(generate_synthetic_cloud(spec, seed=42))
        assert a == b

    def test_different_seeds_differ(self):
        spec = SceneSpec(count=64)
        a = generate_synthetic_cloud(spec, seed=1)
        b = generate_synthetic_cloud(spec, seed=2)
        assert not np.allclose(a.positions, b.positions)

    def test_degenerate_opacity_range_exact(self):
        spec = SceneSpec(count=32, opacity_range=(1.0, 1.0))
        cloud = generate_synthetic_cloud(spec, seed=9)
        assert np.all(cloud.opacities == 1.0)

    @pytest.mark.parametrize("seed", range(8))
    def test_invariants_over_seeds(self, seed):
        spec = SceneSpec(count=100, sh_degree=seed % 4)
        cloud = generate_synthetic_cloud(spec, seed=seed)
        cloud.validate()  # raises on any violated invariant
        assert np.all(np.abs(np.linalg.norm(cloud.rotations, axis=1) - 1) <= 1e-6)
        assert np.all(cloud.scales > 0)
        assert np.all((cloud.opacities >= 0) & (cloud.opacities <= 1))

    def test_ply_roundtrip_preserves_cloud(self):
        cloud = generate_synthetic_cloud(SceneSpec(count=20, sh_degree=3), seed=4)
        back = load_ply(save_ply(cloud))
        assert np.allclose(back.positions, cloud.positions, atol=1e-6)
        assert np.allclose(back.opacities, cloud.opacities, atol=1e-6)
        assert np.allclose(back.scales, cloud.scales, rtol=1e-5)
        assert np.allclose(back.sh_coeffs, cloud.sh_coeffs, atol=1e-6)
        # Quaternions may flip sign under normalization; compare rotations.
        assert np.allclose(np.abs(np.sum(back.rotations * cloud.rotations, axis=1)),
                           1.0, atol=1e-6)
