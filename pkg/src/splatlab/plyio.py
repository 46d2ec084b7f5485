"""Binary PLY reader/writer for the common Gaussian-splat checkpoint layout.

Files are binary_little_endian with per-vertex float32 properties named
x, y, z, nx, ny, nz, f_dc_0..2, f_rest_*, opacity, scale_0..2, rot_0..3.
Stored opacity is a logit and stored scale is a log; loading applies the
sigmoid/exp activations and normalizes quaternions. The writer emits a
canonical header so a load/write round trip of our own files is byte-exact.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, logit

from .scene import GaussianCloud, SceneError, sh_degree_from_coeff_count

_FLOAT_TYPES = {"float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8"}


class PlyFormatError(ValueError):
    """Malformed or unsupported PLY input."""


def _required_props(n_rest: int) -> list[str]:
    props = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"]
    props += [f"f_rest_{i}" for i in range(n_rest)]
    props += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    return props


def _parse_header(data: bytes):
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise PlyFormatError("not a PLY file (missing magic or end_header)")
    header = data[: end + len(b"end_header\n")]
    lines = header.decode("ascii", errors="replace").splitlines()

    fmt = None
    count = None
    names: list[str] = []
    types: list[str] = []
    in_vertex = False
    for line in lines[1:]:
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                count = int(parts[2])
        elif parts[0] == "property" and in_vertex:
            if parts[1] == "list":
                raise PlyFormatError("list properties are not supported")
            if parts[1] not in _FLOAT_TYPES:
                raise PlyFormatError(f"unsupported property type {parts[1]!r}")
            types.append(_FLOAT_TYPES[parts[1]])
            names.append(parts[2])
    if fmt != "binary_little_endian":
        raise PlyFormatError(f"format must be binary_little_endian, got {fmt!r}")
    if count is None:
        raise PlyFormatError("no vertex element in header")
    return len(header), count, names, types


def load_ply(data: bytes) -> GaussianCloud:
    """Parse bytes into a cloud; Gaussian ID i is record i in file order."""
    offset, count, names, types = _parse_header(data)
    dtype = np.dtype(list(zip(names, types)))
    body = data[offset:]
    if len(body) < count * dtype.itemsize:
        raise PlyFormatError(
            f"truncated body: need {count * dtype.itemsize} bytes, have {len(body)}"
        )
    records = np.frombuffer(body, dtype=dtype, count=count)

    n_rest = sum(1 for n in names if n.startswith("f_rest_"))
    if n_rest % 3 != 0:
        raise PlyFormatError(f"f_rest property count {n_rest} is not a multiple of 3")
    sh_degree_from_coeff_count(1 + n_rest // 3)
    for prop in _required_props(n_rest):
        if prop not in names:
            raise PlyFormatError(f"missing required property {prop!r}")

    def col(name):
        return records[name].astype(np.float64)

    stacked = np.column_stack([col(n) for n in _required_props(n_rest)])
    bad = np.isnan(stacked)
    if bad.any():
        idx = int(np.argwhere(bad.any(axis=1))[0, 0])
        raise PlyFormatError(f"NaN field in record {idx}")

    positions = np.column_stack([col("x"), col("y"), col("z")])
    m_rest = n_rest // 3
    sh = np.zeros((count, 1 + m_rest, 3))
    sh[:, 0, :] = np.column_stack([col("f_dc_0"), col("f_dc_1"), col("f_dc_2")])
    # f_rest is channel-major: f_rest_{c*m_rest + j} is coefficient j+1 of channel c.
    for c in range(3):
        for j in range(m_rest):
            sh[:, 1 + j, c] = col(f"f_rest_{c * m_rest + j}")

    opacities = expit(col("opacity"))
    scales = np.exp(np.column_stack([col("scale_0"), col("scale_1"), col("scale_2")]))
    quats = np.column_stack([col("rot_0"), col("rot_1"), col("rot_2"), col("rot_3")])
    norms = np.linalg.norm(quats, axis=1, keepdims=True)
    if np.any(norms == 0):
        idx = int(np.argwhere(norms[:, 0] == 0)[0, 0])
        raise PlyFormatError(f"zero-norm rotation quaternion in record {idx}")
    quats = quats / norms

    cloud = GaussianCloud(positions, quats, scales, opacities, sh)
    cloud.validate()
    return cloud


def load_ply_file(path) -> GaussianCloud:
    with open(path, "rb") as fh:
        return load_ply(fh.read())


def save_ply(cloud: GaussianCloud) -> bytes:
    """Serialize a cloud with the inverse activations (logit opacity, log scale)."""
    n = len(cloud)
    m_rest = cloud.sh_coeffs.shape[1] - 1
    names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(3 * m_rest)]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]

    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in names]
    header.append("end_header")

    out = np.zeros(n, dtype=np.dtype([(name, "<f4") for name in names]))
    out["x"], out["y"], out["z"] = cloud.positions.T
    for c in range(3):
        out[f"f_dc_{c}"] = cloud.sh_coeffs[:, 0, c]
        for j in range(m_rest):
            out[f"f_rest_{c * m_rest + j}"] = cloud.sh_coeffs[:, 1 + j, c]
    with np.errstate(divide="ignore"):
        out["opacity"] = logit(cloud.opacities)
        log_scale = np.log(cloud.scales)
    out["scale_0"], out["scale_1"], out["scale_2"] = log_scale.T
    out["rot_0"], out["rot_1"], out["rot_2"], out["rot_3"] = cloud.rotations.T

    return ("\n".join(header) + "\n").encode("ascii") + out.tobytes()


def save_ply_file(cloud: GaussianCloud, path) -> None:
    with open(path, "wb") as fh:
        fh.write(save_ply(cloud))
