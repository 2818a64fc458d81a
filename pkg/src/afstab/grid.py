"""Structured Cartesian grids, grid fields, and their flat binary format."""

import json
import struct
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

MAGIC = b"AFSF"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Grid:
    """Uniform node-centered grid on [-halfwidth, halfwidth]^3.

    nodes must be odd and >= 17 so a node sits at the box center; spacing
    h = 2 halfwidth / (nodes - 1).
    """

    halfwidth: float
    nodes: int

    def __post_init__(self):
        if self.nodes < 17 or self.nodes % 2 == 0:
            raise ValueError(f"grid nodes must be odd and >= 17, got {self.nodes}")
        if self.halfwidth <= 0:
            raise ValueError("grid halfwidth must be positive")

    @property
    def h(self) -> float:
        return 2.0 * self.halfwidth / (self.nodes - 1)

    @property
    def axis(self) -> np.ndarray:
        return -self.halfwidth + self.h * np.arange(self.nodes)

    def points(self) -> np.ndarray:
        """All node coordinates, shape (N, N, N, 3) indexed [ix, iy, iz]."""
        ax = self.axis
        X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
        return np.stack([X, Y, Z], axis=-1)

    def radius(self) -> np.ndarray:
        return np.linalg.norm(self.points(), axis=-1)

    def boundary_mask(self) -> np.ndarray:
        m = np.zeros((self.nodes,) * 3, dtype=bool)
        m[0, :, :] = m[-1, :, :] = True
        m[:, 0, :] = m[:, -1, :] = True
        m[:, :, 0] = m[:, :, -1] = True
        return m

    def margin_mask(self, width: int = 2) -> np.ndarray:
        """Nodes within `width` cells of the box boundary."""
        m = np.ones((self.nodes,) * 3, dtype=bool)
        s = slice(width, self.nodes - width)
        m[s, s, s] = False
        return m

    def contains(self, pts) -> np.ndarray:
        pts = np.asarray(pts, float)
        return np.all(np.abs(pts) <= self.halfwidth + 1e-12, axis=-1)


@dataclass
class ScalarGridField:
    grid: Grid
    values: np.ndarray   # (N, N, N)

    def __post_init__(self):
        expected = (self.grid.nodes,) * 3
        if self.values.shape != expected:
            raise ValueError(f"field shape {self.values.shape} != grid shape {expected}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid field contains non-finite values")

    def interpolator(self):
        ax = self.grid.axis
        return RegularGridInterpolator((ax, ax, ax), self.values, method="linear",
                                       bounds_error=True)

    def at(self, pts):
        return self.interpolator()(np.asarray(pts, float))


@dataclass
class VectorGridField:
    grid: Grid
    values: np.ndarray   # (N, N, N, 3)

    def interpolator(self):
        ax = self.grid.axis
        return RegularGridInterpolator((ax, ax, ax), self.values, method="linear",
                                       bounds_error=True)

    def at(self, pts):
        return self.interpolator()(np.asarray(pts, float))


# ---------------------------------------------------------------------------
# finite-difference stencils (post-processing; the solver assembles its own)


def diff1(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    """First derivative: 4th-order centered, degrading to 2nd order in the
    two-cell margin (centered at depth 1, one-sided on the faces)."""
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    out[2:-2] = (v[:-4] - 8.0 * v[1:-3] + 8.0 * v[3:-1] - v[4:]) / (12.0 * h)
    out[1] = (v[2] - v[0]) / (2.0 * h)
    out[-2] = (v[-1] - v[-3]) / (2.0 * h)
    out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
    out[-1] = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * h)
    return np.moveaxis(out, 0, axis)


def diff2(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Pure second derivative with the same interior/margin orders as diff1."""
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    out[2:-2] = (-v[:-4] + 16.0 * v[1:-3] - 30.0 * v[2:-2]
                 + 16.0 * v[3:-1] - v[4:]) / (12.0 * h**2)
    out[1] = (v[0] - 2.0 * v[1] + v[2]) / h**2
    out[-2] = (v[-3] - 2.0 * v[-2] + v[-1]) / h**2
    out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h**2
    out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / h**2
    return np.moveaxis(out, 0, axis)


def gradient(values: np.ndarray, h: float) -> np.ndarray:
    """Coordinate partials d_a u, shape (N, N, N, 3)."""
    return np.stack([diff1(values, h, a) for a in range(3)], axis=-1)


def second_derivatives(values: np.ndarray, h: float) -> np.ndarray:
    """Coordinate Hessian d_a d_b u, shape (N, N, N, 3, 3), exactly symmetric.

    Mixed entries compose the two one-dimensional first-derivative stencils,
    which commute, so symmetry holds to round-off by construction.
    """
    out = np.empty(values.shape + (3, 3))
    firsts = [diff1(values, h, a) for a in range(3)]
    for a in range(3):
        out[..., a, a] = diff2(values, h, a)
        for b in range(a + 1, 3):
            mixed = diff1(firsts[b], h, a)
            out[..., a, b] = mixed
            out[..., b, a] = mixed
    return out


# ---------------------------------------------------------------------------
# flat binary field format: header (magic, version, N, halfwidth, axis order)
# then nodes^3 8-byte little-endian reals in x-fastest order


def write_field(path, field: ScalarGridField, sidecar: dict | None = None):
    header = struct.pack("<4sHI d 3s", MAGIC, FORMAT_VERSION, field.grid.nodes,
                         field.grid.halfwidth, b"xyz")
    payload = np.ascontiguousarray(field.values.astype("<f8").T).tobytes()
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)
    if sidecar is not None:
        with open(str(path) + ".json", "w") as f:
            json.dump(sidecar, f, sort_keys=True, indent=2)
            f.write("\n")


def read_field(path) -> ScalarGridField:
    with open(path, "rb") as f:
        head = f.read(struct.calcsize("<4sHI d 3s"))
        magic, version, n, halfwidth, order = struct.unpack("<4sHI d 3s", head)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a field dump (magic {magic!r})")
        if version != FORMAT_VERSION or order != b"xyz":
            raise ValueError(f"{path}: unsupported version/layout")
        payload = np.frombuffer(f.read(8 * n**3), dtype="<f8")
    values = payload.reshape((n, n, n)).T.copy()   # stored z-slow, x-fast
    return ScalarGridField(Grid(halfwidth=halfwidth, nodes=n), values)


def write_axis_profiles(path, fields: dict, grid: Grid):
    """CSV line probe: values of each named field along the three axes."""
    import csv

    ax = grid.axis
    c = grid.nodes // 2
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["axis", "coord"] + list(fields.keys()))
        for name_axis, take in (("x", lambda v, i: v[i, c, c]),
                                ("y", lambda v, i: v[c, i, c]),
                                ("z", lambda v, i: v[c, c, i])):
            for i, coord in enumerate(ax):
                writer.writerow([name_axis, repr(float(coord))]
                                + [repr(float(take(v, i))) for v in fields.values()])
