"""Core domain types and georeferencing for space-time volumes.

A space-time volume lays geography on the x-y plane and time on z. The value
grid is m cells wide (longitude), n cells tall (latitude), T steps deep, and
is stored flat in canonical index order ((t*n + y)*m + x) as 32-bit floats.

Core elements
-------------
Station, STSeries, STDataset : discrete sensor inputs
GridSpec                     : lon/lat extent mapped onto an m x n cell grid
SpaceTimeVolume              : the interpolated scalar field, immutable
SelectionState               : time range + optional spotlight circle + cluster id
Camera                       : pinhole camera in render-space coordinates
read_volume / write_volume   : VSTC binary cache
read_dataset / write_dataset : VSD dataset serialization
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

VSTC_MAGIC = b"VSTC"
VSD_MAGIC = b"VSDS"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Station:
    """A fixed sensor position. lon in [-180, 180], lat in [-90, 90]."""

    id: str
    lon: float
    lat: float

    def __post_init__(self):
        if not self.id:
            raise ValueError("station id must be non-empty")
        if not (-180.0 <= self.lon <= 180.0):
            raise ValueError(f"station {self.id}: lon {self.lon} outside [-180, 180]")
        if not (-90.0 <= self.lat <= 90.0):
            raise ValueError(f"station {self.id}: lat {self.lat} outside [-90, 90]")


@dataclass
class STSeries:
    """One station's aligned reading series; NaN marks a missing step."""

    station_id: str
    values: np.ndarray  # float32, shape (T,)

    def present_mask(self) -> np.ndarray:
        return ~np.isnan(self.values)


@dataclass
class STDataset:
    """Stations plus aligned time series.

    Attributes:
        stations: S stations, ids unique.
        series: S series aligned by index with ``stations``.
        t0: epoch seconds of step 0.
        dt: seconds per step.
        T: step count, >= 2.
        value_range: (v_min, v_max) with v_min < v_max.
    """

    stations: list
    series: list
    t0: int
    dt: int
    T: int
    value_range: tuple

    def __post_init__(self):
        if len(self.stations) < 1:
            raise ValueError("dataset needs at least one station")
        if self.T < 2:
            raise ValueError("dataset needs at least two time steps")
        if len(self.series) != len(self.stations):
            raise ValueError("series count must match station count")
        if self.dt <= 0:
            raise ValueError("dt must be positive seconds")
        ids = [s.id for s in self.stations]
        if len(set(ids)) != len(ids):
            raise ValueError("station ids must be unique")
        vmin, vmax = self.value_range
        if not vmin < vmax:
            raise ValueError("value_range requires v_min < v_max")
        for st, se in zip(self.stations, self.series):
            if se.station_id != st.id:
                raise ValueError("series misaligned with stations")
            if len(se.values) != self.T:
                raise ValueError(f"series {se.station_id} length {len(se.values)} != T {self.T}")

    @property
    def S(self) -> int:
        return len(self.stations)

    def values_matrix(self) -> np.ndarray:
        """All readings as a float32 (S, T) matrix, NaN where missing."""
        return np.stack([se.values for se in self.series]).astype(np.float32, copy=False)


@dataclass(frozen=True)
class GridSpec:
    """Equirectangular affine mapping of a lon/lat extent onto m x n cells.

    Cell (x, y) covers the half-open lon interval
    [lon0 + x*w, lon0 + (x+1)*w) with w = (lon1-lon0)/m, and likewise in lat.
    Continuous cell coordinates put cell centers at (x + 0.5, y + 0.5).
    """

    extent: tuple  # (lon0, lat0, lon1, lat1)
    m: int
    n: int

    def __post_init__(self):
        lon0, lat0, lon1, lat1 = self.extent
        if self.m < 2 or self.n < 2:
            raise ValueError("grid needs m >= 2 and n >= 2")
        if not (lon0 < lon1 and lat0 < lat1):
            raise ValueError("extent requires lon0 < lon1 and lat0 < lat1")

    def cell_coords(self, lon, lat):
        """Continuous cell coordinates of a lon/lat point (may fall outside [0,m]x[0,n])."""
        lon0, lat0, lon1, lat1 = self.extent
        fx = (lon - lon0) / (lon1 - lon0) * self.m
        fy = (lat - lat0) / (lat1 - lat0) * self.n
        return fx, fy

    def cell_center(self, x: int, y: int):
        """Lon/lat of the center of cell (x, y)."""
        lon0, lat0, lon1, lat1 = self.extent
        return (
            lon0 + (x + 0.5) / self.m * (lon1 - lon0),
            lat0 + (y + 0.5) / self.n * (lat1 - lat0),
        )


def cell_of(grid: GridSpec, lon, lat) -> Optional[tuple]:
    """Cell index containing a lon/lat point, or None outside the extent.

    The extent is half-open: points at lon1 or lat1 are outside.
    """
    fx, fy = grid.cell_coords(lon, lat)
    if fx < 0.0 or fy < 0.0 or fx >= grid.m or fy >= grid.n:
        return None
    return int(math.floor(fx)), int(math.floor(fy))


def voxel_index(m: int, n: int, x: int, y: int, t: int) -> int:
    """Canonical flat index of voxel (x, y, t)."""
    return (t * n + y) * m + x


def voxel_decode(m: int, n: int, idx: int) -> tuple:
    """Inverse of voxel_index."""
    x = idx % m
    y = (idx // m) % n
    t = idx // (m * n)
    return x, y, t


def default_z_scale(m: int, n: int, T: int) -> float:
    """Render-space height per time step making the cube near-isometric."""
    return max(m, n) / T


@dataclass(frozen=True)
class SpaceTimeVolume:
    """An m x n x T scalar field with georeferencing. Immutable.

    ``data`` is float32 shaped (T, n, m); its C-order flattening matches the
    canonical index ((t*n + y)*m + x). The buffer is marked read-only.
    """

    grid: GridSpec
    T: int
    t0: int
    dt: int
    data: np.ndarray
    value_range: tuple

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("volume needs T >= 1")
        expected = (self.T, self.grid.n, self.grid.m)
        if self.data.shape != expected:
            raise ValueError(f"data shape {self.data.shape} != {expected}")
        if self.data.dtype != np.float32:
            raise ValueError("volume data must be float32")
        vmin, vmax = self.value_range
        if not vmin < vmax:
            raise ValueError("value_range requires v_min < v_max")
        self.data.setflags(write=False)

    @property
    def m(self) -> int:
        return self.grid.m

    @property
    def n(self) -> int:
        return self.grid.n

    def value_at(self, x: int, y: int, t: int) -> float:
        return float(self.data[t, y, x])


def volume_to_render_space(volume: SpaceTimeVolume, z_scale: Optional[float] = None) -> tuple:
    """Axis-aligned render-space box of a volume.

    Returns ((0,0,0), (m, n, T*z_scale)). z_scale defaults to max(m,n)/T.
    """
    if z_scale is None:
        z_scale = default_z_scale(volume.m, volume.n, volume.T)
    if not z_scale > 0:
        raise ValueError("z_scale must be positive")
    return (0.0, 0.0, 0.0), (float(volume.m), float(volume.n), volume.T * z_scale)


@dataclass
class SelectionState:
    """Active selection: inclusive time range, optional spotlight, optional cluster.

    spotlight is (cx, cy, r) in continuous cell coordinates with r > 0.
    """

    time_range: tuple
    spotlight: Optional[tuple] = None
    selected_cluster: Optional[int] = None

    def validate(self, T: int):
        t_lo, t_hi = self.time_range
        if not (0 <= t_lo <= t_hi <= T - 1):
            raise ValueError(f"time_range {self.time_range} violates 0 <= t_lo <= t_hi < {T}")
        if self.spotlight is not None:
            cx, cy, r = self.spotlight
            if not r > 0:
                raise ValueError("spotlight radius must be positive")

    @staticmethod
    def full(T: int) -> "SelectionState":
        return SelectionState(time_range=(0, T - 1))


@dataclass
class Camera:
    """Pinhole camera in render-space coordinates."""

    eye: tuple
    target: tuple
    up: tuple = (0.0, 0.0, 1.0)
    vfov: float = 40.0
    width: int = 512
    height: int = 512

    def validate(self):
        e = np.asarray(self.eye, dtype=np.float64)
        t = np.asarray(self.target, dtype=np.float64)
        u = np.asarray(self.up, dtype=np.float64)
        fwd = t - e
        if not np.linalg.norm(fwd) > 0:
            raise ValueError("camera eye must differ from target")
        if not (1.0 < self.vfov < 170.0):
            raise ValueError(f"vfov {self.vfov} outside (1, 170)")
        f = fwd / np.linalg.norm(fwd)
        un = np.linalg.norm(u)
        if not un > 0 or np.linalg.norm(np.cross(f, u / un)) < 1e-9:
            raise ValueError("camera up vector parallel to view direction")
        if self.width < 1 or self.height < 1:
            raise ValueError("viewport must have positive area")

    def basis(self):
        """Orthonormal (right, up, forward) basis, forward toward the target."""
        e = np.asarray(self.eye, dtype=np.float64)
        t = np.asarray(self.target, dtype=np.float64)
        u = np.asarray(self.up, dtype=np.float64)
        fwd = t - e
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, u)
        right = right / np.linalg.norm(right)
        true_up = np.cross(right, fwd)
        return right, true_up, fwd


# --- binary formats ---------------------------------------------------------

_VSTC_HEADER = struct.Struct("<4sIIIIffddddqI")


def write_volume(path, volume: SpaceTimeVolume, z_scale_unused=None) -> None:
    """Write a volume to the VSTC binary cache format.

    Layout, all little-endian: magic 'VSTC', version u32, m u32, n u32, T u32,
    v_min f32, v_max f32, lon0/lat0/lon1/lat1 f64, t0 i64 epoch seconds,
    dt u32 seconds, then m*n*T f32 values in canonical index order.
    """
    lon0, lat0, lon1, lat1 = volume.grid.extent
    vmin, vmax = volume.value_range
    header = _VSTC_HEADER.pack(
        VSTC_MAGIC, FORMAT_VERSION,
        volume.m, volume.n, volume.T,
        float(vmin), float(vmax),
        float(lon0), float(lat0), float(lon1), float(lat1),
        int(volume.t0), int(volume.dt),
    )
    flat = np.ascontiguousarray(volume.data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(flat.tobytes())


def read_volume(path) -> SpaceTimeVolume:
    """Read a VSTC file written by write_volume."""
    with open(path, "rb") as fh:
        raw = fh.read(_VSTC_HEADER.size)
        if len(raw) != _VSTC_HEADER.size:
            raise ValueError(f"{path}: truncated VSTC header")
        (magic, version, m, n, T, vmin, vmax,
         lon0, lat0, lon1, lat1, t0, dt) = _VSTC_HEADER.unpack(raw)
        if magic != VSTC_MAGIC:
            raise ValueError(f"{path}: not a VSTC file")
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported VSTC version {version}")
        count = m * n * T
        body = fh.read(count * 4)
        if len(body) != count * 4:
            raise ValueError(f"{path}: truncated VSTC body")
    data = np.frombuffer(body, dtype="<f4").astype(np.float32).reshape(T, n, m)
    grid = GridSpec(extent=(lon0, lat0, lon1, lat1), m=m, n=n)
    return SpaceTimeVolume(grid=grid, T=T, t0=t0, dt=dt, data=data,
                           value_range=(vmin, vmax))


_VSD_HEADER = struct.Struct("<4sIIIqIff")
_VSD_STATION_FIXED = struct.Struct("<Hdd")

# one fixed quiet-NaN bit pattern so serialization is byte-deterministic
_CANON_NAN = np.frombuffer(struct.pack("<I", 0x7FC00000), dtype="<f4")[0]


def dataset_to_bytes(dataset: STDataset) -> bytes:
    """Serialize an STDataset to the VSD byte layout (little-endian throughout)."""
    vmin, vmax = dataset.value_range
    out = [
        _VSD_HEADER.pack(VSD_MAGIC, FORMAT_VERSION, dataset.S, dataset.T,
                         int(dataset.t0), int(dataset.dt), float(vmin), float(vmax))
    ]
    for st in dataset.stations:
        ident = st.id.encode("utf-8")
        if len(ident) > 0xFFFF:
            raise ValueError(f"station id too long: {st.id[:32]}...")
        out.append(_VSD_STATION_FIXED.pack(len(ident), st.lon, st.lat))
        out.append(ident)
    values = dataset.values_matrix().astype("<f4")
    values = np.where(np.isnan(values), _CANON_NAN, values)
    out.append(values.tobytes())
    return b"".join(out)


def write_dataset(path, dataset: STDataset) -> None:
    with open(path, "wb") as fh:
        fh.write(dataset_to_bytes(dataset))


def read_dataset(path) -> STDataset:
    """Read a VSD file written by write_dataset."""
    with open(path, "rb") as fh:
        raw = fh.read(_VSD_HEADER.size)
        if len(raw) != _VSD_HEADER.size:
            raise ValueError(f"{path}: truncated VSD header")
        magic, version, S, T, t0, dt, vmin, vmax = _VSD_HEADER.unpack(raw)
        if magic != VSD_MAGIC:
            raise ValueError(f"{path}: not a VSD file")
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported VSD version {version}")
        stations = []
        for _ in range(S):
            fixed = fh.read(_VSD_STATION_FIXED.size)
            id_len, lon, lat = _VSD_STATION_FIXED.unpack(fixed)
            ident = fh.read(id_len).decode("utf-8")
            stations.append(Station(id=ident, lon=lon, lat=lat))
        body = fh.read(S * T * 4)
        if len(body) != S * T * 4:
            raise ValueError(f"{path}: truncated VSD body")
    values = np.frombuffer(body, dtype="<f4").astype(np.float32).reshape(S, T)
    series = [STSeries(station_id=st.id, values=values[i].copy())
              for i, st in enumerate(stations)]
    return STDataset(stations=stations, series=series, t0=t0, dt=dt, T=T,
                     value_range=(vmin, vmax))
