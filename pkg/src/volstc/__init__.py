"""volstc: space-time-cube volume engine.

Discrete spatial time series in, interactive volume exploration out:
ingestion, kriging/IDW interpolation with temporal smoothing, a software
raymarcher for volume and isosurface rendering, voxel cluster detection,
and a session service for thin interactive clients.
"""

__version__ = "0.1.0"

from .cluster import (
    ClusterCache,
    VoxelCluster,
    VoxelClusterSummary,
    detect_clusters,
    min_enclosing_circle,
    pick,
    summarize_cluster,
)
from .frame import (
    FrameMeta,
    RenderContext,
    encode_png,
    pixel_ray,
    project_point,
    render_frame,
    save_png,
)
from .ingest import IngestError, load_dataset, validate_dataset
from .interpolate import idw_slice, krige_slice, slice_samples
from .model import (
    Camera,
    GridSpec,
    STDataset,
    STSeries,
    SelectionState,
    SpaceTimeVolume,
    Station,
    cell_of,
    default_z_scale,
    read_dataset,
    read_volume,
    volume_to_render_space,
    write_dataset,
    write_volume,
)
from .pipeline import build_volume, cross_validate
from .raymarch import Ray, gradient, march_ray, sample_volume, shade_phong
from .service import SessionService, VolumeRegistry, create_app, default_camera
from .smoothing import smooth_series, smooth_volume
from .transfer import Lighting, RenderSettings, TransferFunction, transfer
from .variogram import VariogramModel, compute_semivariogram, fit_variogram

__all__ = [
    "Camera",
    "ClusterCache",
    "FrameMeta",
    "GridSpec",
    "IngestError",
    "Lighting",
    "Ray",
    "RenderContext",
    "RenderSettings",
    "STDataset",
    "STSeries",
    "SelectionState",
    "SessionService",
    "SpaceTimeVolume",
    "Station",
    "TransferFunction",
    "VariogramModel",
    "VolumeRegistry",
    "VoxelCluster",
    "VoxelClusterSummary",
    "build_volume",
    "cell_of",
    "compute_semivariogram",
    "create_app",
    "cross_validate",
    "default_camera",
    "default_z_scale",
    "detect_clusters",
    "encode_png",
    "fit_variogram",
    "gradient",
    "idw_slice",
    "krige_slice",
    "load_dataset",
    "march_ray",
    "min_enclosing_circle",
    "pick",
    "pixel_ray",
    "project_point",
    "read_dataset",
    "read_volume",
    "render_frame",
    "sample_volume",
    "save_png",
    "shade_phong",
    "slice_samples",
    "smooth_series",
    "smooth_volume",
    "summarize_cluster",
    "transfer",
    "validate_dataset",
    "volume_to_render_space",
    "write_dataset",
    "write_volume",
    "__version__",
]
