"""City CAD / street panorama alignment toolkit."""

from .geometry import (
    CameraPose,
    EquirectGrid,
    PerspectiveIntrinsics,
    equirect_pixel_to_ray,
    make_view_set,
    perspective_project,
    pose_rotation,
    ray_to_equirect_pixel,
    world_to_pano,
)
from .mesh import (
    CityMesh,
    PolygonAdjacency,
    SemanticTag,
    build_adjacency,
    load_mesh,
    polygon_normal,
    save_mesh,
    terrain_elevation_at,
)
from .georeg import (
    ControlPair,
    DeformationField,
    GridSpec,
    fit_field,
    invert_warp,
    select_lambda_cv,
    warp,
)
from .pose import (
    Correspondence,
    PoseSolution,
    init_pose,
    reprojection_stats,
    residual_jacobian,
    residuals,
    solve_pose,
)
from .render import (
    RasterLayers,
    RenderConfig,
    render_cad_view,
    render_viewpoint_products,
    resample_pano_to_perspective,
)
from .extract import (
    SurfaceSegment,
    VanishingPoint,
    dbscan_directions,
    extract_vps,
    plane_occurrence,
    segment_surfaces,
)
from .dataset import (
    SplitSpec,
    ViewpointRecord,
    annotation_count_stats,
    build_manifest,
    compute_sil,
    split_random,
    split_spatial,
)
from .synth import SceneSpec, generate_city, synth_panorama

__version__ = "0.1.0"

__all__ = [
    "CameraPose",
    "EquirectGrid",
    "PerspectiveIntrinsics",
    "equirect_pixel_to_ray",
    "make_view_set",
    "perspective_project",
    "pose_rotation",
    "ray_to_equirect_pixel",
    "world_to_pano",
    "CityMesh",
    "PolygonAdjacency",
    "SemanticTag",
    "build_adjacency",
    "load_mesh",
    "polygon_normal",
    "save_mesh",
    "terrain_elevation_at",
    "ControlPair",
    "DeformationField",
    "GridSpec",
    "fit_field",
    "invert_warp",
    "select_lambda_cv",
    "warp",
    "Correspondence",
    "PoseSolution",
    "init_pose",
    "reprojection_stats",
    "residual_jacobian",
    "residuals",
    "solve_pose",
    "RasterLayers",
    "RenderConfig",
    "render_cad_view",
    "render_viewpoint_products",
    "resample_pano_to_perspective",
    "SurfaceSegment",
    "VanishingPoint",
    "dbscan_directions",
    "extract_vps",
    "plane_occurrence",
    "segment_surfaces",
    "SplitSpec",
    "ViewpointRecord",
    "annotation_count_stats",
    "build_manifest",
    "compute_sil",
    "split_random",
    "split_spatial",
    "SceneSpec",
    "generate_city",
    "synth_panorama",
]
