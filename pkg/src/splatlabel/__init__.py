"""splatlabel: occlusion-aware fruit pose datasets from Gaussian-splat scenes."""

from .annotate import (
    FruitAnnotation,
    FruitNotVisibleError,
    FruitPose,
    ImageLabel,
    NotInViewError,
    build_fruit_pose,
    compute_occlusion,
    project_label,
)
from .cameras import (
    AxisSpec,
    BehindCameraError,
    CameraModel,
    CameraPose,
    Intrinsics,
    PatchRect,
    TrajectoryConfig,
    generate_patch_grid,
    generate_trajectory,
    patch_camera,
    project_point,
)
from .datasets import (
    DatasetManifest,
    build_dataset,
    filter_labels_by_occlusion,
    mask_original_image,
    subsample_dataset,
)
from .evaluate import (
    EvalReport,
    MatchResult,
    OrientedBox,
    Prediction,
    bin_by_occlusion,
    bootstrap_interval,
    evaluate_predictions,
    f1_scores,
    match_detections,
    neutral_f1,
    obb_iou,
    orientation_error,
    position_error,
    zero_orientation_baseline,
)
from .render import DepthImage, RgbImage, evaluate_sh, render_point_depth, render_scene
from .splats import (
    Aabb,
    Gaussian3D,
    PlyFormatError,
    PointCloud,
    SplatScene,
    crop_scene,
    parse_splat_file,
    sample_point_cloud,
    serialize_splat_scene,
)

__version__ = "0.1.0"
