"""lanekit: self-supervised lane detection at desk scale.

Synthetic LiDAR-style scenes, unsupervised 3D lane extraction, a
dual-branch label-correction trainer, distillation to an image-only
student, and benchmark-protocol evaluation.
"""

from .detector import (
    CorrectorConfig,
    CorrectorModel,
    GridConfig,
    GridLaneTensor,
    decode_grid,
    encode_labels_to_grid,
    forward,
    lane_loss,
    sgd_step,
)
from .distill import (
    AdaptationConfig,
    TrainConfig,
    refine_labels,
    run_adaptation,
    train_naive_detector,
    train_student,
)
from .extraction import (
    Cluster,
    ClusterConfig,
    ExtractConfig,
    GroundSegConfig,
    LaneInstance3D,
    PointCloud,
    RansacConfig,
    dbscan,
    extract_lanes,
    extract_pipeline,
    filter_by_intensity,
    fit_lane_ransac,
    merge_lane_clusters,
    project_lane,
    segment_ground,
)
from .geometry import (
    CameraModel,
    RigidTransform,
    backproject_to_plane,
    project_point,
    transform_points,
)
from .labels import (
    AugmentConfig,
    LabelMask,
    Lane2D,
    LaneTransform,
    RowAnchorLabel,
    apply_transform,
    inverse_transform,
    perturb_labels,
    pixel_iou,
    rasterize_mask,
    to_row_anchors,
)
from .metrics import EvalResult, tusimple_eval
from .slc import (
    ProjectionHead,
    SLCConfig,
    TrainState,
    build_pos_neg_masks,
    consistency_loss,
    correct_labels,
    ema_update,
    embedding_loss,
    lambda_r_gate,
    mask_pool,
    reconstruction_loss,
    total_loss,
    train_slc,
)
from .synthworld import (
    FrameSample,
    LaneSpec,
    SceneSpec,
    default_camera,
    default_scene_spec,
    generate_scene,
    ground_truth_labels,
    make_dataset,
)

__version__ = "0.1.0"
