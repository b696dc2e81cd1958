"""Future semantic segmentation via rigid 3D warping.

The current labeled frame is lifted to a 3D point cloud from its depth map,
moved by forecast ego-motion, splatted back onto the image plane with a
z-buffer, and inpainted. A synthetic ray-cast simulator supplies exact
depth/segmentation/ego-motion sequences for verification, and a small LSTM
forecasts future ego-motion from the prior trajectory.
"""

from .geometry import (
    MISSING,
    CameraIntrinsics,
    DepthMap,
    EgoMotionVector,
    LabeledPointCloud,
    SE3Transform,
    SegmentationMap,
    depth_to_pointcloud,
    egomotion_to_se3,
    rotation_from_euler,
    se3_compose,
    transform_pointcloud,
)
from .inpaint import NeighborCount, compute_filler, inpaint, neighbor_count
from .warp import (
    PredictionSequence,
    PredictionStep,
    WarpResult,
    predict_future,
    predict_step,
    project_to_segmentation,
)
from .forecast import (
    LstmModel,
    TrainConfig,
    TrainResult,
    TrajectoryHistory,
    copy_forecast,
    forecast_rollout,
    learning_rate,
    load_checkpoint,
    lstm_forward,
    lstm_gradient,
    lstm_loss,
    lstm_train,
    save_checkpoint,
)
from .metrics import EvalReport, error_map, evaluate, format_report
from .fileio import (
    CITYSCAPES_LABEL_TO_TRAIN_ID,
    CITYSCAPES_NUM_CLASSES,
    FormatError,
    read_bundle,
    read_depth,
    read_intrinsics,
    read_segmentation,
    read_trajectory,
    remap_label_ids,
    write_depth,
    write_intrinsics,
    write_segmentation,
    write_trajectory,
)
from .simulator import (
    Box,
    CameraPose,
    PlanePatch,
    Scene,
    Sphere,
    TrajectorySpec,
    default_camera,
    default_trajectory,
    generate_sequence,
    load_scene_spec,
    render,
    save_scene_spec,
    street_canyon,
    trajectory_motions,
)

__version__ = "0.1.0"
