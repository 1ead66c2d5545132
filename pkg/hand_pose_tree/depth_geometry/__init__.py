# hand_pose_tree/depth_geometry/__init__.py

from hand_pose_tree.depth_geometry.main import (
    CONE_FILLED,
    CONE_OFFSET,
    CONE_SLOPE,
    MIN_NORMAL_Z,
    MISSING,
    RAW_MISSING,
    CameraModel,
    CropTransform,
    DepthFrame,
    SurfaceNormalMap,
    backproject,
    cloud_center,
    cone_background,
    cone_gradient,
    crop_and_normalize,
    estimate_normals,
    fill_background,
    hand_cloud,
    network_input,
    project_joint,
    projection_jacobian,
    sample_depth,
    sample_gradient,
)
