# hand_pose_tree/augment/__init__.py

from hand_pose_tree.augment.main import (
    AugmentConfig,
    AugmentDraw,
    TpsWarp,
    auxiliary_points,
    close_gaps,
    dedupe,
    dedupe_samples,
    deform_sample,
    generate_set,
    max_joint_distance,
    perturb_joints,
    rotate_in_plane,
    solve_tps,
    splat_points,
)
