# hand_pose_tree/hand_model/__init__.py

from hand_pose_tree.hand_model.main import (
    BRANCH_JOINTS,
    CHAINS,
    DYNAMICS_FINGERS,
    FINGERS,
    FINGERTIPS,
    LAYOUT_TAG,
    N_JOINTS,
    PALM_JOINTS,
    REFERENCE_BONE_LENGTHS,
    REFERENCE_JOINTS,
    REFERENCE_PALM,
    REST_ABDUCTION_DEG,
    Joint,
    JointSet,
    KinematicParams,
    Quaternion,
    RigidTransform,
    finger_quadruple,
    forward_kinematics,
    hand_frame,
    inverse_kinematics,
    palm_from_viewpoint,
    quaternion_to_matrix,
    reference_pose_table,
    viewpoint_quaternion,
    write_reference_pose,
)
