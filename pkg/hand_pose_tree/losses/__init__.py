# hand_pose_tree/losses/__init__.py

from hand_pose_tree.losses.main import (
    BRANCH_QUADRUPLES,
    GLOBAL_HEAD,
    HEAD_SIZES,
    LOCAL_HEADS,
    VIEWPOINT_HEAD,
    FingerState,
    FrameContext,
    GradCheckResult,
    LossConfig,
    LossReport,
    LossTarget,
    TermResult,
    appearance_loss,
    classify_finger,
    classify_hand,
    combined_loss,
    dynamics_loss,
    finger_dynamics,
    finite_difference_check,
    l2_loss,
)
