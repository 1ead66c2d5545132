# hand_pose_tree/eval_cli/__init__.py

from hand_pose_tree.eval_cli.metrics import (
    JOINT_SUBSETS,
    THRESHOLDS,
    EvalReport,
    emit_report,
    evaluate,
    plot_curves,
    read_curves,
    replace_palm_with_viewpoint,
    success_curve,
)
