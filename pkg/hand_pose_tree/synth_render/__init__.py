# hand_pose_tree/synth_render/__init__.py

from hand_pose_tree.synth_render.dataset_io import (
    FORMAT_VERSION,
    Manifest,
    SampleRecord,
    SceneSample,
    dumps_record,
    prepare_output_dir,
    read_dataset,
    read_manifest,
    read_sample,
    write_dataset,
    write_manifest,
    write_sample,
)
from hand_pose_tree.synth_render.main import (
    Capsule,
    CapsuleHand,
    PoseRanges,
    RenderConfig,
    RenderResult,
    appearance_violation,
    generate_dataset,
    generate_sample,
    render_depth,
    sample_pose,
)
