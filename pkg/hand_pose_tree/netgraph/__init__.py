# hand_pose_tree/netgraph/__init__.py

from hand_pose_tree.netgraph.config import ABLATION_METHODS, RunConfig, load_run_config, parse_run_config
from hand_pose_tree.netgraph.data import (
    BatchPrefetcher,
    TrainingExample,
    assemble_pose,
    prepare_example,
    prepare_examples,
    split_items,
)
from hand_pose_tree.netgraph.layers import LAYER_KINDS, LayerSpec
from hand_pose_tree.netgraph.main import (
    ARCHITECTURES,
    PRESETS,
    NetGraph,
    ParameterStore,
    build_fc_branching,
    build_network,
    build_single_channel,
    build_tree_network,
    conv_parameter_count,
    single_channel_widths,
)
from hand_pose_tree.netgraph.trainer import (
    TrainerConfig,
    TrainingLog,
    evaluate_examples,
    load_checkpoint,
    predict,
    save_checkpoint,
    sgd_step,
    train,
    weight_decay_gradient,
)
