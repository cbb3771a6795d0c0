from .architectures import PLANS, REFERENCE_PARAMS, ArchitectureSpec, build_layers, conv_channel_plan, count_params
from .checkpoint import (
    ModelCheckpoint, TrainingMetadata, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint,
)
from .losses import LOSSES, get_loss, loss_huber, loss_l1, loss_l2
from .network import Network
from .training import EpochRecord, TrainReport, global_samples, train, train_global_regressor


def build_network(spec: ArchitectureSpec, rng) -> Network:
    return Network.build(spec, rng)
