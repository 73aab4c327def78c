from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .data import (
    FormatError,
    LabeledImages,
    LogitRow,
    LogitsTable,
    Record,
    inverse_frequency_weights,
    load_external_logits,
    read_manifest,
    weighted_sample,
    write_logits,
    write_manifest,
)
from .network import TinyNet, forward_global, forward_local
from .objective import TrainingDivergence, backward
from .optim import AdamState, TrainConfig, adamw_step, clip_grad_norm
from .train import ModelSpec, evidence, loss_for_step, predict_logits, switch_step, train
