from .checkpoint import load_checkpoint, round_to_storage, save_checkpoint
from .gradcheck import GradCheckReport, grad_check
from .inception import InceptionTimeModel, build_inception_time, set_freeze
from .optim import Adam, AdamState, TrainConfig, adam_step

__all__ = [
    'Adam', 'AdamState', 'GradCheckReport', 'InceptionTimeModel', 'TrainConfig',
    'adam_step', 'build_inception_time', 'grad_check', 'load_checkpoint',
    'round_to_storage', 'save_checkpoint', 'set_freeze',
]
