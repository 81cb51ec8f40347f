"""Access to the ``SIM2REAL`` settings dict with built-in fallbacks.

Library modules take explicit arguments; only management commands resolve
defaults through here.
"""
import copy

from django.conf import settings

DEFAULTS = {
    'DEFAULT_SEED': 0,
    'SYNTHETIC_NOISE': {
        'additive_sigma': 0.02,
        'jitter_frames': 1,
        'drift_amplitude': 0.0,
        'occlusion_prob': 0.0,
    },
    'REAL_NOISE': {
        'additive_sigma': 0.05,
        'jitter_frames': 2,
        'drift_amplitude': 0.05,
        'occlusion_prob': 0.05,
    },
    'AUGMENT': {
        'amplitude_scale_range': [0.85, 1.15],
        'noise_sigma': 0.01,
        'max_time_shift': 2,
        'channel_dropout_prob': 0.05,
    },
    'TRAIN': {
        'learning_rate': 1e-4,
        'finetune_learning_rate': 1e-4,
        'batch_size': 8,
        'pretrain_epochs': 20,
        'finetune_epochs': 50,
    },
    'STRATEGY': {
        'kind': 'mixed',
        'ratio': 0.25,
        'length': 64,
        'freeze_blocks': 0,
    },
    'KNN': {
        'k': 1,
        'band': None,
    },
    'FOLDS': 5,
    'GRADCHECK': {
        'coords': 200,
        'tolerance': 1e-4,
        'step': 1e-5,
    },
}


def sim2real_setting(name):
    value = copy.deepcopy(DEFAULTS[name])
    override = getattr(settings, 'SIM2REAL', {}).get(name)
    if override is None:
        return value
    if isinstance(value, dict):
        value.update(override)
        return value
    return copy.deepcopy(override)
