from django import forms
from django.core.exceptions import ValidationError

from .choices import ModelKind, StrategyKind
from .dataio import AugmentConfig
from .pipeline import StrategySpec
from .signalgen import NoiseConfig


def _dict_form_value(form_class, data, label):
    form = form_class(data or {})
    if not form.is_valid():
        raise ValidationError('%(label)s: %(errors)s', params={'label': label, 'errors': form.errors.as_text()})
    return form.to_config().to_dict()


class NoiseConfigForm(forms.Form):
    additive_sigma = forms.FloatField(label='Additive noise sigma', min_value=0)
    jitter_frames = forms.IntegerField(label='Jitter, frames', min_value=0)
    drift_amplitude = forms.FloatField(label='Drift amplitude', min_value=0)
    occlusion_prob = forms.FloatField(label='Occlusion probability', min_value=0, max_value=1)

    def to_config(self):
        return NoiseConfig.from_dict(self.cleaned_data)


class AugmentConfigForm(forms.Form):
    scale_low = forms.FloatField(label='Amplitude scale, low', min_value=0)
    scale_high = forms.FloatField(label='Amplitude scale, high', min_value=0)
    noise_sigma = forms.FloatField(label='Noise sigma', min_value=0)
    max_time_shift = forms.IntegerField(label='Max time shift, frames', min_value=0)
    channel_dropout_prob = forms.FloatField(label='Channel dropout probability', min_value=0, max_value=1)

    def __init__(self, data=None, *args, **kwargs):
        if data is not None and 'amplitude_scale_range' in data:
            data = dict(data)
            low, high = data.pop('amplitude_scale_range')
            data.update(scale_low=low, scale_high=high)
        super().__init__(data, *args, **kwargs)

    def clean(self):
        cleaned = super().clean()
        low, high = cleaned.get('scale_low'), cleaned.get('scale_high')
        if low is not None and high is not None and low > high:
            raise ValidationError('Amplitude scale range must satisfy low <= high')
        return cleaned

    def to_config(self):
        data = self.cleaned_data
        return AugmentConfig(
            amplitude_scale_range=(data['scale_low'], data['scale_high']),
            noise_sigma=data['noise_sigma'],
            max_time_shift=data['max_time_shift'],
            channel_dropout_prob=data['channel_dropout_prob'],
        )


class GenerateForm(forms.Form):
    seed = forms.IntegerField(min_value=0)
    identities = forms.IntegerField(label='Synthetic identities', min_value=1, max_value=24)
    folds = forms.IntegerField(min_value=2)
    minority_fold = forms.BooleanField(required=False)
    synthetic_noise = forms.JSONField()
    real_noise = forms.JSONField()

    def clean_synthetic_noise(self):
        return _dict_form_value(NoiseConfigForm, self.cleaned_data['synthetic_noise'], 'synthetic_noise')

    def clean_real_noise(self):
        return _dict_form_value(NoiseConfigForm, self.cleaned_data['real_noise'], 'real_noise')

    def clean(self):
        cleaned = super().clean()
        synthetic, real = cleaned.get('synthetic_noise'), cleaned.get('real_noise')
        if synthetic and real and not NoiseConfig.from_dict(real).is_harsher_than(NoiseConfig.from_dict(synthetic)):
            raise ValidationError('real_noise must be harsher than synthetic_noise '
                                  '(more additive noise, non-zero drift and occlusion)')
        return cleaned


class TrainForm(forms.Form):
    seed = forms.IntegerField(min_value=0)
    strategy = forms.ChoiceField(choices=StrategyKind.choices)
    model = forms.ChoiceField(choices=ModelKind.choices)
    ratio = forms.FloatField(required=False, min_value=0, max_value=1)
    length = forms.IntegerField(label='Input length', min_value=1)
    freeze = forms.IntegerField(label='Frozen blocks', min_value=0)
    pretrain_epochs = forms.IntegerField(min_value=0)
    finetune_epochs = forms.IntegerField(min_value=0)
    learning_rate = forms.FloatField(min_value=0)
    finetune_learning_rate = forms.FloatField(min_value=0)
    batch_size = forms.IntegerField(min_value=1)
    augment = forms.JSONField(required=False)
    knn_k = forms.IntegerField(min_value=1)
    dtw_band = forms.IntegerField(required=False, min_value=1)
    folds = forms.JSONField(required=False)
    jobs = forms.IntegerField(min_value=1)
    architecture = forms.JSONField(required=False)

    def clean_augment(self):
        data = self.cleaned_data['augment']
        return _dict_form_value(AugmentConfigForm, data, 'augment') if data else None

    def clean_folds(self):
        folds = self.cleaned_data['folds']
        if folds in (None, ''):
            return None
        if not isinstance(folds, list) or not all(isinstance(f, int) and f >= 0 for f in folds):
            raise ValidationError('folds must be a list of fold indices')
        return sorted(set(folds))

    def clean_architecture(self):
        data = self.cleaned_data['architecture'] or {}
        allowed = {'depth', 'n_filters', 'bottleneck', 'kernel_sizes', 'residual_every'}
        unknown = set(data) - allowed
        if unknown:
            raise ValidationError('Unknown architecture keys: %(keys)s', params={'keys': ', '.join(sorted(unknown))})
        return data

    def clean(self):
        cleaned = super().clean()
        if self.errors:
            return cleaned
        try:
            self.strategy = self._build_strategy(cleaned).validate()
        except ValidationError as exc:
            raise ValidationError(exc.messages) from exc
        return cleaned

    def _build_strategy(self, data):
        augment = data.get('augment')
        architecture = dict(data.get('architecture') or {})
        if 'kernel_sizes' in architecture:
            architecture['kernel_sizes'] = tuple(architecture['kernel_sizes'])
        return StrategySpec(
            kind=data['strategy'],
            model=data['model'],
            ratio=data['ratio'],
            length=data['length'],
            freeze_blocks=data['freeze'],
            pretrain_epochs=data['pretrain_epochs'],
            finetune_epochs=data['finetune_epochs'],
            learning_rate=data['learning_rate'],
            finetune_learning_rate=data['finetune_learning_rate'],
            batch_size=data['batch_size'],
            augment=AugmentConfig.from_dict(augment) if augment else None,
            knn_k=data['knn_k'],
            dtw_band=data.get('dtw_band'),
            architecture=architecture,
        )
