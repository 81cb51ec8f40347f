"""Synthetic social-signal generation in action-unit space.

Keyframed AU animations are interpolated to 25-frame trajectories and
rendered onto a suite of virtual identities from a grid of viewing angles.
The same renderer, with harsher artifacts and fresh identities, produces the
surrogate "real" domain.
"""
import json
import logging
import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError

from .choices import EmotionLabel, Ethnicity, Gender, Provenance
from .sequences import (
    AU_CODES, CHANNEL_INDEX, N_CHANNELS, LabeledSequence, SequenceDataset, ViewingAngle,
)

logger = logging.getLogger(__name__)

N_FRAMES = 25
SIGNALS_ASSET = Path(__file__).resolve().parent / 'data' / 'canonical_signals.v1.json'

GAIN_RANGE = (0.6, 1.4)
BASELINE_RANGE = (0.0, 0.1)
TEMPO_RANGE = (0.85, 1.15)

SUITE_SIZE = 24
SURROGATE_PER_LABEL = 41
SURROGATE_NON_CAUCASIAN = 26
SURROGATE_LENGTH_RANGE = (20, 75)

_LABELS_BY_NAME = {label.label: label for label in EmotionLabel}


@dataclass(frozen=True)
class Keyframe:
    frame: int
    au: str
    intensity: float


@dataclass(frozen=True)
class SocialSignalSpec:
    id: str
    label: EmotionLabel
    keyframes: tuple

    def validate(self):
        if not self.keyframes:
            raise ValidationError('Signal %(id)s has no keyframes', params={'id': self.id})
        seen = set()
        for kf in self.keyframes:
            if not 0 <= kf.frame < N_FRAMES:
                raise ValidationError(
                    'Signal %(id)s: keyframe frame %(frame)s outside 0..%(last)s',
                    params={'id': self.id, 'frame': kf.frame, 'last': N_FRAMES - 1},
                )
            if kf.au not in CHANNEL_INDEX:
                raise ValidationError(
                    'Signal %(id)s: unknown action unit %(au)s', params={'id': self.id, 'au': kf.au},
                )
            if not 0.0 <= kf.intensity <= 1.0:
                raise ValidationError(
                    'Signal %(id)s: intensity %(v)s outside [0, 1]', params={'id': self.id, 'v': kf.intensity},
                )
            if (kf.frame, kf.au) in seen:
                raise ValidationError(
                    'Signal %(id)s: duplicate keyframe for %(au)s at frame %(frame)s',
                    params={'id': self.id, 'au': kf.au, 'frame': kf.frame},
                )
            seen.add((kf.frame, kf.au))
        if not any(kf.intensity > 0 for kf in self.keyframes):
            raise ValidationError('Signal %(id)s never activates a channel', params={'id': self.id})
        return self

    @classmethod
    def from_dict(cls, data):
        try:
            label = data['label']
            label = _LABELS_BY_NAME[label] if isinstance(label, str) else EmotionLabel(label)
            keyframes = tuple(
                Keyframe(int(kf['frame']), str(kf['au']), float(kf['intensity']))
                for kf in data['keyframes']
            )
            return cls(str(data['id']), label, keyframes)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError('Malformed signal spec: %(err)s', params={'err': exc}) from exc

    def to_dict(self):
        return {
            'id': self.id,
            'label': self.label.label,
            'keyframes': [asdict(kf) for kf in self.keyframes],
        }


def load_signal_specs(path):
    with open(path, encoding='utf-8') as fh:
        document = json.load(fh)
    if not isinstance(document, list):
        raise ValidationError('Signal document must be a JSON array')
    specs = [SocialSignalSpec.from_dict(item).validate() for item in document]
    ids = [spec.id for spec in specs]
    if len(set(ids)) != len(ids):
        raise ValidationError('Signal ids must be unique')
    return specs


@lru_cache(maxsize=1)
def _canonical():
    return tuple(load_signal_specs(SIGNALS_ASSET))


def canonical_signals():
    """The 21 shipped social signals, 7 per emotion."""
    return list(_canonical())


def interpolate_trajectory(spec):
    """Piecewise-linear [25 x 14] trajectory of a keyframed signal.

    A channel is 0 before its first keyframe and holds its last value after
    the final one.
    """
    spec.validate()
    frames = np.arange(N_FRAMES, dtype=np.float64)
    trajectory = np.zeros((N_FRAMES, N_CHANNELS), dtype=np.float64)
    by_channel = {}
    for kf in spec.keyframes:
        by_channel.setdefault(kf.au, []).append((kf.frame, kf.intensity))
    for au, points in by_channel.items():
        points.sort()
        xp = np.array([p[0] for p in points], dtype=np.float64)
        fp = np.array([p[1] for p in points], dtype=np.float64)
        trajectory[:, CHANNEL_INDEX[au]] = np.interp(frames, xp, fp, left=0.0, right=fp[-1])
    return trajectory


@dataclass(frozen=True)
class VirtualIdentity:
    id: str
    gender: Gender
    ethnicity: Ethnicity
    gain: tuple
    baseline: tuple
    tempo: float

    def __post_init__(self):
        if len(self.gain) != N_CHANNELS or len(self.baseline) != N_CHANNELS:
            raise ValidationError('Identity %(id)s needs one gain and baseline per channel', params={'id': self.id})
        if not all(GAIN_RANGE[0] <= g <= GAIN_RANGE[1] for g in self.gain):
            raise ValidationError('Identity %(id)s gain outside %(r)s', params={'id': self.id, 'r': GAIN_RANGE})
        if not all(BASELINE_RANGE[0] <= b <= BASELINE_RANGE[1] for b in self.baseline):
            raise ValidationError('Identity %(id)s baseline outside %(r)s', params={'id': self.id, 'r': BASELINE_RANGE})
        if not TEMPO_RANGE[0] <= self.tempo <= TEMPO_RANGE[1]:
            raise ValidationError('Identity %(id)s tempo outside %(r)s', params={'id': self.id, 'r': TEMPO_RANGE})

    @classmethod
    def neutral(cls, id='neutral', gender=Gender.FEMALE, ethnicity=Ethnicity.CAUCASIAN):
        return cls(id, gender, ethnicity, (1.0,) * N_CHANNELS, (0.0,) * N_CHANNELS, 1.0)

    @classmethod
    def sample(cls, id, gender, ethnicity, rng):
        gain = rng.uniform(*GAIN_RANGE, size=N_CHANNELS)
        baseline = rng.uniform(*BASELINE_RANGE, size=N_CHANNELS)
        tempo = rng.uniform(*TEMPO_RANGE)
        return cls(id, Gender(gender), Ethnicity(ethnicity),
                   tuple(float(g) for g in gain), tuple(float(b) for b in baseline), float(tempo))

    def to_dict(self):
        return {
            'id': self.id,
            'gender': self.gender.value,
            'ethnicity': self.ethnicity.value,
            'gain': list(self.gain),
            'baseline': list(self.baseline),
            'tempo': self.tempo,
        }


def _demographic_cycle(index):
    genders = list(Gender)
    ethnicities = list(Ethnicity)
    return genders[index % len(genders)], ethnicities[(index // len(genders)) % len(ethnicities)]


def generate_identity_suite(seed, prefix='syn', size=SUITE_SIZE):
    """``size`` identities (24: 12 per gender and 6 per ethnicity).

    Demographics cycle so that any prefix of the suite stays as mixed as
    possible.
    """
    rng = np.random.default_rng(seed)
    suite = []
    if size < 1:
        raise ValidationError('The identity suite needs at least one identity')
    for i in range(size):
        gender, ethnicity = _demographic_cycle(i)
        suite.append(VirtualIdentity.sample(f'{prefix}-{i:02d}', gender, ethnicity, rng))
    return suite


def angle_grid():
    pairs = [(0, 0), (-20, -15), (-40, -30), (20, 15), (40, 30),
             (20, -15), (40, -30), (-20, 15), (-40, 30)]
    return [ViewingAngle(float(h), float(v)) for h, v in pairs]


@dataclass(frozen=True)
class NoiseConfig:
    additive_sigma: float = 0.0
    jitter_frames: int = 0
    drift_amplitude: float = 0.0
    occlusion_prob: float = 0.0
    seeded: bool = True

    def __post_init__(self):
        if self.additive_sigma < 0 or self.drift_amplitude < 0 or self.jitter_frames < 0:
            raise ValidationError('Noise magnitudes must be non-negative')
        if not 0.0 <= self.occlusion_prob <= 1.0:
            raise ValidationError('occlusion_prob must lie in [0, 1]')
        if int(self.jitter_frames) != self.jitter_frames:
            raise ValidationError('jitter_frames must be an integer')

    @classmethod
    def from_dict(cls, data):
        return cls(
            additive_sigma=float(data.get('additive_sigma', 0.0)),
            jitter_frames=int(data.get('jitter_frames', 0)),
            drift_amplitude=float(data.get('drift_amplitude', 0.0)),
            occlusion_prob=float(data.get('occlusion_prob', 0.0)),
            seeded=bool(data.get('seeded', True)),
        )

    def to_dict(self):
        return asdict(self)

    def is_harsher_than(self, other):
        return (self.additive_sigma > other.additive_sigma
                and self.drift_amplitude > 0 and self.occlusion_prob > 0)


SYNTHETIC_NOISE_DEFAULTS = NoiseConfig(additive_sigma=0.02, jitter_frames=1)


def attenuation(angle):
    """Per-channel visibility factor for a viewing angle.

    Every channel scales by cos(h)cos(v). Eyes-left fades further as the camera
    swings right (h > 0), eyes-right as it swings left.
    """
    h = math.radians(angle.h_rot)
    v = math.radians(angle.v_rot)
    factor = np.full(N_CHANNELS, math.cos(h) * math.cos(v))
    factor[CHANNEL_INDEX['AU61']] *= 1.0 - max(angle.h_rot, 0.0) / 90.0
    factor[CHANNEL_INDEX['AU62']] *= 1.0 - max(-angle.h_rot, 0.0) / 90.0
    return factor


def _shift_with_hold(values, shift):
    if shift > 0:
        return np.vstack([np.repeat(values[:1], shift, axis=0), values[:-shift]])
    if shift < 0:
        return np.vstack([values[-shift:], np.repeat(values[-1:], -shift, axis=0)])
    return values


def _warp(trajectory, tempo, n_frames):
    if n_frames == N_FRAMES and tempo == 1.0:
        return trajectory
    frames = np.arange(N_FRAMES, dtype=np.float64)
    source = np.clip(np.linspace(0.0, N_FRAMES - 1, n_frames) * tempo, 0.0, N_FRAMES - 1)
    return np.column_stack([np.interp(source, frames, trajectory[:, c]) for c in range(N_CHANNELS)])


def _apply_noise(values, noise, rng):
    n_frames = values.shape[0]
    if noise.drift_amplitude > 0:
        freq = rng.uniform(0.25, 1.0, size=N_CHANNELS)
        phase = rng.uniform(0.0, 2.0 * np.pi, size=N_CHANNELS)
        t = np.arange(n_frames)[:, None] / n_frames
        values = values + noise.drift_amplitude * np.sin(2.0 * np.pi * freq * t + phase)
    if noise.additive_sigma > 0:
        values = values + rng.normal(0.0, noise.additive_sigma, size=values.shape)
    if noise.jitter_frames > 0:
        values = _shift_with_hold(values, int(rng.integers(-noise.jitter_frames, noise.jitter_frames + 1)))
    if noise.occlusion_prob > 0:
        values = values.copy()
        for c in range(N_CHANNELS):
            if rng.random() < noise.occlusion_prob:
                span = int(rng.integers(1, max(2, n_frames // 3) + 1))
                start = int(rng.integers(0, n_frames - span + 1))
                values[start:start + span, c] = 0.0
    return values


def render(identity, spec, angle, noise, rng, *, n_frames=N_FRAMES, tail_frames=0,
           provenance=Provenance.SYNTHETIC, sequence_id=None):
    """Render one signal on one identity from one viewpoint.

    values = clip01(attenuation(angle) * (gain * warped + baseline) + noise)
    """
    trajectory = _warp(interpolate_trajectory(spec), identity.tempo, n_frames)
    if tail_frames:
        trajectory = np.vstack([trajectory, np.repeat(trajectory[-1:], tail_frames, axis=0)])
    gain = np.asarray(identity.gain)
    baseline = np.asarray(identity.baseline)
    values = attenuation(angle) * (gain * trajectory + baseline)
    noise_rng = rng if noise.seeded else np.random.default_rng()
    values = np.clip(_apply_noise(values, noise, noise_rng), 0.0, 1.0)
    return LabeledSequence(
        sequence_id=sequence_id or f'{identity.id}/{spec.id}/{angle}',
        values=values,
        label=spec.label,
        identity_id=identity.id,
        ethnicity=identity.ethnicity,
        gender=identity.gender,
        provenance=provenance,
        angle=angle,
        signal_id=spec.id,
    )


def generate_synthetic_dataset(suite, signals, angles, noise, seed):
    """Render every (identity, signal, angle) combination once."""
    if not suite or not signals or not angles:
        raise ValidationError('Synthetic generation needs at least one identity, signal and angle')
    rng = np.random.default_rng(seed)
    sequences = [
        render(identity, spec, angle, noise, rng)
        for identity in suite
        for spec in signals
        for angle in angles
    ]
    logger.info('Rendered %d synthetic sequences (%d identities x %d signals x %d angles)',
                len(sequences), len(suite), len(signals), len(angles))
    manifest = {
        'kind': Provenance.SYNTHETIC.value,
        'seed': seed,
        'noise': noise.to_dict(),
        'identities': [identity.to_dict() for identity in suite],
        'signals': [spec.id for spec in signals],
        'angles': [angle.as_list() for angle in angles],
    }
    return SequenceDataset(sequences, manifest)


def perturb_signal(spec, rng, frame_jitter=2, intensity_jitter=0.15):
    """A person-specific variant of a canonical recipe."""
    keyframes = {}
    for kf in spec.keyframes:
        frame = int(np.clip(kf.frame + rng.integers(-frame_jitter, frame_jitter + 1), 0, N_FRAMES - 1))
        intensity = kf.intensity
        if intensity > 0:
            intensity = float(np.clip(intensity + rng.uniform(-intensity_jitter, intensity_jitter), 0.05, 1.0))
        # a jittered keyframe landing on an occupied slot keeps the earlier one
        keyframes.setdefault((frame, kf.au), Keyframe(frame, kf.au, intensity))
    return SocialSignalSpec(spec.id, spec.label, tuple(keyframes.values())).validate()


def _surrogate_identities(suite_seed):
    rng = np.random.default_rng([suite_seed, 1])
    ethnicities = [Ethnicity.CAUCASIAN] * 14 + [Ethnicity.BLACK, Ethnicity.ASIAN, Ethnicity.HISPANIC] * 2
    genders = list(Gender)
    return [
        VirtualIdentity.sample(f'real-{i:02d}', genders[i % 2], ethnicity, rng)
        for i, ethnicity in enumerate(ethnicities)
    ]


def generate_surrogate_real(suite_seed, noise_real, seed, *, signals=None,
                            synthetic_noise=SYNTHETIC_NOISE_DEFAULTS):
    """123 shifted-domain clips: 41 per label, 26 from non-Caucasian identities.

    Identities are drawn fresh (``real-`` ids) so they never overlap a
    synthetic suite. Clip lengths vary over 20..75 frames through tempo
    stretch plus a held tail.
    """
    if not noise_real.is_harsher_than(synthetic_noise):
        raise ValidationError('Surrogate-real noise must be harsher than the synthetic noise')
    signals = signals or canonical_signals()
    by_label = {label: [s for s in signals if s.label == label] for label in EmotionLabel}
    if any(not specs for specs in by_label.values()):
        raise ValidationError('Every emotion needs at least one signal')

    identities = _surrogate_identities(suite_seed)
    majority = [i for i in identities if i.ethnicity == Ethnicity.CAUCASIAN]
    minority = [i for i in identities if i.ethnicity != Ethnicity.CAUCASIAN]
    rng = np.random.default_rng(seed)

    n_labels = len(EmotionLabel)
    minority_per_label = [SURROGATE_NON_CAUCASIAN // n_labels] * n_labels
    for extra in rng.permutation(n_labels)[:SURROGATE_NON_CAUCASIAN % n_labels]:
        minority_per_label[extra] += 1

    plan = []
    cursor = {'minority': 0, 'majority': 0}
    for label, n_minority in zip(EmotionLabel, minority_per_label):
        for i in range(SURROGATE_PER_LABEL):
            pool, key = (minority, 'minority') if i < n_minority else (majority, 'majority')
            plan.append((label, pool[cursor[key] % len(pool)]))
            cursor[key] += 1

    order = rng.permutation(len(plan))
    min_len, max_len = SURROGATE_LENGTH_RANGE
    sequences = []
    for n, idx in enumerate(order):
        label, identity = plan[idx]
        spec = perturb_signal(by_label[label][rng.integers(len(by_label[label]))], rng)
        angle = ViewingAngle(round(float(rng.uniform(-30, 30)), 1), round(float(rng.uniform(-20, 20)), 1))
        core = int(np.clip(round(N_FRAMES * rng.uniform(0.8, 2.0)), min_len, 50))
        tail = int(rng.integers(0, max_len - core + 1))
        sequences.append(render(
            identity, spec, angle, noise_real, rng,
            n_frames=core, tail_frames=tail,
            provenance=Provenance.SURROGATE_REAL, sequence_id=f'real-{n:03d}',
        ))

    logger.info('Rendered %d surrogate-real sequences from %d identities (%d non-Caucasian)',
                len(sequences), len(identities),
                sum(s.ethnicity != Ethnicity.CAUCASIAN for s in sequences))
    manifest = {
        'kind': Provenance.SURROGATE_REAL.value,
        'seed': seed,
        'suite_seed': suite_seed,
        'noise': noise_real.to_dict(),
        'identities': [identity.to_dict() for identity in identities],
        'channels': list(AU_CODES),
    }
    return SequenceDataset(sequences, manifest)
