from pathlib import Path

import numpy as np

from expressions.choices import EmotionLabel, Ethnicity
from expressions.conf import sim2real_setting
from expressions.dataio import assign_folds, save_dataset
from expressions.forms import GenerateForm
from expressions.management.base import PipelineCommand
from expressions.reports import write_json
from expressions.signalgen import (
    SUITE_SIZE, NoiseConfig, angle_grid, canonical_signals, generate_identity_suite,
    generate_surrogate_real, generate_synthetic_dataset,
)


class Command(PipelineCommand):
    help = 'Generate the synthetic and surrogate-real datasets'
    config_keys = ('seed', 'identities', 'folds', 'minority_fold', 'synthetic_noise', 'real_noise')

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--out', type=str, required=True, help='Output directory')
        parser.add_argument('--identities', type=int, help='Synthetic identities to render (1..24)')
        parser.add_argument('--folds', type=int, help='Cross-validation folds of the real dataset')
        parser.add_argument('--no-minority-fold', dest='minority_fold', action='store_const', const=False,
                            help='Do not reserve fold 0 for non-Caucasian sequences')
        parser.add_argument('--force', action='store_true', help='Overwrite a non-empty output directory')

    def run(self, **options):
        defaults = {
            'seed': sim2real_setting('DEFAULT_SEED'),
            'identities': SUITE_SIZE,
            'folds': sim2real_setting('FOLDS'),
            'minority_fold': True,
            'synthetic_noise': sim2real_setting('SYNTHETIC_NOISE'),
            'real_noise': sim2real_setting('REAL_NOISE'),
        }
        data = self.resolve(options, defaults)
        cfg = self.validate(GenerateForm, data).cleaned_data
        out = self.prepare_output(options['out'], options['force'])
        seed = cfg['seed']
        synthetic_noise = NoiseConfig.from_dict(cfg['synthetic_noise'])

        self.stdout.write('=== Generating datasets ===')
        suite = generate_identity_suite(seed, size=cfg['identities'])
        synth = generate_synthetic_dataset(suite, canonical_signals(), angle_grid(), synthetic_noise, seed)
        real = generate_surrogate_real(seed, NoiseConfig.from_dict(cfg['real_noise']), seed,
                                       synthetic_noise=synthetic_noise)
        real = assign_folds(real, cfg['folds'], cfg['minority_fold'], np.random.default_rng([seed, 2]))

        save_dataset(synth, out / 'synthetic')
        save_dataset(real, out / 'real')
        write_json(data, Path(out) / 'config.json')

        for name, dataset in (('Synthetic', synth), ('Surrogate real', real)):
            counts = dataset.label_counts()
            per_label = ', '.join(f'{label.label} {counts[label]}' for label in EmotionLabel)
            self.stdout.write(f'  {name}: {len(dataset)} sequences ({per_label})')
        minority = sum(s.ethnicity != Ethnicity.CAUCASIAN for s in real)
        self.stdout.write(f'  Non-Caucasian real sequences: {minority}')
        info = real.manifest.get('minority_fold')
        if info and info['non_caucasian_in_fold_0'] < info['non_caucasian_total']:
            self.stdout.write(self.style.WARNING(
                f"  Fold 0 holds {info['non_caucasian_in_fold_0']} of {info['non_caucasian_total']} "
                'non-Caucasian sequences'
            ))
        self.stdout.write(self.style.SUCCESS(f'Datasets written to {out}'))
