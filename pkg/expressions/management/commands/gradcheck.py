import numpy as np
from django.core.management.base import CommandError

from expressions.conf import sim2real_setting
from expressions.management.base import EXIT_GRADCHECK_FAILED, PipelineCommand
from expressions.neuralnet import build_inception_time, grad_check, set_freeze
from expressions.reports import format_table, write_json
from expressions.sequences import N_CHANNELS


class Command(PipelineCommand):
    help = 'Compare backprop gradients of a reduced InceptionTime against central differences'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--seeds', type=int, nargs='+', help='Seeds to check (default: --seed)')
        parser.add_argument('--depth', type=int, default=2)
        parser.add_argument('--filters', type=int, default=4)
        parser.add_argument('--kernel-sizes', type=int, nargs='+', default=[3, 5, 9])
        parser.add_argument('--residual-every', type=int, default=2)
        parser.add_argument('--freeze', type=int, default=0)
        parser.add_argument('--length', type=int, default=24, help='Frames per input sequence')
        parser.add_argument('--batch', type=int, default=4)
        parser.add_argument('--coords', type=int, help='Sampled parameter coordinates per seed')
        parser.add_argument('--tolerance', type=float, help='Max relative error that still passes')
        parser.add_argument('--step', type=float, help='Central-difference step')
        parser.add_argument('--out', type=str, help='Write gradcheck.json and config.json into this directory')
        parser.add_argument('--force', action='store_true', help='Overwrite a non-empty --out directory')

    def run(self, **options):
        settings = sim2real_setting('GRADCHECK')
        coords = options['coords'] or settings['coords']
        tolerance = options['tolerance'] or settings['tolerance']
        step = options['step'] or settings['step']
        seed = options['seed'] if options['seed'] is not None else sim2real_setting('DEFAULT_SEED')
        seeds = options['seeds'] or [seed]
        out = self.prepare_output(options['out'], options['force']) if options['out'] else None
        config = {
            'seeds': seeds, 'depth': options['depth'], 'filters': options['filters'],
            'kernel_sizes': options['kernel_sizes'], 'residual_every': options['residual_every'],
            'freeze': options['freeze'], 'length': options['length'], 'batch': options['batch'],
            'coords': coords, 'tolerance': tolerance, 'step': step,
        }

        results, rows = [], []
        for s in seeds:
            model = build_inception_time(
                depth=options['depth'], n_filters=options['filters'], bottleneck=options['filters'],
                kernel_sizes=tuple(options['kernel_sizes']), residual_every=options['residual_every'], seed=s,
            )
            set_freeze(model, options['freeze'])
            rng = np.random.default_rng([s, 7])
            x = rng.uniform(0.0, 1.0, size=(options['batch'], N_CHANNELS, options['length']))
            labels = rng.integers(0, 3, size=options['batch'])
            report = grad_check(model, x, labels, tolerance=tolerance, n_coords=coords, step=step, seed=s)
            results.append({'seed': s, **report.to_dict()})
            rows.append([f'seed {s}', report.n_params, report.n_coords, f'{report.max_rel_error:.2e}',
                         report.worst_param or '-', 'pass' if report.passed else 'FAIL'])

        self.stdout.write(format_table(['', 'params', 'coords', 'max rel error', 'worst', 'result'], rows))
        if out is not None:
            write_json(config, out / 'config.json')
            write_json({'tolerance': tolerance, 'step': step, 'results': results}, out / 'gradcheck.json')
        failed = [r['seed'] for r in results if not r['passed']]
        if failed:
            raise CommandError(f'Gradient check failed for seed(s) {failed}', returncode=EXIT_GRADCHECK_FAILED)
        self.stdout.write(self.style.SUCCESS(f'Gradient check passed for {len(results)} seed(s)'))
