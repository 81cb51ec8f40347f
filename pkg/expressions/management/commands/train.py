from pathlib import Path

from django.core.management.base import CommandError

from expressions.choices import ModelKind, StrategyKind
from expressions.conf import sim2real_setting
from expressions.dataio import load_dataset
from expressions.forms import TrainForm
from expressions.management.base import EXIT_INVALID, PipelineCommand
from expressions.neuralnet import save_checkpoint
from expressions.pipeline import cross_validate
from expressions.reports import write_json, write_run_reports


class Command(PipelineCommand):
    help = 'Train and cross-validate one strategy on a generated dataset directory'
    config_keys = (
        'data', 'seed', 'strategy', 'model', 'ratio', 'length', 'freeze', 'pretrain_epochs',
        'finetune_epochs', 'learning_rate', 'finetune_learning_rate', 'batch_size', 'augment',
        'knn_k', 'dtw_band', 'folds', 'jobs', 'architecture',
    )

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--data', type=str, help='Directory written by the generate command')
        parser.add_argument('--out', type=str, required=True, help='Run directory')
        parser.add_argument('--strategy', choices=StrategyKind.values)
        parser.add_argument('--model', choices=ModelKind.values)
        parser.add_argument('--ratio', type=float, help='Synthetic ratio for the mixed strategy')
        parser.add_argument('--len', dest='length', type=int, help='Input length L in frames')
        parser.add_argument('--freeze', type=int, help='Freeze the first N inception blocks')
        parser.add_argument('--pretrain-epochs', type=int)
        parser.add_argument('--finetune-epochs', type=int)
        parser.add_argument('--lr', dest='learning_rate', type=float)
        parser.add_argument('--finetune-lr', dest='finetune_learning_rate', type=float)
        parser.add_argument('--batch-size', type=int)
        parser.add_argument('--augment', action='store_const', const=True,
                            help='Augment training sequences with the AUGMENT settings')
        parser.add_argument('--knn-k', type=int)
        parser.add_argument('--dtw-band', type=int)
        parser.add_argument('--fold', dest='fold_list', type=int, action='append',
                            help='Evaluate only this test fold (repeatable)')
        parser.add_argument('--jobs', type=int, help='Folds trained in parallel')
        parser.add_argument('--depth', type=int, help='Inception blocks')
        parser.add_argument('--filters', type=int, help='Filters per convolution branch')
        parser.add_argument('--force', action='store_true', help='Overwrite a non-empty run directory')

    def run(self, **options):
        train = sim2real_setting('TRAIN')
        strategy = sim2real_setting('STRATEGY')
        knn = sim2real_setting('KNN')
        defaults = {
            'data': None,
            'seed': sim2real_setting('DEFAULT_SEED'),
            'strategy': strategy['kind'],
            'model': ModelKind.INCEPTION.value,
            'ratio': None,
            'length': strategy['length'],
            'freeze': strategy['freeze_blocks'],
            'pretrain_epochs': train['pretrain_epochs'],
            'finetune_epochs': train['finetune_epochs'],
            'learning_rate': train['learning_rate'],
            'finetune_learning_rate': train['finetune_learning_rate'],
            'batch_size': train['batch_size'],
            'augment': None,
            'knn_k': knn['k'],
            'dtw_band': knn['band'],
            'folds': None,
            'jobs': 1,
            'architecture': {},
        }
        if options.get('augment'):
            options['augment'] = sim2real_setting('AUGMENT')
        if options.get('fold_list'):
            options['folds'] = options['fold_list']
        data = self.resolve(options, defaults)
        architecture = dict(data.get('architecture') or {})
        if options.get('depth') is not None:
            architecture['depth'] = options['depth']
        if options.get('filters') is not None:
            architecture['n_filters'] = architecture['bottleneck'] = options['filters']
        data['architecture'] = architecture
        if data['strategy'] == StrategyKind.MIXED_RATIO and data['ratio'] is None:
            data['ratio'] = strategy['ratio']

        form = self.validate(TrainForm, data)
        spec, cfg = form.strategy, form.cleaned_data
        if not data['data']:
            raise CommandError('Pass --data with the generated dataset directory', returncode=EXIT_INVALID)
        data_dir = self.require_dir(data['data'], 'Dataset directory')
        real = load_dataset(self.require_dir(data_dir / 'real', 'Dataset'))
        synth = None
        if spec.kind != StrategyKind.REAL_ONLY:
            synth = load_dataset(self.require_dir(data_dir / 'synthetic', 'Dataset'))
        out = self.prepare_output(options['out'], options['force'])
        write_json(data, out / 'config.json')

        self.stdout.write(f'=== {spec.variant_name()} ===')
        cv = cross_validate(spec, synth, real, seed=cfg['seed'], jobs=cfg['jobs'], folds=cfg['folds'])

        for run in cv.runs:
            fold_dir = Path(out) / f'fold{run.report.test_fold}'
            fold_dir.mkdir(parents=True, exist_ok=True)
            write_json(sorted(run.trained_ids), fold_dir / 'trained_ids.json')
            if spec.model == ModelKind.KNN:
                write_json({**run.model.describe(), 'reference_ids': [s.sequence_id for s in run.model.references]},
                           fold_dir / 'knn.json')
            else:
                save_checkpoint(run.model, fold_dir / 'checkpoint', epoch=spec.finetune_epochs,
                                extra={'test_fold': run.report.test_fold, 'seed': cfg['seed']})
            self.stdout.write(f'  Fold {run.report.test_fold}: accuracy {run.report.accuracy:.1f}%')

        write_run_reports(out, cv.combined, cv.reports)
        combined = cv.combined
        self.stdout.write(
            f"  Pooled: accuracy {combined.pooled.accuracy:.1f}%, macro F1 {combined.pooled.f1:.1f}%; "
            f"mean over folds {combined.averaged['accuracy']['mean']:.1f}% "
            f"(std {combined.averaged['accuracy']['std']:.1f})"
        )
        if combined.pooled.flagged:
            self.stdout.write(self.style.WARNING('  Undefined metrics: ' + ', '.join(combined.pooled.undefined)))
        self.stdout.write(self.style.SUCCESS(f'Run written to {out}'))
