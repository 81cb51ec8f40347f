from pathlib import Path

from django.core.management.base import CommandError

from expressions.choices import ModelKind, WindowMode
from expressions.dataio import LengthPolicy, load_dataset, normalize_length
from expressions.dtwknn import KNNClassifier
from expressions.management.base import EXIT_INVALID, PipelineCommand
from expressions.neuralnet import load_checkpoint
from expressions.neuralnet.training import predict
from expressions.pipeline import EvalReport, StrategySpec, combine_reports, evaluate_predictions
from expressions.reports import format_table, read_json, write_json, write_run_reports


class Command(PipelineCommand):
    help = 'Re-evaluate the saved models of a run directory on their test folds'

    def add_arguments(self, parser):
        parser.add_argument('run', type=str, help='Run directory written by the train command')
        parser.add_argument('--fold', dest='folds', type=int, action='append', help='Only this fold (repeatable)')
        parser.add_argument('--data', type=str, help='Dataset directory, if it moved since training')
        parser.add_argument('--out', type=str, help='Write the re-evaluation reports here')
        parser.add_argument('--force', action='store_true', help='Overwrite a non-empty --out directory')

    def run(self, **options):
        run_dir = self.require_dir(options['run'], 'Run directory')
        try:
            config = read_json(run_dir / 'config.json')
            stored = read_json(run_dir / 'report.json')
        except FileNotFoundError as exc:
            raise CommandError(f'{run_dir} is not a finished run: {exc}', returncode=EXIT_INVALID) from exc
        spec = StrategySpec.from_dict(stored['combined']['config'])
        seed = stored['combined']['seed']
        real = load_dataset(self.require_dir(Path(options['data'] or config['data']) / 'real', 'Dataset'))
        stored_folds = {fold['test_fold']: EvalReport.from_dict(fold) for fold in stored['folds']}
        folds = sorted(set(options['folds'])) if options['folds'] else sorted(stored_folds)
        missing = [f for f in folds if f not in stored_folds]
        if missing:
            raise CommandError(f'Run has no fold(s) {missing}', returncode=EXIT_INVALID)

        policy = LengthPolicy(spec.length, WindowMode.TEST_CENTER)
        reports, rows = [], []
        for fold in folds:
            test = real.fold(fold)
            fold_dir = run_dir / f'fold{fold}'
            if spec.model == ModelKind.KNN:
                by_id = {s.sequence_id: s for s in real}
                knn = read_json(fold_dir / 'knn.json')
                references = [normalize_length(by_id[i], policy) for i in knn['reference_ids']]
                model = KNNClassifier(knn['k'], knn['band']).fit(references)
                predictions = model.predict([normalize_length(s, policy) for s in test])
            else:
                model, _ = load_checkpoint(fold_dir / 'checkpoint')
                predictions, _ = predict(model, test, policy)
            report = evaluate_predictions(test, predictions, spec.to_dict(), seed, fold)
            reports.append(report)
            stored_accuracy = stored_folds[fold].accuracy
            rows.append([f'fold {fold}', report.accuracy, stored_accuracy,
                         'yes' if report.predictions == stored_folds[fold].predictions else 'no'])

        self.stdout.write(format_table(['', '%Acc', '%Acc at training', 'same predictions'], rows))
        if options['out']:
            out = self.prepare_output(options['out'], options['force'])
            write_json({'run': str(run_dir), 'folds': folds, 'data': options['data'] or config['data']},
                       out / 'config.json')
            write_run_reports(out, combine_reports(reports, seed, spec.to_dict()), reports)
            self.stdout.write(self.style.SUCCESS(f'Evaluation written to {out}'))
        if any(row[-1] == 'no' for row in rows):
            self.stdout.write(self.style.WARNING('Predictions differ from the ones recorded at training time'))
