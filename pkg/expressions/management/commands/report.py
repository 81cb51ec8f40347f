import csv
import re
from collections import Counter
from pathlib import Path

from django.core.exceptions import ValidationError
from django.core.management.base import CommandError

from expressions.choices import ModelKind, StrategyKind
from expressions.management.base import EXIT_INVALID, PipelineCommand
from expressions.pipeline import EvalReport, StrategySpec, fairness_report, mean_std, pool_reports
from expressions.reports import (
    confusion_table, fairness_text, format_table, read_json, render_confusion_png, write_confusion_csv,
    write_json,
)

MINORITY_FOLD = 0


def _slug(name):
    return re.sub(r'[^a-z0-9]+', '-', name.lower()).strip('-')


class Command(PipelineCommand):
    help = 'Merge finished runs into comparison tables and the minority-fold fairness deltas'

    def add_arguments(self, parser):
        parser.add_argument('runs', nargs='+', type=str, help='Run directories written by the train command')
        parser.add_argument('--out', type=str, required=True, help='Output directory')
        parser.add_argument('--base', type=str,
                            help='Base variant for the fairness deltas, '
                                 'e.g. "RealOnly, InceptionTime, L=64: frozen(3) + no synthetic"')
        parser.add_argument('--force', action='store_true', help='Overwrite a non-empty output directory')

    def _load(self, run_dir):
        run_dir = self.require_dir(run_dir, 'Run directory')
        try:
            stored = read_json(run_dir / 'report.json')
        except FileNotFoundError as exc:
            raise CommandError(f'{run_dir} is not a finished run', returncode=EXIT_INVALID) from exc
        spec = StrategySpec.from_dict(stored['combined']['config'])
        folds = {fold['test_fold']: EvalReport.from_dict(fold) for fold in stored['folds']}
        return {'path': str(run_dir), 'spec': spec, 'key': spec.variant_key(), 'variant': spec.variant_name(),
                'seed': stored['combined']['seed'], 'combined': stored['combined'], 'folds': folds}

    def _check_compatible(self, runs):
        reference = runs[0]
        for run in runs[1:]:
            for fold in set(run['folds']) & set(reference['folds']):
                if sorted(run['folds'][fold].test_ids) != sorted(reference['folds'][fold].test_ids):
                    raise ValidationError(
                        'Runs %(a)s and %(b)s were evaluated on different test folds',
                        params={'a': reference['path'], 'b': run['path']},
                    )

    def _group(self, runs):
        """Runs with one configuration become seeds of one variant; labels are made unique."""
        groups = {}
        for run in runs:
            groups.setdefault(run['key'], []).append(run)
        by_variant, used = {}, Counter()
        for members in groups.values():
            seeds = [run['seed'] for run in members]
            if len(set(seeds)) != len(seeds):
                raise ValidationError(
                    'Runs %(runs)s repeat one configuration with the same seed',
                    params={'runs': ', '.join(run['path'] for run in members)},
                )
            label = members[0]['variant']
            used[label] += 1
            if used[label] > 1:
                label = f'{label} [config {used[label]}]'
            for run in members:
                run['variant'] = label
            by_variant[label] = members
        return by_variant

    def _default_base(self, variants, runs):
        for run in runs:
            spec = run['spec']
            if spec.kind == StrategyKind.REAL_ONLY and spec.model == ModelKind.INCEPTION and spec.freeze_blocks:
                return run['variant']
        return variants[0]

    def _fairness(self, by_variant, runs, base):
        minority_runs = {v: [r['folds'][MINORITY_FOLD] for r in m if MINORITY_FOLD in r['folds']]
                         for v, m in by_variant.items()}
        lacking = [v for v, reports in minority_runs.items() if not reports]
        if lacking:
            raise ValidationError('Variants without a minority-fold evaluation: %(v)s',
                                  params={'v': ', '.join(lacking)})
        base = base or self._default_base(list(by_variant), runs)
        return base, fairness_report({v: pool_reports(reports) for v, reports in minority_runs.items()}, base)

    def run(self, **options):
        runs = [self._load(path) for path in options['runs']]
        self._check_compatible(runs)
        by_variant = self._group(runs)
        base, fairness = options['base'], None
        if len(by_variant) > 1:
            base, fairness = self._fairness(by_variant, runs, base)
        out = self.prepare_output(options['out'], options['force'])

        headers = ['run', 'variant', 'seed', 'folds', '%Acc pooled', '%Acc mean', '%Acc std', '%F1 pooled',
                   '%Acc minority fold']
        rows, summary = [], []
        for variant, members in by_variant.items():
            for run in members:
                combined = run['combined']
                minority = run['folds'].get(MINORITY_FOLD)
                rows.append([
                    Path(run['path']).name, variant, run['seed'], combined['folds'],
                    combined['pooled']['accuracy'], combined['averaged']['accuracy']['mean'],
                    combined['averaged']['accuracy']['std'], combined['pooled']['f1'],
                    minority.accuracy if minority else None,
                ])
            if len(members) > 1:
                pooled = mean_std([r['combined']['pooled']['accuracy'] for r in members])
                minority = mean_std([r['folds'][MINORITY_FOLD].accuracy for r in members
                                     if MINORITY_FOLD in r['folds']])
                f1 = mean_std([r['combined']['pooled']['f1'] for r in members])
                rows.append([f'mean ± std ({len(members)} seeds)', variant, '', '',
                             _pm(pooled), '', '', _pm(f1), _pm(minority)])
                summary.append({'variant': variant, 'seeds': [r['seed'] for r in members],
                                'pooled_accuracy': pooled, 'pooled_f1': f1, 'minority_accuracy': minority})

        parts = [format_table(headers, rows)]
        result = {'runs': [{key: run[key] for key in ('path', 'variant', 'seed')} for run in runs],
                  'table': [dict(zip(headers, row)) for row in rows], 'seed_summary': summary}

        for variant, members in by_variant.items():
            confusion = sum(_run_confusion(run) for run in members)
            stem = f'confusion-{_slug(variant)}'
            write_confusion_csv(confusion, out / f'{stem}.csv')
            render_confusion_png(confusion, out / f'{stem}.png')
            parts += ['', f'Combined confusion matrix: {variant}', confusion_table(confusion)]

        if fairness is not None:
            parts += ['', 'Minority fold accuracy', fairness_text(fairness)]
            result['fairness'] = fairness
            with open(out / 'fairness.csv', 'w', newline='', encoding='utf-8') as fh:
                writer = csv.DictWriter(fh, fieldnames=['variant', 'accuracy', 'delta', 'is_base'])
                writer.writeheader()
                writer.writerows(fairness)

        text = '\n'.join(parts) + '\n'
        (out / 'comparison.txt').write_text(text, encoding='utf-8')
        write_json(result, out / 'comparison.json')
        write_json({'runs': [r['path'] for r in runs], 'seeds': [r['seed'] for r in runs], 'base': base},
                   out / 'config.json')
        self.stdout.write(text)
        self.stdout.write(self.style.SUCCESS(f'Comparison written to {out}'))


def _pm(stats):
    if stats['mean'] is None:
        return None
    return f"{stats['mean']:.1f} ± {stats['std']:.1f}"


def _run_confusion(run):
    reports = [run['folds'][f] for f in sorted(run['folds'])]
    return sum(r.confusion for r in reports)
