import json
import tempfile
from io import StringIO
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase


def call(*args):
    out = StringIO()
    call_command(*args, stdout=out, stderr=StringIO())
    return out.getvalue()


class CommandTestCase(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        cls.root = Path(cls.tmp.name)
        cls.data = cls.root / 'data'
        call('generate', '--out', str(cls.data), '--identities', '1', '--seed', '0')

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    def assertExitCode(self, code, *args):
        with self.assertRaises(CommandError) as ctx:
            call(*args)
        self.assertEqual(ctx.exception.returncode, code)
        return ctx.exception

    def train(self, name, *args):
        out = self.root / name
        call('train', '--data', str(self.data), '--out', str(out), *args)
        return out


class GenerateCommandTests(CommandTestCase):

    def test_outputs_and_counts(self):
        self.assertTrue((self.data / 'synthetic' / 'sequences.bin').exists())
        manifest = json.loads((self.data / 'real' / 'manifest.json').read_text())
        self.assertEqual(manifest['counts']['total'], 123)
        self.assertEqual(len(manifest['records']), 123)
        synthetic = json.loads((self.data / 'synthetic' / 'manifest.json').read_text())
        self.assertEqual(synthetic['counts']['total'], 189)
        config = json.loads((self.data / 'config.json').read_text())
        self.assertEqual((config['identities'], config['seed'], config['folds']), (1, 0, 5))

    def test_refuses_to_overwrite(self):
        self.assertExitCode(2, 'generate', '--out', str(self.data), '--identities', '1')

    def test_same_seed_same_bytes(self):
        again = self.root / 'again'
        output = call('generate', '--out', str(again), '--identities', '1', '--seed', '0')
        self.assertIn('Surrogate real: 123 sequences', output)
        for name in ('synthetic/sequences.bin', 'real/sequences.bin', 'real/manifest.json', 'config.json'):
            self.assertEqual((again / name).read_bytes(), (self.data / name).read_bytes(), name)
        call('generate', '--out', str(again), '--identities', '1', '--seed', '1', '--force')
        self.assertNotEqual((again / 'real/sequences.bin').read_bytes(),
                            (self.data / 'real/sequences.bin').read_bytes())

    def test_invalid_settings(self):
        self.assertExitCode(2, 'generate', '--out', str(self.root / 'bad'), '--identities', '30')
        self.assertExitCode(2, 'generate', '--out', str(self.root / 'bad'), '--folds', '1')
        self.assertFalse((self.root / 'bad').exists())

    def test_config_file(self):
        config = self.root / 'generate.json'
        config.write_text(json.dumps({'identities': 1, 'seed': 0}))
        out = self.root / 'from-config'
        call('generate', '--config', str(config), '--out', str(out))
        self.assertEqual((out / 'real/sequences.bin').read_bytes(), (self.data / 'real/sequences.bin').read_bytes())
        config.write_text(json.dumps({'colour': 'blue'}))
        self.assertExitCode(2, 'generate', '--config', str(config), '--out', str(self.root / 'unknown-key'))


class KNNRunTests(CommandTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.run_dir = cls.root / 'knn'
        call('train', '--data', str(cls.data), '--out', str(cls.run_dir), '--strategy', 'real-only',
             '--model', 'knn', '--fold', '0', '--len', '25')

    def test_run_directory(self):
        for name in ('config.json', 'report.json', 'report.txt', 'confusion.csv', 'confusion.png', 'report.xlsx',
                     'fold0/report.json', 'fold0/knn.json', 'fold0/trained_ids.json'):
            self.assertTrue((self.run_dir / name).exists(), name)
        report = json.loads((self.run_dir / 'report.json').read_text())
        self.assertEqual([f['test_fold'] for f in report['folds']], [0])
        self.assertEqual(sum(map(sum, report['combined']['confusion'])), 25)
        trained = set(json.loads((self.run_dir / 'fold0/trained_ids.json').read_text()))
        self.assertFalse(trained & set(report['folds'][0]['test_ids']))

    def test_eval_reproduces_predictions(self):
        output = call('eval', str(self.run_dir))
        self.assertIn('fold 0', output)
        self.assertIn('yes', output)
        self.assertNotIn('differ', output)

    def test_eval_into_directory(self):
        out = self.root / 'knn-eval'
        call('eval', str(self.run_dir), '--out', str(out), '--fold', '0')
        self.assertTrue((out / 'report.json').exists())
        self.assertExitCode(2, 'eval', str(self.run_dir), '--fold', '3')

    def test_runs_on_different_datasets_are_incompatible(self):
        other_data = self.root / 'data-seed-1'
        call('generate', '--out', str(other_data), '--identities', '1', '--seed', '1')
        other = self.root / 'knn-seed-1'
        call('train', '--data', str(other_data), '--out', str(other), '--strategy', 'real-only',
             '--model', 'knn', '--fold', '0', '--len', '25')
        self.assertExitCode(2, 'report', str(self.run_dir), str(other), '--out', str(self.root / 'cmp-bad'))
        self.assertFalse((self.root / 'cmp-bad').exists())


class TrainValidationTests(CommandTestCase):

    def test_knn_needs_real_only(self):
        self.assertExitCode(2, 'train', '--data', str(self.data), '--out', str(self.root / 'x'),
                            '--strategy', 'mixed', '--model', 'knn')

    def test_ratio_without_mixed_strategy(self):
        self.assertExitCode(2, 'train', '--data', str(self.data), '--out', str(self.root / 'x'),
                            '--strategy', 'real-only', '--ratio', '0.5')

    def test_missing_dataset(self):
        self.assertExitCode(2, 'train', '--out', str(self.root / 'x'), '--strategy', 'real-only')
        self.assertExitCode(2, 'train', '--data', str(self.root / 'nowhere'), '--out', str(self.root / 'x'),
                            '--strategy', 'real-only')

    def test_corrupt_dataset(self):
        broken = self.root / 'broken'
        call('generate', '--out', str(broken), '--identities', '1')
        data = broken / 'real' / 'sequences.bin'
        data.write_bytes(data.read_bytes()[:-8])
        self.assertExitCode(3, 'train', '--data', str(broken), '--out', str(self.root / 'y'),
                            '--strategy', 'real-only', '--model', 'knn')


class InceptionRunTests(CommandTestCase):
    tiny = ('--strategy', 'real-only', '--depth', '1', '--filters', '2', '--finetune-epochs', '1',
            '--len', '16', '--fold', '0')
    variant = 'RealOnly, InceptionTime, L=16: unfrozen + no synthetic'

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.run_dir = cls.root / 'inception'
        call('train', '--data', str(cls.data), '--out', str(cls.run_dir), *cls.tiny)

    def test_checkpoint_written(self):
        meta = json.loads((self.run_dir / 'fold0/checkpoint/model.json').read_text())
        self.assertEqual(meta['architecture']['depth'], 1)
        self.assertEqual(meta['architecture']['n_filters'], 2)
        self.assertTrue((self.run_dir / 'fold0/checkpoint/weights.bin').exists())

    def test_eval_reproduces_predictions(self):
        output = call('eval', str(self.run_dir))
        self.assertIn('yes', output)
        self.assertNotIn('differ', output)

    def test_rerun_from_config(self):
        rerun = self.root / 'inception-rerun'
        call('train', '--config', str(self.run_dir / 'config.json'), '--out', str(rerun))
        first = json.loads((self.run_dir / 'report.json').read_text())
        second = json.loads((rerun / 'report.json').read_text())
        self.assertEqual(first['folds'][0]['predictions'], second['folds'][0]['predictions'])
        self.assertEqual(first['folds'][0]['history']['train_loss'], second['folds'][0]['history']['train_loss'])

    def test_non_empty_run_directory(self):
        self.assertExitCode(2, 'train', '--data', str(self.data), '--out', str(self.run_dir), *self.tiny)
        target = self.train('inception-forced', *self.tiny)
        (target / 'stale.txt').write_text('old')
        call('train', '--data', str(self.data), '--out', str(target), *self.tiny, '--force')
        self.assertFalse((target / 'stale.txt').exists())
        self.assertTrue((target / 'report.json').exists())

    def test_fairness_comparison(self):
        frozen = self.train('inception-frozen', *self.tiny, '--freeze', '1')
        out = self.root / 'comparison'
        output = call('report', str(self.run_dir), str(frozen), '--out', str(out))
        self.assertIn('Minority fold accuracy', output)
        comparison = json.loads((out / 'comparison.json').read_text())
        rows = {row['variant']: row for row in comparison['fairness']}
        unfrozen, base = self.variant, 'RealOnly, InceptionTime, L=16: frozen(1) + no synthetic'
        self.assertEqual(set(rows), {unfrozen, base})
        self.assertTrue(rows[base]['is_base'])
        self.assertAlmostEqual(rows[unfrozen]['delta'], rows[unfrozen]['accuracy'] - rows[base]['accuracy'])
        for name in ('fairness.csv', 'comparison.txt',
                     'confusion-realonly-inceptiontime-l-16-unfrozen-no-synthetic.csv',
                     'confusion-realonly-inceptiontime-l-16-frozen-1-no-synthetic.png'):
            self.assertTrue((out / name).exists(), name)
        config = json.loads((out / 'config.json').read_text())
        self.assertEqual((config['seeds'], config['base']), ([0, 0], base))

    def test_report_keeps_strategies_apart(self):
        mixed = self.train('inception-mixed', *self.tiny, '--strategy', 'mixed', '--ratio', '1.0')
        knn = self.train('knn-len-16', '--strategy', 'real-only', '--model', 'knn', '--fold', '0', '--len', '16')
        out = self.root / 'strategies'
        output = call('report', str(self.run_dir), str(mixed), str(knn), '--out', str(out))
        self.assertNotIn('mean ± std', output)
        comparison = json.loads((out / 'comparison.json').read_text())
        self.assertEqual([run['variant'] for run in comparison['runs']], [
            self.variant,
            'MixedRatio(1), InceptionTime, L=16: unfrozen + synthetic',
            'RealOnly, KNN-DTW, L=16',
        ])
        self.assertEqual(comparison['seed_summary'], [])
        self.assertEqual(len(comparison['fairness']), 3)
        self.assertTrue((out / 'confusion-realonly-knn-dtw-l-16.csv').exists())

    def test_report_averages_seeds_of_one_configuration(self):
        other = self.train('inception-seed-1', *self.tiny, '--seed', '1')
        out = self.root / 'seeds'
        output = call('report', str(self.run_dir), str(other), '--out', str(out))
        self.assertIn('mean ± std (2 seeds)', output)
        comparison = json.loads((out / 'comparison.json').read_text())
        self.assertEqual(comparison['seed_summary'][0]['variant'], self.variant)
        self.assertEqual(comparison['seed_summary'][0]['seeds'], [0, 1])
        self.assertNotIn('fairness', comparison)

    def test_report_rejects_repeated_seed(self):
        self.assertExitCode(2, 'report', str(self.run_dir), str(self.run_dir), '--out', str(self.root / 'twice'))
        self.assertFalse((self.root / 'twice').exists())


class GradCheckCommandTests(SimpleTestCase):

    def test_passes(self):
        output = call('gradcheck', '--seed', '0', '--coords', '50')
        self.assertIn('pass', output)

    def test_impossible_tolerance_fails(self):
        with self.assertRaises(CommandError) as ctx:
            call('gradcheck', '--seed', '0', '--coords', '20', '--tolerance', '1e-30')
        self.assertEqual(ctx.exception.returncode, 1)

    def test_output_directory_records_config(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / 'gradcheck'
            call('gradcheck', '--seeds', '2', '3', '--coords', '20', '--out', str(out))
            config = json.loads((out / 'config.json').read_text())
            self.assertEqual((config['seeds'], config['coords'], config['depth']), ([2, 3], 20, 2))
            results = json.loads((out / 'gradcheck.json').read_text())['results']
            self.assertEqual([r['seed'] for r in results], [2, 3])
            with self.assertRaises(CommandError) as ctx:
                call('gradcheck', '--coords', '20', '--out', str(out))
            self.assertEqual(ctx.exception.returncode, 2)
