"""Shared plumbing for the pipeline's management commands.

Exit codes: 0 success, 1 gradient check failed, 2 invalid input (flags,
config, refusal to overwrite, missing or incompatible runs), 3 runtime
failure (I/O, corrupt dataset or checkpoint).
"""
import json
import shutil
from pathlib import Path

from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError

from expressions.exceptions import DatasetLoadError

EXIT_GRADCHECK_FAILED = 1
EXIT_INVALID = 2
EXIT_RUNTIME = 3


class PipelineCommand(BaseCommand):
    # options that may come from --config; explicit flags override them
    config_keys = ()

    def add_arguments(self, parser):
        parser.add_argument('--config', type=str, help='JSON file with settings, e.g. a previous config.json')
        parser.add_argument('--seed', type=int, help='Seed for every random draw of the run')

    def handle(self, *args, **options):
        try:
            return self.run(**options)
        except CommandError:
            raise
        except ValidationError as exc:
            raise CommandError('; '.join(exc.messages), returncode=EXIT_INVALID) from exc
        except (DatasetLoadError, OSError, RuntimeError, FloatingPointError) as exc:
            raise CommandError(f'{type(exc).__name__}: {exc}', returncode=EXIT_RUNTIME) from exc

    def run(self, **options):
        raise NotImplementedError

    def resolve(self, options, defaults):
        """defaults <- --config file <- explicit flags."""
        data = dict(defaults)
        if options.get('config'):
            try:
                with open(options['config'], encoding='utf-8') as fh:
                    loaded = json.load(fh)
            except FileNotFoundError as exc:
                raise CommandError(f"Config file {options['config']} not found", returncode=EXIT_INVALID) from exc
            except json.JSONDecodeError as exc:
                raise CommandError(f"Config file {options['config']} is not valid JSON: {exc}",
                                   returncode=EXIT_INVALID) from exc
            if not isinstance(loaded, dict):
                raise CommandError('Config file must hold a JSON object', returncode=EXIT_INVALID)
            unknown = set(loaded) - set(self.config_keys)
            if unknown:
                raise CommandError(f"Unknown config keys: {', '.join(sorted(unknown))}", returncode=EXIT_INVALID)
            data.update(loaded)
        for key in self.config_keys:
            if options.get(key) is not None:
                data[key] = options[key]
        return data

    def validate(self, form_class, data):
        form = form_class(data)
        if not form.is_valid():
            raise CommandError('Invalid settings:\n' + form.errors.as_text(), returncode=EXIT_INVALID)
        return form

    def prepare_output(self, path, force=False):
        path = Path(path)
        if path.exists() and not path.is_dir():
            raise CommandError(f'{path} exists and is not a directory', returncode=EXIT_INVALID)
        if path.exists() and any(path.iterdir()):
            if not force:
                raise CommandError(f'{path} is not empty; pass --force to overwrite it', returncode=EXIT_INVALID)
            self.stdout.write(self.style.WARNING(f'  Overwriting {path}'))
            shutil.rmtree(path)
        path.mkdir(parents=True, exist_ok=True)
        return path

    def require_dir(self, path, what):
        path = Path(path)
        if not path.is_dir():
            raise CommandError(f'{what} {path} does not exist', returncode=EXIT_INVALID)
        return path
