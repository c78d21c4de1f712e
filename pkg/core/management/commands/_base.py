import json
from contextlib import contextmanager
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from core.exceptions import InterferenceError

SCHEMA_VERSION = 1


class InterferenceCommand(BaseCommand):
    """Shared flags, and InterferenceError -> CommandError with the error's exit code."""

    def add_arguments(self, parser):
        parser.add_argument('--config', help='TOML run configuration')
        parser.add_argument('--seed', type=int, help='Master seed (overrides the config)')
        parser.add_argument('--workers', type=int, help='Worker count (overrides the config)')
        parser.add_argument('--output-dir', help='Directory for result files')
        parser.add_argument('--record', action='store_true', help='Store the run in the database')

    def execute(self, *args, **options):
        self.verbosity = options.get('verbosity', 1)
        try:
            return super().execute(*args, **options)
        except InterferenceError as exc:
            message = f'{exc.error_class}: {exc}'.replace('\n', ' ')
            raise CommandError(message, returncode=exc.exit_code) from exc

    @contextmanager
    def step(self, label: str):
        if self.verbosity > 1:
            self.stdout.write(f'{label}...')
        yield
        if self.verbosity > 0:
            self.stdout.write(self.style.SUCCESS(f'{label}: done'))

    def write_json(self, path: Path, payload: dict) -> None:
        payload = {'schema_version': SCHEMA_VERSION, **payload}
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + '\n', encoding='utf-8')

    def ensure_dir(self, path: Path) -> Path:
        path.mkdir(parents=True, exist_ok=True)
        return path
