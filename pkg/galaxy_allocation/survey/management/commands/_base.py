"""Shared options and error handling for the allocation commands."""
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from galaxy_allocation.services.config import load_config, parse_overrides
from galaxy_allocation.services.exceptions import AllocationError

SEED_LIMIT = 1 << 64


def seed_type(value):
    """Argparse type for unsigned 64-bit seeds."""
    seed = int(value)
    if not 0 <= seed < SEED_LIMIT:
        raise ValueError(f'seed {value} is not an unsigned 64-bit integer')
    return seed


class AllocationCommand(BaseCommand):
    """Base for commands that take a run configuration.

    Subclasses implement ``run(cfg, out_dir, **options)``; engine errors are
    reported as ``CommandError`` so the process exits nonzero.
    """

    default_subdir = 'runs'

    def add_arguments(self, parser):
        parser.add_argument('--config', help='dotenv-style configuration file')
        parser.add_argument('--seed', type=seed_type, help='root seed (unsigned 64-bit)')
        parser.add_argument('--out', help='output directory')
        parser.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                            dest='overrides', help='override one configuration key')

    def config_overrides(self, options):
        """Extra overrides contributed by command-specific flags."""
        return {}

    def build_config(self, options):
        project = settings.GALAXY_ALLOCATION
        overrides = parse_overrides(options['overrides'])
        overrides.update(self.config_overrides(options))
        if options['seed'] is not None:
            overrides['TRAIN_SEED'] = str(options['seed'])
        return load_config(options['config'] or project['CONFIG'], overrides,
                           defaults={'TRAIN_SEED': str(project['SEED'])})

    def output_dir(self, options):
        if options['out']:
            return Path(options['out'])
        return Path(settings.GALAXY_ALLOCATION['OUT_DIR']) / self.default_subdir

    def handle(self, *args, **options):
        """Entry point: build the configuration and run the command."""
        try:
            cfg = self.build_config(options)
            self.run(cfg, self.output_dir(options), **options)
        except AllocationError as exc:
            raise CommandError(f'{type(exc).__name__}: {exc}') from exc
        except OSError as exc:
            raise CommandError(f'I/O error: {exc}') from exc

    def run(self, cfg, out_dir, **options):
        raise NotImplementedError

    def require(self, options, name):
        if not options.get(name):
            raise CommandError(f'--{name} is required')
        return options[name]


def parse_phi(value):
    """``"prior"`` or a float."""
    if value == 'prior':
        return value
    try:
        return float(value)
    except ValueError:
        raise CommandError(f'--phi must be a number or "prior", got {value!r}')
