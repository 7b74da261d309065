"""Django management command to verify the tape gradients numerically."""
from django.core.management.base import CommandError

from galaxy_allocation.services.gradcheck import run_gradcheck
from ._base import AllocationCommand


class Command(AllocationCommand):
    """Compare reverse-mode gradients with central finite differences."""

    help = 'Run the finite-difference gradient suite'

    def run(self, cfg, out_dir, **options):
        report = run_gradcheck(cfg.seed)
        for group, (count, worst) in report.by_group().items():
            self.stdout.write(f'{group:<12} {count:>3} cases  max rel error {worst:.3e}')
        summary = f'max relative error: {report.max_error:.3e} over {len(report.results)} cases'
        if not report.passed:
            raise CommandError(f'{summary} exceeds {report.tolerance:g}')
        self.stdout.write(self.style.SUCCESS(summary))
