"""Django management command to train the allocation and inference networks."""
from django.core.management.base import CommandError

from galaxy_allocation.services.exceptions import AllocationError
from galaxy_allocation.survey.models import TrainingRun
from galaxy_allocation.survey.tasks import execute_training, run_training
from ._base import AllocationCommand


class Command(AllocationCommand):
    """Register a TrainingRun and execute it here or on a Celery worker."""

    help = 'Jointly train the allocation and inference networks'
    default_subdir = 'train'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--checkpoint', help='resume from this checkpoint')
        parser.add_argument('--background', action='store_true',
                            help='queue the run on a Celery worker')

    def run(self, cfg, out_dir, **options):
        run = TrainingRun.objects.create(
            seed=cfg.seed,
            config=cfg.as_dict(),
            config_digest=cfg.digest(),
            out_dir=str(out_dir),
            resume_from=options['checkpoint'] or '',
        )
        if options['background']:
            run_training.delay(run.id)
            self.stdout.write(self.style.SUCCESS(f'Queued training run {run.id}'))
            return

        self.stdout.write(self.style.MIGRATE_HEADING(
            f"\n=== Training run {run.id}: {cfg.train.steps} steps, H={cfg.train.budget:g} ==="
        ))
        try:
            result = execute_training(run.id)
        except AllocationError as exc:
            raise CommandError(f'training run {run.id} failed: {exc}') from exc

        run.refresh_from_db()
        self.stdout.write(f'steps: {run.steps_completed}')
        if result.last_record is not None:
            record = result.last_record
            self.stdout.write(f'final loss: {record.loss:.6g} (phi {record.loss_phi:.4g})')
            self.stdout.write(f'sum r: {record.sum_r:.1f} / {cfg.train.budget:g}, tau {run.final_tau:.4g}')
        if run.stopped_early:
            self.stdout.write(self.style.WARNING('stopped early: loss plateaued'))
        self.stdout.write(self.style.SUCCESS(f'checkpoint: {run.checkpoint}'))
