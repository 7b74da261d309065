"""Django management command to compare allocation methods on held-out fields."""
import json
from pathlib import Path

from django.core.management.base import CommandError
from django.db import transaction

from galaxy_allocation.services.baselines import BASELINE1, BASELINE2, policy_params
from galaxy_allocation.services.evaluate import run_evaluation
from galaxy_allocation.services.exceptions import AllocationError
from galaxy_allocation.services.figures import export_report, format_report_table
from galaxy_allocation.services.trainer import load_model
from galaxy_allocation.survey.models import EvaluationRun, MethodScore
from ._base import AllocationCommand, parse_phi


def load_genome(path, policy):
    """Best genome from a ``baseline`` search output file."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise CommandError(f'cannot read genome file {path}: {exc}')
    if data.get('policy') != policy:
        raise CommandError(f'{path} holds a {data.get("policy")} genome, expected {policy}')
    return policy_params(policy, data['genome'])


class Command(AllocationCommand):
    """Score GNN allocation against the baselines with one shared estimator."""

    help = 'Evaluate allocation methods and write the report and figure data'
    default_subdir = 'evaluate'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--checkpoint', help='trained network checkpoint')
        parser.add_argument('--phi', help='evaluation phi, or "prior"')
        parser.add_argument('--methods', help='comma-separated methods')
        parser.add_argument('--baseline1', help='best_genome.json of a baseline1 search')
        parser.add_argument('--baseline2', help='best_genome.json of a baseline2 search')
        parser.add_argument('--svg', action='store_true', help='also render SVG figures')

    def config_overrides(self, options):
        overrides = {}
        if options['phi']:
            overrides['EVAL_PHI'] = str(parse_phi(options['phi']))
        if options['methods']:
            overrides['EVAL_METHODS'] = options['methods']
        return overrides

    def run(self, cfg, out_dir, **options):
        checkpoint = self.require(options, 'checkpoint')
        store, hyper, _ = load_model(checkpoint)
        baselines = {}
        for policy in (BASELINE1, BASELINE2):
            if options[policy]:
                baselines[policy] = load_genome(options[policy], policy)

        run = EvaluationRun.objects.create(
            seed=cfg.seed,
            config=cfg.as_dict(),
            config_digest=cfg.digest(),
            out_dir=str(out_dir),
            checkpoint=str(checkpoint),
            phi_protocol=str(cfg.evaluation.phi),
            n_fields=cfg.evaluation.n_fields,
            status='running',
        )
        try:
            report = run_evaluation(store, hyper, cfg, seed=cfg.seed, baselines=baselines)
            export_report(report, cfg, out_dir, svg=options['svg'])
        except (AllocationError, OSError) as exc:
            EvaluationRun.objects.filter(id=run.id).update(
                status='failed', error=f'Evaluation error: {exc}')
            raise

        with transaction.atomic():
            MethodScore.objects.bulk_create([
                MethodScore.from_result(run, rank, result)
                for rank, result in enumerate(report.ranking(), start=1)
            ])
            EvaluationRun.objects.filter(id=run.id).update(status='completed')

        self.stdout.write(self.style.MIGRATE_HEADING(f'\n=== Evaluation {run.id} ==='))
        self.stdout.write(format_report_table(report), ending='')
        self.stdout.write(self.style.SUCCESS(f'report written to {out_dir}'))
