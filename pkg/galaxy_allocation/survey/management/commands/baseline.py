"""Django management command to tune a classical policy with the genetic algorithm."""
import json
import math
from dataclasses import asdict

from galaxy_allocation.services.baselines import (
    BASELINE1, BASELINE2, GENE_BOUNDS, GENE_NAMES, ga_optimize, policy_params, write_ga_history,
)
from galaxy_allocation.services.evaluate import PolicyFitness
from galaxy_allocation.services.exceptions import AllocationError
from galaxy_allocation.services.rng import substream
from galaxy_allocation.services.trainer import load_model
from galaxy_allocation.survey.models import BaselineSearch
from galaxy_allocation.survey.tasks import celery_map
from ._base import AllocationCommand


def finite_or_none(value):
    return value if math.isfinite(value) else None


class Command(AllocationCommand):
    """Maximise the inference precision of a baseline policy over its genes."""

    help = 'Optimise Baseline 1 or Baseline 2 parameters with a genetic algorithm'
    default_subdir = 'baseline'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--policy', choices=[BASELINE1, BASELINE2], default=BASELINE1)
        parser.add_argument('--checkpoint', help='trained network checkpoint')
        parser.add_argument('--celery', action='store_true',
                            help='score each generation as a Celery group')

    def run(self, cfg, out_dir, **options):
        checkpoint = self.require(options, 'checkpoint')
        policy = options['policy']
        store, hyper, _ = load_model(checkpoint)
        out_dir = out_dir / policy

        search = BaselineSearch.objects.create(
            seed=cfg.seed,
            config=cfg.as_dict(),
            config_digest=cfg.digest(),
            out_dir=str(out_dir),
            checkpoint=str(checkpoint),
            policy=policy,
            status='running',
        )
        self.stdout.write(self.style.MIGRATE_HEADING(
            f'\n=== {policy}: {cfg.ga.population} individuals, {cfg.ga.generations} generations ==='
        ))

        def report(record):
            self.stdout.write(f'generation {record.generation:>3}: best {record.best_fitness:.4g} '
                              f'mean {record.mean_fitness:.4g}')

        try:
            fitness = PolicyFitness(policy, store, hyper, cfg, cfg.seed)
            map_fn = celery_map(checkpoint, cfg, policy, cfg.seed) if options['celery'] else map
            result = ga_optimize(fitness, cfg.ga, GENE_BOUNDS[policy], substream(cfg.seed, 'ga'),
                                 map_fn=map_fn, on_generation=report)
            write_ga_history(out_dir / 'ga_history.csv', result.history, GENE_NAMES[policy])
            params = policy_params(policy, result.best_genome)
            (out_dir / 'best_genome.json').write_text(json.dumps({
                'policy': policy,
                'genome': list(result.best_genome),
                'fitness': finite_or_none(result.best_fitness),
                'params': asdict(params),
            }, indent=2) + '\n')
        except (AllocationError, OSError) as exc:
            BaselineSearch.objects.filter(id=search.id).update(
                status='failed', error=f'Search error: {exc}')
            raise

        BaselineSearch.objects.filter(id=search.id).update(
            status='completed',
            best_genome=list(result.best_genome),
            best_fitness=finite_or_none(result.best_fitness),
            history=[{'generation': r.generation, 'best_fitness': finite_or_none(r.best_fitness),
                      'mean_fitness': finite_or_none(r.mean_fitness)} for r in result.history],
        )
        self.stdout.write(self.style.SUCCESS(
            f'best {policy} genome {params} with precision {result.best_fitness:.4g}'))
