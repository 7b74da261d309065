"""Celery tasks: background training runs and distributed GA fitness."""
import json
import logging
from functools import lru_cache

from celery import group, shared_task

from galaxy_allocation.services.config import AllocationConfig
from galaxy_allocation.services.evaluate import PolicyFitness
from galaxy_allocation.services.exceptions import AllocationError
from galaxy_allocation.services.trainer import load_model, train
from .models import TrainingRun

logger = logging.getLogger(__name__)


def execute_training(run_id):
    """Run a registered TrainingRun in this process and record the outcome.

    The row moves pending -> running -> completed, or to failed with the
    error message stored; errors are re-raised after being recorded.
    """
    run = TrainingRun.objects.get(id=run_id)
    TrainingRun.objects.filter(id=run_id).update(status='running', error='')
    try:
        cfg = AllocationConfig.from_dict(run.config)
        result = train(cfg, run.out_dir, resume=run.resume_from or None)
    except (AllocationError, OSError) as e:
        error_msg = f"Training error: {e}"
        last = getattr(e, 'record', None)
        TrainingRun.objects.filter(id=run_id).update(
            status='failed', error=error_msg,
            steps_completed=last.step if last else 0,
            final_loss=last.loss if last else None)
        raise

    record = result.last_record
    TrainingRun.objects.filter(id=run_id).update(
        status='completed',
        steps_completed=result.state.step,
        final_loss=record.loss if record else None,
        final_sum_r=record.sum_r if record else None,
        final_tau=result.state.tau,
        stopped_early=result.stopped_early,
        checkpoint=str(result.checkpoint),
    )
    return result


@shared_task
def run_training(run_id):
    try:
        execute_training(run_id)
    except (AllocationError, OSError):
        logger.exception('Training run %s failed', run_id)


@lru_cache(maxsize=4)
def _fitness(checkpoint, config_json, policy, seed):
    store, hyper, _ = load_model(checkpoint)
    cfg = AllocationConfig.from_dict(json.loads(config_json))
    return PolicyFitness(policy, store, hyper, cfg, seed)


@shared_task
def score_genome(checkpoint, config_json, policy, seed, genome):
    """Fitness of one baseline genome; workers cache the fitness fields."""
    return float(_fitness(checkpoint, config_json, policy, seed)(tuple(genome)))


def celery_map(checkpoint, cfg, policy, seed):
    """A ``map`` replacement that scores a generation as one Celery group."""
    config_json = json.dumps(cfg.as_dict(), sort_keys=True)

    def map_fn(_fitness_fn, genomes):
        job = group(score_genome.s(str(checkpoint), config_json, policy, seed, list(genome))
                    for genome in genomes)
        return job.apply_async().get()

    return map_fn
