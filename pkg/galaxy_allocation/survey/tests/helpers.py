"""Small models and configurations shared by the test modules."""
from galaxy_allocation.services.config import build_config
from galaxy_allocation.services.networks import GnnHyperparams
from galaxy_allocation.services.trainer import train

TINY_MODEL = GnnHyperparams(n_v=6, n_e=6, n_u=6, k=3, hidden_layers=2, hidden_width=8)

TINY_SETTINGS = {
    'MODEL_N_V': '6',
    'MODEL_N_E': '6',
    'MODEL_N_U': '6',
    'MODEL_K': '3',
    'MODEL_HIDDEN_WIDTH': '8',
    'SIM_MEAN_COUNT': '30',
    'SIM_MEAN_CLUSTER_SIZE': '5',
    'TRAIN_BUDGET': '200',
    'TRAIN_STEPS': '2',
    'EVAL_N_FIELDS': '3',
    'EVAL_GA_FITNESS_FIELDS': '2',
    'GA_POPULATION': '4',
    'GA_GENERATIONS': '2',
}


def tiny_options(**extra):
    """``--set`` arguments for a management command."""
    settings = {**TINY_SETTINGS, **extra}
    args = []
    for key, value in settings.items():
        args += ['--set', f'{key}={value}']
    return args


def tiny_config(**extra):
    return build_config({**TINY_SETTINGS, **extra})


def make_checkpoint(directory):
    """Initial checkpoint of an untrained tiny model."""
    return train(tiny_config(TRAIN_STEPS='0'), directory).checkpoint
