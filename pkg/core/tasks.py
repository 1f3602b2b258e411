import logging

from django.db import transaction

from FedMint.celery import app
from core import simulation
from core.config import validate_config
from core.exceptions import FedMintError
from core.models import Experiment, RoundMetric

logger = logging.getLogger(__name__)


@app.task
def run_experiment(experiment_id):
    """
    runs every repetition of a stored experiment and keeps its round metrics and summary
    """
    experiment = Experiment.objects.filter(id=experiment_id).first()
    if experiment is None:
        logger.error('experiment {} does not exist, quiting.'.format(experiment_id))
        return
    if experiment.status not in ('pending', 'failed'):
        logger.info('experiment {} is {}, nothing to do.'.format(experiment_id, experiment.status))
        return

    experiment.status = 'running'
    experiment.save()
    try:
        config = validate_config(experiment.config)
        report = simulation.run_experiment(config)
    except FedMintError as e:
        logger.error('experiment {} failed, {}'.format(experiment_id, e))
        experiment.status = 'failed'
        experiment.save()
        return

    with transaction.atomic():
        experiment.rounds.all().delete()
        RoundMetric.objects.bulk_create([RoundMetric(experiment=experiment, **row)
                                         for row in simulation.metric_rows(report.repetitions)])
        experiment.summary = report.summary
        experiment.status = 'done'
        experiment.save()
    logger.info('experiment {} done, {} repetitions.'.format(experiment_id, len(report.repetitions)))


@app.task
def run_repetition(config, rep):
    """
    one repetition of a config dict
    :return: list of round metric dicts
    """
    report = simulation.run_repetition(validate_config(config), rep)
    return list(simulation.metric_rows([report]))
