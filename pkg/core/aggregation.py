import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from core.domain import AccuracyFraction
from core.exceptions import DomainValidationError, NoParticipantsError


@dataclass(frozen=True)
class CohortReport:
    # (device_id, local accuracy, test data size)
    participants: Tuple[Tuple[str, float, int], ...]
    global_accuracy: float


def weighted_accuracy(acc, test_size):
    if test_size <= 0:
        raise DomainValidationError('test_size', 'test_size must be positive')
    return acc * test_size


def global_accuracy(cohort):
    """
    test-size weighted mean of local accuracies
    :param cohort: sequence of (accuracy, test_size)
    :return: AccuracyFraction
    """
    cohort = list(cohort)
    if not cohort:
        raise NoParticipantsError('no participants')
    weighted = np.array([weighted_accuracy(acc, size) for acc, size in cohort], dtype=float)
    sizes = np.array([size for _, size in cohort], dtype=float)
    accuracy = float(weighted.sum() / sizes.sum())
    # float rounding may step just outside the participants' range
    low, high = min(acc for acc, _ in cohort), max(acc for acc, _ in cohort)
    return AccuracyFraction(min(max(accuracy, low), high))


def cohort_report(participants):
    participants = tuple((device_id, float(acc), int(size)) for device_id, acc, size in participants)
    return CohortReport(participants, global_accuracy((acc, size) for _, acc, size in participants))


def test_data_size(data_size, split=0.2):
    # rounded up, the 1e-9 keeps exact products like 0.2 * 100 from rounding to 21
    return max(1, int(math.ceil(split * data_size - 1e-9)))
