import abc
import logging
import sys
from dataclasses import dataclass
from typing import Tuple

from frozendict import frozendict

from core.domain import AccuracyFraction
from core.economics import device_reward
from core.exceptions import BudgetExhaustedError, NoTrainingDataError

logger = logging.getLogger(__name__)

DEFAULT_PRIOR = 0.5


@dataclass(frozen=True)
class PreferenceList:
    owner: str
    # best first
    ranking: Tuple[str, ...]
    score: frozendict

    def rank_of(self, counterpart):
        return self.ranking.index(counterpart)


def _ranked(owner, scores):
    ranking = tuple(sorted(scores, key=lambda counterpart: (-scores[counterpart], counterpart)))
    return PreferenceList(owner, ranking, frozendict(scores))


class NewcomerScoring(metaclass=abc.ABCMeta):
    """
    How a federated server scores devices it has no accuracy history for.
    """

    def __init__(self, prior=DEFAULT_PRIOR):
        self.prior = prior
        self.fallbacks = 0
        # device_id -> last score that was not the prior
        self.predictions = {}

    @abc.abstractmethod
    def score(self, server, device):
        """
        :param server: ServerProfile building its list
        :param device: newcomer DeviceProfile
        :return: AccuracyFraction
        """
        return

    @staticmethod
    def get_instance(name, **kwargs):
        """
        This method returns an instance of the scoring strategy named name
        :return: an instance of appropriate scoring strategy
        """
        module = sys.modules[__name__]
        try:
            class_ = getattr(module, name)
            if not (isinstance(class_, type) and issubclass(class_, NewcomerScoring)):
                raise TypeError(name)
        except (AttributeError, TypeError):
            logger.error('Defined newcomer scoring is not valid, {}'.format(name))
            raise ValueError('Defined newcomer scoring is not valid, {}'.format(name))
        return class_(**kwargs)


class BootstrapScoring(NewcomerScoring):
    """
    Asks the bootstrapping server, falls back to the prior when the inquiry is refused
    or nobody has data yet.
    """

    def __init__(self, bootstrap, prior=DEFAULT_PRIOR):
        super(BootstrapScoring, self).__init__(prior)
        self.bootstrap = bootstrap

    def score(self, server, device):
        try:
            predicted = self.bootstrap.inquire(server.server_id, device.features)
            self.predictions[device.device_id] = predicted
            return predicted
        except BudgetExhaustedError:
            self.fallbacks += 1
            logger.warning('server {} scores newcomer {} with prior {}, no calls left.'.format(
                server.server_id, device.device_id, self.prior))
        except NoTrainingDataError:
            self.fallbacks += 1
            logger.debug('server {} scores newcomer {} with prior {}, no training data.'.format(
                server.server_id, device.device_id, self.prior))
        return AccuracyFraction(self.prior)


class RandomScoring(NewcomerScoring):
    """
    Uniform random score for every newcomer, used to measure what bootstrapping buys.
    """

    def __init__(self, rng, prior=DEFAULT_PRIOR):
        super(RandomScoring, self).__init__(prior)
        self.rng = rng

    def score(self, server, device):
        score = AccuracyFraction(float(self.rng.uniform(0.0, 1.0)))
        self.predictions[device.device_id] = score
        return score


class PriorScoring(NewcomerScoring):
    def score(self, server, device):
        return AccuracyFraction(self.prior)


def is_compatible(device, server):
    return server.requested_data_type in device.available_data_types


def build_device_preferences(device, servers, latency, acc_global_prev, local_accuracy=None):
    """
    ranks compatible servers by the reward the device expects from them
    :param device: DeviceProfile
    :param servers: sequence of ServerProfile
    :param latency: LatencyMatrix
    :param acc_global_prev: mapping server_id -> global accuracy of the previous round
    :param local_accuracy: accuracy to assume for the device, defaults to its last known one
    :return: PreferenceList
    """
    accuracy = local_accuracy if local_accuracy is not None else device.last_accuracy
    if accuracy is None:
        accuracy = DEFAULT_PRIOR
    scores = {}
    for server in servers:
        if not is_compatible(device, server):
            continue
        reward = device_reward(device, server, latency.scaled(server.server_id, device.device_id),
                               accuracy, acc_global_prev.get(server.server_id, DEFAULT_PRIOR))
        scores[server.server_id] = reward.total
    return _ranked(device.device_id, scores)


def build_server_preferences(server, devices, scoring):
    """
    ranks compatible devices by their last accuracy, newcomers are scored by scoring
    :param server: ServerProfile
    :param devices: sequence of DeviceProfile
    :param scoring: NewcomerScoring
    :return: PreferenceList
    """
    scores = {}
    for device in devices:
        if not is_compatible(device, server):
            continue
        if device.is_newcomer:
            scores[device.device_id] = float(scoring.score(server, device))
        else:
            scores[device.device_id] = float(device.last_accuracy)
    return _ranked(server.server_id, scores)
