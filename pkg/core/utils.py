import abc
import json
import logging
import sys
from urllib.parse import urljoin

import requests
from django.conf import settings

from core.domain import AccuracyFraction
from core.exceptions import TrainerError

logger = logging.getLogger(__name__)


def accuracy_proxy(device, participation_count, rng, params):
    """
    stands in for local training: more and more diverse data and earlier participations
    give higher accuracy
    :param device: DeviceProfile
    :param participation_count: rounds the device already trained in
    :param rng: numpy Generator for the noise, None for no noise
    :param params: ProxyConfig
    :return: AccuracyFraction
    """
    normalized_size = (device.data_size - 100) / 350.0
    accuracy = params.base + params.size_weight * normalized_size + \
        params.label_weight * (len(device.data_labels) - 1) + \
        params.experience_gain * min(participation_count, params.experience_cap)
    if rng is not None and params.noise > 0:
        accuracy += float(rng.uniform(-params.noise, params.noise))
    return AccuracyFraction(min(max(accuracy, params.floor), params.ceiling))


class LocalTrainer(metaclass=abc.ABCMeta):
    """
    Local training of a device for one round, device shard in and accuracy out.
    """

    def __init__(self, params):
        self.params = params

    @abc.abstractmethod
    def evaluate(self, device, participation_count, rng, round_index=None):
        """
        :param device: DeviceProfile being trained
        :param participation_count: rounds the device already trained in
        :param rng: numpy Generator owned by this device and round
        :param round_index: current round
        :return: AccuracyFraction
        """
        return

    @staticmethod
    def get_class(name):
        module = sys.modules[__name__]
        class_ = getattr(module, name, None)
        if not (isinstance(class_, type) and issubclass(class_, LocalTrainer)) or class_ is LocalTrainer:
            logger.error('Defined trainer in configuration is not valid, {}'.format(name))
            raise ValueError('Defined trainer in configuration is not valid, {}'.format(name))
        return class_

    @staticmethod
    def get_instance(name, params):
        """
        This method returns an instance of appropriate trainer based on configuration
        :return: an instance of appropriate trainer
        """
        class_ = LocalTrainer.get_class(name)
        logger.debug('Local trainer is {}'.format(class_))
        return class_(params)


class AccuracyProxyTrainer(LocalTrainer):
    def evaluate(self, device, participation_count, rng, round_index=None):
        return accuracy_proxy(device, participation_count, rng, self.params)


class RemoteTrainer(LocalTrainer):
    """
    Delegates training to an external service at settings.TRAINER_ADDRESS which
    answers {"accuracy": fraction}.
    """

    def evaluate(self, device, participation_count, rng, round_index=None):
        data = {
            'device_id': device.device_id,
            'labels': sorted(device.data_labels),
            'data_size': device.data_size,
            'test_data_size': device.test_data_size,
            'participation_count': participation_count,
            'round': round_index,
        }
        res = trainer_request('train/', data=data)
        if res['status'] != 'success':
            logger.error('trainer failed for device {}, {}'.format(device.device_id, res))
            raise TrainerError('trainer failed for device {}: {}'.format(device.device_id, res.get('response')))
        try:
            accuracy = float(res['response']['accuracy'])
        except (KeyError, TypeError, ValueError):
            raise TrainerError('trainer answered without accuracy: {}'.format(res['response']))
        if not 0.0 <= accuracy <= 1.0:
            raise TrainerError('trainer answered accuracy {} outside [0, 1]'.format(accuracy))
        return AccuracyFraction(accuracy)


def trainer_request(api, data=None, request_type="post"):
    """
    Function for request to the trainer service
    :param api: string
    :param data: body of the request, sent as json
    :param request_type: get or post
    :return: dict with status and response
    """
    header = {
        'accept': 'application/json',
        'content-type': 'application/json',
    }
    if request_type not in ['get', 'post']:
        return {"status": "error", "response": "invalid request type"}

    try:
        kwargs = {"headers": header, "timeout": getattr(settings, "TRAINER_TIMEOUT", 30)}
        if data:
            kwargs["data"] = json.dumps(data)
        response = getattr(requests, request_type)(urljoin(getattr(settings, "TRAINER_ADDRESS"), api), **kwargs)
        response_json = response.json()
        # check status code 2XX range is success
        return {
            "response": response_json,
            "status": "success" if 200 <= response.status_code <= 299 else
            ("not-found" if response.status_code == 404 else "External Error")
        }
    except (requests.exceptions.RequestException, ValueError) as e:
        logger.error("Can not resolve response from trainer")
        logger.error(e)
        return {'status': 'error', 'response': 'Can not resolve response from trainer'}
