"""
Value types shared by every module of the simulator.

All types are frozen; the simulation produces new values instead of mutating
old ones. Accuracies are fractions in [0, 1] everywhere except inside
InteractionRecord, which keeps percent to stay compatible with published
interaction datasets.
"""
import logging
from dataclasses import dataclass, field
from typing import FrozenSet, NewType, Optional, Tuple

from frozendict import frozendict

from core.exceptions import DomainValidationError, RangeError

logger = logging.getLogger(__name__)

AccuracyFraction = NewType('AccuracyFraction', float)

FEATURES = ('provider', 'region', 'device_type')


def to_fraction(value, field_name='accuracy'):
    """
    validates an accuracy given as fraction
    :param value: number expected in [0, 1]
    :param field_name: reported in the error
    :return: the value as AccuracyFraction
    """
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise DomainValidationError(field_name, '{} must lie in [0, 1], got {}'.format(field_name, value))
    return AccuracyFraction(value)


@dataclass(frozen=True)
class InteractionRecord:
    provider: str
    region: str
    device_type: str
    # percent
    accuracy: float

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 100.0:
            raise DomainValidationError('accuracy', 'accuracy must lie in [0, 100], got {}'.format(self.accuracy))

    @property
    def features(self):
        return frozendict(provider=self.provider, region=self.region, device_type=self.device_type)


@dataclass(frozen=True)
class DeviceProfile:
    device_id: str
    provider: str
    region: str
    device_type: str
    cpu_capacity: float
    ram_capacity: float
    bandwidth_capacity: float
    cpu_promised: float
    ram_promised: float
    bandwidth_promised: float
    data_labels: FrozenSet[int]
    data_size: int
    test_data_size: int
    available_data_types: FrozenSet[str]
    accuracy_history: Tuple[Tuple[int, float], ...] = ()
    is_newcomer: bool = True

    @property
    def features(self):
        return frozendict(provider=self.provider, region=self.region, device_type=self.device_type)

    @property
    def last_accuracy(self) -> Optional[AccuracyFraction]:
        if not self.accuracy_history:
            return None
        return AccuracyFraction(self.accuracy_history[-1][1])

    @property
    def participation_count(self):
        return len(self.accuracy_history)


@dataclass(frozen=True)
class ServerProfile:
    server_id: str
    requested_data_type: str
    capacity: int
    price_cpu: float
    price_ram: float
    price_band: float
    selected_count: int = 0
    interaction_dataset: Tuple[InteractionRecord, ...] = ()
    calls_budget: int = 0
    cumulative_contributions: int = 0


@dataclass(frozen=True)
class LatencyMatrix:
    entries: frozendict = field(default_factory=frozendict)
    min_latency: float = 0.1
    max_latency: float = 5.0

    def __post_init__(self):
        if self.min_latency >= self.max_latency:
            raise RangeError('min_latency must be smaller than max_latency')

    def raw(self, server_id, device_id):
        return self.entries[(server_id, device_id)]

    def scaled(self, server_id, device_id):
        return scale_latency(self.raw(server_id, device_id), self.min_latency, self.max_latency)

    def merged(self, entries):
        """
        returns a new matrix holding both old and given entries
        :param entries: mapping (server_id, device_id) -> seconds
        """
        combined = dict(self.entries)
        combined.update(entries)
        return LatencyMatrix(frozendict(combined), self.min_latency, self.max_latency)


def scale_latency(raw, min_latency, max_latency):
    """
    min-max scaling of a link latency over configured bounds
    :param raw: seconds
    :param min_latency: seconds
    :param max_latency: seconds
    :return: dimensionless value in [0, 1]
    """
    if min_latency >= max_latency:
        raise RangeError('min latency {} must be smaller than max latency {}'.format(min_latency, max_latency))
    if not min_latency <= raw <= max_latency:
        raise RangeError('latency {} outside [{}, {}]'.format(raw, min_latency, max_latency))
    return (raw - min_latency) / (max_latency - min_latency)


def _positive(name, value):
    if value is None or value <= 0:
        raise DomainValidationError(name, '{} must be positive'.format(name))


def new_device(device_id, provider, region, device_type, cpu_capacity, ram_capacity, bandwidth_capacity,
               cpu_promised, ram_promised, bandwidth_promised, data_labels, data_size, test_data_size=None,
               available_data_types=('mnist',), accuracy_history=()):
    """
    validated constructor of DeviceProfile, is_newcomer is derived from the history
    :return: DeviceProfile
    """
    for name in FEATURES + ('device_id',):
        value = locals()[name]
        if not isinstance(value, str) or not value:
            raise DomainValidationError(name, '{} must be a non-empty string'.format(name))

    for resource in ('cpu', 'ram', 'bandwidth'):
        capacity = locals()['{}_capacity'.format(resource)]
        promised = locals()['{}_promised'.format(resource)]
        _positive('{}_capacity'.format(resource), capacity)
        _positive('{}_promised'.format(resource), promised)
        if promised > capacity:
            raise DomainValidationError('{}_promised'.format(resource),
                                        '{}_promised exceeds capacity'.format(resource))

    labels = frozenset(int(label) for label in data_labels)
    if not labels:
        raise DomainValidationError('data_labels', 'data_labels must not be empty')
    _positive('data_size', data_size)
    if test_data_size is None:
        test_data_size = max(1, -(-data_size // 5))
    _positive('test_data_size', test_data_size)
    if test_data_size > data_size:
        raise DomainValidationError('test_data_size', 'test_data_size exceeds data_size')

    history = tuple((int(round_index), to_fraction(acc, 'accuracy_history')) for round_index, acc in accuracy_history)
    return DeviceProfile(
        device_id=device_id, provider=provider, region=region, device_type=device_type,
        cpu_capacity=cpu_capacity, ram_capacity=ram_capacity, bandwidth_capacity=bandwidth_capacity,
        cpu_promised=cpu_promised, ram_promised=ram_promised, bandwidth_promised=bandwidth_promised,
        data_labels=labels, data_size=int(data_size), test_data_size=int(test_data_size),
        available_data_types=frozenset(available_data_types), accuracy_history=history,
        is_newcomer=not history,
    )


def new_server(server_id, requested_data_type, capacity, price_cpu, price_ram, price_band, selected_count=0,
               interaction_dataset=(), calls_budget=5, cumulative_contributions=0):
    """
    validated constructor of ServerProfile
    :return: ServerProfile
    """
    if not server_id:
        raise DomainValidationError('server_id', 'server_id must be a non-empty string')
    if capacity is None or capacity < 1:
        raise DomainValidationError('capacity', 'capacity must be at least 1')
    if not 0 <= selected_count <= capacity:
        raise DomainValidationError('selected_count', 'selected_count exceeds capacity')
    for name in ('price_cpu', 'price_ram', 'price_band'):
        _positive(name, locals()[name])
    if calls_budget < 0:
        raise DomainValidationError('calls_budget', 'calls_budget must not be negative')
    if cumulative_contributions < 0:
        raise DomainValidationError('cumulative_contributions', 'cumulative_contributions must not be negative')
    return ServerProfile(
        server_id=server_id, requested_data_type=requested_data_type, capacity=int(capacity),
        price_cpu=price_cpu, price_ram=price_ram, price_band=price_band, selected_count=int(selected_count),
        interaction_dataset=tuple(interaction_dataset), calls_budget=int(calls_budget),
        cumulative_contributions=int(cumulative_contributions),
    )
