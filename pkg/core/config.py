"""
Experiment configuration.

Every key has a default in EXPERIMENT_DEFAULTS, a TOML file and command line
overrides are merged over them and the result is validated by
ExperimentConfigSerializer before it becomes an ExperimentConfig.
"""
import logging
from dataclasses import asdict, dataclass
from typing import Tuple

import toml
from frozendict import frozendict

from core.exceptions import ConfigError

logger = logging.getLogger(__name__)

ARM_FEDMINT = 'fedmint'
ARM_VANILLA = 'vanilla'
ARM_RANDOM_BOOTSTRAP = 'fedmint_random_bootstrap'
ARMS = (ARM_FEDMINT, ARM_VANILLA, ARM_RANDOM_BOOTSTRAP)

EXPERIMENT_DEFAULTS = frozendict({
    'seed': 0,
    # number of FL rounds per repetition
    'rounds': 15,
    'repetitions': 5,
    'arms': ARMS,
    # class name in core.utils evaluating local accuracy of a device
    'trainer': 'AccuracyProxyTrainer',
    'population': frozendict({
        'initial_devices': 100,
        'arrivals_per_round': 10,
        'providers': ('P1', 'P2', 'P3', 'P4'),
        'regions': ('Africa', 'America', 'Asia', 'Europe'),
        'device_types': ('Lock', 'Phone', 'Security', 'Watch'),
        'data_types': ('mnist',),
        # probability of a device holding each data type
        'data_type_coverage': 1.0,
        'num_classes': 10,
        'min_labels': 1,
        'max_labels': 4,
        'min_data_size': 100,
        'max_data_size': 450,
        'test_split': 0.2,
        # draw data size per device type and label count per provider band
        'structured': True,
        'device_type_size_bands': frozendict({
            'Watch': (100, 200),
            'Lock': (170, 290),
            'Phone': (260, 380),
            'Security': (330, 450),
        }),
        'provider_label_bands': frozendict({
            'P1': (1, 2),
            'P2': (1, 3),
            'P3': (2, 4),
            'P4': (3, 4),
        }),
        # promised resources as fraction of capacity
        'promised_fraction': (0.5, 1.0),
    }),
    'resources': frozendict({
        # MIPS
        'cpu': (300, 700),
        # MB
        'ram': (400, 900),
        # Mbps
        'bandwidth': (500, 900),
    }),
    'servers': frozendict({
        'count': 2,
        # K, the same value is used as capacity of every server
        'clients_per_server': 10,
        'requested_data_type': 'mnist',
        # money per MIPS, MB and Mbps
        'price_cpu': (0.001, 0.002),
        'price_ram': (0.0005, 0.001),
        'price_band': (0.002, 0.004),
        'initial_calls_budget': 5,
        # accuracy assumed when nothing better is known
        'prior_accuracy': 0.5,
    }),
    'latency': frozendict({
        # seconds
        'min': 0.1,
        'max': 5.0,
    }),
    'bootstrap': frozendict({
        'min_instances': 3,
        # percent
        'cv_threshold': 10.0,
        # part of its interaction dataset a server uploads on each inquiry
        'upload_fraction': 1.0,
        'kfold': 10,
    }),
    'proxy': frozendict({
        'base': 0.35,
        'size_weight': 0.40,
        'label_weight': 0.05,
        'experience_gain': 0.02,
        'experience_cap': 5,
        'noise': 0.03,
        'floor': 0.05,
        'ceiling': 0.99,
    }),
    'output': frozendict({
        'directory': 'results',
        'charts': True,
    }),
})

SECTIONS = ('population', 'resources', 'servers', 'latency', 'bootstrap', 'proxy', 'output')


@dataclass(frozen=True)
class PopulationConfig:
    initial_devices: int
    arrivals_per_round: int
    providers: Tuple[str, ...]
    regions: Tuple[str, ...]
    device_types: Tuple[str, ...]
    data_types: Tuple[str, ...]
    data_type_coverage: float
    num_classes: int
    min_labels: int
    max_labels: int
    min_data_size: int
    max_data_size: int
    test_split: float
    structured: bool
    device_type_size_bands: frozendict
    provider_label_bands: frozendict
    promised_fraction: Tuple[float, float]


@dataclass(frozen=True)
class ResourceConfig:
    cpu: Tuple[float, float]
    ram: Tuple[float, float]
    bandwidth: Tuple[float, float]


@dataclass(frozen=True)
class ServerConfig:
    count: int
    clients_per_server: int
    requested_data_type: str
    price_cpu: Tuple[float, float]
    price_ram: Tuple[float, float]
    price_band: Tuple[float, float]
    initial_calls_budget: int
    prior_accuracy: float


@dataclass(frozen=True)
class LatencyConfig:
    min: float
    max: float


@dataclass(frozen=True)
class BootstrapConfig:
    min_instances: int
    cv_threshold: float
    upload_fraction: float
    kfold: int


@dataclass(frozen=True)
class ProxyConfig:
    base: float
    size_weight: float
    label_weight: float
    experience_gain: float
    experience_cap: int
    noise: float
    floor: float
    ceiling: float


@dataclass(frozen=True)
class OutputConfig:
    directory: str
    charts: bool


def _freeze(value):
    if isinstance(value, dict):
        return frozendict({key: _freeze(item) for key, item in value.items()})
    if isinstance(value, (list, tuple)):
        return tuple(_freeze(item) for item in value)
    return value


def _thaw(value):
    if isinstance(value, (dict, frozendict)):
        return {key: _thaw(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_thaw(item) for item in value]
    return value


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    rounds: int
    repetitions: int
    arms: Tuple[str, ...]
    trainer: str
    population: PopulationConfig
    resources: ResourceConfig
    servers: ServerConfig
    latency: LatencyConfig
    bootstrap: BootstrapConfig
    proxy: ProxyConfig
    output: OutputConfig

    @classmethod
    def from_dict(cls, data):
        """
        builds the config from an already validated, fully populated dict
        """
        sections = {
            'population': PopulationConfig, 'resources': ResourceConfig, 'servers': ServerConfig,
            'latency': LatencyConfig, 'bootstrap': BootstrapConfig, 'proxy': ProxyConfig, 'output': OutputConfig,
        }
        kwargs = {name: section(**{key: _freeze(value) for key, value in data[name].items()})
                  for name, section in sections.items()}
        return cls(seed=int(data['seed']), rounds=int(data['rounds']), repetitions=int(data['repetitions']),
                   arms=tuple(data['arms']), trainer=data['trainer'], **kwargs)

    def to_dict(self):
        """
        plain json friendly representation, from_dict(to_dict()) gives an equal config
        """
        return _thaw(asdict(self))

    def replace(self, **changes):
        data = self.to_dict()
        data.update(changes)
        return ExperimentConfig.from_dict(data)


def merge(defaults, overrides):
    """
    recursive merge of overrides over defaults, unknown keys are kept for the validator to report
    """
    merged = _thaw(defaults)
    for key, value in (overrides or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge(merged[key], value)
        else:
            merged[key] = _thaw(value)
    return merged


def flatten_errors(errors, prefix=''):
    """
    turns nested serializer errors into "section.key: message" lines
    """
    lines = []
    if isinstance(errors, dict):
        for key, value in errors.items():
            path = key if not prefix else ('{}.{}'.format(prefix, key) if key != 'non_field_errors' else prefix)
            lines.extend(flatten_errors(value, path))
    elif isinstance(errors, list):
        for value in errors:
            if isinstance(value, (dict, list)):
                lines.extend(flatten_errors(value, prefix))
            else:
                lines.append('{}: {}'.format(prefix or 'config', value))
    else:
        lines.append('{}: {}'.format(prefix or 'config', errors))
    return lines


def validate_config(data):
    """
    :param data: dict, merged over defaults
    :return: ExperimentConfig
    :raises ConfigError: with field path messages
    """
    from core.serializers import ExperimentConfigSerializer

    serializer = ExperimentConfigSerializer(data=data)
    if not serializer.is_valid():
        errors = flatten_errors(serializer.errors)
        logger.error('invalid experiment config, {}'.format('; '.join(errors)))
        raise ConfigError(errors)
    return ExperimentConfig.from_dict(serializer.validated_data)


def load_config(path=None, overrides=None):
    """
    reads the TOML file at path (optional), applies overrides and validates
    :param path: TOML file or None for the defaults only
    :param overrides: nested dict of values taking precedence over the file
    :return: ExperimentConfig
    """
    data = {}
    if path is not None:
        try:
            data = toml.load(path)
        except (OSError, toml.TomlDecodeError) as e:
            logger.error('can not read config {}, {}'.format(path, e))
            raise ConfigError(['config: can not read {}: {}'.format(path, e)])
    merged = merge(EXPERIMENT_DEFAULTS, data)
    merged = merge(merged, overrides)
    return validate_config(merged)


def default_config(**overrides):
    return load_config(overrides=overrides)
