"""
Multi-round experiment driver.

A repetition keeps one device population that grows by newcomers at the
start of every round. Every selection arm (FedMint, random selection and
FedMint with random newcomer scores) sees the same population snapshot but
owns its servers, the accuracy histories of the devices and the previous
global accuracies, so arms are compared pairwise.
"""
import abc
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import FrozenSet, Optional, Tuple

import numpy as np
from frozendict import frozendict

from core.aggregation import global_accuracy, test_data_size
from core.bootstrap import BootstrapServer, kfold_mse
from core.config import ARM_FEDMINT, ARM_RANDOM_BOOTSTRAP, ARM_VANILLA
from core.domain import InteractionRecord, LatencyMatrix, new_device, new_server
from core.economics import device_reward
from core.exceptions import AuditError, FedMintError, RangeError, SimulationError
from core.matching import Matching, audit_matching, run_matching
from core.preferences import NewcomerScoring, build_device_preferences, build_server_preferences, is_compatible
from core.utils import LocalTrainer, accuracy_proxy

logger = logging.getLogger(__name__)

__all__ = ['accuracy_proxy', 'assign_noniid_data', 'generate_population', 'generate_servers', 'vanilla_select',
           'run_round', 'run_repetition', 'run_experiment', 'SimulationState', 'SelectionArm']

# independent random streams of a repetition
POPULATION_STREAM = 1
SERVER_STREAM = 2
NOISE_STREAM = 3
VANILLA_STREAM = 4
RANDOM_SCORE_STREAM = 5
KFOLD_STREAM = 6


def stream(config, rep, *keys):
    return np.random.default_rng([config.seed, rep] + list(keys))


def stream_seed(config, rep, *keys):
    return int(np.random.SeedSequence([config.seed, rep] + list(keys)).generate_state(1)[0])


@dataclass(frozen=True)
class DataShard:
    labels: FrozenSet[int]
    data_size: int
    test_data_size: int


@dataclass(frozen=True)
class Population:
    devices: Tuple
    # (server_id, device_id) -> seconds
    latency: frozendict


@dataclass(frozen=True)
class ServerRoundMetrics:
    global_accuracy: Optional[float]
    cohort: Tuple[str, ...]
    mean_reward: float


@dataclass(frozen=True)
class BootstrapStats:
    inquiries: int = 0
    refusals: int = 0
    mse: Optional[float] = None


@dataclass(frozen=True)
class ArmRoundMetrics:
    servers: frozendict
    bootstrap: BootstrapStats
    matching: Matching


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    arms: frozendict


@dataclass(frozen=True)
class RepetitionReport:
    rep: int
    rounds: Tuple[RoundMetrics, ...]
    # pooled interaction records of the fedmint arm after the last round
    interactions: Tuple[InteractionRecord, ...] = ()


@dataclass(frozen=True)
class ExperimentReport:
    config: object
    repetitions: Tuple[RepetitionReport, ...]
    summary: dict


def server_ids(config):
    return tuple('S{}'.format(index + 1) for index in range(config.servers.count))


def generate_servers(config, rep=0):
    """
    servers with prices drawn once per repetition
    """
    rng = stream(config, rep, SERVER_STREAM)
    section = config.servers
    return tuple(new_server(
        server_id=server_id,
        requested_data_type=section.requested_data_type,
        capacity=section.clients_per_server,
        price_cpu=float(rng.uniform(*section.price_cpu)),
        price_ram=float(rng.uniform(*section.price_ram)),
        price_band=float(rng.uniform(*section.price_band)),
        calls_budget=section.initial_calls_budget,
    ) for server_id in server_ids(config))


def assign_noniid_data(features, population, rng):
    """
    non-IID shard of a fresh device: a few labels out of num_classes and a data size,
    drawn inside the band of the device type and provider when the population is structured
    :param features: mapping with provider and device_type
    :param population: PopulationConfig
    :param rng: numpy Generator
    :return: DataShard
    """
    size_low, size_high = population.min_data_size, population.max_data_size
    label_low, label_high = population.min_labels, population.max_labels
    if population.structured:
        size_low, size_high = population.device_type_size_bands.get(features['device_type'], (size_low, size_high))
        label_low, label_high = population.provider_label_bands.get(features['provider'], (label_low, label_high))
    data_size = int(rng.integers(size_low, size_high + 1))
    label_count = int(rng.integers(label_low, label_high + 1))
    labels = frozenset(int(label) for label in rng.choice(population.num_classes, size=label_count, replace=False))
    return DataShard(labels, data_size, test_data_size(data_size, population.test_split))


def _draw(rng, values):
    return values[int(rng.integers(len(values)))]


def generate_population(config, round_index, rep=0):
    """
    round 0 gives the initial devices, every later round its newcomers
    :return: Population
    """
    population = config.population
    if round_index == 0:
        count, first = population.initial_devices, 0
    else:
        count = population.arrivals_per_round
        first = population.initial_devices + (round_index - 1) * population.arrivals_per_round
    rng = stream(config, rep, POPULATION_STREAM, round_index)
    resources = config.resources
    low_fraction, high_fraction = population.promised_fraction

    devices = []
    latency = {}
    for index in range(first, first + count):
        device_id = 'D{:05d}'.format(index)
        features = {
            'provider': _draw(rng, population.providers),
            'region': _draw(rng, population.regions),
            'device_type': _draw(rng, population.device_types),
        }
        capacities = {name: float(rng.uniform(*getattr(resources, name))) for name in ('cpu', 'ram', 'bandwidth')}
        promised = {name: capacity * float(rng.uniform(low_fraction, high_fraction))
                    for name, capacity in capacities.items()}
        data_types = tuple(data_type for data_type in population.data_types
                           if rng.random() < population.data_type_coverage)
        shard = assign_noniid_data(features, population, rng)
        devices.append(new_device(
            device_id=device_id,
            cpu_capacity=capacities['cpu'], ram_capacity=capacities['ram'],
            bandwidth_capacity=capacities['bandwidth'],
            cpu_promised=promised['cpu'], ram_promised=promised['ram'], bandwidth_promised=promised['bandwidth'],
            data_labels=shard.labels, data_size=shard.data_size, test_data_size=shard.test_data_size,
            available_data_types=data_types, **features
        ))
        for server_id in server_ids(config):
            latency[(server_id, device_id)] = float(rng.uniform(config.latency.min, config.latency.max))
    return Population(tuple(devices), frozendict(latency))


def vanilla_select(devices, servers, k, rng):
    """
    random selection, every server in turn samples k of the compatible devices nobody took yet
    :return: Matching
    """
    devices = sorted(devices, key=lambda device: device.device_id)
    servers = sorted(servers, key=lambda server: server.server_id)
    taken = set()
    assignment = {}
    for server in servers:
        pool = [device.device_id for device in devices
                if device.device_id not in taken and is_compatible(device, server)]
        size = min(k, len(pool), server.capacity)
        if size < k:
            logger.warning('server {} gets {} devices instead of {}.'.format(server.server_id, size, k))
        for position in sorted(rng.choice(len(pool), size=size, replace=False).tolist()) if size else []:
            assignment[pool[position]] = server.server_id
            taken.add(pool[position])
    return Matching.from_assignment(assignment, [device.device_id for device in devices],
                                    [server.server_id for server in servers])


class SelectionArm(metaclass=abc.ABCMeta):
    """
    One client selection method playing a repetition. The arm owns its servers,
    the accuracy history of every device and the last global accuracy of every server.
    """
    name = None
    measures_mse = False

    def __init__(self, config, rep, servers, noise):
        self.config = config
        self.rep = rep
        self.servers = {server.server_id: server for server in servers}
        self.histories = {}
        self.acc_prev = {server_id: config.servers.prior_accuracy for server_id in self.servers}
        self.trainer = LocalTrainer.get_instance(config.trainer, config.proxy)
        self.noise = noise

    @staticmethod
    def get_instance(name, config, rep, servers, noise):
        class_ = ARM_CLASSES.get(name)
        if class_ is None:
            logger.error('Defined selection arm is not valid, {}'.format(name))
            raise ValueError('Defined selection arm is not valid, {}'.format(name))
        return class_(config, rep, servers, noise)

    def view(self, device):
        history = self.histories.get(device.device_id)
        if not history:
            return device
        return replace(device, accuracy_history=tuple(history), is_newcomer=False)

    @abc.abstractmethod
    def select(self, round_index, devices, latency):
        """
        :param devices: DeviceProfiles as seen by this arm
        :return: (Matching, inquiries, refusals)
        """
        return

    def play(self, round_index, devices, latency):
        """
        one round: select, train, aggregate, pay and remember
        :return: ArmRoundMetrics
        """
        views = [self.view(device) for device in devices]
        by_id = {device.device_id: device for device in views}
        matching, inquiries, refusals = self.select(round_index, views, latency)
        try:
            audit_matching(matching, {server_id: server.capacity for server_id, server in self.servers.items()})
        except AuditError as e:
            logger.critical('audit failed in round {} of {}, {}'.format(round_index, self.name, e))
            raise

        metrics = {}
        for server_id in sorted(self.servers):
            server = self.servers[server_id]
            cohort = sorted(matching.devices_of(server_id))
            evaluations = []
            for device_id in cohort:
                device = by_id[device_id]
                accuracy = self.trainer.evaluate(device, device.participation_count,
                                                 self.noise(round_index, device_id), round_index)
                evaluations.append((device, accuracy))

            if not evaluations:
                metrics[server_id] = ServerRoundMetrics(None, (), 0.0)
                self.servers[server_id] = replace(server, selected_count=0)
                continue

            acc_global = global_accuracy((accuracy, device.test_data_size) for device, accuracy in evaluations)
            rewards = [device_reward(device, server, latency.scaled(server_id, device.device_id), accuracy,
                                     acc_global).total for device, accuracy in evaluations]
            metrics[server_id] = ServerRoundMetrics(float(acc_global), tuple(cohort), float(np.mean(rewards)))

            records = []
            for device, accuracy in evaluations:
                self.histories.setdefault(device.device_id, []).append((round_index, float(accuracy)))
                # the bootstrap tree predicts newcomers, so only a first training round is recorded
                if device.participation_count == 0:
                    records.append(InteractionRecord(device.provider, device.region, device.device_type,
                                                     round(float(accuracy) * 100.0, 2)))
            self.servers[server_id] = replace(server, selected_count=len(cohort),
                                              interaction_dataset=server.interaction_dataset + tuple(records))
            self.acc_prev[server_id] = float(acc_global)

        return ArmRoundMetrics(frozendict(metrics), BootstrapStats(inquiries, refusals, self.measure(round_index)),
                               matching)

    def pooled_rows(self):
        rows = []
        for server_id in sorted(self.servers):
            rows.extend(self.servers[server_id].interaction_dataset)
        return tuple(rows)

    def measure(self, round_index):
        """
        k-fold MSE of the bootstrap tree on the pooled interaction records, None when not measured
        """
        if not self.measures_mse:
            return None
        section = self.config.bootstrap
        rows = self.pooled_rows()
        if len(rows) < section.kfold:
            return None
        _, mse = kfold_mse(rows, section.kfold, stream_seed(self.config, self.rep, KFOLD_STREAM, round_index),
                           section.min_instances, section.cv_threshold)
        return mse


class FedMintArm(SelectionArm):
    name = ARM_FEDMINT
    measures_mse = True
    scoring = 'BootstrapScoring'

    def scoring_kwargs(self, bootstrap):
        return {'bootstrap': bootstrap, 'prior': self.config.servers.prior_accuracy}

    def select(self, round_index, devices, latency):
        section = self.config.bootstrap
        bootstrap = BootstrapServer(self.servers.values(), section.min_instances, section.cv_threshold,
                                    section.upload_fraction)
        scoring = NewcomerScoring.get_instance(self.scoring, **self.scoring_kwargs(bootstrap))

        server_prefs = {}
        for server_id in sorted(self.servers):
            server_prefs[server_id] = build_server_preferences(bootstrap.servers[server_id], devices, scoring)
        self.servers.update(bootstrap.servers)

        servers = [self.servers[server_id] for server_id in sorted(self.servers)]
        device_prefs = {}
        for device in devices:
            estimate = scoring.predictions.get(device.device_id) if device.is_newcomer else None
            device_prefs[device.device_id] = build_device_preferences(device, servers, latency, self.acc_prev,
                                                                      local_accuracy=estimate)
        matching = run_matching(device_prefs, server_prefs,
                                {server.server_id: server.capacity for server in servers})
        logger.debug('round {} of {}: {} proposals, {} inquiries, {} refusals.'.format(
            round_index, self.name, matching.proposals, bootstrap.inquiries, bootstrap.refusals))
        return matching, bootstrap.inquiries, bootstrap.refusals


class FedMintRandomBootstrapArm(FedMintArm):
    name = ARM_RANDOM_BOOTSTRAP
    measures_mse = False
    scoring = 'RandomScoring'

    def __init__(self, config, rep, servers, noise):
        super(FedMintRandomBootstrapArm, self).__init__(config, rep, servers, noise)
        self.rng = stream(config, rep, RANDOM_SCORE_STREAM)

    def scoring_kwargs(self, bootstrap):
        return {'rng': self.rng, 'prior': self.config.servers.prior_accuracy}


class VanillaArm(SelectionArm):
    name = ARM_VANILLA

    def __init__(self, config, rep, servers, noise):
        super(VanillaArm, self).__init__(config, rep, servers, noise)
        self.rng = stream(config, rep, VANILLA_STREAM)

    def select(self, round_index, devices, latency):
        servers = [self.servers[server_id] for server_id in sorted(self.servers)]
        return vanilla_select(devices, servers, self.config.servers.clients_per_server, self.rng), 0, 0


ARM_CLASSES = frozendict({
    ARM_FEDMINT: FedMintArm,
    ARM_VANILLA: VanillaArm,
    ARM_RANDOM_BOOTSTRAP: FedMintRandomBootstrapArm,
})


class SimulationState:
    """
    Everything a repetition carries from one round to the next.
    """

    def __init__(self, config, rep=0):
        self.config = config
        self.rep = rep
        initial = generate_population(config, 0, rep)
        self.devices = list(initial.devices)
        self.latency = LatencyMatrix(initial.latency, config.latency.min, config.latency.max)
        servers = generate_servers(config, rep)
        self.arms = {name: SelectionArm.get_instance(name, config, rep, servers, self.noise)
                     for name in config.arms}

    def noise(self, round_index, device_id):
        """
        noise stream of one device in one round, shared by all arms
        """
        return stream(self.config, self.rep, NOISE_STREAM, round_index, int(device_id.lstrip('D')))

    def add_arrivals(self, round_index):
        arrivals = generate_population(self.config, round_index, self.rep)
        self.devices.extend(arrivals.devices)
        self.latency = self.latency.merged(arrivals.latency)
        return arrivals.devices


def run_round(state, round_index):
    """
    newcomers arrive, then every arm plays the round on the same population snapshot
    :return: RoundMetrics
    """
    arrivals = state.add_arrivals(round_index)
    logger.debug('rep {} round {}: {} devices, {} newcomers arrived.'.format(
        state.rep, round_index, len(state.devices), len(arrivals)))
    snapshot = tuple(state.devices)
    arms = {}
    for name in state.config.arms:
        try:
            arms[name] = state.arms[name].play(round_index, snapshot, state.latency)
        except FedMintError as e:
            logger.error('round {} of {} failed, {}'.format(round_index, name, e))
            raise SimulationError(str(e), round_index, name) from e
    return RoundMetrics(round_index, frozendict(arms))


def run_repetition(config, rep=0):
    state = SimulationState(config, rep)
    rounds = tuple(run_round(state, round_index) for round_index in range(1, config.rounds + 1))
    logger.info('repetition {} done, {} rounds.'.format(rep, len(rounds)))
    arm = state.arms.get(ARM_FEDMINT)
    return RepetitionReport(rep, rounds, arm.pooled_rows() if arm is not None else ())


def run_experiment(config, jobs=1):
    """
    every repetition of the experiment, in parallel processes when jobs > 1
    :return: ExperimentReport with repetitions ordered by rep
    """
    if jobs < 1:
        raise RangeError('jobs must be at least 1')
    reps = list(range(config.repetitions))
    logger.info('running {} repetitions of {} rounds for arms {}.'.format(len(reps), config.rounds,
                                                                          ', '.join(config.arms)))
    if jobs > 1 and len(reps) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(reps))) as executor:
            repetitions = tuple(executor.map(run_repetition, [config] * len(reps), reps))
    else:
        repetitions = tuple(run_repetition(config, rep) for rep in reps)
    return ExperimentReport(config, repetitions, summarize(config, repetitions))


def metric_rows(repetitions):
    """
    one dict per repetition, round, arm and server in a fixed order
    """
    for report in repetitions:
        for metrics in report.rounds:
            for arm in sorted(metrics.arms):
                arm_metrics = metrics.arms[arm]
                for server_id in sorted(arm_metrics.servers):
                    server = arm_metrics.servers[server_id]
                    yield {
                        'rep': report.rep,
                        'round': metrics.round,
                        'arm': arm,
                        'server_id': server_id,
                        'global_accuracy': server.global_accuracy,
                        'mean_reward': server.mean_reward,
                        'cohort_size': len(server.cohort),
                        'bootstrap_inquiries': arm_metrics.bootstrap.inquiries,
                        'bootstrap_refusals': arm_metrics.bootstrap.refusals,
                        'bootstrap_mse': arm_metrics.bootstrap.mse,
                    }


def _mean(values):
    values = [value for value in values if value is not None]
    return float(np.mean(values)) if values else None


def repetition_mean_reward(report, arm):
    """
    mean cohort reward of arm over the rounds and servers of one repetition
    """
    return _mean(server.mean_reward for metrics in report.rounds
                 for server in metrics.arms[arm].servers.values() if server.cohort)


def round_mean(repetitions, arm, round_index, attribute, server_id=None):
    """
    mean of attribute over the servers with a cohort in one round, or over one server only
    """
    return _mean(getattr(server, attribute) for report in repetitions
                 for metrics in report.rounds if metrics.round == round_index
                 for key, server in metrics.arms[arm].servers.items()
                 if server.cohort and server_id in (None, key))


def _server_comparison(repetitions, arm, server_id, rounds):
    per_round = [_gain(round_mean(repetitions, arm, r, 'mean_reward', server_id),
                       round_mean(repetitions, ARM_VANILLA, r, 'mean_reward', server_id)) for r in rounds]
    per_round = [gain for gain in per_round if gain is not None]
    final = rounds[-1]
    return {
        'min_round_reward_gain_pct': min(per_round) if per_round else None,
        'max_round_reward_gain_pct': max(per_round) if per_round else None,
        'final_accuracy_gain_pct': _gain(round_mean(repetitions, arm, final, 'global_accuracy', server_id),
                                         round_mean(repetitions, ARM_VANILLA, final, 'global_accuracy', server_id)),
    }


def _gain(value, baseline):
    if value is None or not baseline:
        return None
    return (value / baseline - 1.0) * 100.0


def summarize(config, repetitions):
    """
    per arm aggregates over all repetitions and, when vanilla ran, the gains of the other arms over it
    """
    arms = {}
    rounds = range(1, config.rounds + 1)
    for arm in config.arms:
        last = [report.rounds[-1].arms[arm] for report in repetitions if report.rounds]
        arms[arm] = {
            'mean_reward': _mean(repetition_mean_reward(report, arm) for report in repetitions),
            'mean_accuracy': _mean(server.global_accuracy for report in repetitions for metrics in report.rounds
                                   for server in metrics.arms[arm].servers.values()),
            'mean_final_accuracy': _mean(_mean(server.global_accuracy for server in metrics.servers.values())
                                         for metrics in last),
            'inquiries': _mean(sum(metrics.arms[arm].bootstrap.inquiries for metrics in report.rounds)
                               for report in repetitions),
            'refusals': _mean(sum(metrics.arms[arm].bootstrap.refusals for metrics in report.rounds)
                              for report in repetitions),
            'final_mse': _mean(metrics.bootstrap.mse for metrics in last),
            'reward_by_round': [round_mean(repetitions, arm, r, 'mean_reward') for r in rounds],
            'accuracy_by_round': [round_mean(repetitions, arm, r, 'global_accuracy') for r in rounds],
            'mse_by_round': [_mean(metrics.arms[arm].bootstrap.mse for report in repetitions
                                   for metrics in report.rounds if metrics.round == r) for r in rounds],
        }

    comparison = {}
    if ARM_VANILLA in arms:
        baseline = arms[ARM_VANILLA]
        for arm in arms:
            if arm == ARM_VANILLA:
                continue
            per_round = [_gain(value, base) for value, base in zip(arms[arm]['reward_by_round'],
                                                                   baseline['reward_by_round'])]
            per_round = [gain for gain in per_round if gain is not None]
            comparison[arm] = {
                'reward_gain_pct': _gain(arms[arm]['mean_reward'], baseline['mean_reward']),
                'min_round_reward_gain_pct': min(per_round) if per_round else None,
                'max_round_reward_gain_pct': max(per_round) if per_round else None,
                'final_accuracy_gain_pct': _gain(arms[arm]['mean_final_accuracy'],
                                                 baseline['mean_final_accuracy']),
                'servers': {server_id: _server_comparison(repetitions, arm, server_id, rounds)
                            for server_id in server_ids(config)},
            }
    return {
        'repetitions': len(repetitions),
        'rounds': config.rounds,
        'seed': config.seed,
        'arms': arms,
        'comparison_with_vanilla': comparison,
    }
