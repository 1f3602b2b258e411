import csv
import json
import os
import shutil
import tempfile
from fractions import Fraction
from io import StringIO

import numpy as np
import requests
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase
from frozendict import frozendict
from mock import patch, MagicMock
from rest_framework import status
from rest_framework.test import APIClient

from core import aggregation
from core.bootstrap import BootstrapServer, Leaf, Split, build_tree, coefficient_of_variation, data_rate, \
    dataset_summary, handle_inquiry, kfold_mse, load_interaction_csv, population_sd, predict, render_tree, \
    sample_mean, sd_after_split, sdr, sdr_table, update_calls, uploaded_rows
from core.config import ARM_FEDMINT, ARM_RANDOM_BOOTSTRAP, ARM_VANILLA, EXPERIMENT_DEFAULTS, default_config, \
    load_config
from core.domain import InteractionRecord, LatencyMatrix, new_device, new_server, scale_latency
from core.economics import accuracy_gap_std, device_reward, operational_earnings, total_reward, traffic_earnings
from core.exceptions import AuditError, BudgetExhaustedError, ConfigError, DatasetError, DomainValidationError, \
    MalformedPreferencesError, NoParticipantsError, NoTrainingDataError, OracleBoundError, RangeError, \
    SimulationError, TrainerError
from core.matching import Matching, MatchingProblem, audit_matching, brute_force_stable, device_rank, \
    is_blocking_pair, is_stable, run_matching
from core.models import Experiment, RoundMetric
from core.preferences import BootstrapScoring, NewcomerScoring, PriorScoring, RandomScoring, \
    build_device_preferences, build_server_preferences
from core.reports import ROUNDS_HEADER, line_chart, write_report
from core.simulation import SimulationState, generate_population, generate_servers, repetition_mean_reward, \
    run_experiment, run_repetition, run_round, vanilla_select
from core.tasks import run_experiment as run_experiment_task, run_repetition as run_repetition_task
from core.utils import AccuracyProxyTrainer, LocalTrainer, RemoteTrainer, accuracy_proxy

DATA_TESTING = os.path.join(settings.BASE_DIR, 'core', 'data_testing')

SMALL_CONFIG = {
    'seed': 7,
    'rounds': 3,
    'repetitions': 2,
    'population': {'initial_devices': 20, 'arrivals_per_round': 4},
    'servers': {'clients_per_server': 4},
    'bootstrap': {'kfold': 5},
}


def data_path(name):
    return os.path.join(DATA_TESTING, name)


def interaction_rows():
    return load_interaction_csv(data_path('interaction_records.csv'))


def make_device(device_id='D1', provider='P1', region='Asia', device_type='Phone', history=(), data_size=200,
                labels=(1, 2), cpu=400, ram=500, band=600, data_types=('mnist',)):
    return new_device(device_id, provider, region, device_type, cpu_capacity=cpu, ram_capacity=ram,
                      bandwidth_capacity=band, cpu_promised=cpu, ram_promised=ram, bandwidth_promised=band,
                      data_labels=labels, data_size=data_size, available_data_types=data_types,
                      accuracy_history=history)


def make_server(server_id='A', capacity=1, price=0.001, budget=5, rows=(), ccont=0, data_type='mnist'):
    return new_server(server_id, data_type, capacity, price, price, price, interaction_dataset=rows,
                      calls_budget=budget, cumulative_contributions=ccont)


def records(count, provider='P1', accuracy=60.0):
    return tuple(InteractionRecord(provider, 'Asia', 'Phone', accuracy + index % 7) for index in range(count))


class DomainTestCase(TestCase):
    def test_new_device_valid(self):
        device = make_device(cpu=500, data_size=450, labels=(3, 7))
        self.assertTrue(device.is_newcomer)
        self.assertEqual(device.data_labels, frozenset({3, 7}))
        self.assertEqual(device.test_data_size, 90)
        self.assertIsNone(device.last_accuracy)

    def test_new_device_promised_exceeds_capacity(self):
        with self.assertRaises(DomainValidationError) as context:
            new_device('D1', 'P1', 'Asia', 'Phone', 700, 500, 600, 800, 400, 500, (1,), 200)
        self.assertEqual(context.exception.field, 'cpu_promised')
        self.assertIn('cpu_promised exceeds capacity', str(context.exception))

    def test_new_device_history(self):
        device = make_device(history=((1, 0.7), (2, 0.75)))
        self.assertFalse(device.is_newcomer)
        self.assertEqual(device.last_accuracy, 0.75)
        self.assertEqual(device.participation_count, 2)
        with self.assertRaises(DomainValidationError):
            make_device(history=((1, 1.5),))

    def test_new_device_empty_labels(self):
        with self.assertRaises(DomainValidationError) as context:
            make_device(labels=())
        self.assertEqual(context.exception.field, 'data_labels')

    def test_new_server(self):
        server = make_server(capacity=10)
        self.assertEqual(server.calls_budget, 5)
        with self.assertRaises(DomainValidationError):
            make_server(capacity=0)

    def test_scale_latency(self):
        self.assertAlmostEqual(scale_latency(0.1, 0.1, 5.0), 0.0)
        self.assertAlmostEqual(scale_latency(5.0, 0.1, 5.0), 1.0)
        self.assertAlmostEqual(scale_latency(2.55, 0.1, 5.0), 0.5)
        with self.assertRaises(RangeError):
            scale_latency(6.0, 0.1, 5.0)
        with self.assertRaises(RangeError):
            scale_latency(1.0, 5.0, 0.1)

    def test_latency_matrix_merged(self):
        matrix = LatencyMatrix(frozendict({('A', 'D1'): 0.1}), 0.1, 5.0)
        merged = matrix.merged({('A', 'D2'): 5.0})
        self.assertEqual(merged.scaled('A', 'D1'), 0.0)
        self.assertEqual(merged.scaled('A', 'D2'), 1.0)
        self.assertNotIn(('A', 'D2'), matrix.entries)

    def test_interaction_record_percent(self):
        with self.assertRaises(DomainValidationError):
            InteractionRecord('P1', 'Asia', 'Phone', 101.0)


class EconomicsTestCase(TestCase):
    def test_operational_earnings(self):
        self.assertAlmostEqual(operational_earnings(500, 600, 0.002, 0.001), 1.6)
        self.assertAlmostEqual(operational_earnings(0, 0, 0.002, 0.001), 0.0)
        self.assertAlmostEqual(operational_earnings(300, 400, 0.001, 0.001), 0.7)
        with self.assertRaises(DomainValidationError):
            operational_earnings(-1, 0, 0.002, 0.001)

    def test_traffic_earnings(self):
        self.assertAlmostEqual(traffic_earnings(700, 0.001, 0.2), 0.56)
        self.assertAlmostEqual(traffic_earnings(900, 0.004, 1.0), 0.0)
        self.assertAlmostEqual(traffic_earnings(500, 0.002, 0.0), 1.0)
        with self.assertRaises(RangeError):
            traffic_earnings(500, 0.002, 1.2)

    def test_accuracy_gap_std(self):
        self.assertAlmostEqual(accuracy_gap_std(0.7, 0.8), 0.05)
        self.assertAlmostEqual(accuracy_gap_std(0.4, 0.4), 0.0)
        self.assertAlmostEqual(accuracy_gap_std(0.0, 1.0), 0.5)

    def test_total_reward(self):
        self.assertAlmostEqual(total_reward(1.6, 0.56, 0.7, 0.8).total, 2.052)
        self.assertAlmostEqual(total_reward(0, 0, 0.2, 0.9).total, 0.0)
        breakdown = total_reward(1.0, 1.0, 0.9, 0.9)
        self.assertAlmostEqual(breakdown.total, 2.0)
        self.assertAlmostEqual(breakdown.penalty_factor, 1.0)

    def test_reward_properties(self):
        """
        random cases: penalty factor bounds, monotonicity and price scaling
        """
        rng = np.random.default_rng(11)
        for _ in range(50):
            operational, traffic = rng.uniform(0, 3, size=2)
            acc_device, acc_global = rng.uniform(0, 1, size=2)
            breakdown = total_reward(operational, traffic, acc_device, acc_global)
            self.assertTrue(0.5 <= breakdown.penalty_factor <= 1.0)
            self.assertAlmostEqual(breakdown.total, (operational + traffic) * breakdown.penalty_factor, places=9)
            self.assertGreaterEqual(total_reward(operational + 0.1, traffic, acc_device, acc_global).total,
                                    breakdown.total)
            self.assertGreaterEqual(total_reward(operational, traffic + 0.1, acc_device, acc_global).total,
                                    breakdown.total)
            self.assertGreaterEqual(total_reward(operational, traffic, acc_global, acc_global).total,
                                    breakdown.total)

            device = make_device(cpu=float(rng.uniform(300, 700)), ram=float(rng.uniform(400, 900)),
                                 band=float(rng.uniform(500, 900)))
            price = float(rng.uniform(0.001, 0.004))
            latency = float(rng.uniform(0, 1))
            single = device_reward(device, make_server(price=price), latency, acc_device, acc_global).total
            double = device_reward(device, make_server(price=2 * price), latency, acc_device, acc_global).total
            self.assertAlmostEqual(double, 2 * single, places=9)


class AggregationTestCase(TestCase):
    def test_weighted_accuracy(self):
        self.assertAlmostEqual(aggregation.weighted_accuracy(0.9, 100), 90)
        self.assertAlmostEqual(aggregation.weighted_accuracy(1.0, 250), 250)
        with self.assertRaises(DomainValidationError):
            aggregation.weighted_accuracy(0.5, 0)

    def test_global_accuracy(self):
        self.assertAlmostEqual(aggregation.global_accuracy([(0.9, 100), (0.5, 300)]), 0.6)
        self.assertAlmostEqual(aggregation.global_accuracy([(0.42, 80)]), 0.42)
        self.assertAlmostEqual(aggregation.global_accuracy([(0.7, 100), (0.7, 350)]), 0.7)
        with self.assertRaises(NoParticipantsError):
            aggregation.global_accuracy([])

    def test_global_accuracy_invariances(self):
        cohort = [(0.31, 20), (0.77, 45), (0.58, 90)]
        base = aggregation.global_accuracy(cohort)
        self.assertAlmostEqual(aggregation.global_accuracy([(a, 3 * n) for a, n in cohort]), base)
        self.assertAlmostEqual(aggregation.global_accuracy(reversed(cohort)), base)
        self.assertTrue(0.31 <= base <= 0.77)

    def test_cohort_report(self):
        report = aggregation.cohort_report([('D1', 0.9, 100), ('D2', 0.5, 300)])
        self.assertAlmostEqual(report.global_accuracy, 0.6)
        self.assertEqual(len(report.participants), 2)

    def test_test_data_size(self):
        self.assertEqual(aggregation.test_data_size(100), 20)
        self.assertEqual(aggregation.test_data_size(101), 21)
        self.assertEqual(aggregation.test_data_size(450), 90)


class BootstrapStatisticsTestCase(TestCase):
    """
    worked example of the interaction dataset with 14 devices
    """

    def setUp(self):
        self.rows = interaction_rows()

    def test_summary(self):
        summary = dataset_summary(self.rows)
        self.assertEqual(summary['n'], 14)
        self.assertAlmostEqual(summary['mean'], 65.53, delta=0.02)
        self.assertAlmostEqual(summary['sd'], 13.96, delta=0.01)
        self.assertAlmostEqual(summary['cv'], 21.31, delta=0.05)

    def test_basic_statistics(self):
        self.assertAlmostEqual(population_sd([3, 3, 3]), 0.0)
        self.assertAlmostEqual(population_sd([1, 2, 3, 4]), 1.1180, places=4)
        self.assertAlmostEqual(sample_mean([2, 4]), 3.0)
        self.assertAlmostEqual(coefficient_of_variation([2, 4]), 33.33, places=2)
        self.assertAlmostEqual(coefficient_of_variation([5, 5]), 0.0)
        with self.assertRaises(ZeroDivisionError):
            coefficient_of_variation([0, 0])
        with self.assertRaises(RangeError):
            population_sd([])

    def test_sd_after_split(self):
        self.assertAlmostEqual(sd_after_split(self.rows, 'provider'), 8.13, delta=0.02)
        self.assertAlmostEqual(sd_after_split(self.rows, 'region'), 9.51, delta=0.03)
        self.assertAlmostEqual(sd_after_split(self.rows, 'device_type'), 12.28, delta=0.03)
        one_category = [InteractionRecord('P1', 'Asia', 'Phone', value) for value in (50, 60, 70)]
        self.assertAlmostEqual(sd_after_split(one_category, 'provider'), population_sd([50, 60, 70]))
        singletons = [InteractionRecord('P{}'.format(i), 'Asia', 'Phone', value)
                      for i, value in enumerate((50, 60, 70))]
        self.assertAlmostEqual(sd_after_split(singletons, 'provider'), 0.0)
        with self.assertRaises(DomainValidationError):
            sd_after_split(self.rows, 'colour')

    def test_sdr(self):
        self.assertAlmostEqual(sdr(self.rows, 'provider'), 5.83, delta=0.03)
        self.assertAlmostEqual(sdr(self.rows, 'region'), 4.45, delta=0.03)
        self.assertAlmostEqual(sdr(self.rows, 'device_type'), 1.67, delta=0.03)
        table = sdr_table(self.rows)
        self.assertEqual([attribute for attribute, _, _ in table], ['provider', 'region', 'device_type'])


class BootstrapTreeTestCase(TestCase):
    def setUp(self):
        self.rows = interaction_rows()
        self.tree = build_tree(self.rows, min_instances=3, cv_threshold=10.0)

    def test_root_is_provider(self):
        self.assertIsInstance(self.tree, Split)
        self.assertEqual(self.tree.attribute, 'provider')
        self.assertEqual(self.tree.count, 14)
        self.assertEqual(sorted(self.tree.branches), ['P1', 'P2', 'P3', 'P4'])

    def test_p2_leaf(self):
        leaf = self.tree.branches['P2']
        self.assertIsInstance(leaf, Leaf)
        self.assertAlmostEqual(leaf.value, 54.625, places=6)
        self.assertAlmostEqual(predict(self.tree, {'provider': 'P2', 'region': 'Africa', 'device_type': 'Lock'}),
                               54.625, places=6)

    def test_unseen_category(self):
        prediction = predict(self.tree, {'provider': 'P9', 'region': 'Asia', 'device_type': 'Watch'})
        self.assertAlmostEqual(prediction, sample_mean([row.accuracy for row in self.rows]))

    def test_stopping_rules(self):
        single = build_tree(self.rows[:1])
        self.assertEqual(single, Leaf(self.rows[0].accuracy, 1))
        constant = build_tree([InteractionRecord('P{}'.format(i % 3), 'Asia', 'Phone', 70.0) for i in range(9)])
        self.assertIsInstance(constant, Leaf)
        self.assertAlmostEqual(constant.value, 70.0)
        self.assertEqual(predict(single, {'provider': 'P9'}), self.rows[0].accuracy)
        with self.assertRaises(NoTrainingDataError):
            build_tree([])

    def test_tie_goes_to_schema_order(self):
        rows = [InteractionRecord(provider, region, 'Phone', accuracy)
                for provider, region, accuracy in (('P1', 'Asia', 40), ('P1', 'Asia', 42),
                                                   ('P2', 'Europe', 80), ('P2', 'Europe', 82))]
        self.assertEqual(build_tree(rows, min_instances=1).attribute, 'provider')

    def test_render_tree(self):
        text = render_tree(self.tree)
        lines = text.splitlines()
        self.assertEqual(lines[0], 'Provider (n=14, mean=65.54)')
        self.assertTrue(any(line.strip().startswith('P2 -> leaf 54.6') for line in lines))

    def test_root_maximizes_sdr(self):
        """
        on small binary datasets the root attribute has the largest SDR found by trying every attribute
        """
        rng = np.random.default_rng(11)
        categories = {'provider': ('P1', 'P2'), 'region': ('Asia', 'Europe'), 'device_type': ('Lock', 'Phone')}
        for _ in range(200):
            rows = [InteractionRecord(*[values[int(rng.integers(2))] for values in categories.values()],
                                      round(float(rng.uniform(30.0, 95.0)), 2))
                    for _ in range(int(rng.integers(2, 17)))]
            targets = np.array([row.accuracy for row in rows])
            reductions = {}
            for attribute in categories:
                groups = [targets[[getattr(row, attribute) == value for row in rows]]
                          for value in categories[attribute]]
                after = sum(len(group) / len(rows) * np.std(group) for group in groups if len(group))
                reductions[attribute] = np.std(targets) - after
            tree = build_tree(rows, min_instances=1, cv_threshold=1e-6)
            if np.std(targets) == 0:
                self.assertIsInstance(tree, Leaf)
                continue
            self.assertIsInstance(tree, Split)
            self.assertGreaterEqual(reductions[tree.attribute], max(reductions.values()) - 1e-9)

    def test_leaves_within_training_range(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            rows = [InteractionRecord('P{}'.format(rng.integers(4)), 'R{}'.format(rng.integers(3)),
                                      'T{}'.format(rng.integers(4)), round(float(rng.uniform(10.0, 99.0)), 2))
                    for _ in range(int(rng.integers(1, 60)))]
            tree = build_tree(rows, min_instances=int(rng.integers(1, 5)), cv_threshold=float(rng.uniform(1, 20)))

            def walk(node, reached):
                targets = [row.accuracy for row in reached]
                self.assertEqual(node.count, len(reached))
                self.assertTrue(min(targets) - 1e-9 <= node.value <= max(targets) + 1e-9)
                if isinstance(node, Split):
                    for category, child in node.branches.items():
                        walk(child, [row for row in reached if getattr(row, node.attribute) == category])

            walk(tree, rows)
            low, high = min(row.accuracy for row in rows), max(row.accuracy for row in rows)
            for provider, region, device_type in (('P0', 'R9', 'T1'), ('P9', 'R0', 'T0'), ('P3', 'R2', 'T3')):
                prediction = predict(tree, {'provider': provider, 'region': region, 'device_type': device_type})
                self.assertTrue(low - 1e-9 <= prediction <= high + 1e-9)

    def test_kfold_mse(self):
        constant = [InteractionRecord('P{}'.format(i % 4), 'Asia', 'Phone', 55.0) for i in range(20)]
        folds, mean = kfold_mse(constant, k=10, seed=3)
        self.assertEqual(len(folds), 10)
        self.assertAlmostEqual(mean, 0.0)
        self.assertEqual(kfold_mse(self.rows, k=2, seed=5), kfold_mse(self.rows, k=2, seed=5))
        with self.assertRaises(RangeError):
            kfold_mse(self.rows, k=20)

    def test_kfold_mse_structured_population(self):
        config = default_config()
        state = SimulationState(config, 0)
        arm = state.arms[ARM_FEDMINT]
        for round_index in range(1, 6):
            run_round(state, round_index)
        _, mse = kfold_mse(arm.pooled_rows(), k=10, seed=0)
        self.assertLessEqual(mse, 0.02)


class CsvTestCase(TestCase):
    def setUp(self):
        self.directory = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.directory)

    def write(self, content):
        path = os.path.join(self.directory, 'rows.csv')
        with open(path, 'w') as csv_file:
            csv_file.write(content)
        return path

    def test_load(self):
        rows = interaction_rows()
        self.assertEqual(len(rows), 14)
        self.assertEqual(rows[0], InteractionRecord('P4', 'Asia', 'Watch', 73.69))

    def test_malformed_row(self):
        path = self.write('provider,region,device_type,accuracy\nP1,Asia,Phone,70\nP1,Asia,Phone,abc\n')
        with self.assertRaises(DatasetError) as context:
            load_interaction_csv(path)
        self.assertEqual(context.exception.row, 3)
        self.assertTrue(str(context.exception).startswith('row 3:'))

    def test_empty(self):
        with self.assertRaises(DatasetError):
            load_interaction_csv(self.write(''))
        with self.assertRaises(DatasetError):
            load_interaction_csv(self.write('provider,region,device_type,accuracy\n'))

    def test_wrong_header(self):
        with self.assertRaises(DatasetError) as context:
            load_interaction_csv(self.write('provider,accuracy\nP1,70\n'))
        self.assertEqual(context.exception.row, 1)


class MotivationTestCase(TestCase):
    def test_data_rate(self):
        self.assertEqual(data_rate(50, 200), Fraction(1, 4))
        self.assertEqual(data_rate(0, 10), 0)
        self.assertEqual(data_rate(10, 10), 1)
        with self.assertRaises(RangeError):
            data_rate(0, 0)

    def test_update_calls(self):
        self.assertEqual(update_calls(0, 0, 0), 1)
        self.assertEqual(update_calls(5, 3, 0.5), 10)
        self.assertEqual(update_calls(2, 4, 1.0), 11)
        self.assertEqual(update_calls(2, 3, Fraction(1, 3)), 7)
        for calls_prev in range(5):
            self.assertLess(update_calls(calls_prev, 2, 0.5), update_calls(calls_prev + 1, 2, 0.5))

    def test_update_calls_monotone(self):
        rng = np.random.default_rng(17)
        for _ in range(500):
            calls_prev, ccont = int(rng.integers(0, 50)), int(rng.integers(0, 30))
            total = int(rng.integers(1, 200))
            uploaded = int(rng.integers(0, total + 1))
            rate = data_rate(uploaded, total)
            calls = update_calls(calls_prev, ccont, rate)
            self.assertGreater(calls, calls_prev)
            self.assertLess(calls, update_calls(calls_prev + 1, ccont, rate))
            self.assertLess(calls, update_calls(calls_prev, ccont + 1, rate))
            if uploaded < total:
                self.assertLessEqual(calls, update_calls(calls_prev, ccont, data_rate(uploaded + 1, total)))

    def test_uploaded_rows(self):
        server = make_server(rows=records(10))
        self.assertEqual(uploaded_rows(server, 1.0), server.interaction_dataset)
        self.assertEqual(uploaded_rows(server, 0.25), server.interaction_dataset[-3:])


class InquiryTestCase(TestCase):
    def setUp(self):
        self.requester = make_server('R', budget=1)
        self.first = make_server('S1', budget=2, rows=records(60, 'P1', 50.0), ccont=4)
        self.second = make_server('S2', budget=0, rows=records(40, 'P2', 80.0), ccont=9)
        self.features = {'provider': 'P2', 'region': 'Asia', 'device_type': 'Phone'}

    def test_contributors_rewarded(self):
        outcome, updated = handle_inquiry(self.requester, self.features, [self.requester, self.first, self.second])
        servers = {server.server_id: server for server in updated}
        self.assertEqual(servers['R'].calls_budget, 0)
        # ccont 5, DR 0.6: 2 + 5 + floor(3.0) + 1
        self.assertEqual(servers['S1'].calls_budget, 11)
        self.assertEqual(servers['S1'].cumulative_contributions, 5)
        # ccont 10, DR 0.4: 0 + 10 + floor(4.0) + 1
        self.assertEqual(servers['S2'].calls_budget, 15)
        self.assertEqual([c.data_rate for c in outcome.contributors], [Fraction(3, 5), Fraction(2, 5)])
        self.assertTrue(0.8 <= outcome.predicted_accuracy <= 0.86)

    def test_budget_exhausted(self):
        with self.assertRaises(BudgetExhaustedError):
            handle_inquiry(make_server('R', budget=0), self.features, [self.first, self.second])

    def test_no_training_data(self):
        with self.assertRaises(NoTrainingDataError):
            handle_inquiry(self.requester, self.features, [self.requester, make_server('S1')])

    def test_bootstrap_server_registry(self):
        bootstrap = BootstrapServer([self.requester, self.first, self.second])
        bootstrap.inquire('R', self.features)
        with self.assertRaises(BudgetExhaustedError):
            bootstrap.inquire('R', self.features)
        self.assertEqual(bootstrap.inquiries, 1)
        self.assertEqual(bootstrap.refusals, 1)
        self.assertEqual(bootstrap.servers['S2'].calls_budget, 15)
        self.assertEqual(len(bootstrap.pooled_rows()), 100)

    @patch('core.bootstrap.build_tree')
    def test_tree_reused_while_datasets_unchanged(self, mocked_build):
        mocked_build.return_value = Leaf(70.0, 100)
        bootstrap = BootstrapServer([self.first, self.second])
        bootstrap.inquire('S1', self.features)
        bootstrap.inquire('S1', self.features)
        self.assertEqual(mocked_build.call_count, 1)


class PreferencesTestCase(TestCase):
    def setUp(self):
        self.latency = LatencyMatrix(frozendict({(server, device): 1.0 for server in ('A', 'B', 'C')
                                                 for device in ('D1', 'D2', 'D3')}), 0.1, 5.0)

    def test_device_ranks_by_reward(self):
        device = make_device()
        servers = [make_server('B', price=0.001), make_server('A', price=0.002)]
        prefs = build_device_preferences(device, servers, self.latency, {})
        self.assertEqual(prefs.ranking, ('A', 'B'))
        self.assertEqual(prefs.rank_of('B'), 1)

    def test_device_excludes_incompatible_and_breaks_ties(self):
        device = make_device()
        servers = [make_server('C'), make_server('B'), make_server('A', data_type='cifar')]
        prefs = build_device_preferences(device, servers, self.latency, {})
        self.assertEqual(prefs.ranking, ('B', 'C'))

    def test_server_ranks_by_accuracy(self):
        devices = [make_device('D1', history=((1, 0.9),)), make_device('D2', history=((1, 0.6),)),
                   make_device('D3', history=((1, 0.8),))]
        prefs = build_server_preferences(make_server('A'), devices, PriorScoring())
        self.assertEqual(prefs.ranking, ('D1', 'D3', 'D2'))
        self.assertEqual(build_server_preferences(make_server('A', data_type='cifar'), devices,
                                                  PriorScoring()).ranking, ())

    def test_newcomer_scored_by_bootstrap(self):
        server = make_server('A', budget=3)
        other = make_server('B', rows=records(20, 'P1', 70.0))
        bootstrap = BootstrapServer([server, other])
        scoring = NewcomerScoring.get_instance('BootstrapScoring', bootstrap=bootstrap)
        newcomer = make_device('D1')
        prefs = build_server_preferences(bootstrap.servers['A'], [newcomer], scoring)
        self.assertAlmostEqual(prefs.score['D1'], scoring.predictions['D1'])
        self.assertAlmostEqual(scoring.predictions['D1'], sample_mean([r.accuracy for r in other.interaction_dataset])
                               / 100.0)
        self.assertEqual(bootstrap.inquiries, 1)

    def test_newcomer_falls_back_to_prior(self):
        bootstrap = BootstrapServer([make_server('A', budget=0), make_server('B', rows=records(5))])
        scoring = BootstrapScoring(bootstrap, prior=0.5)
        prefs = build_server_preferences(bootstrap.servers['A'], [make_device('D1')], scoring)
        self.assertEqual(prefs.score['D1'], 0.5)
        self.assertEqual(scoring.fallbacks, 1)
        self.assertEqual(bootstrap.refusals, 1)

    def test_random_scoring_and_lookup(self):
        scoring = RandomScoring(np.random.default_rng(1))
        score = scoring.score(make_server('A'), make_device('D1'))
        self.assertTrue(0.0 <= score <= 1.0)
        with self.assertRaises(ValueError):
            NewcomerScoring.get_instance('GreedyScoring')

    def test_determinism(self):
        devices = [make_device('D{}'.format(i), history=((1, 0.5 + i / 10),)) for i in range(1, 4)]
        first = build_server_preferences(make_server('A'), devices, PriorScoring())
        second = build_server_preferences(make_server('A'), devices, PriorScoring())
        self.assertEqual(first, second)


class MatchingTestCase(TestCase):
    def load_problem(self):
        with open(data_path('matching_problem.json')) as problem_file:
            return MatchingProblem.from_dict(json.load(problem_file))

    def test_all_prefer_same_server(self):
        matching = run_matching({'D1': ['A', 'B'], 'D2': ['A', 'B'], 'D3': ['A', 'B']},
                                {'A': ['D1', 'D2', 'D3'], 'B': ['D1', 'D2', 'D3']}, {'A': 1, 'B': 1})
        self.assertEqual(matching.server_of('D1'), 'A')
        self.assertEqual(matching.server_of('D2'), 'B')
        self.assertIsNone(matching.server_of('D3'))

    def test_trivial_instances(self):
        matching = run_matching({'D1': ['A']}, {'A': ['D1']}, {'A': 1})
        self.assertEqual(matching.pairs(), (('D1', 'A'),))
        matching = run_matching({'D1': []}, {'A': ['D1']}, {'A': 1})
        self.assertIsNone(matching.server_of('D1'))

    def test_fixture_problem(self):
        problem = self.load_problem()
        matching = run_matching(problem, None, None)
        self.assertEqual(matching.pairs(), (('D1', 'B'), ('D2', 'A')))
        self.assertEqual(matching.proposals, 5)
        self.assertTrue(is_stable(matching, problem))
        self.assertEqual(brute_force_stable(problem), frozenset({matching}))

    def test_malformed(self):
        with self.assertRaises(MalformedPreferencesError):
            run_matching({'D1': ['Z']}, {'A': ['D1']}, {'A': 1})
        with self.assertRaises(MalformedPreferencesError):
            run_matching({'D1': ['A', 'A']}, {'A': ['D1']}, {'A': 1})
        with self.assertRaises(MalformedPreferencesError):
            run_matching({'D1': ['A']}, {'A': ['D1']}, {})

    def test_blocking_pair(self):
        problem = MatchingProblem.build({'D1': ['A'], 'D2': ['A']}, {'A': ['D1', 'D2']}, {'A': 1})
        unstable = Matching.from_assignment({'D2': 'A'}, ['D1', 'D2'], ['A'])
        self.assertTrue(is_blocking_pair(unstable, 'D1', 'A', problem))
        self.assertFalse(is_blocking_pair(unstable, 'D2', 'A', problem))
        self.assertFalse(is_stable(unstable, problem))
        empty = Matching.from_assignment({}, ['D1', 'D2'], ['A'])
        self.assertFalse(is_stable(empty, problem))
        matching = run_matching(problem, None, None)
        self.assertFalse(any(is_blocking_pair(matching, d, 'A', problem) for d in ('D1', 'D2')))

    def test_oracle_bounds(self):
        devices = {'D{}'.format(i): ['A'] for i in range(9)}
        problem = MatchingProblem.build(devices, {'A': list(devices)}, {'A': 3})
        with self.assertRaises(OracleBoundError):
            brute_force_stable(problem)

    def test_no_mutual_listing(self):
        problem = MatchingProblem.build({'D1': ['A'], 'D2': []}, {'A': ['D2']}, {'A': 1})
        self.assertEqual(brute_force_stable(problem),
                         frozenset({Matching.from_assignment({}, ['D1', 'D2'], ['A'])}))

    def test_zero_capacity_server(self):
        problem = MatchingProblem.build({'D1': ['A'], 'D2': ['A', 'B']}, {'A': ['D1', 'D2'], 'B': ['D2']},
                                        {'A': 0, 'B': 1})
        matching = run_matching(problem, None, None)
        self.assertEqual(matching.pairs(), (('D2', 'B'),))
        self.assertFalse(is_blocking_pair(matching, 'D1', 'A', problem))
        self.assertTrue(is_stable(matching, problem))
        self.assertEqual(brute_force_stable(problem), frozenset({matching}))

    def test_malformed_values(self):
        with self.assertRaises(MalformedPreferencesError):
            MatchingProblem.from_dict({'devices': {'D1': ['A']}, 'servers': {'A': ['D1']}, 'capacities': {'A': 'x'}})
        with self.assertRaises(MalformedPreferencesError):
            MatchingProblem.from_dict({'devices': {'D1': 5}, 'servers': {'A': ['D1']}, 'capacities': {'A': 1}})
        with self.assertRaises(MalformedPreferencesError):
            MatchingProblem.from_dict({'devices': {'D1': 'A'}, 'servers': {'A': ['D1']}, 'capacities': {'A': 1}})
        with self.assertRaises(MalformedPreferencesError):
            MatchingProblem.from_dict({'devices': ['D1'], 'servers': {}, 'capacities': {}})

    def check_against_oracle(self, rng, device_counts, instances):
        """
        deferred acceptance is stable, in the oracle set, device optimal and unaffected by queue discards
        """
        for _ in range(instances):
            devices = ['D{}'.format(i) for i in range(int(rng.integers(*device_counts)))]
            servers = ['S{}'.format(i) for i in range(int(rng.integers(1, 4)))]
            device_prefs = {d: [servers[i] for i in rng.permutation(len(servers))[:rng.integers(0, len(servers) + 1)]]
                            for d in devices}
            server_prefs = {s: [devices[i] for i in rng.permutation(len(devices))[:rng.integers(0, len(devices) + 1)]]
                            for s in servers}
            capacities = {s: int(rng.integers(0, 3)) for s in servers}
            problem = MatchingProblem.build(device_prefs, server_prefs, capacities)

            matching = run_matching(problem, None, None)
            audit_matching(matching, capacities)
            self.assertTrue(is_stable(matching, problem))
            stable = brute_force_stable(problem)
            self.assertIn(matching, stable)
            for other in stable:
                for device in devices:
                    self.assertLessEqual(device_rank(problem, device, matching.server_of(device)),
                                         device_rank(problem, device, other.server_of(device)))
            self.assertEqual(run_matching(problem, None, None, discard_lower_ranked=False), matching)
            self.assertLessEqual(matching.proposals, sum(len(p) for p in device_prefs.values()))

    def test_random_instances_against_oracle(self):
        self.check_against_oracle(np.random.default_rng(2024), (1, 6), 1000)

    def test_large_instances_against_oracle(self):
        self.check_against_oracle(np.random.default_rng(77), (6, 9), 25)

    def test_audit(self):
        over = Matching.from_assignment({'D1': 'A', 'D2': 'A'}, ['D1', 'D2'], ['A'])
        with self.assertRaises(AuditError):
            audit_matching(over, {'A': 1})
        broken = Matching(frozendict({'D1': 'A'}), frozendict({'A': frozenset(), 'B': frozenset({'D1'})}))
        with self.assertRaises(AuditError):
            audit_matching(broken, {'A': 1, 'B': 1})

    def test_problem_round_trip(self):
        problem = self.load_problem()
        self.assertEqual(MatchingProblem.from_dict(problem.to_dict()), problem)


class TrainerTestCase(TestCase):
    def setUp(self):
        self.params = default_config().proxy

    def test_accuracy_proxy(self):
        self.assertAlmostEqual(accuracy_proxy(make_device(data_size=100, labels=(1,)), 0, None, self.params), 0.35)
        self.assertAlmostEqual(accuracy_proxy(make_device(data_size=450, labels=(1, 2, 3, 4)), 7, None,
                                              self.params), 0.99)
        adversarial = MagicMock()
        adversarial.uniform.return_value = -1.0
        self.assertAlmostEqual(accuracy_proxy(make_device(data_size=100, labels=(1,)), 0, adversarial,
                                              self.params), 0.05)

    def test_get_instance(self):
        self.assertIsInstance(LocalTrainer.get_instance('AccuracyProxyTrainer', self.params), AccuracyProxyTrainer)
        with self.assertRaises(ValueError):
            LocalTrainer.get_instance('LocalTrainer', self.params)

    @patch('core.utils.requests.post')
    def test_remote_trainer(self, mocked_post):
        mocked_post.return_value.status_code = 200
        mocked_post.return_value.json.return_value = {'accuracy': 0.81}
        accuracy = RemoteTrainer(self.params).evaluate(make_device(), 2, None, round_index=3)
        self.assertAlmostEqual(accuracy, 0.81)
        body = json.loads(mocked_post.call_args[1]['data'])
        self.assertEqual(body['participation_count'], 2)
        self.assertEqual(body['round'], 3)

    @patch('core.utils.requests.post')
    def test_remote_trainer_failure(self, mocked_post):
        mocked_post.side_effect = requests.exceptions.ConnectionError('down')
        with self.assertRaises(TrainerError):
            RemoteTrainer(self.params).evaluate(make_device(), 0, None)
        mocked_post.side_effect = None
        mocked_post.return_value.status_code = 200
        mocked_post.return_value.json.return_value = {'accuracy': 3}
        with self.assertRaises(TrainerError):
            RemoteTrainer(self.params).evaluate(make_device(), 0, None)


class ConfigTestCase(TestCase):
    def test_defaults(self):
        config = default_config()
        self.assertEqual(config.rounds, 15)
        self.assertEqual(config.repetitions, 5)
        self.assertEqual(config.population.initial_devices, 100)
        self.assertEqual(config.servers.clients_per_server, 10)
        self.assertEqual(config.arms, EXPERIMENT_DEFAULTS['arms'])

    def test_load_file_with_overrides(self):
        config = load_config(data_path('small_experiment.toml'), {'rounds': 1})
        self.assertEqual(config.seed, 7)
        self.assertEqual(config.rounds, 1)
        self.assertEqual(config.population.initial_devices, 20)
        self.assertEqual(config.population.regions, EXPERIMENT_DEFAULTS['population']['regions'])

    def test_documented_config_is_default(self):
        config = load_config(os.path.join(settings.BASE_DIR, 'config', 'experiment.toml'))
        self.assertEqual(config, default_config())

    def test_invalid(self):
        with self.assertRaises(ConfigError) as context:
            load_config(data_path('bad_experiment.toml'))
        self.assertTrue(any(error.startswith('rounds:') for error in context.exception.errors))
        self.assertTrue(any(error.startswith('latency.min:') for error in context.exception.errors))

    def test_unknown_key(self):
        with self.assertRaises(ConfigError) as context:
            default_config(population={'colour': 'red'})
        self.assertIn('population.colour: unknown key', context.exception.errors)
        with self.assertRaises(ConfigError):
            default_config(arms=['greedy'])
        with self.assertRaises(ConfigError):
            default_config(trainer='Nothing')

    def test_unreadable_file(self):
        with self.assertRaises(ConfigError):
            load_config(data_path('missing.toml'))

    def test_round_trip(self):
        config = default_config(seed=3)
        self.assertEqual(config.replace(), config)
        self.assertEqual(config.replace(seed=4).seed, 4)


class SimulationTestCase(TestCase):
    def setUp(self):
        self.config = default_config(**SMALL_CONFIG)

    def test_population(self):
        config = default_config()
        initial = generate_population(config, 0)
        self.assertEqual(len(initial.devices), 100)
        arrivals = generate_population(config, 3)
        self.assertEqual([device.device_id for device in arrivals.devices],
                         ['D{:05d}'.format(i) for i in range(120, 130)])
        self.assertTrue(all(device.is_newcomer for device in arrivals.devices))
        self.assertEqual(generate_population(config, 3), arrivals)
        self.assertEqual(generate_servers(config), generate_servers(config))

    def test_population_ranges(self):
        population = generate_population(default_config(), 0)
        for device in population.devices:
            self.assertTrue(300 <= device.cpu_capacity <= 700)
            self.assertTrue(400 <= device.ram_capacity <= 900)
            self.assertTrue(500 <= device.bandwidth_capacity <= 900)
            self.assertTrue(1 <= len(device.data_labels) <= 4)
            self.assertTrue(100 <= device.data_size <= 450)
            self.assertEqual(device.test_data_size, aggregation.test_data_size(device.data_size))
        self.assertTrue(all(0.1 <= value <= 5.0 for value in population.latency.values()))

    def test_vanilla_select(self):
        population = generate_population(default_config(), 0)
        servers = [make_server('S1', capacity=10), make_server('S2', capacity=10)]
        matching = vanilla_select(population.devices, servers, 10, np.random.default_rng(1))
        self.assertEqual(len(matching.pairs()), 20)
        self.assertEqual(matching, vanilla_select(population.devices, servers, 10, np.random.default_rng(1)))
        self.assertEqual(vanilla_select(population.devices, servers, 0, np.random.default_rng(1)).pairs(), ())

    def test_first_round_fills_servers(self):
        state = SimulationState(default_config(rounds=1, repetitions=1), 0)
        metrics = run_round(state, 1)
        for server in metrics.arms[ARM_FEDMINT].servers.values():
            self.assertEqual(len(server.cohort), 10)
        for server_id, server in state.arms[ARM_FEDMINT].servers.items():
            self.assertEqual(len(server.interaction_dataset), len(metrics.arms[ARM_FEDMINT].servers[server_id].cohort))

    def test_records_first_training_round_only(self):
        state = SimulationState(self.config, 0)
        for round_index in range(1, self.config.rounds + 1):
            run_round(state, round_index)
        for arm in state.arms.values():
            self.assertEqual(len(arm.pooled_rows()), len(arm.histories))
        trainings = sum(len(history) for arm in state.arms.values() for history in arm.histories.values())
        self.assertGreater(trainings, sum(len(arm.pooled_rows()) for arm in state.arms.values()))

    def test_zero_budget_falls_back(self):
        config = default_config(**dict(SMALL_CONFIG, servers={'clients_per_server': 4, 'initial_calls_budget': 0}))
        state = SimulationState(config, 0)
        run_round(state, 1)
        metrics = run_round(state, 2)
        self.assertEqual(metrics.arms[ARM_FEDMINT].bootstrap.inquiries, 0)
        self.assertGreater(metrics.arms[ARM_FEDMINT].bootstrap.refusals, 0)

    def test_arrivals_and_audit(self):
        state = SimulationState(self.config, 0)
        for round_index in range(1, self.config.rounds + 1):
            metrics = run_round(state, round_index)
            self.assertEqual(len(state.devices), 20 + 4 * round_index)
            for arm in metrics.arms.values():
                audit_matching(arm.matching, {server_id: 4 for server_id in arm.servers})
                cohorts = [device for server in arm.servers.values() for device in server.cohort]
                self.assertEqual(len(cohorts), len(set(cohorts)))

    def test_run_experiment(self):
        report = run_experiment(self.config)
        self.assertEqual(len(report.repetitions), 2)
        self.assertTrue(all(len(rep.rounds) == 3 for rep in report.repetitions))
        self.assertEqual(report, run_experiment(self.config))
        self.assertEqual(set(report.summary['arms']), {ARM_FEDMINT, ARM_VANILLA, ARM_RANDOM_BOOTSTRAP})
        self.assertIn(ARM_FEDMINT, report.summary['comparison_with_vanilla'])
        self.assertIsNone(report.summary['arms'][ARM_VANILLA]['final_mse'])

    def test_minimal_experiment(self):
        report = run_experiment(self.config.replace(rounds=1, repetitions=1, arms=[ARM_VANILLA]))
        self.assertEqual(list(report.summary['arms']), [ARM_VANILLA])
        self.assertEqual(report.summary['comparison_with_vanilla'], {})

    @patch('core.simulation.run_matching')
    def test_round_error_context(self, mocked_matching):
        mocked_matching.side_effect = AuditError('proposal bound exceeded')
        with self.assertRaises(SimulationError) as context:
            run_repetition(self.config)
        self.assertEqual(context.exception.round_index, 1)
        self.assertEqual(context.exception.arm, ARM_FEDMINT)


class ExperimentOutcomeTestCase(TestCase):
    """
    paired comparison of the arms over 20 repetitions of the default experiment
    """

    @classmethod
    def setUpClass(cls):
        super(ExperimentOutcomeTestCase, cls).setUpClass()
        cls.config = default_config(repetitions=20)
        cls.report = run_experiment(cls.config)

    def cells(self, report, arm, first_round=1, last_round=15):
        return [(metrics.round, server_id, server.global_accuracy)
                for metrics in report.rounds if first_round <= metrics.round <= last_round
                for server_id, server in sorted(metrics.arms[arm].servers.items())]

    def test_reward_dominance(self):
        wins = sum(repetition_mean_reward(report, ARM_FEDMINT) >= repetition_mean_reward(report, ARM_VANILLA)
                   for report in self.report.repetitions)
        self.assertGreaterEqual(wins / 20, 0.9)

    def test_accuracy_dominance(self):
        wins = total = 0
        for report in self.report.repetitions:
            for (_, _, fedmint), (_, _, vanilla) in zip(self.cells(report, ARM_FEDMINT, 3),
                                                        self.cells(report, ARM_VANILLA, 3)):
                total += 1
                wins += fedmint >= vanilla
        self.assertGreaterEqual(wins / total, 0.9)

    def test_bootstrap_ablation(self):
        wins = 0
        for report in self.report.repetitions:
            bootstrap = np.mean([value for _, _, value in self.cells(report, ARM_FEDMINT, 1, 5)])
            random = np.mean([value for _, _, value in self.cells(report, ARM_RANDOM_BOOTSTRAP, 1, 5)])
            wins += random <= bootstrap
        self.assertGreaterEqual(wins / 20, 0.8)

    def test_bootstrap_mse(self):
        self.assertLessEqual(self.report.summary['arms'][ARM_FEDMINT]['final_mse'], 0.02)
        self.assertTrue(all(value is not None for value in self.report.summary['arms'][ARM_FEDMINT]['mse_by_round']))

    def test_bootstrap_mse_falls_with_data(self):
        improved = 0
        for report in self.report.repetitions:
            mse = {metrics.round: metrics.arms[ARM_FEDMINT].bootstrap.mse for metrics in report.rounds}
            self.assertLessEqual(mse[5], 0.02)
            improved += mse[15] <= mse[1]
        self.assertGreaterEqual(improved / 20, 0.7)

    def test_per_server_comparison(self):
        servers = self.report.summary['comparison_with_vanilla'][ARM_FEDMINT]['servers']
        self.assertEqual(sorted(servers), ['S1', 'S2'])
        for gains in servers.values():
            self.assertLessEqual(gains['min_round_reward_gain_pct'], gains['max_round_reward_gain_pct'])
            self.assertIsNotNone(gains['final_accuracy_gain_pct'])

    def test_every_round_audited(self):
        for report in self.report.repetitions:
            for metrics in report.rounds:
                for arm in metrics.arms.values():
                    audit_matching(arm.matching, {server_id: 10 for server_id in arm.servers})


class ReportTestCase(TestCase):
    def setUp(self):
        self.directory = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.directory)

    def test_write_report(self):
        report = run_experiment(default_config(**SMALL_CONFIG))
        write_report(report, self.directory)
        with open(os.path.join(self.directory, 'rounds.csv')) as csv_file:
            rows = list(csv.reader(csv_file))
        self.assertEqual(tuple(rows[0]), ROUNDS_HEADER)
        self.assertEqual(len(rows) - 1, 2 * 3 * 3 * 2)
        with open(os.path.join(self.directory, 'summary.json')) as json_file:
            summary = json.load(json_file)
        self.assertEqual(summary['config']['seed'], 7)
        for name in ('rewards.svg', 'accuracy.svg', 'mse.svg'):
            self.assertTrue(os.path.exists(os.path.join(self.directory, name)))
        for repetition in report.repetitions:
            path = os.path.join(self.directory, 'interactions_rep{}.csv'.format(repetition.rep))
            self.assertEqual(load_interaction_csv(path), repetition.interactions)

    def test_no_interactions_without_fedmint(self):
        report = run_experiment(default_config(**dict(SMALL_CONFIG, arms=[ARM_VANILLA])))
        write_report(report, self.directory, charts=False)
        self.assertEqual(sorted(os.listdir(self.directory)), ['rounds.csv', 'summary.json'])

    def test_line_chart(self):
        svg = line_chart('Global accuracy', 'accuracy', [('fedmint', [0.5, 0.6, None]), ('vanilla', [0.4, 0.4, 0.5])])
        self.assertTrue(svg.startswith('<svg'))
        self.assertEqual(svg.count('<polyline'), 2)
        self.assertIn('fedmint', svg)


class CommandTestCase(TestCase):
    def setUp(self):
        self.directory = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.directory)

    def call(self, *args):
        out = StringIO()
        call_command('fedmint', *args, stdout=out)
        return out.getvalue()

    def returncode(self, *args):
        with self.assertRaises(CommandError) as context:
            self.call(*args)
        return context.exception.returncode

    def write(self, name, content):
        path = os.path.join(self.directory, name)
        with open(path, 'w') as out_file:
            out_file.write(content)
        return path

    def test_run_deterministic(self):
        outputs = []
        for name in ('first', 'second'):
            out = os.path.join(self.directory, name)
            self.call('run', '--config', data_path('small_experiment.toml'), '--seed', '7', '--rounds', '2',
                      '--out', out, '--no-charts')
            with open(os.path.join(out, 'rounds.csv'), 'rb') as csv_file:
                outputs.append(csv_file.read())
            self.assertFalse(os.path.exists(os.path.join(out, 'rewards.svg')))
        self.assertEqual(outputs[0], outputs[1])
        self.assertEqual(outputs[0].count(b'\n'), 1 + 2 * 2 * 3 * 2)

    def test_run_bad_config(self):
        self.assertEqual(self.returncode('run', '--config', data_path('bad_experiment.toml')), 2)
        self.assertEqual(self.returncode('run', '--config', data_path('small_experiment.toml'), '--jobs', '0'), 2)

    @patch('core.management.commands.fedmint.run_experiment')
    def test_run_failure(self, mocked_run):
        mocked_run.side_effect = SimulationError('trainer down', 1, ARM_FEDMINT)
        self.assertEqual(self.returncode('run', '--config', data_path('small_experiment.toml'),
                                         '--out', self.directory), 1)

    def test_tree(self):
        output = self.call('tree', data_path('interaction_records.csv'), '--min-instances', '3', '--cv', '10')
        self.assertIn('n=14 mean=65.54', output)
        self.assertIn('cv=21.31%', output)
        self.assertIn('Provider (n=14, mean=65.54)', output)
        self.assertIn('P2 -> leaf', output)

    def test_tree_errors(self):
        self.assertEqual(self.returncode('tree', self.write('empty.csv', '')), 2)
        self.assertEqual(self.returncode('tree', data_path('missing.csv')), 2)
        single = self.write('single.csv', 'provider,region,device_type,accuracy\nP1,Asia,Phone,70\n')
        self.assertIn('leaf 70.00 (n=1)', self.call('tree', single))
        self.assertEqual(self.returncode('tree', data_path('interaction_records.csv'), '--cv', '0'), 2)
        self.assertEqual(self.returncode('tree', data_path('interaction_records.csv'), '--min-instances', '0'), 2)

    def test_tree_of_run_output(self):
        self.call('run', '--config', data_path('small_experiment.toml'), '--rounds', '2', '--reps', '1',
                  '--out', self.directory, '--no-charts')
        output = self.call('tree', os.path.join(self.directory, 'interactions_rep0.csv'))
        self.assertIn('sd_after_split', output)

    def test_match(self):
        output = self.call('match', data_path('matching_problem.json'), '--oracle')
        self.assertIn('D1 -> B', output)
        self.assertIn('D2 -> A', output)
        self.assertIn('D3 -> -', output)
        self.assertIn('stable: true', output)
        self.assertIn('in oracle set: true', output)
        self.assertIn('device optimal: true', output)

    def test_match_empty_problem(self):
        self.assertIn('stable: true', self.call('match', self.write('empty.json', '{}')))

    def test_match_errors(self):
        self.assertEqual(self.returncode('match', self.write('broken.json', '{"devices": ')), 2)
        self.assertEqual(self.returncode('match', self.write('unknown.json', '{"devices": {"D1": ["Z"]}}')), 2)
        devices = {'D{}'.format(i): ['A'] for i in range(9)}
        large = self.write('large.json', json.dumps({'devices': devices, 'servers': {'A': list(devices)},
                                                     'capacities': {'A': 2}}))
        self.assertIn('stable: true', self.call('match', large))
        self.assertEqual(self.returncode('match', large, '--oracle'), 3)
        capacity = self.write('capacity.json', json.dumps({'devices': {'D1': ['A']}, 'servers': {'A': ['D1']},
                                                           'capacities': {'A': 'x'}}))
        self.assertEqual(self.returncode('match', capacity), 2)
        ranking = self.write('ranking.json', json.dumps({'devices': {'D1': 5}, 'servers': {'A': ['D1']},
                                                         'capacities': {'A': 1}}))
        self.assertEqual(self.returncode('match', ranking), 2)

    def test_match_zero_capacity(self):
        problem = self.write('zero.json', json.dumps({'devices': {'D1': ['A'], 'D2': ['A', 'B']},
                                                      'servers': {'A': ['D1', 'D2'], 'B': ['D2']},
                                                      'capacities': {'A': 0, 'B': 1}}))
        output = self.call('match', problem, '--oracle')
        self.assertIn('D1 -> -', output)
        self.assertIn('D2 -> B', output)
        self.assertIn('stable: true', output)
        self.assertIn('oracle: 1 stable matchings', output)


class ExperimentAPITestCase(TestCase):
    def setUp(self):
        self.client = APIClient()

    @patch('core.views.run_experiment.delay')
    def test_create_schedules_run(self, mocked_delay):
        response = self.client.post('/experiments/', {'name': 'small', 'config': SMALL_CONFIG}, format='json')
        self.assertEqual(response.status_code, status.HTTP_201_CREATED)
        experiment = Experiment.objects.get(id=response.json()['id'])
        self.assertEqual(experiment.seed, 7)
        self.assertEqual(experiment.config['population']['initial_devices'], 20)
        self.assertEqual(experiment.config['population']['regions'],
                         list(EXPERIMENT_DEFAULTS['population']['regions']))
        mocked_delay.assert_called_once_with(experiment.id)

    @patch('core.views.run_experiment.delay')
    def test_create_invalid(self, mocked_delay):
        response = self.client.post('/experiments/', {'config': {'rounds': 0}}, format='json')
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)
        self.assertIn('config', response.json())
        self.assertFalse(mocked_delay.called)

    def test_task_and_rounds(self):
        config = default_config(**SMALL_CONFIG).to_dict()
        experiment = Experiment.objects.create(name='small', seed=7, config=config)
        run_experiment_task(experiment.id)
        experiment.refresh_from_db()
        self.assertEqual(experiment.status, 'done')
        self.assertEqual(RoundMetric.objects.filter(experiment=experiment).count(), 2 * 3 * 3 * 2)
        self.assertIn(ARM_FEDMINT, experiment.summary['arms'])

        response = self.client.get('/experiments/{}/rounds/'.format(experiment.id),
                                   {'arm': ARM_VANILLA, 'round_min': 2})
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(response.json()['count'], 2 * 2 * 2)
        self.assertTrue(all(row['round'] >= 2 for row in response.json()['results']))

        response = self.client.get('/experiments/{}/'.format(experiment.id))
        self.assertEqual(response.json()['status'], 'done')
        self.assertEqual(self.client.get('/experiments/').json()['count'], 1)

    def test_task_failure(self):
        config = default_config(**SMALL_CONFIG).to_dict()
        config['rounds'] = 0
        experiment = Experiment.objects.create(config=config)
        run_experiment_task(experiment.id)
        experiment.refresh_from_db()
        self.assertEqual(experiment.status, 'failed')

    def test_run_repetition_task(self):
        rows = run_repetition_task(default_config(**SMALL_CONFIG).to_dict(), 1)
        self.assertEqual(len(rows), 3 * 3 * 2)
        self.assertTrue(all(row['rep'] == 1 for row in rows))


class ToolsAPITestCase(TestCase):
    def setUp(self):
        self.client = APIClient()

    def test_tree(self):
        rows = [{'provider': r.provider, 'region': r.region, 'device_type': r.device_type, 'accuracy': r.accuracy}
                for r in interaction_rows()]
        response = self.client.post('/tree/', {'rows': rows}, format='json')
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        data = response.json()
        self.assertEqual(data['tree']['attribute'], 'provider')
        self.assertEqual(data['summary']['n'], 14)
        self.assertAlmostEqual(data['sdr'][0]['sdr'], 5.83, delta=0.03)
        self.assertTrue(data['text'].startswith('Provider'))

    def test_tree_invalid(self):
        response = self.client.post('/tree/', {'rows': []}, format='json')
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)
        rows = [{'provider': 'P1', 'region': 'Asia', 'device_type': 'Phone', 'accuracy': 70.0}]
        response = self.client.post('/tree/', {'rows': rows, 'cv_threshold': 0}, format='json')
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)
        self.assertIn('cv_threshold', response.json())

    def test_match(self):
        with open(data_path('matching_problem.json')) as problem_file:
            problem = json.load(problem_file)
        problem['oracle'] = True
        response = self.client.post('/match/', problem, format='json')
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(response.json()['assignment'], {'D1': 'B', 'D2': 'A', 'D3': None})
        self.assertTrue(response.json()['stable'])
        self.assertEqual(response.json()['oracle'], {'stable_matchings': 1, 'member': True})

    def test_match_errors(self):
        response = self.client.post('/match/', {'devices': {'D1': ['Z']}, 'servers': {}, 'capacities': {}},
                                    format='json')
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)
        devices = {'D{}'.format(i): ['A'] for i in range(9)}
        response = self.client.post('/match/', {'devices': devices, 'servers': {'A': list(devices)},
                                                'capacities': {'A': 2}, 'oracle': True}, format='json')
        self.assertEqual(response.status_code, status.HTTP_422_UNPROCESSABLE_ENTITY)
