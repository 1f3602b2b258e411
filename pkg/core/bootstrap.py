"""
The central bootstrapping server.

Federated servers know nothing about devices that never trained for them. On
request the bootstrapping server pools the interaction datasets uploaded by
all active servers, fits a regression tree grown by standard deviation
reduction over the categorical device features and predicts the accuracy of
the newcomer. Servers pay one call per inquiry and earn calls for every
inquiry they contribute data to.
"""
import csv
import logging
import math
from dataclasses import dataclass, replace
from fractions import Fraction
from itertools import chain
from typing import Tuple, Union

import numpy as np
from frozendict import frozendict

from core.domain import FEATURES, AccuracyFraction, InteractionRecord
from core.exceptions import (BudgetExhaustedError, DatasetError, DomainValidationError, NoTrainingDataError,
                             RangeError)

logger = logging.getLogger(__name__)

CSV_HEADER = ('provider', 'region', 'device_type', 'accuracy')

ATTRIBUTE_LABELS = frozendict({
    'provider': 'Provider',
    'region': 'Region',
    'device_type': 'DeviceType',
})


@dataclass(frozen=True)
class Leaf:
    value: float
    count: int = 1


@dataclass(frozen=True)
class Split:
    attribute: str
    branches: frozendict
    # training mean and size of the rows that reached this node
    value: float
    count: int


TreeNode = Union[Leaf, Split]


@dataclass(frozen=True)
class Contribution:
    server_id: str
    uploaded_rows: int
    data_rate: Fraction
    calls_granted: int


@dataclass(frozen=True)
class InquiryOutcome:
    predicted_accuracy: AccuracyFraction
    contributors: Tuple[Contribution, ...]


class BootstrapDataset:
    """
    Interaction records encoded column-wise: one integer code array per
    feature (categories sorted lexicographically) and the target in percent.
    """

    def __init__(self, rows, features=FEATURES, target='accuracy'):
        self.rows = tuple(rows)
        self.features = tuple(features)
        self.target_name = target
        self.categories = {}
        self.codes = {}
        for attribute in self.features:
            values = [getattr(row, attribute) for row in self.rows]
            categories = sorted(set(values))
            lookup = {category: code for code, category in enumerate(categories)}
            self.categories[attribute] = tuple(categories)
            self.codes[attribute] = np.array([lookup[value] for value in values], dtype=np.int64)
        self.target = np.array([getattr(row, target) for row in self.rows], dtype=float)

    def __len__(self):
        return len(self.rows)

    def check_attribute(self, attribute):
        if attribute not in self.features:
            raise DomainValidationError('attribute', 'unknown attribute {}'.format(attribute))


def _as_dataset(rows):
    return rows if isinstance(rows, BootstrapDataset) else BootstrapDataset(rows)


def _values(values):
    values = np.asarray(list(values), dtype=float)
    if values.size == 0:
        raise RangeError('statistics of an empty sample are undefined')
    return values


def population_sd(values):
    return float(np.std(_values(values)))


def sample_mean(values):
    return float(np.mean(_values(values)))


def coefficient_of_variation(values):
    values = _values(values)
    mean = float(np.mean(values))
    if mean == 0:
        raise ZeroDivisionError('coefficient of variation of a zero-mean sample')
    return float(np.std(values)) / mean * 100.0


def _weighted_sd(target, codes):
    _, inverse = np.unique(codes, return_inverse=True)
    inverse = inverse.reshape(-1)
    counts = np.bincount(inverse)
    means = np.bincount(inverse, weights=target) / counts
    deviations = target - means[inverse]
    sds = np.sqrt(np.bincount(inverse, weights=deviations * deviations) / counts)
    return float(np.sum(counts / target.size * sds))


def sd_after_split(rows, attribute):
    """
    frequency weighted mean of the target SD inside each category of attribute
    """
    dataset = _as_dataset(rows)
    dataset.check_attribute(attribute)
    if not len(dataset):
        raise RangeError('statistics of an empty sample are undefined')
    return _weighted_sd(dataset.target, dataset.codes[attribute])


def sdr(rows, attribute):
    dataset = _as_dataset(rows)
    return population_sd(dataset.target) - sd_after_split(dataset, attribute)


def _grow(dataset, index, attributes, min_instances, cv_threshold):
    target = dataset.target[index]
    mean = float(np.mean(target))
    count = int(index.size)
    if count < min_instances or not attributes:
        return Leaf(mean, count)
    sd = float(np.std(target))
    if sd == 0 or sd / mean * 100.0 < cv_threshold:
        return Leaf(mean, count)

    best, best_reduction = None, None
    for attribute in attributes:
        reduction = sd - _weighted_sd(target, dataset.codes[attribute][index])
        if best is None or reduction > best_reduction:
            best, best_reduction = attribute, reduction

    remaining = tuple(attribute for attribute in attributes if attribute != best)
    codes = dataset.codes[best][index]
    branches = {}
    for code in np.unique(codes):
        category = dataset.categories[best][code]
        branches[category] = _grow(dataset, index[codes == code], remaining, min_instances, cv_threshold)
    return Split(best, frozendict(branches), mean, count)


def build_tree(rows, min_instances=3, cv_threshold=10.0):
    """
    top-down construction, a node becomes a leaf holding the mean accuracy of its rows as soon as
    it has fewer than min_instances rows, its CV drops below cv_threshold or no attribute is left.
    Otherwise it splits on the attribute of largest SDR, ties go to the earlier attribute of the schema.
    :param rows: interaction records or a BootstrapDataset
    :param min_instances: smallest node that may still split
    :param cv_threshold: coefficient of variation in percent
    :return: TreeNode
    """
    dataset = _as_dataset(rows)
    if not len(dataset):
        raise NoTrainingDataError('no training data')
    if min_instances < 1 or cv_threshold <= 0:
        raise RangeError('min_instances must be at least 1 and cv_threshold positive')
    return _grow(dataset, np.arange(len(dataset)), dataset.features, min_instances, cv_threshold)


def predict(tree, features):
    """
    walks the tree by the categories of features, an unseen category stops the walk and
    yields the training mean of the node it stopped at
    :return: accuracy in percent
    """
    node = tree
    while isinstance(node, Split):
        child = node.branches.get(features.get(node.attribute))
        if child is None:
            return node.value
        node = child
    return node.value


def kfold_mse(rows, k=10, seed=0, min_instances=3, cv_threshold=10.0):
    """
    k-fold cross validated mean squared error of the tree, errors in fraction units
    :return: (tuple of per-fold MSE, mean of them)
    """
    rows = tuple(rows)
    if k < 2:
        raise RangeError('k must be at least 2')
    if len(rows) < k:
        raise RangeError('{} rows are not enough for {} folds'.format(len(rows), k))

    permutation = np.random.default_rng(seed).permutation(len(rows))
    fold_mses = []
    for fold in np.array_split(permutation, k):
        test = set(fold.tolist())
        train = [row for position, row in enumerate(rows) if position not in test]
        tree = build_tree(train, min_instances, cv_threshold)
        errors = [(predict(tree, rows[position].features) - rows[position].accuracy) / 100.0
                  for position in fold]
        fold_mses.append(float(np.mean(np.square(errors))))
    return tuple(fold_mses), float(np.mean(fold_mses))


def data_rate(uploaded_size, total_uploaded):
    if total_uploaded <= 0:
        raise RangeError('total uploaded size must be positive')
    if not 0 <= uploaded_size <= total_uploaded:
        raise RangeError('uploaded size {} outside [0, {}]'.format(uploaded_size, total_uploaded))
    return Fraction(uploaded_size, total_uploaded)


def update_calls(calls_prev, ccont, dr):
    """
    bootstrapping calls of a server after it contributed to an inquiry
    :param calls_prev: calls before the contribution
    :param ccont: cumulative contributions of the server, this one included
    :param dr: data rate of the server for this inquiry
    :return: new number of calls
    """
    if calls_prev < 0 or ccont < 0 or dr < 0:
        raise RangeError('update_calls takes non-negative inputs only')
    return int(calls_prev + ccont + math.floor(ccont * dr) + 1)


def uploaded_rows(server, upload_fraction=1.0):
    """
    the part of its interaction dataset a server uploads, the most recent records first
    """
    dataset = server.interaction_dataset
    if upload_fraction >= 1.0 or not dataset:
        return dataset
    size = int(math.ceil(len(dataset) * upload_fraction))
    return dataset[len(dataset) - size:]


def _default_tree_builder(min_instances, cv_threshold):
    def builder(datasets):
        return build_tree(tuple(chain.from_iterable(datasets)), min_instances, cv_threshold)
    return builder


def handle_inquiry(requesting_server, newcomer_features, all_servers, min_instances=3, cv_threshold=10.0,
                   upload_fraction=1.0, tree_builder=None):
    """
    one inquiry of a federated server about a newcomer device
    :param requesting_server: ServerProfile asking for the prediction
    :param newcomer_features: mapping of feature name to category
    :param all_servers: active servers, the requester included
    :param tree_builder: callable taking the uploaded datasets and returning a tree
    :return: (InquiryOutcome, tuple of updated servers in the order of all_servers)
    """
    servers = list(all_servers)
    requester = next((server for server in servers if server.server_id == requesting_server.server_id),
                     requesting_server)
    if requester.calls_budget < 1:
        raise BudgetExhaustedError('server {} has no bootstrapping calls left'.format(requester.server_id))

    uploads = [(server, uploaded_rows(server, upload_fraction)) for server in servers]
    total = sum(len(rows) for _, rows in uploads)
    if total == 0:
        raise NoTrainingDataError('no server uploaded interaction records')

    updated = []
    contributors = []
    for server, rows in uploads:
        if server.server_id == requester.server_id:
            updated.append(replace(server, calls_budget=server.calls_budget - 1))
            continue
        if not rows:
            updated.append(server)
            continue
        rate = data_rate(len(rows), total)
        ccont = server.cumulative_contributions + 1
        calls = update_calls(server.calls_budget, ccont, rate)
        contributors.append(Contribution(server.server_id, len(rows), rate, calls - server.calls_budget))
        updated.append(replace(server, calls_budget=calls, cumulative_contributions=ccont))
    if all(server.server_id != requester.server_id for server in servers):
        updated.append(replace(requester, calls_budget=requester.calls_budget - 1))

    builder = tree_builder or _default_tree_builder(min_instances, cv_threshold)
    tree = builder(tuple(rows for _, rows in uploads if rows))
    predicted = min(max(predict(tree, newcomer_features) / 100.0, 0.0), 1.0)
    return InquiryOutcome(AccuracyFraction(predicted), tuple(contributors)), tuple(updated)


class BootstrapServer:
    """
    Owns the registry of active federated servers and serves their
    inquiries one after another. The last tree is reused while every
    uploaded dataset is the very same object as in the previous inquiry.
    """

    def __init__(self, servers, min_instances=3, cv_threshold=10.0, upload_fraction=1.0):
        self.servers = {server.server_id: server for server in sorted(servers, key=lambda s: s.server_id)}
        self.min_instances = min_instances
        self.cv_threshold = cv_threshold
        self.upload_fraction = upload_fraction
        self.inquiries = 0
        self.refusals = 0
        self._cached_datasets = None
        self._cached_tree = None

    def _tree_for(self, datasets):
        cached = self._cached_datasets
        if cached is not None and len(cached) == len(datasets) and all(a is b for a, b in zip(cached, datasets)):
            return self._cached_tree
        self._cached_tree = build_tree(tuple(chain.from_iterable(datasets)), self.min_instances, self.cv_threshold)
        self._cached_datasets = datasets
        return self._cached_tree

    def inquire(self, server_id, features):
        """
        predicted accuracy of a newcomer for server_id, budgets of the registry are updated
        :raises BudgetExhaustedError: requester has no calls left
        :raises NoTrainingDataError: nothing to train on yet
        """
        try:
            outcome, updated = handle_inquiry(self.servers[server_id], features, list(self.servers.values()),
                                              self.min_instances, self.cv_threshold, self.upload_fraction,
                                              tree_builder=self._tree_for)
        except BudgetExhaustedError:
            self.refusals += 1
            logger.warning('inquiry of server {} refused, budget exhausted.'.format(server_id))
            raise

        self.inquiries += 1
        for server in updated:
            self.servers[server.server_id] = server
        logger.debug('server {} inquired, predicted {:.4f}, {} contributors.'.format(
            server_id, outcome.predicted_accuracy, len(outcome.contributors)))
        return outcome.predicted_accuracy

    def pooled_rows(self):
        return tuple(chain.from_iterable(server.interaction_dataset for server in self.servers.values()))


def load_interaction_csv(path):
    """
    reads interaction records, accuracy column in percent
    :raises DatasetError: wrong header, malformed row or no row at all
    """
    with open(path, newline='') as csv_file:
        reader = csv.reader(csv_file)
        header = next(reader, None)
        if header is None:
            raise DatasetError('empty dataset')
        if tuple(column.strip() for column in header) != CSV_HEADER:
            raise DatasetError('header must be {}'.format(','.join(CSV_HEADER)), row=1)

        rows = []
        for line, values in enumerate(reader, start=2):
            if not values or all(not value.strip() for value in values):
                continue
            if len(values) != len(CSV_HEADER):
                raise DatasetError('expected {} columns, got {}'.format(len(CSV_HEADER), len(values)), row=line)
            provider, region, device_type, accuracy = (value.strip() for value in values)
            if not provider or not region or not device_type:
                raise DatasetError('empty category', row=line)
            try:
                rows.append(InteractionRecord(provider, region, device_type, float(accuracy)))
            except (ValueError, DomainValidationError) as e:
                raise DatasetError(str(e), row=line)

    if not rows:
        raise DatasetError('empty dataset')
    return tuple(rows)


def dump_interaction_csv(rows, path):
    with open(path, 'w', newline='') as csv_file:
        writer = csv.writer(csv_file, lineterminator='\n')
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow([row.provider, row.region, row.device_type, '{:.2f}'.format(row.accuracy)])


def dataset_summary(rows):
    dataset = _as_dataset(rows)
    return frozendict(
        n=len(dataset),
        mean=sample_mean(dataset.target),
        sd=population_sd(dataset.target),
        cv=coefficient_of_variation(dataset.target),
    )


def sdr_table(rows):
    """
    :return: tuple of (attribute, SD after split, SDR) in schema order
    """
    dataset = _as_dataset(rows)
    sd = population_sd(dataset.target)
    table = []
    for attribute in dataset.features:
        after = sd_after_split(dataset, attribute)
        table.append((attribute, after, sd - after))
    return tuple(table)


def render_tree(tree, indent='  '):
    lines = []

    def walk(node, depth, prefix):
        pad = indent * depth
        if isinstance(node, Leaf):
            lines.append('{}{}leaf {:.2f} (n={})'.format(pad, prefix, node.value, node.count))
            return
        lines.append('{}{}{} (n={}, mean={:.2f})'.format(
            pad, prefix, ATTRIBUTE_LABELS.get(node.attribute, node.attribute), node.count, node.value))
        for category in sorted(node.branches):
            walk(node.branches[category], depth + 1, '{} -> '.format(category))

    walk(tree, 0, '')
    return '\n'.join(lines)


def tree_to_dict(tree):
    if isinstance(tree, Leaf):
        return {'value': tree.value, 'count': tree.count}
    return {
        'attribute': tree.attribute,
        'value': tree.value,
        'count': tree.count,
        'branches': {category: tree_to_dict(child) for category, child in sorted(tree.branches.items())},
    }
