"""
Many-to-one matching between client devices and federated servers.

Devices propose down their preference lists; every server keeps at most
capacity devices and answers proposals from a FIFO queue, bumping its worst
accepted device for a better proposer. The result is the device-optimal
stable matching.
"""
import logging
from collections import deque
from dataclasses import dataclass, field
from itertools import product
from typing import Optional

from frozendict import frozendict

from core.exceptions import AuditError, MalformedPreferencesError, OracleBoundError

logger = logging.getLogger(__name__)

ORACLE_MAX_DEVICES = 8
ORACLE_MAX_SERVERS = 3


@dataclass(frozen=True)
class Matching:
    # device_id -> server_id or None
    device_to_server: frozendict
    # server_id -> frozenset of device ids
    server_to_devices: frozendict
    proposals: int = field(default=0, compare=False)

    @classmethod
    def from_assignment(cls, assignment, devices=(), servers=(), proposals=0):
        """
        :param assignment: mapping device_id -> server_id or None
        :param devices: devices to list as unmatched when missing from assignment
        :param servers: servers to list even when they got nobody
        """
        device_to_server = {device: None for device in devices}
        device_to_server.update(assignment)
        server_to_devices = {server: set() for server in servers}
        for device, server in device_to_server.items():
            if server is not None:
                server_to_devices.setdefault(server, set()).add(device)
        return cls(frozendict(device_to_server),
                   frozendict({server: frozenset(members) for server, members in server_to_devices.items()}),
                   proposals)

    def server_of(self, device) -> Optional[str]:
        return self.device_to_server.get(device)

    def devices_of(self, server):
        return self.server_to_devices.get(server, frozenset())

    def pairs(self):
        return tuple(sorted((device, server) for device, server in self.device_to_server.items()
                            if server is not None))


def _ranking(preference):
    ranking = getattr(preference, 'ranking', preference)
    if isinstance(ranking, (str, bytes)):
        raise MalformedPreferencesError('ranking must be a list, got {!r}'.format(ranking))
    return tuple(ranking)


@dataclass(frozen=True)
class MatchingProblem:
    device_prefs: frozendict
    server_prefs: frozendict
    capacities: frozendict

    @classmethod
    def build(cls, device_prefs, server_prefs, capacities):
        """
        :param device_prefs: mapping device_id -> PreferenceList or sequence of server ids
        :param server_prefs: mapping server_id -> PreferenceList or sequence of device ids
        :param capacities: mapping server_id -> capacity
        """
        problem = cls(frozendict({owner: _ranking(pref) for owner, pref in device_prefs.items()}),
                      frozendict({owner: _ranking(pref) for owner, pref in server_prefs.items()}),
                      frozendict({server: int(capacity) for server, capacity in capacities.items()}))
        problem.validate()
        return problem

    @classmethod
    def from_dict(cls, data):
        try:
            return cls.build(data.get('devices', {}), data.get('servers', {}), data.get('capacities', {}))
        except MalformedPreferencesError:
            raise
        except AttributeError:
            raise MalformedPreferencesError('problem must map devices, servers and capacities')
        except (TypeError, ValueError) as e:
            raise MalformedPreferencesError('rankings must be lists and capacities integers, {}'.format(e))

    def to_dict(self):
        return {
            'devices': {device: list(ranking) for device, ranking in sorted(self.device_prefs.items())},
            'servers': {server: list(ranking) for server, ranking in sorted(self.server_prefs.items())},
            'capacities': dict(sorted(self.capacities.items())),
        }

    def validate(self):
        for server in self.server_prefs:
            if server not in self.capacities:
                raise MalformedPreferencesError('no capacity for server {}'.format(server))
        for server, capacity in self.capacities.items():
            if server not in self.server_prefs:
                raise MalformedPreferencesError('capacity given for unknown server {}'.format(server))
            if capacity < 0:
                raise MalformedPreferencesError('negative capacity for server {}'.format(server))
        for owner, ranking, others in [(d, r, self.server_prefs) for d, r in self.device_prefs.items()] + \
                                      [(s, r, self.device_prefs) for s, r in self.server_prefs.items()]:
            if len(set(ranking)) != len(ranking):
                raise MalformedPreferencesError('{} ranks a counterpart twice'.format(owner))
            for counterpart in ranking:
                if counterpart not in others:
                    raise MalformedPreferencesError('{} ranks unknown {}'.format(owner, counterpart))

    def rank_maps(self):
        return ({device: {server: rank for rank, server in enumerate(ranking)}
                 for device, ranking in self.device_prefs.items()},
                {server: {device: rank for rank, device in enumerate(ranking)}
                 for server, ranking in self.server_prefs.items()})


def run_matching(device_prefs, server_prefs, capacities, discard_lower_ranked=True):
    """
    device proposing deferred acceptance with per-server proposal queues
    :param device_prefs: mapping device_id -> PreferenceList or ranking
    :param server_prefs: mapping server_id -> PreferenceList or ranking
    :param capacities: mapping server_id -> capacity
    :param discard_lower_ranked: on a rejection also reject queued proposers ranked below the rejected one
    :return: Matching
    """
    problem = device_prefs if isinstance(device_prefs, MatchingProblem) else \
        MatchingProblem.build(device_prefs, server_prefs, capacities)
    _, server_rank = problem.rank_maps()
    bound = sum(len(ranking) for ranking in problem.device_prefs.values())

    next_choice = {device: 0 for device in problem.device_prefs}
    accepted = {server: [] for server in problem.server_prefs}
    assignment = {}
    free = deque(sorted(problem.device_prefs))
    queues = {server: deque() for server in problem.server_prefs}
    proposals = 0

    def reject(device):
        assignment.pop(device, None)
        free.append(device)

    while free:
        # every free device with servers left proposes once
        while free:
            device = free.popleft()
            ranking = problem.device_prefs[device]
            if next_choice[device] >= len(ranking):
                continue
            server = ranking[next_choice[device]]
            next_choice[device] += 1
            proposals += 1
            if proposals > bound:
                raise AuditError('proposal bound {} exceeded'.format(bound))
            queues[server].append(device)

        for server in sorted(queues):
            queue = queues[server]
            ranks = server_rank[server]
            members = accepted[server]
            while queue:
                device = queue.popleft()
                if device not in ranks:
                    reject(device)
                elif len(members) < problem.capacities[server]:
                    members.append(device)
                    assignment[device] = server
                else:
                    worst = max(members, key=ranks.get) if members else None
                    if worst is not None and ranks[device] < ranks[worst]:
                        members.remove(worst)
                        reject(worst)
                        logger.debug('server {} bumps {} for {}.'.format(server, worst, device))
                        members.append(device)
                        assignment[device] = server
                    else:
                        reject(device)
                        if discard_lower_ranked:
                            for other in [o for o in queue if o in ranks and ranks[o] > ranks[device]]:
                                queue.remove(other)
                                reject(other)

    logger.debug('matching done after {} proposals.'.format(proposals))
    return Matching.from_assignment(assignment, problem.device_prefs, problem.server_prefs, proposals)


def _worst_rank(members, ranks):
    return max(ranks[member] for member in members)


def is_blocking_pair(matching, device, server, problem):
    device_rank, server_rank = problem.rank_maps()
    return _blocks(matching, device, server, problem, device_rank, server_rank)


def _blocks(matching, device, server, problem, device_rank, server_rank):
    if server not in device_rank.get(device, {}) or device not in server_rank.get(server, {}):
        return False
    current = matching.server_of(device)
    if current == server:
        return False
    if current is not None and device_rank[device].get(current, len(device_rank[device])) <= \
            device_rank[device][server]:
        return False
    members = matching.devices_of(server)
    if len(members) < problem.capacities[server]:
        return True
    if not members:
        # zero capacity
        return False
    ranks = server_rank[server]
    return any(member not in ranks for member in members) or ranks[device] < _worst_rank(members, ranks)


def is_stable(matching, problem, rank_maps=None):
    """
    a matching is stable when every pair is mutually acceptable, no server is over capacity and no
    device-server pair would rather be matched together
    """
    device_rank, server_rank = rank_maps or problem.rank_maps()
    for device, server in matching.device_to_server.items():
        if server is None:
            continue
        if server not in device_rank.get(device, {}) or device not in server_rank.get(server, {}):
            return False
        if device not in matching.devices_of(server):
            return False
    for server, members in matching.server_to_devices.items():
        if len(members) > problem.capacities.get(server, 0):
            return False
        if any(matching.server_of(member) != server for member in members):
            return False

    for device, ranking in problem.device_prefs.items():
        for server in ranking:
            if matching.server_of(device) == server:
                break
            if _blocks(matching, device, server, problem, device_rank, server_rank):
                return False
    # an under-capacity server next to a mutually acceptable unmatched device
    for server, ranking in problem.server_prefs.items():
        if len(matching.devices_of(server)) < problem.capacities[server]:
            for device in ranking:
                if matching.server_of(device) is None and server in device_rank.get(device, {}):
                    return False
    return True


def brute_force_stable(problem):
    """
    every stable matching of a small instance, by enumeration over mutually acceptable pairs
    :raises OracleBoundError: more than ORACLE_MAX_DEVICES devices or ORACLE_MAX_SERVERS servers
    :return: frozenset of Matching
    """
    devices = sorted(problem.device_prefs)
    servers = sorted(problem.server_prefs)
    if len(devices) > ORACLE_MAX_DEVICES or len(servers) > ORACLE_MAX_SERVERS:
        raise OracleBoundError('oracle handles at most {} devices and {} servers, got {} and {}'.format(
            ORACLE_MAX_DEVICES, ORACLE_MAX_SERVERS, len(devices), len(servers)))

    options = []
    for device in devices:
        acceptable = [server for server in problem.device_prefs[device] if device in problem.server_prefs[server]]
        options.append([None] + acceptable)

    stable = set()
    rank_maps = problem.rank_maps()
    for choice in product(*options):
        load = {}
        feasible = True
        for server in choice:
            if server is not None:
                load[server] = load.get(server, 0) + 1
                if load[server] > problem.capacities[server]:
                    feasible = False
                    break
        if not feasible:
            continue
        matching = Matching.from_assignment(dict(zip(devices, choice)), devices, servers)
        if is_stable(matching, problem, rank_maps):
            stable.add(matching)
    return frozenset(stable)


def device_rank(problem, device, server):
    """
    position of server in the list of device, unmatched ranks below every listed server
    """
    ranking = problem.device_prefs[device]
    return len(ranking) if server is None else ranking.index(server)


def audit_matching(matching, capacities):
    """
    :raises AuditError: when a device is matched twice, the two sides disagree or a server is over capacity
    """
    seen = {}
    for server, members in matching.server_to_devices.items():
        if len(members) > capacities.get(server, 0):
            raise AuditError('server {} holds {} devices over capacity {}'.format(
                server, len(members), capacities.get(server, 0)))
        for device in members:
            if device in seen:
                raise AuditError('device {} matched to {} and {}'.format(device, seen[device], server))
            seen[device] = server
            if matching.device_to_server.get(device) != server:
                raise AuditError('device {} is in {} but points to {}'.format(
                    device, server, matching.device_to_server.get(device)))
    for device, server in matching.device_to_server.items():
        if server is not None and seen.get(device) != server:
            raise AuditError('device {} points to {} which does not hold it'.format(device, server))
