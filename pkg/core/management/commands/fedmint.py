import json
import logging

from django.core.management.base import BaseCommand, CommandError

from core.bootstrap import build_tree, dataset_summary, load_interaction_csv, render_tree, sdr_table, \
    ATTRIBUTE_LABELS
from core.config import load_config
from core.exceptions import ConfigError, DatasetError, FedMintError, MalformedPreferencesError, OracleBoundError
from core.matching import MatchingProblem, brute_force_stable, device_rank, is_stable, run_matching
from core.reports import write_report
from core.simulation import run_experiment

logger = logging.getLogger(__name__)

INPUT_ERROR = 2
RUNTIME_ERROR = 1
REFUSED = 3


def _flag(value):
    return 'true' if value else 'false'


class Command(BaseCommand):
    help = 'FedMint experiments, bootstrap trees and matching problems'

    def add_arguments(self, parser):
        subparsers = parser.add_subparsers(dest='subcommand', required=True)
        options = {'called_from_command_line': getattr(parser, 'called_from_command_line', None)}

        run = subparsers.add_parser('run', help='run an experiment and write its report', **options)
        run.add_argument('--config', help='TOML experiment config')
        run.add_argument('--seed', type=int)
        run.add_argument('--rounds', type=int)
        run.add_argument('--reps', type=int)
        run.add_argument('--jobs', type=int, default=1)
        run.add_argument('--out', help='output directory')
        run.add_argument('--no-charts', action='store_true', dest='no_charts')

        tree = subparsers.add_parser('tree', help='build the bootstrap tree of an interaction CSV', **options)
        tree.add_argument('dataset')
        tree.add_argument('--min-instances', type=int, default=3, dest='min_instances')
        tree.add_argument('--cv', type=float, default=10.0)

        match = subparsers.add_parser('match', help='run deferred acceptance on a JSON problem', **options)
        match.add_argument('problem')
        match.add_argument('--oracle', action='store_true')

    def handle(self, *args, **options):
        handler = getattr(self, 'handle_{}'.format(options['subcommand']))
        try:
            handler(options)
        except OracleBoundError as e:
            raise CommandError(str(e), returncode=REFUSED)
        except (ConfigError, DatasetError, MalformedPreferencesError) as e:
            raise CommandError(str(e), returncode=INPUT_ERROR)
        except FedMintError as e:
            logger.error('fedmint {} failed, {}'.format(options['subcommand'], e))
            raise CommandError(str(e), returncode=RUNTIME_ERROR)

    def handle_run(self, options):
        overrides = {}
        if options['seed'] is not None:
            overrides['seed'] = options['seed']
        if options['rounds'] is not None:
            overrides['rounds'] = options['rounds']
        if options['reps'] is not None:
            overrides['repetitions'] = options['reps']
        output = {}
        if options['out']:
            output['directory'] = options['out']
        if options['no_charts']:
            output['charts'] = False
        if output:
            overrides['output'] = output
        if options['jobs'] < 1:
            raise ConfigError(['jobs: must be at least 1'])

        config = load_config(options['config'], overrides)
        report = run_experiment(config, jobs=options['jobs'])
        write_report(report, config.output.directory, charts=config.output.charts)

        self.stdout.write('{} repetitions of {} rounds written to {}'.format(
            config.repetitions, config.rounds, config.output.directory))
        for arm in config.arms:
            stats = report.summary['arms'][arm]
            self.stdout.write('{:<26} mean reward {:>10}  final accuracy {:>8}'.format(
                arm, _format(stats['mean_reward']), _format(stats['mean_final_accuracy'])))

    def handle_tree(self, options):
        try:
            rows = load_interaction_csv(options['dataset'])
        except OSError as e:
            raise DatasetError('can not read {}: {}'.format(options['dataset'], e))
        if options['min_instances'] < 1 or options['cv'] <= 0:
            raise ConfigError(['min_instances and cv must be positive'])

        try:
            summary = dataset_summary(rows)
            cv = '{:.2f}%'.format(summary['cv'])
            self.stdout.write('n={} mean={:.2f} sd={:.2f} cv={}'.format(summary['n'], summary['mean'],
                                                                       summary['sd'], cv))
        except ZeroDivisionError:
            self.stdout.write('n={} cv=undefined (zero mean)'.format(len(rows)))
        self.stdout.write('{:<12} {:>14} {:>8}'.format('attribute', 'sd_after_split', 'sdr'))
        for attribute, after, reduction in sdr_table(rows):
            self.stdout.write('{:<12} {:>14.2f} {:>8.2f}'.format(ATTRIBUTE_LABELS.get(attribute, attribute),
                                                                after, reduction))
        self.stdout.write(render_tree(build_tree(rows, options['min_instances'], options['cv'])))

    def handle_match(self, options):
        try:
            with open(options['problem']) as problem_file:
                data = json.load(problem_file)
        except (OSError, ValueError) as e:
            raise MalformedPreferencesError('can not read {}: {}'.format(options['problem'], e))
        if not isinstance(data, dict):
            raise MalformedPreferencesError('problem must be a JSON object')

        problem = MatchingProblem.from_dict(data)
        matching = run_matching(problem, None, None)
        for device in sorted(problem.device_prefs):
            self.stdout.write('{} -> {}'.format(device, matching.server_of(device) or '-'))
        self.stdout.write('proposals: {}'.format(matching.proposals))
        self.stdout.write('stable: {}'.format(_flag(is_stable(matching, problem))))

        if options['oracle']:
            stable = brute_force_stable(problem)
            optimal = all(device_rank(problem, device, matching.server_of(device)) <=
                          device_rank(problem, device, other.server_of(device))
                          for other in stable for device in problem.device_prefs)
            self.stdout.write('oracle: {} stable matchings'.format(len(stable)))
            self.stdout.write('in oracle set: {}'.format(_flag(matching in stable)))
            self.stdout.write('device optimal: {}'.format(_flag(optimal)))


def _format(value):
    return 'n/a' if value is None else '{:.4f}'.format(value)
