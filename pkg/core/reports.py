import csv
import json
import logging
import os

from django.template.loader import render_to_string

from core.bootstrap import dump_interaction_csv
from core.simulation import metric_rows

logger = logging.getLogger(__name__)

ROUNDS_HEADER = ('rep', 'round', 'arm', 'server_id', 'global_accuracy', 'mean_reward', 'cohort_size',
                 'bootstrap_inquiries', 'bootstrap_mse')

CHARTS = (
    ('rewards.svg', 'reward_by_round', 'Mean device reward', 'reward'),
    ('accuracy.svg', 'accuracy_by_round', 'Global accuracy', 'accuracy'),
    ('mse.svg', 'mse_by_round', 'Bootstrap 10-fold MSE', 'MSE'),
)

ARM_COLORS = ('#1f77b4', '#d62728', '#2ca02c', '#ff7f0e', '#9467bd')

CHART_WIDTH = 640
CHART_HEIGHT = 400
MARGIN = 56


def _number(value):
    return '' if value is None else '{:.6f}'.format(value)


def write_rounds_csv(repetitions, path):
    with open(path, 'w', newline='') as csv_file:
        writer = csv.writer(csv_file, lineterminator='\n')
        writer.writerow(ROUNDS_HEADER)
        count = 0
        for row in metric_rows(repetitions):
            writer.writerow([row['rep'], row['round'], row['arm'], row['server_id'], _number(row['global_accuracy']),
                             _number(row['mean_reward']), row['cohort_size'], row['bootstrap_inquiries'],
                             _number(row['bootstrap_mse'])])
            count += 1
    logger.info('{} rows written to {}.'.format(count, path))
    return count


def write_summary_json(summary, path):
    with open(path, 'w') as json_file:
        json.dump(summary, json_file, sort_keys=True, indent=2)
        json_file.write('\n')


def line_chart(title, y_label, series):
    """
    svg line chart of per-round values
    :param series: list of (name, values) where values[i] belongs to round i + 1, None for gaps
    :return: svg text
    """
    values = [value for _, points in series for value in points if value is not None]
    rounds = max((len(points) for _, points in series), default=1)
    low, high = (min(values), max(values)) if values else (0.0, 1.0)
    if high - low < 1e-12:
        low, high = low - 0.5, high + 0.5
    pad = (high - low) * 0.05
    low, high = low - pad, high + pad
    plot_width = CHART_WIDTH - 2 * MARGIN
    plot_height = CHART_HEIGHT - 2 * MARGIN

    def x(round_index):
        return MARGIN + (plot_width * (round_index - 1) / (rounds - 1) if rounds > 1 else plot_width / 2)

    def y(value):
        return MARGIN + plot_height * (high - value) / (high - low)

    lines = []
    for position, (name, points) in enumerate(series):
        coordinates = ' '.join('{:.2f},{:.2f}'.format(x(index + 1), y(value))
                               for index, value in enumerate(points) if value is not None)
        lines.append({
            'name': name,
            'points': coordinates,
            'color': ARM_COLORS[position % len(ARM_COLORS)],
            'legend_y': MARGIN + 16 * position,
        })
    x_ticks = [{'x': '{:.2f}'.format(x(index)), 'label': index} for index in range(1, rounds + 1)]
    y_ticks = []
    for step in range(5):
        value = low + (high - low) * step / 4
        y_ticks.append({'y': '{:.2f}'.format(y(value)), 'label': '{:.3f}'.format(value)})

    return render_to_string('core/line_chart.svg', {
        'title': title,
        'y_label': y_label,
        'width': CHART_WIDTH,
        'height': CHART_HEIGHT,
        'left': MARGIN,
        'right': CHART_WIDTH - MARGIN,
        'top': MARGIN,
        'bottom': CHART_HEIGHT - MARGIN,
        'legend_x': CHART_WIDTH - MARGIN - 170,
        'lines': lines,
        'x_ticks': x_ticks,
        'y_ticks': y_ticks,
    })


def write_charts(summary, directory):
    """
    rewards, accuracy and MSE against rounds, one line per arm
    :return: written paths
    """
    paths = []
    for file_name, key, title, y_label in CHARTS:
        series = [(arm, summary['arms'][arm][key]) for arm in sorted(summary['arms'])
                  if any(value is not None for value in summary['arms'][arm][key])]
        path = os.path.join(directory, file_name)
        with open(path, 'w') as svg_file:
            svg_file.write(line_chart(title, y_label, series))
        paths.append(path)
    return paths


def write_report(report, directory, charts=True):
    """
    rounds.csv, summary.json, optionally the charts of an ExperimentReport and
    interactions_rep<n>.csv with the pooled fedmint records of each repetition
    """
    os.makedirs(directory, exist_ok=True)
    write_rounds_csv(report.repetitions, os.path.join(directory, 'rounds.csv'))
    for repetition in report.repetitions:
        if repetition.interactions:
            dump_interaction_csv(repetition.interactions,
                                 os.path.join(directory, 'interactions_rep{}.csv'.format(repetition.rep)))
    summary = dict(report.summary)
    summary['config'] = report.config.to_dict()
    write_summary_json(summary, os.path.join(directory, 'summary.json'))
    if charts:
        write_charts(report.summary, directory)
