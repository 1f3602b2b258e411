import logging

import django_filters as filters_rest
from django.conf import settings
from rest_framework import viewsets, mixins, status
from rest_framework.decorators import action
from rest_framework.exceptions import ValidationError
from rest_framework.pagination import PageNumberPagination
from rest_framework.response import Response

from core.bootstrap import build_tree, dataset_summary, render_tree, sdr_table, tree_to_dict
from core.domain import InteractionRecord
from core.exceptions import MalformedPreferencesError, OracleBoundError
from core.matching import MatchingProblem, brute_force_stable, is_stable, run_matching
from core.models import Experiment, RoundMetric, ARM_CHOICE
from core.serializers import ExperimentSerializer, RoundMetricSerializer, TreeRequestSerializer, \
    MatchRequestSerializer
from core.tasks import run_experiment

logger = logging.getLogger(__name__)

MAX_PAGINATION_SIZE = getattr(settings, "MAX_PAGINATION_SIZE")
DEFAULT_PAGINATION_SIZE = getattr(settings, "DEFAULT_PAGINATION_SIZE")


class CustomPagination(PageNumberPagination):
    page_size = DEFAULT_PAGINATION_SIZE
    page_size_query_param = 'size'
    max_page_size = MAX_PAGINATION_SIZE
    last_page_strings = []


class RoundMetricFilter(filters_rest.FilterSet):
    """
    filters on the metrics of one experiment, round range is inclusive
    """
    arm = filters_rest.ChoiceFilter(choices=ARM_CHOICE)
    server_id = filters_rest.CharFilter()
    rep = filters_rest.NumberFilter()
    round_min = filters_rest.NumberFilter(field_name='round', lookup_expr='gte')
    round_max = filters_rest.NumberFilter(field_name='round', lookup_expr='lte')

    class Meta:
        model = RoundMetric
        fields = ['arm', 'server_id', 'rep', 'round_min', 'round_max']


class ExperimentViewSet(viewsets.GenericViewSet,
                        mixins.CreateModelMixin,
                        mixins.ListModelMixin,
                        mixins.RetrieveModelMixin):
    queryset = Experiment.objects.all().order_by('-created_at', '-id')
    serializer_class = ExperimentSerializer
    pagination_class = CustomPagination

    def perform_create(self, serializer):
        experiment = serializer.save()
        logger.info('experiment {} created, scheduling the run.'.format(experiment.id))
        run_experiment.delay(experiment.id)

    @action(detail=True, name='rounds')
    def rounds(self, request, pk=None):
        experiment = self.get_object()
        queryset = RoundMetricFilter(request.query_params, queryset=experiment.rounds.all()).qs
        page = self.paginate_queryset(queryset)
        serializer = RoundMetricSerializer(page, many=True)
        return self.get_paginated_response(serializer.data)


class TreeViewSet(viewsets.GenericViewSet, mixins.CreateModelMixin):
    """
    builds the bootstrap tree of posted interaction records
    """
    serializer_class = TreeRequestSerializer

    def create(self, request, *args, **kwargs):
        serializer = self.get_serializer(data=request.data)
        serializer.is_valid(raise_exception=True)
        data = serializer.validated_data
        rows = tuple(InteractionRecord(**row) for row in data['rows'])
        try:
            summary = dict(dataset_summary(rows))
        except ZeroDivisionError:
            summary = {'n': len(rows), 'mean': 0.0, 'sd': 0.0, 'cv': None}
        tree = build_tree(rows, data['min_instances'], data['cv_threshold'])
        return Response({
            'summary': summary,
            'sdr': [{'attribute': attribute, 'sd_after_split': after, 'sdr': reduction}
                    for attribute, after, reduction in sdr_table(rows)],
            'tree': tree_to_dict(tree),
            'text': render_tree(tree),
        }, status=status.HTTP_200_OK)


class MatchViewSet(viewsets.GenericViewSet, mixins.CreateModelMixin):
    """
    device proposing deferred acceptance on posted rankings
    """
    serializer_class = MatchRequestSerializer

    def create(self, request, *args, **kwargs):
        serializer = self.get_serializer(data=request.data)
        serializer.is_valid(raise_exception=True)
        data = serializer.validated_data
        try:
            problem = MatchingProblem.from_dict(data)
        except MalformedPreferencesError as e:
            raise ValidationError({'preferences': [str(e)]})
        matching = run_matching(problem, None, None)
        response = {
            'assignment': {device: matching.server_of(device) for device in sorted(problem.device_prefs)},
            'proposals': matching.proposals,
            'stable': is_stable(matching, problem),
        }
        if data['oracle']:
            try:
                stable = brute_force_stable(problem)
            except OracleBoundError as e:
                logger.warning('oracle refused, {}'.format(e))
                return Response({'error': str(e)}, status=status.HTTP_422_UNPROCESSABLE_ENTITY)
            response['oracle'] = {'stable_matchings': len(stable), 'member': matching in stable}
        return Response(response, status=status.HTTP_200_OK)
