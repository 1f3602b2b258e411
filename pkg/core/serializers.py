import logging

from rest_framework import serializers

from core.config import ARMS, EXPERIMENT_DEFAULTS, merge, validate_config
from core.exceptions import ConfigError
from core.models import Experiment, RoundMetric

logger = logging.getLogger(__name__)


class StrictSerializer(serializers.Serializer):
    """
    rejects keys that are not declared fields
    """

    def to_internal_value(self, data):
        if isinstance(data, dict):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError({key: ['unknown key'] for key in unknown})
        return super(StrictSerializer, self).to_internal_value(data)


class RangeField(serializers.ListField):
    """
    [low, high] pair with low <= high
    """

    def __init__(self, **kwargs):
        kwargs.setdefault('child', serializers.FloatField())
        kwargs['min_length'] = 2
        kwargs['max_length'] = 2
        super(RangeField, self).__init__(**kwargs)

    def to_internal_value(self, data):
        low, high = super(RangeField, self).to_internal_value(data)
        if low > high:
            raise serializers.ValidationError('range must be [low, high] with low <= high')
        return [low, high]


class PositiveRangeField(RangeField):
    def to_internal_value(self, data):
        low, high = super(PositiveRangeField, self).to_internal_value(data)
        if low <= 0:
            raise serializers.ValidationError('range must be positive')
        return [low, high]


class PopulationSerializer(StrictSerializer):
    initial_devices = serializers.IntegerField(min_value=1)
    arrivals_per_round = serializers.IntegerField(min_value=0)
    providers = serializers.ListField(child=serializers.CharField(), min_length=1)
    regions = serializers.ListField(child=serializers.CharField(), min_length=1)
    device_types = serializers.ListField(child=serializers.CharField(), min_length=1)
    data_types = serializers.ListField(child=serializers.CharField(), min_length=1)
    data_type_coverage = serializers.FloatField(min_value=0.0, max_value=1.0)
    num_classes = serializers.IntegerField(min_value=1)
    min_labels = serializers.IntegerField(min_value=1)
    max_labels = serializers.IntegerField(min_value=1)
    min_data_size = serializers.IntegerField(min_value=1)
    max_data_size = serializers.IntegerField(min_value=1)
    test_split = serializers.FloatField(min_value=0.0, max_value=1.0)
    structured = serializers.BooleanField()
    device_type_size_bands = serializers.DictField(child=RangeField(child=serializers.IntegerField()))
    provider_label_bands = serializers.DictField(child=RangeField(child=serializers.IntegerField()))
    promised_fraction = PositiveRangeField()

    def validate(self, attrs):
        errors = {}
        if attrs['min_labels'] > attrs['max_labels']:
            errors['min_labels'] = ['min_labels exceeds max_labels']
        if attrs['max_labels'] > attrs['num_classes']:
            errors['max_labels'] = ['max_labels exceeds num_classes']
        if attrs['min_data_size'] > attrs['max_data_size']:
            errors['min_data_size'] = ['min_data_size exceeds max_data_size']
        if attrs['test_split'] <= 0:
            errors['test_split'] = ['test_split must be positive']
        if attrs['promised_fraction'][1] > 1.0:
            errors['promised_fraction'] = ['promised fraction can not exceed 1']
        for device_type, (low, high) in attrs['device_type_size_bands'].items():
            if low < attrs['min_data_size'] or high > attrs['max_data_size']:
                errors['device_type_size_bands.{}'.format(device_type)] = ['band outside data size bounds']
        for provider, (low, high) in attrs['provider_label_bands'].items():
            if low < attrs['min_labels'] or high > attrs['max_labels']:
                errors['provider_label_bands.{}'.format(provider)] = ['band outside label bounds']
        if errors:
            raise serializers.ValidationError(errors)
        return attrs


class ResourceSerializer(StrictSerializer):
    cpu = PositiveRangeField()
    ram = PositiveRangeField()
    bandwidth = PositiveRangeField()


class ServerSectionSerializer(StrictSerializer):
    count = serializers.IntegerField(min_value=1)
    clients_per_server = serializers.IntegerField(min_value=1)
    requested_data_type = serializers.CharField()
    price_cpu = PositiveRangeField()
    price_ram = PositiveRangeField()
    price_band = PositiveRangeField()
    initial_calls_budget = serializers.IntegerField(min_value=0)
    prior_accuracy = serializers.FloatField(min_value=0.0, max_value=1.0)


class LatencySerializer(StrictSerializer):
    min = serializers.FloatField(min_value=0.0)
    max = serializers.FloatField(min_value=0.0)

    def validate(self, attrs):
        if attrs['min'] >= attrs['max']:
            raise serializers.ValidationError({'min': ['min must be smaller than max']})
        return attrs


class BootstrapSectionSerializer(StrictSerializer):
    min_instances = serializers.IntegerField(min_value=1)
    cv_threshold = serializers.FloatField(min_value=0.0)
    upload_fraction = serializers.FloatField(min_value=0.0, max_value=1.0)
    kfold = serializers.IntegerField(min_value=2)

    def validate(self, attrs):
        if attrs['cv_threshold'] <= 0:
            raise serializers.ValidationError({'cv_threshold': ['cv_threshold must be positive']})
        if attrs['upload_fraction'] <= 0:
            raise serializers.ValidationError({'upload_fraction': ['upload_fraction must be positive']})
        return attrs


class ProxySerializer(StrictSerializer):
    base = serializers.FloatField()
    size_weight = serializers.FloatField()
    label_weight = serializers.FloatField()
    experience_gain = serializers.FloatField()
    experience_cap = serializers.IntegerField(min_value=0)
    noise = serializers.FloatField(min_value=0.0)
    floor = serializers.FloatField(min_value=0.0, max_value=1.0)
    ceiling = serializers.FloatField(min_value=0.0, max_value=1.0)

    def validate(self, attrs):
        if attrs['floor'] > attrs['ceiling']:
            raise serializers.ValidationError({'floor': ['floor exceeds ceiling']})
        return attrs


class OutputSerializer(StrictSerializer):
    directory = serializers.CharField()
    charts = serializers.BooleanField()


class ExperimentConfigSerializer(StrictSerializer):
    seed = serializers.IntegerField(min_value=0)
    rounds = serializers.IntegerField(min_value=1)
    repetitions = serializers.IntegerField(min_value=1)
    arms = serializers.ListField(child=serializers.ChoiceField(choices=ARMS), min_length=1)
    trainer = serializers.CharField()
    population = PopulationSerializer()
    resources = ResourceSerializer()
    servers = ServerSectionSerializer()
    latency = LatencySerializer()
    bootstrap = BootstrapSectionSerializer()
    proxy = ProxySerializer()
    output = OutputSerializer()

    def validate_arms(self, value):
        if len(set(value)) != len(value):
            raise serializers.ValidationError('arms must not repeat')
        return value

    def validate_trainer(self, value):
        from core.utils import LocalTrainer
        try:
            LocalTrainer.get_class(value)
        except ValueError:
            raise serializers.ValidationError('unknown trainer {}'.format(value))
        return value


class InteractionRecordSerializer(serializers.Serializer):
    provider = serializers.CharField()
    region = serializers.CharField()
    device_type = serializers.CharField()
    accuracy = serializers.FloatField(min_value=0.0, max_value=100.0)


class TreeRequestSerializer(serializers.Serializer):
    rows = InteractionRecordSerializer(many=True, allow_empty=False)
    min_instances = serializers.IntegerField(min_value=1, default=3)
    cv_threshold = serializers.FloatField(min_value=0.0, default=10.0)

    def validate_cv_threshold(self, value):
        if value <= 0:
            raise serializers.ValidationError('cv_threshold must be positive')
        return value


class MatchRequestSerializer(serializers.Serializer):
    devices = serializers.DictField(child=serializers.ListField(child=serializers.CharField(), allow_empty=True),
                                    allow_empty=True)
    servers = serializers.DictField(child=serializers.ListField(child=serializers.CharField(), allow_empty=True),
                                    allow_empty=True)
    capacities = serializers.DictField(child=serializers.IntegerField(min_value=0), allow_empty=True)
    oracle = serializers.BooleanField(default=False)


class ExperimentSerializer(serializers.ModelSerializer):
    config = serializers.JSONField(required=False, default=dict)

    class Meta:
        model = Experiment
        fields = ['id', 'name', 'seed', 'config', 'status', 'summary', 'created_at', 'updated_at']
        read_only_fields = ['seed', 'status', 'summary', 'created_at', 'updated_at']

    def validate_config(self, value):
        """
        merges the submitted sections over the defaults and validates the result
        """
        if not isinstance(value, dict):
            raise serializers.ValidationError('config must be an object')
        try:
            config = validate_config(merge(EXPERIMENT_DEFAULTS, value))
        except ConfigError as e:
            raise serializers.ValidationError(e.errors)
        return config.to_dict()

    def create(self, validated_data):
        validated_data['seed'] = validated_data['config']['seed']
        return super(ExperimentSerializer, self).create(validated_data)


class RoundMetricSerializer(serializers.ModelSerializer):
    class Meta:
        model = RoundMetric
        exclude = ['experiment']
