from rest_framework import serializers

from .domain import EvalMode, EvalRecord, EvalReport, SubsetStats, subset_name


class EvalRecordSerializer(serializers.Serializer):
    """
    One evaluation log line.
    """
    task_id = serializers.CharField()
    source = serializers.CharField(allow_blank=True)
    label = serializers.CharField()
    mode = serializers.ChoiceField(choices=EvalMode.choices)
    answer = serializers.CharField(allow_blank=True, trim_whitespace=False)
    em = serializers.IntegerField(min_value=0, max_value=1)
    rt = serializers.IntegerField(min_value=0)
    text = serializers.CharField(allow_blank=True, trim_whitespace=False, required=False, default='')

    def to_representation(self, instance: EvalRecord):
        return {
            'task_id': instance.task_id,
            'source': instance.source,
            'label': instance.label,
            'mode': instance.mode.value,
            'answer': instance.answer,
            'em': instance.em,
            'rt': instance.rt,
            'text': instance.text,
        }

    def create(self, validated_data):
        return EvalRecord(**validated_data)


OVERALL = 'overall'


class ReportRowSerializer(serializers.Serializer):
    """
    One report row: {subset, source, label, em, rt, n}. The overall row has
    subset ``overall`` and null source and label.
    """
    subset = serializers.CharField()
    source = serializers.CharField(allow_blank=True, allow_null=True)
    label = serializers.CharField(allow_null=True)
    em = serializers.FloatField(min_value=0.0, max_value=1.0)
    rt = serializers.FloatField(min_value=0.0)
    n = serializers.IntegerField(min_value=1)
    mode = serializers.ChoiceField(choices=EvalMode.choices)

    def validate(self, attrs):
        is_overall = attrs['subset'] == OVERALL
        if is_overall != (attrs['source'] is None and attrs['label'] is None):
            raise serializers.ValidationError('only the overall row has no source and label')
        return attrs

    def to_representation(self, instance):
        key, stats, mode = instance
        return {
            'subset': OVERALL if key is None else subset_name(key),
            'source': None if key is None else key[0],
            'label': None if key is None else key[1],
            'em': stats.em_mean,
            'rt': stats.rt_mean,
            'n': stats.n,
            'mode': EvalMode(mode).value,
        }

    def create(self, validated_data):
        key = None
        if validated_data['subset'] != OVERALL:
            key = (validated_data['source'], validated_data['label'])
        stats = SubsetStats(validated_data['em'], validated_data['rt'], validated_data['n'])
        return key, stats, EvalMode(validated_data['mode'])


def report_rows(report: EvalReport) -> list[tuple]:
    rows = [(key, report.per_subset[key], report.mode) for key in report.subsets]
    rows.append((None, report.overall, report.mode))
    return rows
