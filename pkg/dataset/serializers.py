from rest_framework import serializers

from .domain import Label, TaskInstance


class TaskInstanceSerializer(serializers.Serializer):
    task_id = serializers.CharField()
    question = serializers.CharField(trim_whitespace=False)
    golds = serializers.ListField(child=serializers.CharField(), min_length=1)
    label = serializers.ChoiceField(choices=Label.choices, default=Label.UNLABELED)
    source = serializers.CharField(allow_blank=True, required=False, default='')
    facts = serializers.ListField(
        child=serializers.ListField(child=serializers.CharField(), min_length=2, max_length=2),
        required=False, default=list)

    def to_representation(self, instance: TaskInstance):
        record = {
            'task_id': instance.task_id,
            'question': instance.question,
            'golds': list(instance.golds),
            'label': instance.label.value,
            'source': instance.source,
        }
        if instance.facts:
            record['facts'] = [list(key) for key in instance.facts]
        return record

    def create(self, validated_data):
        return TaskInstance(
            task_id=validated_data['task_id'],
            question=validated_data['question'],
            golds=tuple(validated_data['golds']),
            label=Label(validated_data['label']),
            source=validated_data.get('source', ''),
            facts=tuple(tuple(key) for key in validated_data.get('facts', [])),
        )


class ProbeSampleSerializer(serializers.Serializer):
    answer = serializers.CharField(allow_blank=True, trim_whitespace=False)
    em = serializers.IntegerField(min_value=0, max_value=1)


class ProbeRecordSerializer(serializers.Serializer):
    """
    One probe cache line: {task_id, samples: [{answer, em}]}.
    """
    task_id = serializers.CharField()
    samples = ProbeSampleSerializer(many=True)

    def to_representation(self, instance):
        task_id, samples = instance
        return {
            'task_id': task_id,
            'samples': [{'answer': answer, 'em': em} for answer, em in samples],
        }

    def create(self, validated_data):
        samples = [(s['answer'], s['em']) for s in validated_data['samples']]
        return validated_data['task_id'], samples
