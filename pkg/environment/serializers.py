from rest_framework import serializers

from dataset.serializers import TaskInstanceSerializer

from .domain import Document, SyntheticWorld


class DocumentSerializer(serializers.Serializer):
    doc_id = serializers.CharField()
    title = serializers.CharField(allow_blank=True, trim_whitespace=False)
    body = serializers.CharField(trim_whitespace=False)

    def to_representation(self, instance: Document):
        return {'doc_id': instance.doc_id, 'title': instance.title, 'body': instance.body}

    def create(self, validated_data):
        return Document(**validated_data)


class FactSerializer(serializers.Serializer):
    entity = serializers.CharField()
    attribute = serializers.CharField()
    value = serializers.CharField()
    internal = serializers.BooleanField()
    indexed = serializers.BooleanField(default=True)


class WorldDumpSerializer(serializers.Serializer):
    """
    World dump: facts (with their internal and indexed flags), templates and tasks.
    """
    seed = serializers.IntegerField()
    entities = serializers.ListField(child=serializers.CharField())
    facts = FactSerializer(many=True)
    question_templates = serializers.DictField(
        child=serializers.ListField(child=serializers.CharField()))
    tasks = TaskInstanceSerializer(many=True)

    def to_representation(self, instance):
        world, tasks = instance
        return {
            'seed': world.seed,
            'entities': list(world.entities),
            'facts': [
                {'entity': entity, 'attribute': attribute, 'value': value,
                 'internal': (entity, attribute) in world.internal_subset,
                 'indexed': (entity, attribute) not in world.unindexed}
                for (entity, attribute), value in world.facts.items()
            ],
            'question_templates': {name: list(forms)
                                   for name, forms in world.question_templates.items()},
            'tasks': TaskInstanceSerializer(tasks, many=True).data,
        }

    def create(self, validated_data):
        facts = {(f['entity'], f['attribute']): f['value'] for f in validated_data['facts']}
        internal = {(f['entity'], f['attribute']) for f in validated_data['facts'] if f['internal']}
        unindexed = {(f['entity'], f['attribute']) for f in validated_data['facts'] if not f['indexed']}
        world = SyntheticWorld(
            seed=validated_data['seed'],
            entities=tuple(validated_data['entities']),
            facts=facts,
            internal_subset=frozenset(internal),
            question_templates=validated_data['question_templates'],
            unindexed=frozenset(unindexed),
        )
        tasks = [TaskInstanceSerializer().create(dict(task)) for task in validated_data['tasks']]
        return world, tasks
