from rest_framework import serializers

from .domain import Segment, SegmentKind, SegmentSource


class SegmentSerializer(serializers.Serializer):
    kind = serializers.ChoiceField(choices=SegmentKind.choices)
    body = serializers.CharField(allow_blank=True, trim_whitespace=False)
    source = serializers.ChoiceField(choices=SegmentSource.choices)
    span = serializers.ListField(child=serializers.IntegerField(min_value=0),
                                 min_length=2, max_length=2)
    lead = serializers.CharField(allow_blank=True, trim_whitespace=False, required=False, default='')
    tail = serializers.CharField(allow_blank=True, trim_whitespace=False, required=False, default='')

    def validate(self, attrs):
        expected = (SegmentSource.ENVIRONMENT if attrs['kind'] == SegmentKind.CONTEXT
                    else SegmentSource.AGENT)
        if attrs['source'] != expected:
            raise serializers.ValidationError(
                {'source': f"{attrs['kind']} segments must come from {expected}."})
        lo, hi = attrs['span']
        if lo > hi:
            raise serializers.ValidationError({'span': 'Span must be ordered.'})
        return attrs

    def to_representation(self, instance: Segment):
        record = {
            'kind': instance.kind.value,
            'body': instance.body,
            'source': instance.source.value,
            'span': list(instance.span),
        }
        if instance.lead:
            record['lead'] = instance.lead
        if instance.tail:
            record['tail'] = instance.tail
        return record

    def create(self, validated_data):
        return Segment(
            kind=SegmentKind(validated_data['kind']),
            body=validated_data['body'],
            source=SegmentSource(validated_data['source']),
            span=tuple(validated_data['span']),
            lead=validated_data.get('lead', ''),
            tail=validated_data.get('tail', ''),
        )
