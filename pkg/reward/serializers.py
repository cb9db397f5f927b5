from rest_framework import serializers

from .domain import RewardBreakdown


class RewardBreakdownSerializer(serializers.Serializer):
    format_valid = serializers.BooleanField()
    r_ans = serializers.IntegerField(min_value=0, max_value=1, allow_null=True)
    r_kb = serializers.FloatField(allow_null=True)
    total = serializers.FloatField()
    rt = serializers.IntegerField(min_value=0)

    def to_representation(self, instance: RewardBreakdown):
        return {
            'format_valid': instance.format_valid,
            'r_ans': instance.r_ans,
            'r_kb': instance.r_kb,
            'total': instance.total,
            'rt': instance.rt,
        }

    def create(self, validated_data):
        return RewardBreakdown(**validated_data)
