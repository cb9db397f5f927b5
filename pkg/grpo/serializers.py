from rest_framework import serializers


class BatchRecordSerializer(serializers.Serializer):
    """
    One trajectory of an exported batch. The instance is
    ``(group, trajectory, advantage)``; loading yields the validated dict.
    """
    task_id = serializers.CharField()
    group_id = serializers.CharField()
    trajectory_id = serializers.CharField()
    prompt = serializers.CharField(trim_whitespace=False, allow_blank=True)
    tokens = serializers.ListField(child=serializers.CharField(trim_whitespace=False), allow_empty=True)
    loss_mask = serializers.ListField(child=serializers.IntegerField(min_value=0, max_value=1), allow_empty=True)
    old_logprobs = serializers.ListField(child=serializers.FloatField(max_value=0.0), allow_null=True)
    reward = serializers.FloatField()
    advantage = serializers.FloatField()

    def validate(self, attrs):
        if len(attrs['loss_mask']) != len(attrs['tokens']):
            raise serializers.ValidationError({'loss_mask': 'Must have one entry per token.'})
        logprobs = attrs['old_logprobs']
        if logprobs is not None and len(logprobs) != len(attrs['tokens']):
            raise serializers.ValidationError({'old_logprobs': 'Must have one entry per token.'})
        return attrs

    def to_representation(self, instance):
        group, traj, advantage = instance
        return {
            'task_id': traj.task.task_id,
            'group_id': group.group_id,
            'trajectory_id': traj.trajectory_id,
            'prompt': traj.prompt,
            'tokens': list(traj.tokens),
            'loss_mask': list(traj.loss_mask),
            'old_logprobs': None if traj.old_logprobs is None else list(traj.old_logprobs),
            'reward': traj.reward.total,
            'advantage': advantage,
        }

    def create(self, validated_data):
        return dict(validated_data)
