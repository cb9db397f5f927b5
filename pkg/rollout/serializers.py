from rest_framework import serializers

from dataset.serializers import TaskInstanceSerializer
from protocol.domain import ParsedTrajectory, Terminal
from protocol.serializers import SegmentSerializer
from reward.serializers import RewardBreakdownSerializer

from .domain import GroupBatch, Trajectory


class TrajectorySerializer(serializers.Serializer):
    """
    One line of the trajectory log.

    The rendered prompt is only written when the serializer context asks
    for it (``include_prompt``); batch exports need it, logs do not.
    """
    trajectory_id = serializers.CharField(allow_blank=True, required=False, default='')
    task_id = serializers.CharField()
    task = TaskInstanceSerializer()
    seed = serializers.IntegerField(required=False, default=0)
    prompt = serializers.CharField(trim_whitespace=False, allow_blank=True, required=False, default='')
    segments = SegmentSerializer(many=True)
    terminal = serializers.ChoiceField(choices=Terminal.choices)
    answer = serializers.CharField(allow_null=True, allow_blank=True, trim_whitespace=False, required=False)
    residue = serializers.CharField(allow_blank=True, trim_whitespace=False, required=False, default='')
    residue_span = serializers.ListField(child=serializers.IntegerField(min_value=0),
                                         min_length=2, max_length=2, required=False, default=[0, 0])
    errors = serializers.ListField(child=serializers.CharField(), required=False, default=list)
    tokens = serializers.ListField(child=serializers.CharField(trim_whitespace=False), allow_empty=True)
    loss_mask = serializers.ListField(child=serializers.IntegerField(min_value=0, max_value=1), allow_empty=True)
    old_logprobs = serializers.ListField(child=serializers.FloatField(max_value=0.0),
                                         allow_null=True, required=False, default=None)
    retrieval_count = serializers.IntegerField(min_value=0)
    max_turns = serializers.IntegerField(min_value=1)
    max_retrievals = serializers.IntegerField(min_value=0)
    reward = RewardBreakdownSerializer(allow_null=True, required=False, default=None)

    def validate(self, attrs):
        if len(attrs['loss_mask']) != len(attrs['tokens']):
            raise serializers.ValidationError({'loss_mask': 'Must have one entry per token.'})
        if attrs['old_logprobs'] is not None and len(attrs['old_logprobs']) != len(attrs['tokens']):
            raise serializers.ValidationError({'old_logprobs': 'Must have one entry per token.'})
        if attrs['task']['task_id'] != attrs['task_id']:
            raise serializers.ValidationError({'task_id': 'Does not match the embedded task.'})
        return attrs

    def to_representation(self, instance: Trajectory):
        parsed = instance.parsed
        record = {
            'trajectory_id': instance.trajectory_id,
            'task_id': instance.task.task_id,
            'task': TaskInstanceSerializer(instance.task).data,
            'seed': instance.seed,
            'segments': SegmentSerializer(parsed.segments, many=True).data,
            'terminal': parsed.terminal.value,
            'answer': parsed.answer_text,
            'tokens': list(instance.tokens),
            'loss_mask': list(instance.loss_mask),
            'old_logprobs': None if instance.old_logprobs is None else list(instance.old_logprobs),
            'retrieval_count': instance.retrieval_count,
            'max_turns': instance.max_turns,
            'max_retrievals': instance.max_retrievals,
            'reward': None if instance.reward is None else RewardBreakdownSerializer(instance.reward).data,
        }
        if parsed.residue:
            record['residue'] = parsed.residue
            record['residue_span'] = list(parsed.residue_span)
        if parsed.errors:
            record['errors'] = list(parsed.errors)
        if self.context.get('include_prompt'):
            record['prompt'] = instance.prompt
        return record

    def create(self, validated_data):
        segments = SegmentSerializer(many=True).create(validated_data['segments'])
        parsed = ParsedTrajectory(
            segments=tuple(segments),
            terminal=Terminal(validated_data['terminal']),
            answer_text=validated_data.get('answer'),
            n_tokens=len(validated_data['tokens']),
            residue=validated_data['residue'],
            residue_span=tuple(validated_data['residue_span']),
            errors=tuple(validated_data['errors']),
        )
        reward = validated_data['reward']
        old_logprobs = validated_data['old_logprobs']
        return Trajectory(
            task=TaskInstanceSerializer().create(validated_data['task']),
            prompt=validated_data['prompt'],
            parsed=parsed,
            tokens=tuple(validated_data['tokens']),
            loss_mask=tuple(validated_data['loss_mask']),
            retrieval_count=validated_data['retrieval_count'],
            max_turns=validated_data['max_turns'],
            max_retrievals=validated_data['max_retrievals'],
            old_logprobs=None if old_logprobs is None else tuple(old_logprobs),
            reward=None if reward is None else RewardBreakdownSerializer().create(reward),
            seed=validated_data['seed'],
            trajectory_id=validated_data['trajectory_id'],
        )


class GroupManifestSerializer(serializers.Serializer):
    task_id = serializers.CharField()
    group_id = serializers.CharField()
    trajectory_ids = serializers.ListField(child=serializers.CharField())
    seed = serializers.IntegerField()

    def to_representation(self, instance: GroupBatch):
        return {
            'task_id': instance.task.task_id,
            'group_id': instance.group_id,
            'trajectory_ids': [t.trajectory_id for t in instance.trajectories],
            'seed': instance.seed,
        }
