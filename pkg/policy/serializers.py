from rest_framework import serializers

from .domain import GenerationRequest, GenerationResponse, hashed_token_ids


class GenerationRequestSerializer(serializers.Serializer):
    """
    Body of ``POST /generate``.
    """
    prompt = serializers.CharField(allow_blank=True, trim_whitespace=False)
    stop = serializers.ListField(
        child=serializers.CharField(trim_whitespace=False), allow_empty=True)
    max_tokens = serializers.IntegerField(min_value=1)
    temperature = serializers.FloatField(min_value=0.0)
    seed = serializers.IntegerField()
    transcript_start = serializers.IntegerField(min_value=0, required=False, allow_null=True)

    def validate(self, attrs):
        start = attrs.get('transcript_start')
        if start is not None and start > len(attrs['prompt']):
            raise serializers.ValidationError(
                {'transcript_start': 'Must not exceed the prompt length.'})
        return attrs

    def to_representation(self, instance: GenerationRequest):
        body = {
            'prompt': instance.prompt,
            'stop': list(instance.stop_sequences),
            'max_tokens': instance.max_tokens,
            'temperature': instance.temperature,
            'seed': instance.seed,
        }
        if instance.transcript_start is not None:
            body['transcript_start'] = instance.transcript_start
        return body

    def create(self, validated_data):
        return GenerationRequest(
            prompt=validated_data['prompt'],
            stop_sequences=tuple(validated_data['stop']),
            max_tokens=validated_data['max_tokens'],
            temperature=validated_data['temperature'],
            seed=validated_data['seed'],
            transcript_start=validated_data.get('transcript_start'),
        )


class GenerationResponseSerializer(serializers.Serializer):
    """
    Reply of ``POST /generate``: {text, tokens, logprobs | null}.
    """
    text = serializers.CharField(allow_blank=True, trim_whitespace=False)
    tokens = serializers.ListField(
        child=serializers.CharField(allow_blank=True, trim_whitespace=False))
    logprobs = serializers.ListField(
        child=serializers.FloatField(max_value=0.0), allow_null=True)

    def validate(self, attrs):
        logprobs = attrs.get('logprobs')
        if logprobs is not None and len(logprobs) != len(attrs['tokens']):
            raise serializers.ValidationError(
                {'logprobs': 'Expected one log-probability per token.'})
        return attrs

    def to_representation(self, instance: GenerationResponse):
        return {
            'text': instance.text,
            'tokens': list(instance.tokens),
            'logprobs': None if instance.logprobs is None else list(instance.logprobs),
        }

    def create(self, validated_data):
        tokens = tuple(validated_data['tokens'])
        logprobs = validated_data.get('logprobs')
        return GenerationResponse(
            text=validated_data['text'],
            tokens=tokens,
            token_ids=hashed_token_ids(tokens),
            logprobs=None if logprobs is None else tuple(logprobs),
        )
