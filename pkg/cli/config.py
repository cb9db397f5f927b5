"""
RunConfig resolution.

Every key has a default in ``settings.HARNESS_DEFAULTS``. Later layers win:
defaults, then a flat KEY=VALUE config file, then ``KBH_<KEY>``
environment variables, then command-line flags.
"""
import json
import logging
import os
from pathlib import Path
from typing import Any, Mapping, Optional

from django.conf import settings
from django.core.management.base import CommandError
from dotenv import dotenv_values

from dataset.domain import DatasetMix
from dataset.probing import ProbeConfig, load_exemplars
from evaluation.domain import EvalMode, ReportFormat
from grpo.domain import KLReference, OptimConfig
from grpo.training import TrainConfig
from kb_harness.utils import write_json
from policy.seeding import SeedingConfig
from reward.domain import RewardConfig, RewardVariant
from rollout.domain import RolloutConfig

logger = logging.getLogger(__name__)

TRUE = frozenset({'1', 'true', 'yes', 'on'})
FALSE = frozenset({'0', 'false', 'no', 'off'})

CHOICES = {
    'reward_variant': RewardVariant,
    'kl_reference': KLReference,
    'mix': DatasetMix,
    'eval_mode': EvalMode,
    'report_format': ReportFormat,
}


def option_name(key: str) -> str:
    return '--' + key.replace('_', '-')


def coerce(key: str, raw: Any) -> Any:
    """
    Convert ``raw`` to the type of the key's default.
    """
    default = settings.HARNESS_DEFAULTS[key]
    if not isinstance(raw, str):
        return raw
    value = raw.strip()
    try:
        if isinstance(default, bool):
            if value.lower() in TRUE:
                return True
            if value.lower() in FALSE:
                return False
            raise ValueError(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if key in CHOICES:
            return CHOICES[key](value).value
    except ValueError:
        raise CommandError(f'{option_name(key)}: invalid value {raw!r}') from None
    return value


def read_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise CommandError(f'--config: no such file {str(path)!r}')
    values = {}
    for name, value in dotenv_values(path).items():
        key = name.lower()
        if key not in settings.HARNESS_DEFAULTS:
            raise CommandError(f'--config: unknown key {name!r} in {path}')
        values[key] = '' if value is None else value
    return values


def read_environment(environ: Mapping[str, str]) -> dict[str, str]:
    prefix = settings.HARNESS_ENV_PREFIX
    return {key: environ[prefix + key.upper()]
            for key in settings.HARNESS_DEFAULTS if prefix + key.upper() in environ}


class RunConfig:
    """
    Resolved configuration of one run, with builders for the typed configs
    of each app.
    """

    def __init__(self, values: Mapping[str, Any]):
        self.values = dict(values)

    def __getattr__(self, key):
        try:
            return self.__dict__['values'][key]
        except KeyError:
            raise AttributeError(key) from None

    def as_dict(self) -> dict[str, Any]:
        return dict(sorted(self.values.items()))

    def path(self, key: str, default_name: str = '') -> Path:
        """
        The path a key names, or ``default_name`` inside ``log_dir``.
        """
        value = self.values[key]
        if value:
            return Path(value)
        if not default_name:
            raise CommandError(f'{option_name(key)} is required')
        return Path(self.log_dir) / default_name

    def require(self, key: str) -> str:
        if not self.values[key]:
            raise CommandError(f'{option_name(key)} is required')
        return self.values[key]

    def _build(self, factory, **kwargs):
        try:
            return factory(**kwargs)
        except ValueError as exc:
            raise CommandError(str(exc)) from None

    def rollout(self) -> RolloutConfig:
        return self._build(
            RolloutConfig,
            max_turns=self.max_turns, max_retrievals=self.max_retrievals, rt_max=self.rt_max,
            k_docs=self.k_docs, max_obs_chars=self.max_obs_chars, group_size=self.group_size,
            max_tokens=self.max_tokens, temperature=self.temperature,
        )

    def reward(self) -> RewardConfig:
        return self._build(
            RewardConfig, r_kb_plus=self.r_kb_plus, r_kb_minus=self.r_kb_minus,
            rt_max=self.rt_max, variant=self.reward_variant,
        )

    def optim(self) -> OptimConfig:
        return self._build(
            OptimConfig, clip_eps=self.clip_eps, kl_coeff=self.kl_coeff,
            learning_rate=self.learning_rate, steps=self.steps, batch_tasks=self.batch_tasks,
            kl_reference=self.kl_reference, inner_epochs=self.inner_epochs,
        )

    def seeding(self) -> SeedingConfig:
        return self._build(
            SeedingConfig, feature_dim=self.feature_dim, epochs=self.pretrain_epochs,
            learning_rate=self.pretrain_lr, direct_demo_weight=self.direct_demo_weight,
            guess_demo_weight=self.guess_demo_weight, answer_slip=self.answer_slip,
            k_docs=self.k_docs, max_obs_chars=self.max_obs_chars,
        )

    def probe(self, exemplars: Optional[tuple[str, ...]] = None) -> ProbeConfig:
        if exemplars is None:
            exemplars = load_exemplars(self.exemplars_path)
        return self._build(
            ProbeConfig, n_samples=self.n_samples, exemplars=exemplars,
            temperature=self.probe_temperature, max_tokens=self.max_tokens,
        )

    def train(self) -> TrainConfig:
        return TrainConfig(
            rollout=self.rollout(), reward=self.reward(), optim=self.optim(),
            seed=self.seed, workers=self.workers, template_path=self.prompt_path,
        )


def resolve_config(flags: Mapping[str, Any], config_path: Optional[str] = None,
                   environ: Optional[Mapping[str, str]] = None) -> RunConfig:
    environ = os.environ if environ is None else environ
    layers = [
        dict(settings.HARNESS_DEFAULTS),
        read_config_file(config_path) if config_path else {},
        read_environment(environ),
        {key: value for key, value in flags.items() if value is not None},
    ]
    values = {}
    for layer in layers:
        for key, raw in layer.items():
            if key not in settings.HARNESS_DEFAULTS:
                raise CommandError(f'unknown configuration key {key!r}')
            values[key] = coerce(key, raw)
    if values['workers'] < 1:
        raise CommandError('--workers must be at least 1')
    return RunConfig(values)


def write_manifest(cfg: RunConfig, command: str, argv) -> Path:
    path = Path(cfg.log_dir) / 'manifest.json'
    write_json(path, {
        'command': command,
        'argv': list(argv),
        'seed': cfg.seed,
        'config': cfg.as_dict(),
    })
    logger.info('run config command=%s %s', command, json.dumps(cfg.as_dict(), sort_keys=True))
    return path
