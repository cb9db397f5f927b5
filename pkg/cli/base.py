import logging
import sys
from pathlib import Path
from typing import Sequence

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from dataset.domain import TaskInstance
from dataset.serializers import TaskInstanceSerializer
from environment.domain import Document, SyntheticWorld
from environment.serializers import DocumentSerializer, WorldDumpSerializer
from kb_harness.exceptions import HarnessError, RecordError
from kb_harness.utils import load_records, read_json, write_json
from policy.domain import PolicyHandle
from policy.loader import load_policy

from .config import RunConfig, option_name, resolve_config, write_manifest

logger = logging.getLogger(__name__)

RUNTIME_ERRORS = (HarnessError, OSError, ValueError, KeyError)


class HarnessCommand(BaseCommand):
    """
    Base of every harness subcommand: one flag per RunConfig key, the
    layered config resolution, the run manifest and the exit-code mapping.
    """
    requires_system_checks = []
    argv: Sequence[str] = ()

    @property
    def command_name(self) -> str:
        return self.__module__.rsplit('.', 1)[-1].replace('_', '-')

    def add_arguments(self, parser):
        parser.add_argument(
            '--config', dest='config_path', default=None, metavar='PATH',
            help='Flat KEY=VALUE file layered over the defaults.')
        for key, default in settings.HARNESS_DEFAULTS.items():
            parser.add_argument(
                option_name(key), dest=key, default=None, metavar=type(default).__name__.upper(),
                help=f'default: {default!r}; environment: {settings.HARNESS_ENV_PREFIX}{key.upper()}')

    def handle(self, *args, **options):
        flags = {key: options.get(key) for key in settings.HARNESS_DEFAULTS}
        cfg = resolve_config(flags, options.get('config_path'))
        try:
            write_manifest(cfg, self.command_name, self.argv or sys.argv)
            self.run(cfg)
        except CommandError:
            raise
        except RUNTIME_ERRORS as exc:
            logger.error('%s failed: %s', self.command_name, exc)
            raise CommandError(str(exc), returncode=2) from exc

    def run(self, cfg: RunConfig) -> None:
        raise NotImplementedError('subclasses of HarnessCommand must provide a run() method')

    # shared loaders

    def policy(self, cfg: RunConfig) -> PolicyHandle:
        try:
            return load_policy(cfg.policy, timeout=cfg.remote_timeout, retries=cfg.remote_retries)
        except ValueError as exc:
            raise CommandError(f'--policy: {exc}') from None

    def documents(self, cfg: RunConfig) -> list[Document]:
        return load_records(cfg.require('corpus'), DocumentSerializer)

    def tasks(self, cfg: RunConfig, key: str = 'tasks') -> list[TaskInstance]:
        return load_records(cfg.require(key), TaskInstanceSerializer)

    def done(self, message: str) -> None:
        self.stderr.write(self.style.SUCCESS(message))


def read_world(path: str | Path) -> tuple[SyntheticWorld, list[TaskInstance]]:
    serializer = WorldDumpSerializer(data=read_json(path))
    if not serializer.is_valid():
        raise RecordError(path, 1, dict(serializer.errors))
    return serializer.save()


def write_world(path: str | Path, world: SyntheticWorld, tasks: Sequence[TaskInstance]) -> None:
    write_json(path, WorldDumpSerializer((world, tasks)).data)
