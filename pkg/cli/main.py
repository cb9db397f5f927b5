"""
``python -m cli <subcommand> [flags]``: the harness command line.

Each subcommand is the management command of the same name with dashes
for underscores. Exit codes: 0 on success, 1 on a usage error, 2 when the
run itself fails.
"""
import os
import sys
from typing import Optional, Sequence, TextIO

import django
from django.core.management import load_command_class
from django.core.management.base import CommandError

PROG = 'kbh'

COMMANDS = {
    'build-corpus': 'build_corpus',
    'gen-world': 'gen_world',
    'probe': 'probe',
    'build-dataset': 'build_dataset',
    'rollout': 'rollout',
    'train-toy': 'train_toy',
    'eval': 'eval',
    'export-batch': 'export_batch',
}


def usage() -> str:
    names = ' | '.join(COMMANDS)
    return f'usage: {PROG} {{{names}}} [--config PATH] [--<key> VALUE ...]\n'


def main(argv: Optional[Sequence[str]] = None, *, stdout: Optional[TextIO] = None,
         stderr: Optional[TextIO] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'kb_harness.settings')
    django.setup()

    if argv[:1] in (['-h'], ['--help']):
        stdout.write(usage())
        return 0
    if not argv or argv[0] not in COMMANDS:
        if argv:
            stderr.write(f'{PROG}: unknown subcommand {argv[0]!r}\n')
        stderr.write(usage())
        return 1

    name = argv[0]
    command = load_command_class('cli', COMMANDS[name])
    command.argv = argv
    parser = command.create_parser(PROG, name)
    try:
        options = vars(parser.parse_args(argv[1:]))
        args = options.pop('args', ())
        command.execute(*args, stdout=stdout, stderr=stderr, **options)
    except CommandError as exc:
        stderr.write(f'{PROG} {name}: {exc}\n')
        if exc.returncode == 1:
            stderr.write(parser.format_usage())
        return exc.returncode
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 0
    return 0
