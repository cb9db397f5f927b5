from pathlib import Path

from dataset.probing import load_exemplars, synthetic_exemplars
from environment.index import index_corpus
from evaluation.domain import ReportFormat
from evaluation.report import emit_report, write_pdf
from evaluation.runner import evaluate

from ...base import HarnessCommand, read_world


class Command(HarnessCommand):
    help = 'Evaluate a policy and report EM and RT per subset.'

    def run(self, cfg):
        exemplars = (synthetic_exemplars(read_world(cfg.world)[0]) if cfg.world
                     else load_exemplars(cfg.exemplars_path))
        report = evaluate(
            self.policy(cfg), index_corpus(self.documents(cfg)), self.tasks(cfg), cfg.rollout(),
            cfg.seed, mode=cfg.eval_mode, exemplars=exemplars, workers=cfg.workers,
            template_path=cfg.prompt_path, log_path=Path(cfg.log_dir) / 'eval.jsonl',
            temperature=cfg.eval_temperature,
        )
        if cfg.report_format == ReportFormat.PDF:
            path = write_pdf(report, cfg.path('out', 'report.pdf'))
            self.done(f'report written to {path}')
        elif cfg.out:
            cfg.path('out').write_text(emit_report(report, cfg.report_format), encoding='utf-8')
            self.done(f'report written to {cfg.out}')
        else:
            self.stdout.write(emit_report(report, cfg.report_format), ending='')
