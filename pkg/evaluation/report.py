"""
Report emission: aligned text table, JSON lines and PDF.
"""
import json
from pathlib import Path

from reportlab.lib.pagesizes import letter
from reportlab.pdfgen import canvas

from kb_harness.exceptions import RecordError
from kb_harness.utils import dumps_line

from .domain import EvalReport, ReportFormat
from .serializers import ReportRowSerializer, report_rows

COLUMNS = ('subset', 'EM', 'RT', 'n')


def _cells(report: EvalReport) -> list[tuple[str, str, str, str]]:
    cells = []
    for row in ReportRowSerializer(report_rows(report), many=True).data:
        cells.append((row['subset'], f"{row['em']:.4f}", f"{row['rt']:.4f}", str(row['n'])))
    return cells


def format_table(report: EvalReport) -> str:
    rows = [COLUMNS, *_cells(report)]
    widths = [max(len(row[i]) for row in rows) for i in range(len(COLUMNS))]
    lines = []
    for row in rows:
        first = row[0].ljust(widths[0])
        rest = [cell.rjust(width) for cell, width in zip(row[1:], widths[1:])]
        lines.append('  '.join([first, *rest]))
    return '\n'.join(lines) + '\n'


def format_jsonl(report: EvalReport) -> str:
    return ''.join(dumps_line(row) for row in ReportRowSerializer(report_rows(report), many=True).data)


def emit_report(report: EvalReport, fmt: ReportFormat = ReportFormat.TABLE) -> str:
    fmt = ReportFormat(fmt)
    if fmt == ReportFormat.JSONL:
        return format_jsonl(report)
    if fmt == ReportFormat.TABLE:
        return format_table(report)
    raise ValueError('PDF reports are written with write_pdf')


def parse_report(text: str) -> EvalReport:
    """
    Rebuild a report from its JSON lines form.
    """
    records = [json.loads(line) for line in text.splitlines() if line.strip()]
    serializer = ReportRowSerializer(data=records, many=True)
    if not serializer.is_valid():
        raise RecordError('<report>', 0, serializer.errors)
    rows = serializer.save()
    per_subset = {key: stats for key, stats, _mode in rows if key is not None}
    overall = [stats for key, stats, _mode in rows if key is None]
    if len(overall) != 1:
        raise RecordError('<report>', 0, {'subset': ['expected exactly one overall row']})
    return EvalReport(per_subset, overall[0], rows[0][2])


def write_pdf(report: EvalReport, path: str | Path, title: str = 'Evaluation report') -> Path:
    """
    Render the report table into a PDF file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    p = canvas.Canvas(str(path), pagesize=letter, invariant=1)

    def add_header(canvas, y_position=750):
        canvas.setFont('Helvetica-Bold', 14)
        canvas.drawString(80, y_position, f'{title} ({report.mode.value})')
        canvas.line(80, y_position - 5, 530, y_position - 5)

    add_header(p)
    y = 710
    x_positions = (80, 300, 380, 460)

    p.setFont('Helvetica-Bold', 12)
    for x, column in zip(x_positions, COLUMNS):
        p.drawString(x, y, column)
    y -= 20

    cells = _cells(report)
    for number, row in enumerate(cells):
        if y < 60:
            p.showPage()
            add_header(p)
            y = 710
        # the overall row closes the table
        is_overall = number == len(cells) - 1
        p.setFont('Helvetica-Bold' if is_overall else 'Helvetica', 11)
        if is_overall:
            p.line(80, y + 14, 530, y + 14)
        for x, cell in zip(x_positions, row):
            p.drawString(x, y, cell)
        y -= 18

    p.showPage()
    p.save()
    return path
