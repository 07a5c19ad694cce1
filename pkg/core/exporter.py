"""Result files: per-run metrics CSV, JSON documents, text tables and comparison reports."""
import csv
import datetime
import json
import logging
import os

from core.clients import Task
from core.errors import ResultsIoError
from core.metrics import Phase

logger = logging.getLogger(__name__)


def _ensure_parent(path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)


def _num(value):
    # repr keeps full float precision so reruns compare byte for byte
    return "" if value is None else repr(float(value))


def metrics_header(domain_count, task):
    header = ["round", "decision"]
    header += [f"domain_{i}_loss" for i in range(domain_count)]
    header += ["avg_loss", "std_loss", "worst_loss"]
    if task == Task.CLASSIFICATION:
        header += [f"domain_{i}_accuracy" for i in range(domain_count)]
        header += ["avg_accuracy", "std_accuracy", "worst_accuracy"]
    header.append("global_eval")
    return header


def metrics_row(record, task):
    m = record.metrics
    decision = "warmup" if record.phase == Phase.WARMUP else record.decision.value
    row = [record.round_index, decision]
    row += [_num(v) for v in m.losses]
    row += [_num(m.avg_loss), _num(m.std_loss), _num(m.worst_loss)]
    if task == Task.CLASSIFICATION:
        row += [_num(v) for v in m.accuracies]
        row += [_num(m.avg_accuracy), _num(m.std_accuracy), _num(m.worst_accuracy)]
    row.append(int(record.global_eval))
    return row


def write_metrics_csv(path, records, domain_count, task):
    """One row per record; warm-up rows carry the decision "warmup"."""
    try:
        _ensure_parent(path)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(metrics_header(domain_count, task))
            for record in records:
                writer.writerow(metrics_row(record, task))
    except OSError as e:
        raise ResultsIoError(f"cannot write {path}: {e}")
    return path


def write_json(path, data):
    try:
        _ensure_parent(path)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise ResultsIoError(f"cannot write {path}: {e}")
    return path


def read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ResultsIoError(f"cannot read {path}: {e}")


def format_table(headers, rows):
    cells = [[str(h) for h in headers]] + [[_fmt(v) for v in row] for row in rows]
    widths = [max(len(r[k]) for r in cells) for k in range(len(headers))]
    lines = []
    for n, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _fmt(value):
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def write_text(path, text):
    try:
        _ensure_parent(path)
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
    except OSError as e:
        raise ResultsIoError(f"cannot write {path}: {e}")
    return path


def create_markdown(title, headers, rows, output_path, notes=()):
    lines = [f"# {title}", ""]
    for note in notes:
        lines.append(f"- {note}")
    if notes:
        lines.append("")
    lines.append("| " + " | ".join(str(h) for h in headers) + " |")
    lines.append("|" + "|".join("---" for _ in headers) + "|")
    for row in rows:
        lines.append("| " + " | ".join(_fmt(v) for v in row) + " |")
    return write_text(output_path, "\n".join(lines) + "\n")


def create_pdf(title, headers, rows, output_path, notes=()):
    """Comparison table as a one-page ReportLab document."""
    from reportlab.lib import colors
    from reportlab.lib.pagesizes import landscape, letter
    from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
    from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

    _ensure_parent(output_path)
    doc = SimpleDocTemplate(output_path, pagesize=landscape(letter),
                            rightMargin=40, leftMargin=40, topMargin=40, bottomMargin=40)
    styles = getSampleStyleSheet()
    title_style = ParagraphStyle(
        'FxTitle',
        parent=styles['Heading1'],
        fontSize=18,
        textColor=colors.HexColor('#2c3e50'),
        alignment=1,
        spaceAfter=12,
        fontName='Helvetica-Bold'
    )
    body_style = ParagraphStyle('FxBody', parent=styles['Normal'], fontSize=9, leading=12, spaceAfter=4)

    story = [Paragraph(title, title_style)]
    date_str = datetime.datetime.now().strftime("%B %d, %Y")
    story.append(Paragraph(f"Generated on: {date_str}",
                           ParagraphStyle('Date', parent=body_style, alignment=1, textColor=colors.grey)))
    story.append(Spacer(1, 12))
    for note in notes:
        story.append(Paragraph(f"• {note}", body_style))
    story.append(Spacer(1, 8))

    table = Table([[str(h) for h in headers]] + [[_fmt(v) for v in row] for row in rows], repeatRows=1)
    table.setStyle(TableStyle([
        ('BACKGROUND', (0, 0), (-1, 0), colors.HexColor('#2c3e50')),
        ('TEXTCOLOR', (0, 0), (-1, 0), colors.white),
        ('FONTNAME', (0, 0), (-1, 0), 'Helvetica-Bold'),
        ('FONTSIZE', (0, 0), (-1, -1), 8),
        ('GRID', (0, 0), (-1, -1), 0.25, colors.grey),
        ('ROWBACKGROUNDS', (0, 1), (-1, -1), [colors.white, colors.HexColor('#f2f4f5')]),
    ]))
    story.append(table)
    try:
        doc.build(story)
    except OSError as e:
        raise ResultsIoError(f"cannot write {output_path}: {e}")
    return output_path
