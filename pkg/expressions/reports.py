"""Report artifacts: JSON, aligned text tables, CSV, an XLSX workbook and a PNG heat map."""
import csv
import json
import logging
from pathlib import Path

import numpy as np
from openpyxl import Workbook
from openpyxl.styles import Font
from PIL import Image, ImageDraw

from .choices import EmotionLabel

logger = logging.getLogger(__name__)

LABEL_NAMES = [label.label for label in EmotionLabel]
METRIC_COLUMNS = ('accuracy', 'precision', 'recall', 'f1')


def write_json(data, path):
    path = Path(path)
    with open(path, 'w', encoding='utf-8') as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
    return path


def read_json(path):
    with open(path, encoding='utf-8') as fh:
        return json.load(fh)


def _cell(value):
    if value is None:
        return '-'
    if isinstance(value, float):
        return 'nan' if np.isnan(value) else f'{value:.1f}'
    return str(value)


def format_table(headers, rows):
    """Plain-text table; the first column is left aligned, the rest right aligned."""
    cells = [[str(h) for h in headers]] + [[_cell(v) for v in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]

    def line(row):
        return '  '.join(v.ljust(w) if i == 0 else v.rjust(w) for i, (v, w) in enumerate(zip(row, widths)))

    rule = '  '.join('-' * w for w in widths)
    return '\n'.join([line(cells[0]), rule] + [line(row) for row in cells[1:]])


def confusion_table(confusion):
    rows = [[f'true {name}'] + [int(v) for v in row] for name, row in zip(LABEL_NAMES, np.asarray(confusion))]
    return format_table([''] + [f'pred {name}' for name in LABEL_NAMES], rows)


def write_confusion_csv(confusion, path):
    with open(path, 'w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh)
        writer.writerow(['true\\predicted'] + LABEL_NAMES)
        for name, row in zip(LABEL_NAMES, np.asarray(confusion)):
            writer.writerow([name] + [int(v) for v in row])
    return path


def _text(draw, xy, text, fill, align='center'):
    left, top, right, bottom = draw.textbbox((0, 0), text)
    x, y = xy
    width, height = right - left, bottom - top
    x = x - width // 2 if align == 'center' else x - width
    draw.text((x, y - height // 2), text, fill=fill)


def render_confusion_png(confusion, path, cell=90, margin=110):
    """Row-normalised heat map with the raw counts written into each cell."""
    confusion = np.asarray(confusion, dtype=np.int64)
    n = len(confusion)
    rows = confusion.sum(axis=1, keepdims=True)
    share = np.divide(confusion, rows, out=np.zeros(confusion.shape), where=rows > 0)
    size = margin + n * cell + 10
    image = Image.new('RGB', (size, size), 'white')
    draw = ImageDraw.Draw(image)
    for i in range(n):
        for j in range(n):
            shade = int(255 * (1.0 - share[i, j]))
            x0, y0 = margin + j * cell, margin + i * cell
            draw.rectangle([x0, y0, x0 + cell, y0 + cell], fill=(shade, shade, 255), outline='black')
            ink = 'white' if share[i, j] > 0.5 else 'black'
            _text(draw, (x0 + cell // 2, y0 + cell // 2), str(confusion[i, j]), ink)
    for k, name in enumerate(LABEL_NAMES[:n]):
        _text(draw, (margin + k * cell + cell // 2, margin - 16), name, 'black')
        _text(draw, (margin - 8, margin + k * cell + cell // 2), name, 'black', align='right')
    draw.text((margin, 12), 'predicted', fill='black')
    draw.text((8, margin - 30), 'true', fill='black')
    image.save(path, format='PNG')
    return path


def fold_rows(reports):
    return [[f'fold {r.test_fold}', len(r.test_ids)] + [getattr(r.metrics, name) for name in METRIC_COLUMNS]
            for r in reports]


def summary_text(combined, reports):
    """Per-fold rows, then the pooled and averaged summaries, then group accuracy."""
    headers = ['', 'n', '%Acc', '%Prc', '%Rec', '%F1']
    rows = fold_rows(reports)
    rows.append(['pooled', int(combined.confusion.sum())]
                + [getattr(combined.pooled, name) for name in METRIC_COLUMNS])
    rows.append(['mean over folds', '']
                + [combined.averaged[name]['mean'] for name in METRIC_COLUMNS])
    rows.append(['std over folds', '']
                + [combined.averaged[name]['std'] for name in METRIC_COLUMNS])
    parts = [format_table(headers, rows), '', 'Combined confusion matrix', confusion_table(combined.confusion)]
    if combined.pooled.flagged:
        parts += ['', 'Undefined: ' + ', '.join(combined.pooled.undefined)]
    parts += ['', 'Accuracy by group', group_table(combined.groups)]
    return '\n'.join(parts) + '\n'


def group_table(groups):
    rows = [[f'{key}: {name}', cell['correct'], cell['total'], cell['accuracy']]
            for key, table in groups.items() for name, cell in table.items() if cell['total']]
    return format_table(['group', 'correct', 'n', '%Acc'], rows)


def fairness_text(rows):
    table = [[row['variant'] + (' (base)' if row['is_base'] else ''), row['accuracy'], row['delta']]
             for row in rows]
    return format_table(['variant', '%Acc minority fold', '%Acc increase'], table)


def write_workbook(path, combined, reports):
    """Summary sheet plus one sheet per fold."""
    workbook = Workbook()
    sheet = workbook.active
    sheet.title = 'Summary'
    sheet.append(['', 'n', '%Acc', '%Prc', '%Rec', '%F1'])
    for cell in sheet[1]:
        cell.font = Font(bold=True)
    for row in fold_rows(reports):
        sheet.append(row)
    sheet.append(['pooled', int(combined.confusion.sum())]
                 + [getattr(combined.pooled, name) for name in METRIC_COLUMNS])
    sheet.append(['mean over folds', None] + [combined.averaged[name]['mean'] for name in METRIC_COLUMNS])
    sheet.append(['std over folds', None] + [combined.averaged[name]['std'] for name in METRIC_COLUMNS])
    sheet.append([])
    sheet.append(['true\\predicted'] + LABEL_NAMES)
    for name, row in zip(LABEL_NAMES, combined.confusion):
        sheet.append([name] + [int(v) for v in row])

    for report in reports:
        fold_sheet = workbook.create_sheet(f'Fold {report.test_fold}')
        fold_sheet.append(['id', 'true', 'predicted'])
        for cell in fold_sheet[1]:
            cell.font = Font(bold=True)
        for pred in report.predictions:
            fold_sheet.append([pred['id'], pred['true'], pred['predicted']])
    workbook.save(path)
    return path


def write_run_reports(out_dir, combined, reports):
    """Everything a cross-validation run leaves behind, next to its checkpoints."""
    out_dir = Path(out_dir)
    for report in reports:
        fold_dir = out_dir / f'fold{report.test_fold}'
        fold_dir.mkdir(parents=True, exist_ok=True)
        write_json(report.to_dict(), fold_dir / 'report.json')
        write_confusion_csv(report.confusion, fold_dir / 'confusion.csv')
    write_json({'combined': combined.to_dict(), 'folds': [r.to_dict() for r in reports]}, out_dir / 'report.json')
    (out_dir / 'report.txt').write_text(summary_text(combined, reports), encoding='utf-8')
    write_confusion_csv(combined.confusion, out_dir / 'confusion.csv')
    render_confusion_png(combined.confusion, out_dir / 'confusion.png')
    write_workbook(out_dir / 'report.xlsx', combined, reports)
    logger.info('Wrote reports for %d folds to %s', len(reports), out_dir)
    return out_dir
