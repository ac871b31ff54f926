"""Scoring pipeline reports against synthetic ground truth"""
import logging

from typing import Dict, List, Sequence

from glyphline.geometry import Box, iou

logger = logging.getLogger(__name__)

FULL, PARTIAL, NONE = 'full', 'partial', 'none'
GRADES = (FULL, PARTIAL, NONE)

TEXT_FULL_IOU = 0.8
TEXT_PARTIAL_IOU = 0.3
SYMBOL_IOU = 0.7


def best_iou(box: Box, candidates: Sequence[Box]) -> float:
    return max((iou(box, c) for c in candidates), default=0.0)


def match_text_regions(predicted: Sequence[Box], truth: Box) -> str:
    """full when some predicted box reaches IoU 0.8 with the true text box,
    partial from 0.3"""
    score = best_iou(truth, predicted)
    if score >= TEXT_FULL_IOU:
        return FULL
    if score >= TEXT_PARTIAL_IOU:
        return PARTIAL
    return NONE


def recovered(predicted: Sequence[Box], truth: Sequence[Box], threshold: float = SYMBOL_IOU) -> int:
    """Number of true boxes matched at `threshold` IoU, one prediction each"""
    available = list(predicted)
    count = 0
    for box in truth:
        scores = [iou(box, p) for p in available]
        if scores and max(scores) >= threshold:
            available.pop(scores.index(max(scores)))
            count += 1
    return count


def match_symbols(predicted: Sequence[Box], truth: Sequence[Box]) -> str:
    if not truth:
        return FULL if not predicted else PARTIAL
    found = recovered(predicted, truth)
    if found == len(truth):
        return FULL
    return PARTIAL if found else NONE


def evaluate_report(report: Dict, truth: Dict) -> Dict:
    """Grades and recovery counts of one report against one ground truth"""
    seal = Box.from_dict(report['seal']) if report.get('seal') else None
    true_seal = Box.from_dict(truth['seal'])
    texts = [Box.from_dict(b) for b in report.get('text_boxes', [])]
    glyphs = [Box.from_dict(g) for g in report.get('glyphs', [])]
    true_glyphs = [Box.from_dict(g) for g in truth['glyphs']]

    labeled = [
        (Box.from_dict(g), g['label']) for g in report.get('glyphs', []) if g.get('label') is not None
    ]
    correct = 0
    for g in truth['glyphs']:
        box = Box.from_dict(g)
        matches = [label for b, label in labeled if iou(box, b) >= SYMBOL_IOU]
        if matches and matches[0] == g['label']:
            correct += 1

    return {
        'id': report.get('id', truth.get('id', '')),
        'seal_iou': iou(seal, true_seal) if seal else 0.0,
        'text': match_text_regions(texts, Box.from_dict(truth['text_box'])),
        'symbols': match_symbols(glyphs, true_glyphs),
        'glyphs_recovered': recovered(glyphs, true_glyphs),
        'glyphs_total': len(true_glyphs),
        'glyph_labels_correct': correct,
        'errors': len(report.get('errors', [])),
    }


def tabulate(results: Sequence[Dict]) -> Dict:
    """Counts of text grade (rows) by symbol grade (columns) with rates

    Returns:
        Dict: `{"images", "table": {text: {symbols: count}}, "text_rates",
            "symbol_rates", "glyph_recall"}`
    """
    table = {t: {s: 0 for s in GRADES} for t in GRADES}
    for r in results:
        table[r['text']][r['symbols']] += 1
    n = len(results)

    def rate(count):
        return round(count / n, 6) if n else 0.0

    total_glyphs = sum(r['glyphs_total'] for r in results)
    return {
        'images': n,
        'table': table,
        'text_rates': {t: rate(sum(table[t].values())) for t in GRADES},
        'symbol_rates': {s: rate(sum(table[t][s] for t in GRADES)) for s in GRADES},
        'glyph_recall': round(sum(r['glyphs_recovered'] for r in results) / total_glyphs, 6) if total_glyphs else 0.0,
    }


def format_table(summary: Dict) -> List[str]:
    """Plain-text rendering of a tabulate() summary"""
    lines = [f"{'text/symbols':<16}" + ''.join(f"{s:>10}" for s in GRADES) + f"{'rate':>10}"]
    for t in GRADES:
        row = summary['table'][t]
        lines.append(f"{t:<16}" + ''.join(f"{row[s]:>10}" for s in GRADES) + f"{summary['text_rates'][t]:>10.2%}")
    lines.append(f"{'rate':<16}" + ''.join(f"{summary['symbol_rates'][s]:>10.2%}" for s in GRADES))
    return lines
