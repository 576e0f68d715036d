#!/usr/bin/env python3
"""
Formatters module for the video pointing toolkit
"""

import textwrap
from typing import List, Optional, Sequence

from modules.metrics import EvalReport
from modules.temporal import AttnCheckReport

# ----------------------------------------------------------------------------
# Formatting helpers
# ----------------------------------------------------------------------------

def fmt_score(value: Optional[float], digits: int = 4) -> str:
    if value is None:
        return "-"
    return f"{value:.{digits}f}"


def fmt_sci(value: float) -> str:
    return f"{value:.3e}"


def fmt_table(headers: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    # left-aligned first column, right-aligned numbers
    widths = [len(h) for h in headers]
    for row in rows:
        widths = [max(w, len(cell)) for w, cell in zip(widths, row)]

    def line(cells: Sequence[str]) -> str:
        parts = [cells[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(cells[1:], widths[1:])]
        return "  ".join(parts).rstrip()

    out = [line(headers), "  ".join("-" * w for w in widths)]
    out.extend(line(row) for row in rows)
    return "\n".join(out)


# ----------------------------------------------------------------------------
# Text rendering functions
# ----------------------------------------------------------------------------

def render_report_table(report: EvalReport) -> str:
    lines = [f"Оценка: {report.dataset}"]
    knobs = [f"{name}={value}" for name, value in
             (("strategy", report.strategy), ("k", report.k), ("tau", report.tau), ("l", report.l))
             if value is not None]
    if knobs:
        lines.append("Параметры: " + " ".join(knobs))
    rows = []
    if report.jf is not None:
        rows += [["J", fmt_score(report.j)], ["F", fmt_score(report.f)], ["J&F", fmt_score(report.jf)]]
    if report.f1 is not None:
        rows += [["Precision", fmt_score(report.precision)], ["Recall", fmt_score(report.recall)],
                 ["F1", fmt_score(report.f1)]]
    if report.mae is not None:
        rows += [["MAE", fmt_score(report.mae)], ["EMA", fmt_score(report.ema, 2)]]
    lines.append(fmt_table(["metric", "value"], rows))
    return "\n".join(lines)


def render_objects_table(report: EvalReport, limit: int = 20) -> str:
    if not report.objects:
        return "Нет объектов для отчета."
    rows = [[f"{o.clip}#{o.object}", fmt_score(o.j), fmt_score(o.f), fmt_score((o.j + o.f) / 2)]
            for o in report.objects[:limit]]
    text = fmt_table(["object", "J", "F", "J&F"], rows)
    if len(report.objects) > limit:
        text += f"\n... и еще {len(report.objects) - limit} объектов"
    return text


def render_sweep_table(summary: List[dict]) -> str:
    if not summary:
        return "Сетка пуста."
    rows = [[str(r["rank"]), str(r["strategy"]), str(r["k"]), fmt_score(r["tau"], 2), str(r["l"]),
             fmt_score(r.get("attn_loss")), fmt_score(r["jitter"], 2), fmt_score(r["dropout"], 2),
             fmt_score(r["j"]), fmt_score(r["f"]), fmt_score(r["jf"])]
            for r in summary]
    return fmt_table(["#", "strategy", "k", "tau", "l", "attn loss", "jitter", "dropout", "J", "F", "J&F"], rows)


def render_attn_check(report: AttnCheckReport) -> str:
    lines = [
        f"Проверка временного модуля: variant={report.variant} heads={report.heads} "
        f"dim={report.dim} windows={report.windows} l={report.context_length} h={report.step:g}",
    ]
    rows = [[name, fmt_sci(err), "ok" if err <= report.grad.threshold else "FAIL"]
            for name, err in report.grad.errors.items()]
    lines.append(fmt_table(["parameter", "max rel err", ""], rows))
    lines.append(f"loss: {fmt_score(report.loss)}")
    lines.append(f"max rel err: {fmt_sci(report.grad.max_error)} (порог {fmt_sci(report.grad.threshold)})")
    lines.append(f"softmax residual: {fmt_sci(report.softmax_residual)} "
                 f"(порог {fmt_sci(report.softmax_threshold)})")
    lines.append("residual identity: " + ("exact" if report.residual_identity else "MISMATCH"))
    lines.append("Итог: " + ("PASS" if report.passed else "FAIL"))
    return "\n".join(lines)


def render_annotation_summary(clip: str, annotated: int, failed: int) -> str:
    status = "✅" if failed == 0 else ("❌" if annotated == 0 else "⚠️")
    return f"{status} {clip}: {annotated} точек, {failed} ошибок"


def render_help() -> str:
    return textwrap.dedent(
        """
        Команды:
          synth CONFIG --out DIR          сгенерировать клип или набор клипов
          annotate CLIPS --out FILE       точечная разметка по маскам
          fuse CLIPS --out DIR            двунаправленное слияние масок
          eval PRED GT                    J / F / J&F, точки и подсчет
          sweep CONFIG --out DIR          абляции по tau, k, l, стратегии
          attn-check                      проверка градиентов временного модуля
          replay run.json                 повтор запуска по манифесту
        """
    ).strip()
