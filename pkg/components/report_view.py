from typing import Optional

import pandas as pd

from utils.fidelity import MetricReport
from utils.pipeline import RunReport


def _fmt(value: Optional[float], digits: int = 4) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


class MetricReportView:
    """Plain-text rendering of a MetricReport for the terminal"""

    def __init__(self, report: MetricReport):
        self.report = report

    def fields_frame(self) -> pd.DataFrame:
        rows = []
        for m in self.report.per_field:
            rows.append({
                "field": m.name,
                "kind": m.kind.value,
                "vocab": m.vocabulary,
                "vocab_ref": m.reference_vocabulary,
                "isnf": _fmt(m.isnf),
                "isnf_ref": _fmt(m.reference_isnf),
                "kl": _fmt(m.kl),
                "ot": _fmt(m.ot),
            })
        return pd.DataFrame(rows)

    def render_text(self) -> str:
        means = self.report.dataset_means
        body = self.fields_frame().to_string(index=False)
        summary = (
            f"mean vocabulary {means.vocabulary:.2f} (reference {means.reference_vocabulary:.2f})\n"
            f"mean ISNF       {_fmt(means.isnf)} (reference {_fmt(means.reference_isnf)})\n"
            f"mean KL         {_fmt(means.kl)}\n"
            f"mean OT         {_fmt(means.ot)}\n"
        )
        return f"{body}\n\n{summary}"


def render_run_report(report: RunReport) -> str:
    """Per-field outcome table followed by the token totals"""
    rows = [
        {
            "field": o.field_name,
            "kind": o.kind.value,
            "status": "placeholder" if o.is_placeholder else "spec",
            "attempts": o.attempts,
            "completion_tokens": o.usage.completion_tokens,
        }
        for o in report.outcomes
    ]
    usage = report.total_usage
    totals = (
        f"calls {usage.calls}, prompt tokens {usage.prompt_tokens}, "
        f"completion tokens {usage.completion_tokens}, elapsed {report.elapsed:.2f}s\n"
    )
    if not rows:
        return totals
    return pd.DataFrame(rows).to_string(index=False) + "\n\n" + totals


def render_cost_projection(projection: pd.DataFrame) -> str:
    formatted = projection.copy()
    for column in ("plan_usd", "direct_usd"):
        formatted[column] = formatted[column].map(lambda v: f"${v:,.2f}")
    for column in ("plan_hours", "direct_hours"):
        formatted[column] = formatted[column].map(lambda v: f"{v:.2f}")
    return formatted.to_string(index=False) + "\n"
