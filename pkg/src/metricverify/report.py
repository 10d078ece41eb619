"""Tabular reports and the consistency audit of published error-rate tables."""
from __future__ import annotations

from dataclasses import dataclass

from .evaluation import EvalReport, relative_error_reduction

# (variant, error rate %, printed relative error reduction % or None for the baseline row)
PUBLISHED_TABLES = {
    "lfw_depth": [
        ("3 layers", 1.03, None),
        ("5 layers", 0.83, 22.42),
        ("7 layers", 0.62, 39.81),
        ("9 layers", 1.27, -20.30),
    ],
    "lfw_layer_kind": [
        ("7-FC", 0.62, None),
        ("7-FC+BN", 0.68, -9.68),
        ("1-CONV+6-FC", 0.55, 11.29),
    ],
    "lfw_kernels": [
        ("64 kernels", 0.55, None),
        ("128 kernels", 0.52, 5.45),
        ("256 kernels", 0.55, 0.00),
    ],
    "lfw_final": [
        ("COS", 0.67, None),
        ("verifier (no focal)", 0.52, 22.39),
        ("verifier (focal)", 0.50, 25.37),
    ],
    "ytf_final": [
        ("COS", 5.00, None),
        ("verifier (no focal)", 3.72, 25.60),
        ("verifier (focal)", 3.67, 26.60),
    ],
}


@dataclass
class AuditRow:
    table: str
    variant: str
    baseline_error: float
    error: float
    printed: float
    computed: float
    consistent: bool

    @property
    def flag(self) -> str:
        return "ok" if self.consistent else "ERRATUM?"


def audit_published_tables(tolerance: float = 0.01, tables=None) -> list[AuditRow]:
    """Recompute every printed reduction from its table's error column.

    Rows whose printed value differs from the recomputed one by more than
    ``tolerance`` percentage points are flagged as presumed errata.
    """
    rows = []
    for name, table in (tables or PUBLISHED_TABLES).items():
        base = table[0][1]
        for variant, err, printed in table[1:]:
            computed = relative_error_reduction(base, err)
            ok = abs(computed - printed) <= tolerance
            rows.append(AuditRow(name, variant, base, err, printed, computed, ok))
    return rows


def _align(header, body) -> str:
    widths = [max(len(r[c]) for r in [header, *body]) for c in range(len(header))]
    fmt = lambda r: "  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip()
    return "\n".join([fmt(header), *map(fmt, body)]) + "\n"


def audit_text(rows: list[AuditRow]) -> str:
    header = ("table", "variant", "error", "printed", "computed", "flag")
    body = [(r.table, r.variant, f"{r.error:.2f}", f"{r.printed:.2f}", f"{r.computed:.2f}", r.flag)
            for r in rows]
    return _align(header, body)


def comparison_table(reports: dict[str, EvalReport]) -> str:
    """Two-column table: error rate (%) and reduction (%) against the first entry."""
    items = list(reports.items())
    base_err = items[0][1].error_rate
    body = []
    for i, (name, rep) in enumerate(items):
        if i == 0:
            red = "--"
        elif base_err > 0:
            red = f"{relative_error_reduction(base_err, rep.error_rate):.2f}"
        else:
            red = "n/a"
        body.append((name, f"{100 * rep.error_rate:.2f}", red))
    return _align(("Method", "Error rate (%)", "Relative error reduction (%)"), body)
