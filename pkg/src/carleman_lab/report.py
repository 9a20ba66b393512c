"""Two-sided estimate reports shared by all verifier modules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field


def fmt(v: float) -> str:
    """Fixed 17-significant-digit formatting for deterministic CSVs."""
    return f"{float(v):.17g}"


@dataclass
class EstimateReport:
    """Named nonnegative terms of both sides of one inequality.

    ratio is 0 when both totals vanish, inf when only the right side
    does; weighted terms are on the normalized e^{-2s(eta-eta_ref)}
    scale recorded in params.
    """

    name: str
    lhs_terms: dict
    rhs_terms: dict
    params: dict = field(default_factory=dict)

    @property
    def lhs_total(self) -> float:
        return float(sum(self.lhs_terms.values()))

    @property
    def rhs_total(self) -> float:
        return float(sum(self.rhs_terms.values()))

    @property
    def ratio(self) -> float:
        lhs, rhs = self.lhs_total, self.rhs_total
        if rhs > 0.0:
            return lhs / rhs
        return 0.0 if lhs == 0.0 else math.inf

    def validate(self):
        for label, terms in (("lhs", self.lhs_terms), ("rhs", self.rhs_terms)):
            for key, val in terms.items():
                if not math.isfinite(val):
                    raise ValueError(f"{self.name}: non-finite {label} term {key}")
                if val < 0.0:
                    raise ValueError(
                        f"{self.name}: negative {label} term {key} = {val}"
                    )
        return self

    def rows(self):
        """(term_name, value) pairs in a fixed order, totals and ratio last."""
        out = [(f"lhs_{k}", v) for k, v in self.lhs_terms.items()]
        out += [(f"rhs_{k}", v) for k, v in self.rhs_terms.items()]
        out += [
            ("lhs_total", self.lhs_total),
            ("rhs_total", self.rhs_total),
            ("ratio", self.ratio),
        ]
        return out


def report_to_csv(report: EstimateReport, path):
    """Single-row CSV: parameters first, then every named term."""
    keys = list(report.params)
    rows = report.rows()
    header = ["name"] + keys + [name for name, _ in rows]
    values = [report.name] + [fmt(report.params[k]) if isinstance(report.params[k], float)
                              else str(report.params[k]) for k in keys]
    values += [fmt(v) for _, v in rows]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        fh.write(",".join(values) + "\n")


def reports_to_term_csv(reports, path, id_columns):
    """Long-format CSV: one row per (report, term).

    id_columns maps column name to a function of the report.
    """
    with open(path, "w", newline="") as fh:
        fh.write(",".join(list(id_columns) + ["term_name", "value"]) + "\n")
        for rep in reports:
            prefix = [str(fn(rep)) for fn in id_columns.values()]
            for term, value in rep.rows():
                fh.write(",".join(prefix + [term, fmt(value)]) + "\n")
