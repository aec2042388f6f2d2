"""Comparative credential-compromise risk and operational complexity.

Scores are products of their factors with the proportionality constant set
to 1. They are relative units for comparing the two models under the same
assumptions, not probabilities.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import yaml

# Julian year. With a one-hour token this gives a lifetime ratio of exactly 8766.
YEAR_SECONDS = 365.25 * 86400
FEDERATED_LIFETIME_CEILING = 3600


@dataclass(frozen=True)
class RiskParameters:
    n_keys: float = 1000
    t_long: float = YEAR_SECONDS
    i_blast: float = 10.0
    n_auths: float = 1000
    t_short: float = 3600
    i_scoped: float = 1.0
    n_idp: float = 3

    def __post_init__(self) -> None:
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValueError(f"{f.name} must be a number")
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{f.name} must be finite and >= 0")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RiskParameters":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown risk parameters: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> "RiskParameters":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()) or {})

    def federated_dominates(self) -> bool:
        """True when the federated side is no worse on any factor and scores lower."""
        return (
            self.t_short <= self.t_long
            and self.i_scoped <= self.i_blast
            and risk_wif(self) < risk_legacy(self)
        )


def risk_legacy(p: RiskParameters) -> float:
    return p.n_keys * p.t_long * p.i_blast


def risk_wif(p: RiskParameters) -> float:
    return p.n_auths * p.t_short * p.i_scoped


def lifetime_band(seconds: float) -> str:
    if seconds <= FEDERATED_LIFETIME_CEILING:
        return "Minutes"
    if seconds <= 86400:
        return "Hours"
    if seconds < 30 * 86400:
        return "Days"
    return "Months to Years"


def _human_duration(seconds: float) -> str:
    for unit, size in (("y", YEAR_SECONDS), ("d", 86400), ("h", 3600), ("min", 60)):
        if seconds >= size:
            return f"{seconds / size:g} {unit}"
    return f"{seconds:g} s"


@dataclass(frozen=True)
class ReportRow:
    factor: str
    legacy: str
    federated: str
    control: str


@dataclass(frozen=True)
class ComparisonTable:
    params: RiskParameters
    rows: tuple[ReportRow, ...]
    r_legacy: float
    r_wif: float
    static_secrets_federated: int
    notes: tuple[str, ...]

    @property
    def ratio(self) -> float:
        return self.r_legacy / self.r_wif if self.r_wif else math.inf

    @property
    def lower_risk_model(self) -> str:
        return "federated" if self.r_wif < self.r_legacy else "legacy"

    def to_dict(self) -> dict[str, Any]:
        return {
            "parameters": dataclasses.asdict(self.params),
            "rows": [dataclasses.asdict(r) for r in self.rows],
            "risk": {
                "legacy": self.r_legacy,
                "federated": self.r_wif,
                "ratio": None if math.isinf(self.ratio) else self.ratio,
                "units": "relative",
                "lower_risk_model": self.lower_risk_model,
            },
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def render_text(self) -> str:
        header = ("Risk Factor", "Legacy Model", "Federated Model", "Mechanism of Control")
        table = [header] + [(r.factor, r.legacy, r.federated, r.control) for r in self.rows]
        widths = [max(len(row[i]) for row in table) for i in range(4)]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in table]
        lines.insert(1, "  ".join("-" * w for w in widths))
        ratio = "inf" if math.isinf(self.ratio) else f"{self.ratio:,.1f}"
        lines += [
            "",
            f"R_legacy = n_keys * t_long * i_blast   = {self.r_legacy:,.6g}",
            f"R_wif    = n_auths * t_short * i_scoped = {self.r_wif:,.6g}",
            f"R_legacy / R_wif = {ratio}  (relative units; lower risk: {self.lower_risk_model})",
            "",
        ]
        lines += [f"[{i}] {note}" for i, note in enumerate(self.notes, 1)]
        return "\n".join(lines)


def complexity_report(p: RiskParameters, measured_token_lifetime: float | None = None) -> ComparisonTable:
    """Build the four-row comparison. ``measured_token_lifetime`` (seconds), when
    given, replaces ``t_short`` in the lifetime row."""
    t_short = p.t_short if measured_token_lifetime is None else measured_token_lifetime
    blast_label = "High (Broad Permissions)" if p.i_blast > p.i_scoped else "Comparable"
    scoped_label = "Low (Scoped)" if p.i_scoped < p.i_blast else "Comparable"
    rows = (
        ReportRow(
            "Credential Lifetime",
            f"{lifetime_band(p.t_long)} ({_human_duration(p.t_long)})",
            f"{lifetime_band(t_short)} ({_human_duration(t_short)})",
            "OIDC Token Expiration (exp claim)",
        ),
        ReportRow(
            "Blast Radius",
            f"{blast_label} [i_blast={p.i_blast:g}]",
            f"{scoped_label} [i_scoped={p.i_scoped:g}]",
            "Token Audience Scoping (aud claim)",
        ),
        ReportRow(
            "Static Secrets",
            f"High ({p.n_keys:g} keys)",
            "Zero (0)",
            "On-Demand Credential Exchange",
        ),
        ReportRow(
            "Operational Complexity",
            f"Linear (O(N_keys), N_keys={p.n_keys:g})",
            f"Near-Constant (O(N_IdP), N_IdP={p.n_idp:g})",
            "Centralized Trust Policy",
        ),
    )
    notes = (
        "i_blast and i_scoped are free dimensionless weights; the defaults (10 and 1) are illustrative.",
        f"A year is taken as {YEAR_SECONDS:,.0f} s (365.25 days).",
        "Cost effects (engineering hours for rotation and audits, breach cost avoidance) are "
        "discussed qualitatively only and are not part of the score.",
    )
    return ComparisonTable(p, rows, risk_legacy(p), risk_wif(p), 0, notes)


def demo_parameters() -> RiskParameters:
    return RiskParameters.from_file(Path(__file__).with_name("demo_params.yaml"))
