"""Leaderboard assembly and table rendering.

Methods are ranked by MRAE alone (ascending); RMSE is reported alongside but
never used for ordering. Ties break by RMSE, then method name, so every input
produces one total order with ranks contiguous from 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from hsibench.robustness import _TEXT_HEADERS, AUX_COLUMNS

#: Auxiliary columns in report order (the baseline column is the headline
#: score and lives in the leaderboard instead).
AUX_REPORT_COLUMNS = AUX_COLUMNS[1:]


@dataclass(frozen=True)
class LeaderboardRow:
    method: str
    mrae: float
    rmse: float

    def __post_init__(self) -> None:
        if not self.method:
            raise ValueError("method name must be nonempty")
        if "," in self.method or "\n" in self.method:
            raise ValueError(f"method name {self.method!r} contains a delimiter")
        for label, value in (("mrae", self.mrae), ("rmse", self.rmse)):
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{label} must be finite and >= 0, got {value}")


@dataclass(frozen=True)
class Leaderboard:
    """Rows sorted by (mrae, rmse, method); rank of rows[i] is i + 1."""

    rows: tuple[LeaderboardRow, ...]

    def __post_init__(self) -> None:
        names = [r.method for r in self.rows]
        if len(set(names)) != len(names):
            raise ValueError("duplicate method names in leaderboard")
        ordered = sorted(self.rows, key=lambda r: (r.mrae, r.rmse, r.method))
        object.__setattr__(self, "rows", tuple(ordered))

    def __len__(self) -> int:
        return len(self.rows)

    def rank_of(self, method: str) -> int:
        for i, row in enumerate(self.rows):
            if row.method == method:
                return i + 1
        raise KeyError(method)


def build_leaderboard(scores: Iterable[tuple[str, float, float]]) -> Leaderboard:
    """Assemble from (method, mrae, rmse) triples in any order."""
    return Leaderboard(tuple(LeaderboardRow(m, a, r) for m, a, r in scores))


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def _five(value: float) -> str:
    return f"{value:.5f}"


def leaderboard_to_csv(board: Leaderboard) -> str:
    """Machine-readable form: full-precision values, one row per method."""
    lines = ["rank,method,mrae,rmse"]
    for i, row in enumerate(board.rows, start=1):
        lines.append(f"{i},{row.method},{row.mrae!r},{row.rmse!r}")
    return "\n".join(lines) + "\n"


def leaderboard_from_csv(text: str) -> Leaderboard:
    """Inverse of :func:`leaderboard_to_csv`; ignores ``#`` comment lines."""
    rows = []
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0] != "rank,method,mrae,rmse":
        raise ValueError("not a leaderboard csv: missing 'rank,method,mrae,rmse' header")
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 4:
            raise ValueError(f"malformed leaderboard row: {ln!r}")
        rows.append(LeaderboardRow(parts[1], float(parts[2]), float(parts[3])))
    return Leaderboard(tuple(rows))


def leaderboard_to_markdown(board: Leaderboard, title: str | None = None) -> str:
    lines = []
    if title:
        lines += [f"## {title}", ""]
    lines += [
        "| Rank | Method | MRAE | RMSE |",
        "| ---: | :--- | ---: | ---: |",
    ]
    for i, row in enumerate(board.rows, start=1):
        lines.append(f"| {i} | {row.method} | {_five(row.mrae)} | {_five(row.rmse)} |")
    return "\n".join(lines) + "\n"


def leaderboard_to_text(board: Leaderboard) -> str:
    headers = ["Rank", "Method", "MRAE", "RMSE"]
    body = [
        [str(i), row.method, _five(row.mrae), _five(row.rmse)]
        for i, row in enumerate(board.rows, start=1)
    ]
    widths = [
        max(len(headers[i]), *(len(r[i]) for r in body)) if body else len(headers[i])
        for i in range(4)
    ]
    out = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers))]
    out.extend("  ".join(c.ljust(widths[i]) for i, c in enumerate(row)) for row in body)
    return "\n".join(out) + "\n"


def parse_aux_means(text: str) -> dict:
    """Extract the per-column means from an auxiliary-suite CSV (its final
    ``mean`` row); empty cells come back as None."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or not lines[0].startswith("scene,"):
        raise ValueError("not an auxiliary csv: missing 'scene,...' header")
    columns = lines[0].split(",")[1:]
    mean_rows = [ln for ln in lines[1:] if ln.split(",", 1)[0] == "mean"]
    if not mean_rows:
        raise ValueError("auxiliary csv has no 'mean' row")
    cells = mean_rows[-1].split(",")[1:]
    if len(cells) != len(columns):
        raise ValueError("auxiliary csv mean row does not match header")
    return {c: (float(v) if v else None) for c, v in zip(columns, cells)}


def aux_means_to_markdown(means_by_method: Mapping[str, Mapping], title: str | None = None) -> str:
    """One row per method, auxiliary columns in report order; absent or
    inapplicable cells render as '-'."""
    lines = []
    if title:
        lines += [f"## {title}", ""]
    headers = ["Method"] + [_TEXT_HEADERS[c] for c in AUX_REPORT_COLUMNS]
    lines.append("| " + " | ".join(headers) + " |")
    lines.append("| :--- |" + " ---: |" * len(AUX_REPORT_COLUMNS))
    for method in sorted(means_by_method):
        means = means_by_method[method]
        cells = [
            "-" if means.get(c) is None else _five(means[c]) for c in AUX_REPORT_COLUMNS
        ]
        lines.append("| " + " | ".join([method] + cells) + " |")
    return "\n".join(lines) + "\n"


def render_report(
    board: Leaderboard,
    aux_means_by_method: Mapping[str, Mapping] | None = None,
    heading: str = "Spectral reconstruction benchmark",
) -> str:
    """Full Markdown report: leaderboard, then (if present) the auxiliary
    robustness table."""
    parts = [f"# {heading}", "", leaderboard_to_markdown(board, title="Leaderboard")]
    if aux_means_by_method:
        parts += ["", aux_means_to_markdown(aux_means_by_method, title="Robustness")]
    return "\n".join(parts)
