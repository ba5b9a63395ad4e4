"""Proximity and validity summaries over a set of counterfactual results."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import INTERACTION_TYPES, NUM_TYPES

TABLE_COLUMNS = (
    "Views Added (%)",
    "Saves Added (%)",
    "Submits Added (%)",
    "Views Removed (%)",
    "Saves Removed (%)",
    "Submits Removed (%)",
    "User Preferences Similarity (%)",
    "Listing Price Similarity (%)",
    "Average Lift (%)",
    "Total Increase (%)",
    "(gamma, zeta, beta, eta)",
)
NUM_BINS = 40


class ReportError(ValueError):
    pass


@dataclass
class StudyReport:
    added_pct: tuple  # per interaction type, macro-averaged over graphs
    removed_pct: tuple
    user_similarity: float
    listing_similarity: float
    average_lift: float
    total_increase: float
    coefficients: tuple = ()
    lift_vs_original: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lift_vs_random: np.ndarray = field(default_factory=lambda: np.zeros(0))
    # graphs whose original edge count of a type was zero (denominator clamped to 1)
    zero_edge_graphs: tuple = (0, 0, 0)

    @property
    def num_graphs(self) -> int:
        return len(self.lift_vs_original)

    def row(self) -> list[str]:
        vals = [*self.added_pct, *self.removed_pct, self.user_similarity, self.listing_similarity,
                self.average_lift, self.total_increase]
        return [f"{v:.2f}" for v in vals] + [format_coefficients(self.coefficients)]


def format_coefficients(coefs) -> str:
    return "(" + ", ".join(f"{c:g}" for c in coefs) + ")"


def cosine(a, b) -> float:
    """Cosine similarity; two zero vectors count as identical."""
    a, b = np.ravel(a).astype(float), np.ravel(b).astype(float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 and nb == 0.0:
        return 1.0
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def user_similarity(orig, cf) -> float:
    """Mean per-user cosine between flattened preference histograms."""
    if orig.num_users == 0:
        return 1.0
    return float(np.mean([cosine(orig.user_hist[u], cf.user_hist[u]) for u in range(orig.num_users)]))


def listing_similarity(orig, cf) -> float:
    """Cosine between the normalized listing price vectors of the two graphs."""
    return cosine(orig.normalized_price(), cf.normalized_price())


def relative_lift(new, old) -> np.ndarray:
    return (np.asarray(new, dtype=float) - np.asarray(old, dtype=float)) / np.asarray(old, dtype=float)


def evaluate(results, baseline=None, coefficients=()) -> StudyReport:
    """Aggregate per-graph change percentages, feature similarities and lifts.

    ``baseline`` holds the matched random counterparts, aligned with
    ``results`` graph by graph; when given, each baseline must carry the same
    per-type change counts as its counterfactual.
    """
    results = list(results)
    if not results:
        raise ReportError("evaluate needs at least one result")
    if baseline is not None:
        baseline = list(baseline)
        if len(baseline) != len(results):
            raise ReportError(f"length mismatch: {len(results)} results vs {len(baseline)} baselines")
        for i, (r, b) in enumerate(zip(results, baseline)):
            if b.added_counts() != r.added_counts() or b.removed_counts() != r.removed_counts():
                raise ReportError(f"graph {i}: baseline change counts differ from the counterfactual's")

    added = np.zeros((len(results), NUM_TYPES))
    removed = np.zeros((len(results), NUM_TYPES))
    zero_edges = np.zeros(NUM_TYPES, dtype=int)
    usim, lsim = [], []
    for i, r in enumerate(results):
        counts = np.array([len(e) for e in r.original.interactions])
        zero_edges += counts == 0
        denom = np.maximum(1, counts)
        added[i] = np.array(r.added_counts()) / denom
        removed[i] = np.array(r.removed_counts()) / denom
        usim.append(user_similarity(r.original, r.counterfactual))
        lsim.append(listing_similarity(r.original, r.counterfactual))

    lifts = np.array([r.lift for r in results])
    if baseline is not None:
        vs_random = relative_lift([r.score_counterfactual for r in results], [b.score_counterfactual for b in baseline])
    else:
        vs_random = np.zeros(0)
    return StudyReport(
        added_pct=tuple(float(x) for x in added.mean(axis=0) * 100),
        removed_pct=tuple(float(x) for x in removed.mean(axis=0) * 100),
        user_similarity=float(np.mean(usim) * 100),
        listing_similarity=float(np.mean(lsim) * 100),
        average_lift=float(lifts.mean() * 100),
        total_increase=float(np.mean(lifts > 0) * 100),
        coefficients=tuple(coefficients),
        lift_vs_original=lifts,
        lift_vs_random=vs_random,
        zero_edge_graphs=tuple(int(z) for z in zero_edges),
    )


def histogram(values, bins: int = NUM_BINS):
    """Equal-width counts over the observed range, returned with the bin edges."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return np.zeros(bins, dtype=int), np.linspace(0.0, 1.0, bins + 1)
    counts, edges = np.histogram(values, bins=bins)
    return counts, edges


def write_table(reports, path, names=None):
    """One row per experiment with the fixed column order; ``names`` adds a leading label."""
    reports = list(reports)
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = list(TABLE_COLUMNS)
        if names is not None:
            header = ["experiment"] + header
        w.writerow(header)
        for i, rep in enumerate(reports):
            row = rep.row()
            w.writerow([names[i]] + row if names is not None else row)


def write_histogram(values, path, bins: int = NUM_BINS):
    counts, edges = histogram(values, bins)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])


def emit_report(report: StudyReport, path, name: str | None = None) -> dict:
    """Write the summary row plus one histogram CSV per lift distribution.

    Histograms go next to ``path`` as ``<stem>_lift_vs_original.csv`` and
    ``<stem>_lift_vs_random.csv``. Returns the written paths by role.
    """
    path = Path(path)
    write_table([report], path, names=None if name is None else [name])
    out = {"table": path}
    for key in ("lift_vs_original", "lift_vs_random"):
        p = path.with_name(f"{path.stem}_{key}.csv")
        write_histogram(getattr(report, key), p)
        out[key] = p
    return out


def read_table(path) -> list[dict]:
    """Parse a summary CSV back into dicts of floats (coefficients as a tuple)."""
    rows = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        for rec in reader:
            row = dict(zip(header, rec))
            out = {}
            for k, v in row.items():
                if k == TABLE_COLUMNS[-1]:
                    inner = v.strip("()")
                    out[k] = tuple(float(x) for x in inner.split(",")) if inner else ()
                elif k == "experiment":
                    out[k] = v
                else:
                    out[k] = float(v)
            rows.append(out)
    return rows


def read_histogram(path):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = [(float(lo), float(hi), int(c)) for lo, hi, c in reader]
    edges = np.array([rows[0][0]] + [r[1] for r in rows]) if rows else np.zeros(0)
    return np.array([r[2] for r in rows], dtype=int), edges


def summary_lines(report: StudyReport) -> list[str]:
    lines = [f"graphs: {report.num_graphs}"]
    for name, a, r in zip(INTERACTION_TYPES, report.added_pct, report.removed_pct):
        lines.append(f"{name}: added {a:.2f}% removed {r:.2f}%")
    lines.append(f"user preference similarity {report.user_similarity:.2f}%")
    lines.append(f"listing price similarity {report.listing_similarity:.2f}%")
    lines.append(f"average lift {report.average_lift:.2f}%  total increase {report.total_increase:.2f}%")
    if any(report.zero_edge_graphs):
        flagged = ", ".join(f"{n}={z}" for n, z in zip(INTERACTION_TYPES, report.zero_edge_graphs) if z)
        lines.append(f"graphs with no original edges of a type (denominator clamped to 1): {flagged}")
    return lines
