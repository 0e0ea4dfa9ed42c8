"""Fidelity and diversity metrics for generated tables, plus the token cost model.

Diversity: vocabulary (distinct words) and ISNF (mean pairwise n-gram Jaccard).
Fidelity: histogram KL divergence for numerical fields and exact optimal
transport distance, under a case-folded edit-distance ground cost, for the rest.
"""

import json
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from nltk import ngrams
from nltk.metrics.distance import edit_distance
from scipy import sparse, stats
from scipy.optimize import linprog

from utils.config import MetricConfig
from utils.errors import MetricError
from utils.log import get_logger
from utils.schema import FieldKind, Table

logger = get_logger(__name__)


# -- diversity -----------------------------------------------------------


def vocabulary(values: Sequence[str]) -> int:
    return len({token for value in values for token in value.split()})


def isnf(values: Sequence[str], n: int = 1) -> float:
    """Mean Jaccard similarity of word n-gram sets over all unordered pairs"""
    if len(values) < 2:
        raise MetricError(f"ISNF needs at least 2 values, got {len(values)}")
    if n < 1:
        raise MetricError("n-gram order must be at least 1")

    # identical n-gram sets are grouped so repetitive columns stay cheap
    groups = Counter(frozenset(ngrams(value.split(), n)) for value in values)
    keys = list(groups)
    counts = np.array([groups[key] for key in keys], dtype=float)
    sizes = np.array([len(key) for key in keys], dtype=float)

    same = float(np.sum(counts * (counts - 1) / 2))

    index: Dict[Tuple[str, ...], int] = {}
    rows, cols = [], []
    for row, key in enumerate(keys):
        for gram in key:
            rows.append(row)
            cols.append(index.setdefault(gram, len(index)))

    cross = 0.0
    if cols:
        incidence = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(keys), len(index)))
        shared = sparse.triu(incidence @ incidence.T, k=1).tocoo()
        union = sizes[shared.row] + sizes[shared.col] - shared.data
        cross = float(np.sum(counts[shared.row] * counts[shared.col] * shared.data / union))

    total = len(values) * (len(values) - 1) / 2
    return min(1.0, (same + cross) / total)


# -- numerical fidelity --------------------------------------------------


def numeric_values(values: Sequence[str]) -> Tuple[np.ndarray, int]:
    """Finite reals parsed from the cells, and how many cells were dropped"""
    parsed = pd.to_numeric(pd.Series(list(values), dtype=object), errors="coerce").to_numpy(dtype=float)
    keep = np.isfinite(parsed)
    return parsed[keep], int((~keep).sum())


def _smoothed(counts: np.ndarray, epsilon: float) -> np.ndarray:
    """Bin probabilities with epsilon added to every bin, renormalised"""
    probs = counts / counts.sum() + epsilon
    return probs / probs.sum()


def _histogram_kl(gen: np.ndarray, ref: np.ndarray, cfg: MetricConfig) -> float:
    lo, hi = float(ref.min()), float(ref.max())
    if not hi > lo:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, cfg.kl_bins + 1)
    p = _smoothed(np.histogram(np.clip(gen, lo, hi), bins=edges)[0], cfg.kl_epsilon)
    q = _smoothed(np.histogram(ref, bins=edges)[0], cfg.kl_epsilon)
    return max(0.0, float(stats.entropy(p, q)))


def _numeric_pair(gen: Sequence[str], ref: Sequence[str], field: Optional[str]) -> Tuple[np.ndarray, np.ndarray, int]:
    g, g_dropped = numeric_values(gen)
    r, r_dropped = numeric_values(ref)
    if g_dropped or r_dropped:
        logger.info("numeric_cells_dropped", field=field, generated=g_dropped, reference=r_dropped)
    if not len(g) or not len(r):
        side = "generated" if not len(g) else "reference"
        raise MetricError(f"no parseable numbers in the {side} values" + (f" of field {field!r}" if field else ""))
    return g, r, g_dropped


def kl_divergence_numeric(gen: Sequence[str], ref: Sequence[str], cfg: Optional[MetricConfig] = None) -> float:
    """KL(gen || ref) in nats over bins spanning the reference range"""
    g, r, _ = _numeric_pair(gen, ref, None)
    return _histogram_kl(g, r, cfg or MetricConfig())


# -- categorical fidelity ------------------------------------------------


def edit_cost(a: str, b: str) -> float:
    """Case-folded Levenshtein distance scaled into [0, 1]"""
    a, b = a.casefold(), b.casefold()
    if a == b:
        return 0.0
    return edit_distance(a, b) / max(len(a), len(b))


def _top_categories(values: Sequence[str], cap: int) -> Tuple[List[Optional[str]], np.ndarray]:
    """Top `cap` labels by frequency; None stands for the pooled remainder"""
    counts = Counter(values)
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    kept = ranked[:cap]
    labels: List[Optional[str]] = [label for label, _ in kept]
    mass = [count for _, count in kept]
    rest = sum(count for _, count in ranked[cap:])
    if rest:
        labels.append(None)
        mass.append(rest)
    weights = np.asarray(mass, dtype=float)
    return labels, weights / weights.sum()


def _ground_cost(a: Optional[str], b: Optional[str]) -> float:
    if a is None or b is None:
        return 0.0 if a is b else 1.0
    return edit_cost(a, b)


def ot_distance(gen: Sequence[str], ref: Sequence[str], cfg: Optional[MetricConfig] = None) -> float:
    """Exact optimal transport cost between the two empirical category distributions"""
    if not len(gen) or not len(ref):
        raise MetricError("optimal transport needs non-empty value lists")
    cfg = cfg or MetricConfig()

    src_labels, p = _top_categories(gen, cfg.ot_category_cap)
    dst_labels, q = _top_categories(ref, cfg.ot_category_cap)
    m, n = len(p), len(q)
    cost = np.array([[_ground_cost(a, b) for b in dst_labels] for a in src_labels], dtype=float)

    # x[i, j] flattened row-major: rows ship p[i], columns receive q[j]
    a_eq = sparse.vstack([
        sparse.kron(sparse.identity(m), np.ones((1, n))),
        sparse.kron(np.ones((1, m)), sparse.identity(n)),
    ]).tocsr()
    b_eq = np.concatenate([p, q * (p.sum() / q.sum())])
    result = linprog(cost.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if result.status != 0:
        raise MetricError(f"transport problem could not be solved: {result.message}")
    return max(0.0, float(result.fun))


# -- dataset report ------------------------------------------------------


@dataclass(frozen=True)
class FieldMetrics:
    name: str
    kind: FieldKind
    vocabulary: int
    isnf: Optional[float]
    kl: Optional[float] = None
    ot: Optional[float] = None
    reference_vocabulary: int = 0
    reference_isnf: Optional[float] = None
    dropped_cells: int = 0


@dataclass(frozen=True)
class DatasetMeans:
    vocabulary: float
    isnf: Optional[float]
    kl: Optional[float]
    ot: Optional[float]
    reference_vocabulary: float
    reference_isnf: Optional[float]


@dataclass(frozen=True)
class MetricReport:
    per_field: Tuple[FieldMetrics, ...]
    dataset_means: DatasetMeans

    def field(self, name: str) -> FieldMetrics:
        for metrics in self.per_field:
            if metrics.name == name:
                return metrics
        raise KeyError(name)

    def to_document(self) -> Dict[str, Any]:
        fields = []
        for metrics in self.per_field:
            entry = asdict(metrics)
            entry["kind"] = metrics.kind.value
            fields.append(entry)
        return {"fields": fields, "means": asdict(self.dataset_means)}

    def to_json(self) -> str:
        return json.dumps(self.to_document(), indent=2, ensure_ascii=False) + "\n"


def _mean(values: Sequence[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def parse_kinds(raw: str) -> Dict[str, FieldKind]:
    """Read a {field: kind} JSON mapping, order preserved"""
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as e:
        raise MetricError(f"kinds file is not valid JSON: line {e.lineno} column {e.colno}: {e.msg}")
    if not isinstance(doc, dict) or not doc:
        raise MetricError("kinds file must be a non-empty JSON object of field name to kind")
    kinds = {}
    for name, token in doc.items():
        try:
            kinds[name] = FieldKind(token)
        except ValueError:
            raise MetricError(f"field {name!r}: unknown kind {token!r}")
    return kinds


def evaluate(gen: Table, ref: Table, kinds: Dict[str, FieldKind], cfg: Optional[MetricConfig] = None) -> MetricReport:
    """Per-field diversity and fidelity; KL for numerical fields, OT for the rest"""
    cfg = cfg or MetricConfig()
    missing = [f"generated:{name}" for name in kinds if name not in gen.names]
    missing += [f"reference:{name}" for name in kinds if name not in ref.names]
    if missing:
        raise MetricError(f"missing columns: {', '.join(missing)}")

    per_field = []
    for name, kind in kinds.items():
        g, r = gen.column(name), ref.column(name)
        kl = ot = None
        dropped = 0
        if kind == FieldKind.NUMERICAL:
            g_num, r_num, dropped = _numeric_pair(g, r, name)
            kl = _histogram_kl(g_num, r_num, cfg)
        else:
            ot = ot_distance(g, r, cfg)
        per_field.append(
            FieldMetrics(
                name=name,
                kind=kind,
                vocabulary=vocabulary(g),
                isnf=isnf(g, cfg.ngram_order) if len(g) >= 2 else None,
                kl=kl,
                ot=ot,
                reference_vocabulary=vocabulary(r),
                reference_isnf=isnf(r, cfg.ngram_order) if len(r) >= 2 else None,
                dropped_cells=dropped,
            )
        )

    means = DatasetMeans(
        vocabulary=float(np.mean([m.vocabulary for m in per_field])),
        isnf=_mean([m.isnf for m in per_field]),
        kl=_mean([m.kl for m in per_field]),
        ot=_mean([m.ot for m in per_field]),
        reference_vocabulary=float(np.mean([m.reference_vocabulary for m in per_field])),
        reference_isnf=_mean([m.reference_isnf for m in per_field]),
    )
    return MetricReport(per_field=tuple(per_field), dataset_means=means)


# -- cost model ----------------------------------------------------------


@dataclass(frozen=True)
class CostEstimate:
    tokens: int
    usd: float
    hours: float

    def to_csv_row(self) -> str:
        return f"{self.tokens},{self.usd:.6g},{self.hours:.6g}"


def estimate_cost_time(tokens: int, usd_per_mtok: float, tokens_per_second: float) -> CostEstimate:
    """Dollar cost and wall-clock hours of generating `tokens` output tokens"""
    if tokens_per_second <= 0:
        raise MetricError("tokens per second must be positive")
    if tokens < 0:
        raise MetricError("token count must be non-negative")
    return CostEstimate(
        tokens=tokens,
        usd=tokens / 1_000_000 * usd_per_mtok,
        hours=tokens / tokens_per_second / 3600,
    )


def project_costs(
    plan_tokens: int,
    direct_tokens_per_record: float,
    record_counts: Sequence[int],
    price: float,
    tps: float,
) -> pd.DataFrame:
    """One-off plan spend against a record-by-record generator at each record count"""
    rows = []
    for records in record_counts:
        plan = estimate_cost_time(plan_tokens, price, tps)
        direct = estimate_cost_time(int(round(direct_tokens_per_record * records)), price, tps)
        rows.append({
            "records": records,
            "plan_tokens": plan.tokens,
            "plan_usd": plan.usd,
            "plan_hours": plan.hours,
            "direct_tokens": direct.tokens,
            "direct_usd": direct.usd,
            "direct_hours": direct.hours,
        })
    return pd.DataFrame(rows)
