from __future__ import annotations

import itertools
import json
import logging
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Literal

import pandas as pd
from pydantic import ValidationError
from sklearn.metrics import cohen_kappa_score, precision_recall_fscore_support

from .catalog import Catalog
from .config import PipelineConfig, deep_merge
from .errors import ConfigError, LabelError, PriceAuditError
from .llm_gateway import Gateway
from .pipeline import assess_batch, build_gateway, usage_totals
from .types import AssessmentRecord, Decision

logger = logging.getLogger(__name__)

SetName = Literal["silver", "one_sided", "edge", "unannotated"]
Label = Literal["outlier", "not_outlier", "unlabeled"]
SET_NAMES: tuple[str, ...] = ("silver", "one_sided", "edge", "unannotated")
BINARY_LABELS = ("outlier", "not_outlier")
UNSURE_POLICY = "Unsure counts as a negative prediction (not flagged) and as agreement on the one-sided set"


@dataclass(frozen=True)
class LabeledItem:
    product_id: str
    label: Label
    annotator_labels: tuple[str, ...] = ()


@dataclass(frozen=True)
class LabeledSet:
    name: SetName
    items: tuple[LabeledItem, ...]

    def __post_init__(self) -> None:
        if self.name not in SET_NAMES:
            raise LabelError(f"unknown set name: {self.name}")
        for item in self.items:
            if self.name == "one_sided" and item.label != "not_outlier":
                raise LabelError(f"one_sided item {item.product_id} must be not_outlier, got {item.label}")
            if self.name == "unannotated" and item.label != "unlabeled":
                raise LabelError(f"unannotated item {item.product_id} must be unlabeled, got {item.label}")
            if self.name in ("silver", "edge") and item.label not in BINARY_LABELS:
                raise LabelError(f"{self.name} item {item.product_id} needs a binary label, got {item.label}")

    @property
    def product_ids(self) -> list[str]:
        return [i.product_id for i in self.items]

    @property
    def labels(self) -> list[str]:
        return [i.label for i in self.items]


def majority_label(annotator_labels: Sequence[str]) -> str | None:
    """Label at least two annotators agree on, if it is the strict majority."""
    counts = Counter(label for label in annotator_labels if label in BINARY_LABELS)
    if not counts:
        return None
    ranked = counts.most_common()
    top, n = ranked[0]
    if n < 2 or (len(ranked) > 1 and ranked[1][1] == n):
        return None
    return top


def load_labels(path: str) -> dict[str, LabeledSet]:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"Label file not found: {path}")

    grouped: dict[str, list[LabeledItem]] = {name: [] for name in SET_NAMES}
    with p.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                product_id = str(row["product_id"])
                set_name = str(row["set"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise LabelError(f"line {lineno}: malformed label row ({exc})") from exc
            if set_name not in grouped:
                raise LabelError(f"line {lineno}: unknown set {set_name!r}")
            annotators = tuple(str(a) for a in row.get("annotator_labels") or ())
            label = row.get("label")
            if label is None:
                if set_name == "one_sided":
                    label = "not_outlier"
                elif set_name == "unannotated":
                    label = "unlabeled"
                else:
                    label = majority_label(annotators)
                    if label is None:
                        logger.info("line %d: %s has no 2-annotator majority; skipped", lineno, product_id)
                        continue
            grouped[set_name].append(LabeledItem(product_id, label, annotators))

    return {name: LabeledSet(name, tuple(items)) for name, items in grouped.items() if items}  # type: ignore[arg-type]


def _verdict(prediction: str | Decision | AssessmentRecord | None) -> str | None:
    if isinstance(prediction, AssessmentRecord):
        return prediction.verdict
    if isinstance(prediction, Decision):
        return prediction.verdict
    return prediction


def _flagged(predictions: Sequence[Any]) -> list[int]:
    return [1 if _verdict(p) == "Yes" else 0 for p in predictions]


def _binary(labels: Sequence[str]) -> list[int]:
    out = []
    for label in labels:
        if label not in BINARY_LABELS:
            raise LabelError(f"labels must be outlier/not_outlier, got {label!r}")
        out.append(1 if label == "outlier" else 0)
    return out


def harmonic_f1(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def precision_recall_f1(predictions: Sequence[Any], labels: Sequence[str]) -> tuple[float, float, float]:
    """Positive class is verdict Yes; No and Unsure are negatives."""
    if len(predictions) != len(labels):
        raise LabelError(f"length mismatch: {len(predictions)} predictions vs {len(labels)} labels")
    y_true = _binary(labels)
    y_pred = _flagged(predictions)
    if not y_true:
        return 0.0, 0.0, 0.0
    p, r, f1, _ = precision_recall_fscore_support(
        y_true, y_pred, average="binary", pos_label=1, zero_division=0
    )
    return float(p), float(r), float(f1)


def agreement_rate(predictions: Sequence[Any], labels: Sequence[str]) -> float:
    if len(predictions) != len(labels):
        raise LabelError(f"length mismatch: {len(predictions)} predictions vs {len(labels)} labels")
    if not labels:
        raise LabelError("agreement_rate needs a nonempty one-sided set")
    if any(label != "not_outlier" for label in labels):
        raise LabelError("agreement_rate is defined on one-sided (all not_outlier) sets only")
    flagged = _flagged(predictions)
    return (len(flagged) - sum(flagged)) / len(flagged)


def outlier_rate(predictions: Sequence[Any]) -> float:
    if not predictions:
        raise LabelError("outlier_rate needs at least one prediction")
    flagged = _flagged(predictions)
    return sum(flagged) / len(flagged)


def cohen_kappa(labels_a: Sequence[Any], labels_b: Sequence[Any]) -> float:
    if len(labels_a) != len(labels_b):
        raise LabelError(f"length mismatch: {len(labels_a)} vs {len(labels_b)}")
    if not labels_a:
        raise LabelError("cohen_kappa needs nonempty label lists")
    if len(set(labels_a) | set(labels_b)) == 1:
        # Both raters constant and equal: p_o = p_e = 1.
        return 1.0
    return float(cohen_kappa_score(list(labels_a), list(labels_b)))


def annotator_kappa(labeled: LabeledSet) -> float:
    pairs = [(i.annotator_labels[0], i.annotator_labels[1]) for i in labeled.items if len(i.annotator_labels) >= 2]
    if not pairs:
        raise LabelError(f"{labeled.name} set has no items with two annotator labels")
    a, b = zip(*pairs)
    return cohen_kappa(a, b)


def _dotted(prefix: str, values: Mapping[str, Any]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in values.items():
        if isinstance(value, Mapping):
            out.update(_dotted(f"{prefix}.{key}", value))
        else:
            out[f"{prefix}.{key}"] = value
    return out


@dataclass(frozen=True)
class TokenRates:
    """API prices used to turn recorded token counts into a per-item cost."""

    input_rate_per_1k: float
    output_rate_per_1k: float
    batch_size: int = 1


@dataclass
class MetricsRow:
    config: dict[str, Any]
    grid: dict[str, Any] = field(default_factory=dict)
    silver_precision: float | None = None
    silver_recall: float | None = None
    silver_f1: float | None = None
    agreement: float | None = None
    edge_precision: float | None = None
    edge_recall: float | None = None
    edge_f1: float | None = None
    outlier_rate: float | None = None
    annotator_kappa: float | None = None
    n_items: int = 0
    n_errors: int = 0
    usage: dict[str, int] = field(default_factory=dict)
    token_cost_per_item: float | None = None
    error: str | None = None

    def flat(self) -> dict[str, Any]:
        out = _dotted("grid", self.grid)
        out.update(_dotted("config", self.config))
        out.update(_dotted("usage", self.usage))
        out.update({k: v for k, v in asdict(self).items() if k not in ("config", "grid", "usage")})
        return out


def _labeled_kappa(sets: Mapping[str, LabeledSet]) -> float | None:
    for name in ("silver", "edge"):
        labeled = sets.get(name)
        if labeled is not None and any(len(i.annotator_labels) >= 2 for i in labeled.items):
            return annotator_kappa(labeled)
    return None


def per_item_token_cost(totals: Mapping[str, int], n_items: int, rates: TokenRates) -> float:
    """Average recorded tokens per assessed item, priced with token_cost."""
    if n_items < 1:
        raise LabelError("per-item token cost needs at least one assessed item")
    return token_cost(
        totals.get("prompt_tokens", 0) / n_items,
        totals.get("completion_tokens", 0) / n_items,
        rates.input_rate_per_1k,
        rates.output_rate_per_1k,
        rates.batch_size,
    )


def evaluate(
    records: Mapping[str, AssessmentRecord],
    sets: Mapping[str, LabeledSet],
    config: dict[str, Any],
    rates: TokenRates | None = None,
) -> MetricsRow:
    row = MetricsRow(config=config)

    def preds(labeled: LabeledSet) -> list[str | None]:
        return [records[pid].verdict for pid in labeled.product_ids]

    if "silver" in sets:
        row.silver_precision, row.silver_recall, row.silver_f1 = precision_recall_f1(
            preds(sets["silver"]), sets["silver"].labels
        )
    if "one_sided" in sets:
        row.agreement = agreement_rate(preds(sets["one_sided"]), sets["one_sided"].labels)
    if "edge" in sets:
        row.edge_precision, row.edge_recall, row.edge_f1 = precision_recall_f1(preds(sets["edge"]), sets["edge"].labels)
    if "unannotated" in sets:
        row.outlier_rate = outlier_rate(preds(sets["unannotated"]))
    row.annotator_kappa = _labeled_kappa(sets)
    row.n_items = len(records)
    row.n_errors = sum(1 for r in records.values() if r.error is not None)
    row.usage = usage_totals(records.values())
    if rates is not None and records:
        row.token_cost_per_item = per_item_token_cost(row.usage, len(records), rates)
    return row


def _unique_ids(sets: Mapping[str, LabeledSet]) -> list[str]:
    seen: dict[str, None] = {}
    for name in SET_NAMES:
        if name in sets:
            for pid in sets[name].product_ids:
                seen.setdefault(pid, None)
    return list(seen)


def evaluate_config(
    catalog: Catalog,
    sets: Mapping[str, LabeledSet],
    config: PipelineConfig,
    gateway: Gateway | None = None,
    rates: TokenRates | None = None,
) -> tuple[MetricsRow, list[AssessmentRecord]]:
    ids = _unique_ids(sets)
    records = assess_batch(catalog, config, ids, gateway or build_gateway(config))
    by_id = {r.target_id: r for r in records}
    return evaluate(by_id, sets, config.snapshot(), rates), records


@dataclass(frozen=True)
class SweepGrid:
    paddings: list[float | str] = field(default_factory=lambda: [0.5])
    ks: list[int] = field(default_factory=lambda: [7])
    modes: list[str] = field(default_factory=lambda: ["generic"])
    strategies: list[str] = field(default_factory=lambda: ["veto"])

    @property
    def size(self) -> int:
        return len(self.paddings) * len(self.ks) * len(self.modes) * len(self.strategies)

    def points(self) -> Iterable[tuple[float | str, int, str, str]]:
        return itertools.product(self.paddings, self.ks, self.modes, self.strategies)


def grid_config(base: PipelineConfig, padding: float | str, k: int, mode: str, strategy: str) -> PipelineConfig:
    if padding == "llm":
        pad: dict[str, Any] = {"padding_mode": "llm"}
    else:
        pad = {"padding_mode": "fixed", "price_padding": float(padding)}
    update = {"padding": pad, "k": k, "attribute_mode": {"mode": mode}, "strategy": strategy}
    try:
        config = PipelineConfig.model_validate(deep_merge(base.model_dump(), update))
    except ValidationError as exc:
        raise ConfigError(f"invalid sweep point {update}: {exc}") from exc
    if config.attribute_mode.mode == "static" and not config.attribute_mode.static_table:
        raise ConfigError("static attribute mode needs a static_table in the base config")
    return config


def sweep(
    catalog: Catalog,
    sets: Mapping[str, LabeledSet],
    base: PipelineConfig,
    grid: SweepGrid,
    gateway: Gateway | None = None,
    rates: TokenRates | None = None,
) -> list[MetricsRow]:
    """One MetricsRow per grid point, in padding x k x mode x strategy order."""
    if grid.size == 0:
        raise LabelError("sweep grid is empty")
    if not sets:
        raise LabelError("sweep needs at least one labeled set")

    rows = []
    for padding, k, mode, strategy in grid.points():
        point = {"price_padding": padding, "k": k, "attribute_mode": mode, "strategy": strategy}
        try:
            config = grid_config(base, padding, k, mode, strategy)
            row, _ = evaluate_config(catalog, sets, config, gateway, rates)
            row.grid = point
            logger.info("Sweep row %s: F1=%s outlier_rate=%s", point, row.silver_f1, row.outlier_rate)
        except (PriceAuditError, ValueError) as exc:
            logger.error("Sweep row %s failed: %s", point, exc)
            row = MetricsRow(config=base.snapshot(), grid=point, error=str(exc))
        rows.append(row)
    return rows


def metrics_frame(rows: Sequence[MetricsRow]) -> pd.DataFrame:
    return pd.DataFrame([r.flat() for r in rows])


def write_metrics(rows: Sequence[MetricsRow], out_dir: str, stem: str = "metrics") -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{stem}.csv"
    jsonl_path = out / f"{stem}.jsonl"
    with csv_path.open("w", encoding="utf-8", newline="") as f:
        f.write(f"# {UNSURE_POLICY}\n")
        metrics_frame(rows).to_csv(f, index=False)
    with jsonl_path.open("w", encoding="utf-8") as f:
        for r in rows:
            f.write(json.dumps(asdict(r), sort_keys=True) + "\n")
    return csv_path, jsonl_path


@dataclass(frozen=True)
class CostProfile:
    throughput: float
    unit_cost: float


@dataclass(frozen=True)
class CostEstimate:
    hours: float
    cost: float

    def rounded(self) -> CostEstimate:
        return CostEstimate(round(self.hours, 2), round(self.cost, 2))


HUMAN_HOURLY_WAGE = 10.0
COST_PROFILES: dict[str, CostProfile] = {
    "agent": CostProfile(throughput=37.0, unit_cost=0.1053),
    "human": CostProfile(throughput=3.0, unit_cost=HUMAN_HOURLY_WAGE / 3.0),
}


def cost_time(n: float, throughput: float, unit_cost: float) -> CostEstimate:
    if n < 0:
        raise LabelError(f"item count must be nonnegative, got {n}")
    if throughput <= 0:
        raise LabelError(f"throughput must be positive, got {throughput}")
    return CostEstimate(hours=n / throughput, cost=n * unit_cost)


def cost_for_profile(n: float, profile: str) -> CostEstimate:
    try:
        p = COST_PROFILES[profile]
    except KeyError:
        raise LabelError(f"unknown cost profile {profile!r}; choose from {sorted(COST_PROFILES)}") from None
    return cost_time(n, p.throughput, p.unit_cost)


def token_cost(
    prompt_tokens: int,
    completion_tokens: int,
    input_rate_per_1k: float,
    output_rate_per_1k: float,
    batch_size: int = 1,
) -> float:
    """Per-item cost from API token counts and rates, spread over a batch."""
    if batch_size < 1:
        raise LabelError("batch_size must be >= 1")
    total = prompt_tokens / 1000 * input_rate_per_1k + completion_tokens / 1000 * output_rate_per_1k
    return total / batch_size
