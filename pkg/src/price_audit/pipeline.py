from __future__ import annotations

import json
import logging
import time
from collections.abc import Callable, Iterable, Sequence
from pathlib import Path
from typing import TypeVar

from joblib import Parallel, delayed

from .catalog import Catalog, knn_neighbors
from .config import PaddingConfig, PipelineConfig
from .decision_engine import decide, llm_decide, place_point, propose_padding
from .errors import PriceAuditError
from .llm_gateway import Gateway
from .relevance_agent import classify_neighbor, filter_relevant
from .types import AssessmentRecord, Decision, NeighborOutcome, PaddingProposal, Product, QuadrantPoint
from .utility_agent import compare_pair

logger = logging.getLogger(__name__)

A = TypeVar("A")
R = TypeVar("R")


def build_gateway(config: PipelineConfig) -> Gateway:
    return Gateway(config.backend, max_concurrency=config.max_concurrency)


def fan_out(fn: Callable[[A], R], items: Sequence[A], n_jobs: int) -> list[R]:
    """Apply fn to items on up to n_jobs threads; results keep input order."""
    if n_jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    return Parallel(n_jobs=min(n_jobs, len(items)), backend="threading")(delayed(fn)(x) for x in items)


def _neighbor_trace(record: AssessmentRecord) -> list[NeighborOutcome]:
    verdicts = {v.neighbor_id: v for v in record.relevance}
    reports = {r.neighbor_id: r for r in record.utility}
    points = {p.neighbor_id: p for p in record.points}
    out = []
    for c in record.candidates:
        v = verdicts[c.product_id]
        if v.error is not None:
            outcome, reason = "relevance-failure", v.error
        elif v.relevance == "Irrelevant":
            outcome, reason = "irrelevant", v.explanation
        elif not reports[c.product_id].valid:
            outcome, reason = "utility-failure", reports[c.product_id].error or "invalid utility report"
        else:
            p = points[c.product_id]
            outcome = "decision"
            reason = f"zone {p.zone}: net utility {p.net_utility:+d}, relative gap {p.rel_gap:+.3f}"
        out.append(NeighborOutcome(c.product_id, c.rank, c.similarity, outcome, reason))  # type: ignore[arg-type]
    return out


def _all_backend_failures(record: AssessmentRecord) -> bool:
    if not record.candidates:
        return False
    failed = {v.neighbor_id for v in record.relevance if v.error and v.error.startswith("backend-failure")}
    failed |= {r.neighbor_id for r in record.utility if r.error and r.error.startswith("backend-failure")}
    return failed == {c.product_id for c in record.candidates}


def assess_target(
    catalog: Catalog,
    config: PipelineConfig,
    target_id: str,
    gateway: Gateway | None = None,
) -> AssessmentRecord:
    """Relevance -> utility -> quadrant decision for one target, with its full trace."""
    started = time.perf_counter()
    gateway = gateway or build_gateway(config)
    target = catalog.get(target_id)
    record = AssessmentRecord(target_id=target_id, config=config.snapshot())

    record.candidates = knn_neighbors(catalog, target_id, config.k, config.fallback_dim)
    neighbors: dict[str, Product] = {c.product_id: catalog.get(c.product_id) for c in record.candidates}

    record.relevance = fan_out(
        lambda c: classify_neighbor(gateway, target, neighbors[c.product_id], config.parse_retries),
        record.candidates,
        config.max_concurrency,
    )
    relevant_ids = filter_relevant(record.relevance, record.candidates)

    record.utility = fan_out(
        lambda nid: compare_pair(gateway, config.attribute_mode, target, neighbors[nid], config.parse_retries),
        relevant_ids,
        config.max_concurrency,
    )
    usable = [r for r in record.utility if r.valid]

    padding = config.padding
    if padding.padding_mode == "llm" and usable:
        summary = [
            {
                "id": r.neighbor_id,
                "title": neighbors[r.neighbor_id].title,
                "price": neighbors[r.neighbor_id].price,
                "net_utility": r.net_utility,
            }
            for r in usable
        ]
        record.padding_used = propose_padding(gateway, target, summary)
        padding = padding.model_copy(update={"price_padding": record.padding_used.fraction})
    elif padding.padding_mode == "llm":
        record.padding_used = PaddingProposal(padding.price_padding, "", note="no usable neighbors; padding not proposed")
    else:
        record.padding_used = PaddingProposal(padding.price_padding, "fixed")

    record.points = [
        place_point(target, neighbors[r.neighbor_id], r.net_utility, padding) for r in usable
    ]
    record.decision = _decide(gateway, config, target, record.points, padding)
    if not record.points and _all_backend_failures(record):
        d = record.decision
        record.decision = Decision("Unsure", "no usable evidence", d.strategy, d.evidence, d.source, d.notes, d.usage)

    record.neighbor_trace = _neighbor_trace(record)
    record.usage = [u for v in record.relevance for u in v.usage]
    record.usage += [u for r in record.utility for u in r.usage]
    record.usage += list(record.padding_used.usage) + list(record.decision.usage)
    record.duration_seconds = time.perf_counter() - started
    logger.info("Assessed %s: %s (%.2fs)", target_id, record.decision.verdict, record.duration_seconds)
    return record


def _decide(
    gateway: Gateway,
    config: PipelineConfig,
    target: Product,
    points: list[QuadrantPoint],
    padding: PaddingConfig,
) -> Decision:
    if config.decision_mode == "llm":
        return llm_decide(gateway, points, config.strategy, target, padding, config.parse_retries)
    return decide(points, config.strategy)


def assess_batch(
    catalog: Catalog,
    config: PipelineConfig,
    target_ids: Iterable[str],
    gateway: Gateway | None = None,
) -> list[AssessmentRecord]:
    gateway = gateway or build_gateway(config)
    records = []
    for target_id in target_ids:
        try:
            records.append(assess_target(catalog, config, target_id, gateway))
        except PriceAuditError as exc:
            logger.error("Assessment of %s failed: %s", target_id, exc)
            records.append(
                AssessmentRecord(
                    target_id=target_id,
                    config=config.snapshot(),
                    error=str(exc),
                    error_category=exc.category,
                )
            )
    return records


def dump_record(record: AssessmentRecord, include_timing: bool = False) -> str:
    return json.dumps(record.to_dict(include_timing=include_timing), sort_keys=True)


def write_records(records: Iterable[AssessmentRecord], path: str, include_timing: bool = False) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", encoding="utf-8") as f:
        for record in records:
            f.write(dump_record(record, include_timing) + "\n")
    return p


def usage_totals(records: Iterable[AssessmentRecord]) -> dict[str, int]:
    totals = {"calls": 0, "prompt_tokens": 0, "completion_tokens": 0, "unreported": 0}
    for record in records:
        for key, value in record.usage_totals().items():
            totals[key] += value
    return totals
