from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence
from typing import Any

from .config import GENERIC_CRITERIA, AttributeMode
from .errors import ParseError
from .llm_gateway import Gateway, request_json
from .prompts import (
    ATTRIBUTE_TABLE_SYSTEM_PROMPT,
    DYNAMIC_UTILITY_TEMPLATE,
    GENERIC_UTILITY_TEMPLATE,
    STATIC_UTILITY_TEMPLATE,
    UTILITY_OUTPUT_FORMAT,
    WEIGHTED_SUFFIX,
    render_attribute_list,
    render_pair,
)
from .types import VERDICT_VALUES, AttributeComparison, ChatRequest, Product, UtilityReport

logger = logging.getLogger(__name__)

SCORES = {"better": 1, "worse": -1, "same": 0, "mixed": 0}
MIN_WEIGHT, MAX_WEIGHT = 1, 3


def net_utility(comparisons: Iterable[AttributeComparison], weighted: bool) -> int:
    if weighted:
        return sum(c.weight * SCORES[c.verdict] for c in comparisons)
    return sum(SCORES[c.verdict] for c in comparisons)


def _system_prompt(mode: AttributeMode, target: Product) -> tuple[str, list[str] | None]:
    if mode.mode == "generic":
        criteria = list(GENERIC_CRITERIA)
        text = GENERIC_UTILITY_TEMPLATE.format(count=len(criteria), attribute_list=render_attribute_list(criteria))
        return text, None
    if mode.mode == "static":
        attrs = mode.attributes_for(target.category)
        text = STATIC_UTILITY_TEMPLATE.format(count=len(attrs), attribute_list=render_attribute_list(attrs))
        return text, attrs
    text = DYNAMIC_UTILITY_TEMPLATE.format(top_n=mode.top_n)
    if mode.weighted:
        text += WEIGHTED_SUFFIX
    return text, None


def build_utility_prompt(
    mode: AttributeMode,
    target: Product,
    neighbor: Product,
    gateway: Gateway | None = None,
) -> ChatRequest:
    system, attrs = _system_prompt(mode, target)
    system += UTILITY_OUTPUT_FORMAT
    user = render_pair(target, neighbor)
    mode_payload: dict[str, Any] = {"mode": mode.mode, "top_n": mode.top_n}
    if attrs is not None:
        mode_payload["attributes"] = attrs
    payload = {"target": target.describe(), "neighbor": neighbor.describe(), "mode": mode_payload}
    if gateway is not None:
        return gateway.request(system, user, role="utility", payload=payload)
    return ChatRequest(system, user, role="utility", payload=payload)


def parse_comparisons(obj: dict[str, Any]) -> tuple[AttributeComparison, ...]:
    rows = obj.get("comparisons")
    if not isinstance(rows, list):
        raise ParseError("utility reply has no comparisons list")
    out = []
    for row in rows:
        if not isinstance(row, dict) or not row.get("attribute"):
            raise ParseError(f"malformed comparison entry: {row!r}")
        verdict = row.get("verdict")
        if verdict not in VERDICT_VALUES:
            raise ParseError(f"attribute {row['attribute']!r}: verdict must be better/worse/same/mixed, got {verdict!r}")
        try:
            weight = int(row.get("weight", MIN_WEIGHT))
        except (TypeError, ValueError):
            weight = MIN_WEIGHT
        weight = max(MIN_WEIGHT, min(weight, MAX_WEIGHT))
        out.append(AttributeComparison(str(row["attribute"]), verdict, weight, str(row.get("analysis", ""))))  # type: ignore[arg-type]
    return tuple(out)


def compare_pair(
    gateway: Gateway,
    mode: AttributeMode,
    target: Product,
    neighbor: Product,
    parse_retries: int = 1,
) -> UtilityReport:
    request = build_utility_prompt(mode, target, neighbor, gateway)
    comparisons, usage, error = request_json(
        gateway, request, parse_comparisons, stage="utility", neighbor_id=neighbor.id, parse_retries=parse_retries
    )
    snapshot = mode.snapshot()
    if comparisons is None:
        return UtilityReport(neighbor.id, (), 0, snapshot, mode.weighted, valid=False, error=error, usage=usage)

    degenerate = not comparisons
    if degenerate:
        logger.warning("No comparable attributes between %s and %s; net utility 0", target.id, neighbor.id)
    return UtilityReport(
        neighbor_id=neighbor.id,
        comparisons=comparisons,
        net_utility=net_utility(comparisons, mode.weighted),
        mode=snapshot,
        weighted=mode.weighted,
        degenerate=degenerate,
        usage=usage,
    )


def recompute_net_utility(report: UtilityReport) -> int:
    return net_utility(report.comparisons, report.weighted)


def bootstrap_static_table(gateway: Gateway, categories: Sequence[str]) -> dict[str, list[str]]:
    """One backend call per category; Brand and Quantity are always kept in the list."""
    table: dict[str, list[str]] = {}
    for category in sorted(set(categories)):
        request = gateway.request(
            ATTRIBUTE_TABLE_SYSTEM_PROMPT,
            f"Category: {category}",
            role="attributes",
            payload={"category": category},
        )

        def parse(obj: dict[str, Any]) -> list[str]:
            attrs = obj.get("attributes")
            if not isinstance(attrs, list) or not attrs:
                raise ParseError("attribute table reply has no attributes list")
            return [str(a) for a in attrs]

        attrs, _, error = request_json(gateway, request, parse, stage="attributes")
        if attrs is None:
            logger.warning("Could not bootstrap attributes for %s (%s); using generic criteria", category, error)
            attrs = list(GENERIC_CRITERIA)
        lowered = {a.lower() for a in attrs}
        for required in ("brand", "quantity"):
            if required not in lowered:
                attrs.append(required)
        table[category] = attrs
    return table
