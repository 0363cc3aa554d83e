from __future__ import annotations

import logging
from collections.abc import Sequence
from typing import Any

from .errors import ParseError
from .llm_gateway import Gateway, request_json
from .prompts import RELEVANCE_SYSTEM_PROMPT, render_pair
from .types import RELEVANCE_VALUES, ChatRequest, NeighborCandidate, Product, RelevanceVerdict

logger = logging.getLogger(__name__)

MAX_EXPLANATION_WORDS = 50


def build_relevance_prompt(target: Product, neighbor: Product, gateway: Gateway | None = None) -> ChatRequest:
    user = render_pair(target, neighbor)
    payload = {"target": target.describe(), "neighbor": neighbor.describe()}
    if gateway is not None:
        return gateway.request(RELEVANCE_SYSTEM_PROMPT, user, role="relevance", payload=payload)
    return ChatRequest(RELEVANCE_SYSTEM_PROMPT, user, role="relevance", payload=payload)


def _parse_relevance(obj: dict[str, Any]) -> tuple[str, str]:
    relevance = obj.get("relevance")
    if relevance not in RELEVANCE_VALUES:
        raise ParseError(f"relevance must be exactly Relevant or Irrelevant, got {relevance!r}")
    explanation = str(obj.get("explanation") or "").strip()
    if not explanation:
        raise ParseError("relevance reply has no explanation")
    return relevance, explanation


def classify_neighbor(
    gateway: Gateway,
    target: Product,
    neighbor: Product,
    parse_retries: int = 1,
) -> RelevanceVerdict:
    request = build_relevance_prompt(target, neighbor, gateway)
    parsed, usage, error = request_json(
        gateway, request, _parse_relevance, stage="relevance", neighbor_id=neighbor.id, parse_retries=parse_retries
    )
    if parsed is None:
        # Unusable replies exclude the neighbor rather than invent relevance.
        reason = "parse-failure" if error and error.startswith("parse-failure") else "backend-failure"
        return RelevanceVerdict(neighbor.id, "Irrelevant", reason, error=error, usage=usage)

    relevance, explanation = parsed
    overlong = len(explanation.split()) > MAX_EXPLANATION_WORDS
    if overlong:
        logger.warning("Relevance explanation for %s exceeds %d words", neighbor.id, MAX_EXPLANATION_WORDS)
    return RelevanceVerdict(neighbor.id, relevance, explanation, overlong=overlong, usage=usage)  # type: ignore[arg-type]


def filter_relevant(verdicts: Sequence[RelevanceVerdict], candidates: Sequence[NeighborCandidate]) -> list[str]:
    by_id = {v.neighbor_id: v for v in verdicts}
    ordered = sorted(candidates, key=lambda c: c.rank)
    return [c.product_id for c in ordered if c.product_id in by_id and by_id[c.product_id].relevance == "Relevant"]
