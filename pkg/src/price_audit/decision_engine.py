from __future__ import annotations

import json
import logging
import re
from collections import Counter
from collections.abc import Mapping, Sequence
from dataclasses import asdict
from typing import Any

from .config import LLM_PADDING_BOUNDS, PaddingConfig
from .errors import GatewayError, ParseError
from .llm_gateway import Gateway, extract_json, request_json
from .prompts import DECISION_SYSTEM_PROMPT, PADDING_SYSTEM_PROMPT, render_product
from .types import OUTLIER_VALUES, ZONE_VALUES, CallUsage, Decision, PaddingProposal, Product, QuadrantPoint, Zone

logger = logging.getLogger(__name__)

# Price comparisons tolerate float noise from rescaled or cent-rounded prices.
EPS = 1e-9
DEFAULT_PRICE_PADDING = 0.50
_FIRST_NUMBER_RE = re.compile(r"[-+]?\d+(?:\.\d+)?")


def relative_gap(target_price: float, neighbor_price: float) -> float:
    return (target_price - neighbor_price) / target_price


def utility_class(net_utility: int, utility_padding: int) -> str:
    if net_utility > utility_padding:
        return "BETTER"
    if net_utility < -utility_padding:
        return "WORSE"
    return "SIMILAR"


def classify_zone(rel_gap: float, net_utility: int, padding: PaddingConfig) -> Zone:
    cls = utility_class(net_utility, padding.utility_padding)
    cheaper_enough = rel_gap >= padding.price_padding - EPS
    if cls in ("BETTER", "SIMILAR") and cheaper_enough:
        return "AP"
    if cls == "WORSE" and rel_gap <= EPS:
        return "NOT_AP"
    if cls == "SIMILAR" and abs(rel_gap) < padding.price_padding - EPS:
        return "TRADEOFF"
    return "UNINFORMATIVE"


def place_point(target: Product, neighbor: Product, net_utility: int, padding: PaddingConfig) -> QuadrantPoint:
    gap = relative_gap(target.price, neighbor.price)
    return QuadrantPoint(neighbor.id, gap, net_utility, classify_zone(gap, net_utility, padding), neighbor.price)


def zone_counts(points: Sequence[QuadrantPoint]) -> dict[str, int]:
    counts = Counter(p.zone for p in points)
    return {z: counts.get(z, 0) for z in ZONE_VALUES}


def verdict_from_evidence(strategy: str, evidence: Mapping[str, int]) -> str:
    """Strategy rule on zone counts alone; used both to decide and to audit stored decisions."""
    ap = evidence.get("AP", 0)
    not_ap = evidence.get("NOT_AP", 0)
    if strategy == "veto":
        if not_ap >= 1:
            return "No"
        return "Yes" if ap >= 1 else "Unsure"
    if strategy == "voting":
        if ap >= 1 and ap >= not_ap:
            return "Yes"
        return "No" if not_ap >= 1 else "Unsure"
    raise ValueError(f"unknown strategy: {strategy}")


def _ids(points: Sequence[QuadrantPoint], zone: str) -> str:
    return ", ".join(p.neighbor_id for p in points if p.zone == zone)


def _explain(strategy: str, verdict: str, points: Sequence[QuadrantPoint], evidence: Mapping[str, int]) -> str:
    ap, not_ap = evidence["AP"], evidence["NOT_AP"]
    if verdict == "Unsure":
        return "No relevant neighbor falls in the AP or NOT-AP zone; insufficient evidence either way."
    if strategy == "veto":
        if verdict == "No":
            return f"Worse-pricier veto: worse-and-pricier neighbor(s) {_ids(points, 'NOT_AP')} justify the target price."
        return f"{ap} similar-or-better neighbor(s) priced below the padding ({_ids(points, 'AP')}) and none worse-and-pricier."
    if verdict == "Yes":
        return (
            f"Quadrant voting: {ap} AP neighbor(s) ({_ids(points, 'AP')}) vs {not_ap} NOT-AP; "
            "better-cheaper evidence equals or outnumbers worse-pricier evidence."
        )
    return f"Quadrant voting: {not_ap} NOT-AP neighbor(s) ({_ids(points, 'NOT_AP')}) outnumber {ap} AP neighbor(s)."


def decide(points: Sequence[QuadrantPoint], strategy: str) -> Decision:
    evidence = zone_counts(points)
    verdict = verdict_from_evidence(strategy, evidence)
    return Decision(verdict, _explain(strategy, verdict, points, evidence), strategy, evidence)  # type: ignore[arg-type]


def decide_veto(points: Sequence[QuadrantPoint]) -> Decision:
    return decide(points, "veto")


def decide_voting(points: Sequence[QuadrantPoint]) -> Decision:
    return decide(points, "voting")


def _evidence_message(target: Product | None, points: Sequence[QuadrantPoint], padding: PaddingConfig | None) -> str:
    sections = {
        "AP": "HEAVILY \"for\" anomalous pricing (similar-or-better neighbors cheaper by at least the price padding)",
        "NOT_AP": "HEAVILY \"against\" anomalous pricing (worse neighbors priced at or above the target)",
        "TRADEOFF": "Trade-off zone (similar utility, price within the padding)",
        "UNINFORMATIVE": "Uninformative (better-and-pricier or worse-and-cheaper)",
    }
    lines = []
    if target is not None:
        lines.append(render_product("TARGET PRODUCT", target))
    if padding is not None:
        lines.append(f"Price padding: {padding.price_padding:.0%}; utility padding: {padding.utility_padding}")
    for zone, title in sections.items():
        members = [p for p in points if p.zone == zone]
        lines.append(f"{title}: {len(members)}")
        for p in members:
            lines.append(
                f"- {p.neighbor_id}: price {p.neighbor_price:.2f}, "
                f"{p.rel_gap:+.1%} cheaper than target, net utility {p.net_utility:+d}"
            )
    return "\n".join(lines)


def llm_decide(
    gateway: Gateway,
    points: Sequence[QuadrantPoint],
    strategy: str,
    target: Product | None = None,
    padding: PaddingConfig | None = None,
    parse_retries: int = 1,
) -> Decision:
    """Decision prompt over the zone evidence; falls back to the deterministic rule."""
    evidence = zone_counts(points)
    if not points:
        return Decision("Unsure", "No relevant neighbors with utility reports; no evidence.", strategy, evidence, "llm")  # type: ignore[arg-type]

    request = gateway.request(
        DECISION_SYSTEM_PROMPT,
        _evidence_message(target, points, padding),
        role="decision",
        payload={"points": [asdict(p) for p in points], "strategy": strategy},
    )

    def parse(obj: dict[str, Any]) -> tuple[str, str]:
        verdict = str(obj.get("decision", "")).strip()
        if verdict not in OUTLIER_VALUES:
            raise ParseError(f"decision must be Yes/No/Unsure, got {verdict!r}")
        return verdict, str(obj.get("explanation", "")).strip()

    parsed, usage, error = request_json(gateway, request, parse, stage="decision", parse_retries=parse_retries)
    if parsed is None:
        logger.warning("LLM decision unusable (%s); falling back to %s rule", error, strategy)
        fallback = decide(points, strategy)
        return Decision(
            fallback.verdict,
            fallback.explanation,
            fallback.strategy,
            fallback.evidence,
            "llm-fallback",
            (f"llm decision fell back to {strategy} rule: {error}",),
            usage,
        )
    verdict, explanation = parsed
    return Decision(verdict, explanation, strategy, evidence, "llm", (), usage)  # type: ignore[arg-type]


def parse_padding_reply(text: str) -> tuple[float, bool]:
    """Padding fraction from a reply: JSON field or the first bare number; percent if > 1."""
    value: float | None = None
    try:
        obj = extract_json(text)
    except ParseError:
        obj = {}
    for key in ("price_padding_percent", "price_padding", "padding"):
        if key in obj:
            try:
                value = float(obj[key])
            except (TypeError, ValueError):
                continue
            break
    if value is None:
        m = _FIRST_NUMBER_RE.search(text)
        if m is None:
            raise ParseError(f"no padding number in reply: {text[:80]!r}")
        value = float(m.group(0))
    if value > 1:
        value /= 100.0
    lo, hi = LLM_PADDING_BOUNDS
    clamped = min(max(value, lo), hi)
    return clamped, clamped != value


def propose_padding(
    gateway: Gateway,
    target: Product,
    neighbors: Sequence[Mapping[str, Any]],
) -> PaddingProposal:
    user = render_product("TARGET PRODUCT", target) + "\n\nRELEVANT NEIGHBORS\n" + json.dumps(list(neighbors), indent=1)
    request = gateway.request(
        PADDING_SYSTEM_PROMPT,
        user,
        role="padding",
        payload={"target": target.describe(), "neighbors": list(neighbors)},
    )
    try:
        resp = gateway.complete(request)
    except GatewayError as exc:
        logger.warning("Padding proposal failed (%s); using %.2f", exc, DEFAULT_PRICE_PADDING)
        usage = (CallUsage("padding", None, 0, 0, getattr(exc, "attempts", 1), False),)
        return PaddingProposal(DEFAULT_PRICE_PADDING, "", note=f"backend-failure: {exc}", usage=usage)

    usage = (
        CallUsage("padding", None, resp.prompt_tokens, resp.completion_tokens, resp.attempts, resp.usage_reported),
    )
    try:
        fraction, clamped = parse_padding_reply(resp.text)
    except ParseError as exc:
        logger.warning("Unparsable padding reply; using %.2f", DEFAULT_PRICE_PADDING)
        return PaddingProposal(DEFAULT_PRICE_PADDING, resp.text, note=f"parse-failure: {exc}", usage=usage)
    note = None
    if clamped:
        note = f"proposed padding clamped into [{LLM_PADDING_BOUNDS[0]:.2f}, {LLM_PADDING_BOUNDS[1]:.2f}]"
        logger.warning("Padding reply %r clamped to %.2f", resp.text[:40], fraction)
    return PaddingProposal(fraction, resp.text, clamped, note, usage)
