from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Literal

Relevance = Literal["Relevant", "Irrelevant"]
Verdict = Literal["better", "worse", "same", "mixed"]
Zone = Literal["AP", "NOT_AP", "TRADEOFF", "UNINFORMATIVE"]
OutlierVerdict = Literal["Yes", "No", "Unsure"]
Strategy = Literal["veto", "voting"]
AgentRole = Literal["relevance", "utility", "padding", "decision", "attributes"]

RELEVANCE_VALUES: tuple[str, ...] = ("Relevant", "Irrelevant")
VERDICT_VALUES: tuple[str, ...] = ("better", "worse", "same", "mixed")
ZONE_VALUES: tuple[str, ...] = ("AP", "NOT_AP", "TRADEOFF", "UNINFORMATIVE")
OUTLIER_VALUES: tuple[str, ...] = ("Yes", "No", "Unsure")


@dataclass(frozen=True)
class Product:
    id: str
    title: str
    category: str
    price: float
    unit_price: float | None = None
    attributes: dict[str, str] = field(default_factory=dict)
    embedding: tuple[float, ...] | None = None

    def describe(self) -> dict[str, Any]:
        """Prompt/payload view of the product (no embedding)."""
        out: dict[str, Any] = {
            "id": self.id,
            "title": self.title,
            "category": self.category,
            "price": self.price,
            "attributes": dict(self.attributes),
        }
        if self.unit_price is not None:
            out["unit_price"] = self.unit_price
        return out


@dataclass(frozen=True)
class NeighborCandidate:
    product_id: str
    similarity: float
    rank: int


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    user_message: str
    temperature: float = 0.0
    max_retries: int = 3
    timeout_seconds: float = 60.0
    # Structured view of the request, read only by the mock backend.
    role: AgentRole | None = None
    payload: dict[str, Any] | None = None

    def __post_init__(self) -> None:
        if not self.system_prompt.strip() or not self.user_message.strip():
            raise ValueError("ChatRequest prompts must be nonempty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.timeout_seconds <= 0:
            raise ValueError("timeout_seconds must be > 0")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int
    attempts: int
    usage_reported: bool = True


@dataclass(frozen=True)
class CallUsage:
    stage: str
    neighbor_id: str | None
    prompt_tokens: int
    completion_tokens: int
    attempts: int
    usage_reported: bool = True


@dataclass(frozen=True)
class RelevanceVerdict:
    neighbor_id: str
    relevance: Relevance
    explanation: str
    error: str | None = None
    overlong: bool = False
    usage: tuple[CallUsage, ...] = ()


@dataclass(frozen=True)
class AttributeComparison:
    attribute: str
    verdict: Verdict
    weight: int = 1
    analysis: str = ""


@dataclass(frozen=True)
class UtilityReport:
    neighbor_id: str
    comparisons: tuple[AttributeComparison, ...]
    net_utility: int
    mode: dict[str, Any]
    weighted: bool = False
    degenerate: bool = False
    valid: bool = True
    error: str | None = None
    usage: tuple[CallUsage, ...] = ()


@dataclass(frozen=True)
class QuadrantPoint:
    neighbor_id: str
    rel_gap: float
    net_utility: int
    zone: Zone
    neighbor_price: float


@dataclass(frozen=True)
class Decision:
    verdict: OutlierVerdict
    explanation: str
    strategy: Strategy
    evidence: dict[str, int]
    source: Literal["rules", "llm", "llm-fallback"] = "rules"
    notes: tuple[str, ...] = ()
    usage: tuple[CallUsage, ...] = ()


@dataclass(frozen=True)
class PaddingProposal:
    fraction: float
    raw: str
    clamped: bool = False
    note: str | None = None
    usage: tuple[CallUsage, ...] = ()


@dataclass(frozen=True)
class NeighborOutcome:
    neighbor_id: str
    rank: int
    similarity: float
    outcome: Literal["irrelevant", "relevance-failure", "utility-failure", "decision"]
    reason: str


SCHEMA_VERSION = "1.0"


@dataclass
class AssessmentRecord:
    target_id: str
    config: dict[str, Any]
    candidates: list[NeighborCandidate] = field(default_factory=list)
    relevance: list[RelevanceVerdict] = field(default_factory=list)
    utility: list[UtilityReport] = field(default_factory=list)
    points: list[QuadrantPoint] = field(default_factory=list)
    neighbor_trace: list[NeighborOutcome] = field(default_factory=list)
    decision: Decision | None = None
    padding_used: PaddingProposal | None = None
    usage: list[CallUsage] = field(default_factory=list)
    duration_seconds: float = 0.0
    error: str | None = None
    error_category: str | None = None
    schema_version: str = SCHEMA_VERSION

    @property
    def verdict(self) -> str | None:
        return self.decision.verdict if self.decision is not None else None

    def usage_totals(self) -> dict[str, int]:
        return {
            "calls": len(self.usage),
            "prompt_tokens": sum(u.prompt_tokens for u in self.usage),
            "completion_tokens": sum(u.completion_tokens for u in self.usage),
            "unreported": sum(1 for u in self.usage if not u.usage_reported),
        }

    def to_dict(self, include_timing: bool = False) -> dict[str, Any]:
        out = asdict(self)
        out["usage_totals"] = self.usage_totals()
        if not include_timing:
            out.pop("duration_seconds")
        return out
