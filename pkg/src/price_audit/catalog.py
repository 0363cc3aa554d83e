from __future__ import annotations

import json
import logging
import math
import re
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator
from sklearn.feature_extraction.text import HashingVectorizer

from .errors import CatalogError, UnknownProductError, VectorError, ZeroInformationError
from .types import NeighborCandidate, Product

logger = logging.getLogger(__name__)

DEFAULT_FALLBACK_DIM = 256
MIN_FALLBACK_DIM = 8
TOKEN_PATTERN = r"(?u)\b\w+\b"
_TOKEN_RE = re.compile(TOKEN_PATTERN)


class _ProductRecord(BaseModel):
    model_config = ConfigDict(extra="allow")

    id: str
    title: str
    category: str
    price: float
    unit_price: float | None = None
    attributes: dict[str, Any] = {}
    embedding: list[float] | None = None

    @field_validator("id", "title")
    @classmethod
    def _nonempty(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("must be nonempty")
        return v

    @field_validator("price")
    @classmethod
    def _positive_price(cls, v: float) -> float:
        if not math.isfinite(v) or v <= 0:
            raise ValueError(f"price must be positive, got {v}")
        return v

    @field_validator("unit_price")
    @classmethod
    def _positive_unit_price(cls, v: float | None) -> float | None:
        if v is not None and (not math.isfinite(v) or v <= 0):
            raise ValueError(f"unit_price must be positive, got {v}")
        return v

    @field_validator("embedding")
    @classmethod
    def _finite_embedding(cls, v: list[float] | None) -> list[float] | None:
        if v is None:
            return v
        if not v:
            raise ValueError("embedding must not be empty")
        if not all(math.isfinite(x) for x in v):
            raise ValueError("embedding must hold finite numbers")
        if not any(x != 0.0 for x in v):
            raise ValueError("embedding must have nonzero norm")
        return v


def title_tokens(title: str) -> list[str]:
    return _TOKEN_RE.findall(title.lower())


class Catalog:
    """Immutable, id-indexed product collection."""

    def __init__(self, products: Iterable[Product]) -> None:
        self.products: tuple[Product, ...] = tuple(products)
        self._by_id: dict[str, Product] = {}
        dims: set[int] = set()
        for p in self.products:
            if p.id in self._by_id:
                raise CatalogError(f"duplicate product id: {p.id}")
            if p.price <= 0:
                raise CatalogError(f"product {p.id}: price must be positive")
            self._by_id[p.id] = p
            if p.embedding is not None:
                dims.add(len(p.embedding))
        if len(dims) > 1:
            raise CatalogError(f"embedding dimension mismatch: {sorted(dims)}")
        self.embedding_dim: int | None = dims.pop() if dims else None
        self._vector_cache: dict[int, dict[str, np.ndarray]] = {}

    def __len__(self) -> int:
        return len(self.products)

    def __contains__(self, product_id: object) -> bool:
        return product_id in self._by_id

    def get(self, product_id: str) -> Product:
        try:
            return self._by_id[product_id]
        except KeyError:
            raise UnknownProductError(product_id) from None

    @property
    def ids(self) -> list[str]:
        return [p.id for p in self.products]

    @property
    def fully_embedded(self) -> bool:
        return bool(self.products) and all(p.embedding is not None for p in self.products)

    def scaled(self, factor: float) -> Catalog:
        """Copy with every price (and unit price) multiplied by factor."""
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        out = []
        for p in self.products:
            unit = p.unit_price * factor if p.unit_price is not None else None
            out.append(
                Product(p.id, p.title, p.category, p.price * factor, unit, dict(p.attributes), p.embedding)
            )
        return Catalog(out)

    def vectors(self, fallback_dim: int = DEFAULT_FALLBACK_DIM) -> dict[str, np.ndarray]:
        cache = self._vector_cache
        if fallback_dim not in cache:
            if self.fully_embedded:
                cache[fallback_dim] = {p.id: np.asarray(p.embedding, dtype=float) for p in self.products}
            else:
                if self.embedding_dim is not None:
                    logger.warning(
                        "Only some products carry embeddings; using the fallback featurizer (dim=%d) for all",
                        fallback_dim,
                    )
                featurized: dict[str, np.ndarray] = {}
                for p in self.products:
                    try:
                        featurized[p.id] = fallback_featurize(p, fallback_dim)
                    except ZeroInformationError as exc:
                        logger.warning("Leaving %s out of neighbor search: %s", p.id, exc)
                cache[fallback_dim] = featurized
        return cache[fallback_dim]


def load_catalog(path: str) -> Catalog:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"Catalog file not found: {path}")

    products: list[Product] = []
    seen: set[str] = set()
    dim: int | None = None
    with p.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CatalogError(f"line {lineno}: malformed record ({exc.msg})") from exc
            if not isinstance(raw, dict):
                raise CatalogError(f"line {lineno}: malformed record (expected an object)")
            try:
                rec = _ProductRecord.model_validate(raw)
            except ValidationError as exc:
                problems = "; ".join(f"{'.'.join(map(str, e['loc']))}: {e['msg']}" for e in exc.errors())
                raise CatalogError(f"line {lineno}: invalid record ({problems})") from exc

            for key in sorted(rec.model_extra or {}):
                logger.warning("line %d: ignoring unknown key %r", lineno, key)
            if rec.id in seen:
                raise CatalogError(f"line {lineno}: duplicate id {rec.id!r}")
            seen.add(rec.id)
            if rec.embedding is not None:
                if dim is None:
                    dim = len(rec.embedding)
                elif len(rec.embedding) != dim:
                    raise CatalogError(
                        f"line {lineno}: embedding dimension mismatch (expected {dim}, got {len(rec.embedding)})"
                    )

            products.append(
                Product(
                    id=rec.id,
                    title=rec.title,
                    category=rec.category,
                    price=rec.price,
                    unit_price=rec.unit_price,
                    attributes={str(k): str(v) for k, v in rec.attributes.items()},
                    embedding=tuple(rec.embedding) if rec.embedding is not None else None,
                )
            )

    catalog = Catalog(products)
    logger.info(
        "Loaded %d products (%d embedded, dim=%s) from %s",
        len(catalog),
        sum(1 for x in catalog.products if x.embedding is not None),
        catalog.embedding_dim,
        path,
    )
    return catalog


def write_catalog(products: Iterable[Product], path: str) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", encoding="utf-8") as f:
        for prod in products:
            row = prod.describe()
            if prod.embedding is not None:
                row["embedding"] = list(prod.embedding)
            f.write(json.dumps(row, sort_keys=True) + "\n")
    return p


def fallback_featurize(product: Product, dim: int = DEFAULT_FALLBACK_DIM) -> np.ndarray:
    """Hashed bag of lowercase title tokens, L2-normalized. Stable across processes."""
    if dim < MIN_FALLBACK_DIM:
        raise ValueError(f"fallback dim must be >= {MIN_FALLBACK_DIM}, got {dim}")
    vectorizer = HashingVectorizer(
        n_features=dim,
        lowercase=True,
        token_pattern=TOKEN_PATTERN,
        alternate_sign=False,
        norm="l2",
    )
    vec = vectorizer.transform([product.title]).toarray()[0]
    if not vec.any():
        raise ZeroInformationError(f"product {product.id}: title has no tokens to featurize")
    return vec


def cosine(a: Sequence[float] | np.ndarray, b: Sequence[float] | np.ndarray) -> float:
    va = np.asarray(a, dtype=float)
    vb = np.asarray(b, dtype=float)
    if va.shape != vb.shape:
        raise VectorError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise VectorError("cosine is undefined for zero-norm vectors")
    value = float(np.dot(va, vb) / (na * nb))
    return max(-1.0, min(1.0, value))


def knn_neighbors(
    catalog: Catalog,
    target_id: str,
    k: int,
    fallback_dim: int = DEFAULT_FALLBACK_DIM,
) -> list[NeighborCandidate]:
    if k < 1:
        raise ValueError("k must be positive")
    catalog.get(target_id)
    vectors = catalog.vectors(fallback_dim)
    if target_id not in vectors:
        raise ZeroInformationError(f"product {target_id}: title has no tokens to featurize")
    target_vec = vectors[target_id]

    scored = [(cosine(target_vec, vec), pid) for pid, vec in vectors.items() if pid != target_id]
    scored.sort(key=lambda item: (-item[0], item[1]))
    return [
        NeighborCandidate(product_id=pid, similarity=sim, rank=rank)
        for rank, (sim, pid) in enumerate(scored[:k], start=1)
    ]
