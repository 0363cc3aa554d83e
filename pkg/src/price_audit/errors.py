from __future__ import annotations


class PriceAuditError(Exception):
    category = "runtime"


class ConfigError(PriceAuditError, ValueError):
    category = "config"


class CatalogError(PriceAuditError, ValueError):
    category = "catalog"


class UnknownProductError(PriceAuditError, KeyError):
    category = "catalog"

    def __init__(self, product_id: str) -> None:
        super().__init__(product_id)
        self.product_id = product_id

    def __str__(self) -> str:
        return f"unknown product id: {self.product_id}"


class ZeroInformationError(CatalogError):
    pass


class VectorError(CatalogError):
    pass


class GatewayError(PriceAuditError, RuntimeError):
    category = "backend"


class BackendExhaustedError(GatewayError):
    def __init__(self, message: str, attempts: int) -> None:
        super().__init__(message)
        self.attempts = attempts


class BackendTimeoutError(BackendExhaustedError):
    pass


class ParseError(PriceAuditError, ValueError):
    category = "parse"


class LabelError(PriceAuditError, ValueError):
    category = "eval"
