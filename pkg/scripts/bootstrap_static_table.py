#!/usr/bin/env python3
from __future__ import annotations

import argparse
import logging

from dotenv import load_dotenv

from price_audit.catalog import load_catalog
from price_audit.config import load_pipeline_config, save_static_table
from price_audit.pipeline import build_gateway
from price_audit.settings import settings
from price_audit.utility_agent import bootstrap_static_table


def parse_args() -> argparse.Namespace:
    p = argparse.ArgumentParser(description="Ask the backend for per-category attributes and save a static table")
    p.add_argument("--catalog", help="catalog whose categories need attributes")
    p.add_argument("--categories", default="", help="comma list; overrides the catalog's categories")
    p.add_argument("--config", help="JSON pipeline config file (backend section is used)")
    p.add_argument("--mock", action="store_true", help="offline deterministic backend")
    p.add_argument("--version", help="version stamp written on every row (default: UTC timestamp)")
    p.add_argument("--out", default="config/static_attributes.jsonl")
    args = p.parse_args()
    if not args.catalog and not args.categories:
        p.error("give --catalog or --categories")
    return args


def main() -> None:
    load_dotenv()
    logging.basicConfig(level=settings.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = parse_args()

    overrides = {"backend": {"kind": "mock"}} if args.mock else {}
    config = load_pipeline_config(args.config, overrides)
    categories = [c.strip() for c in args.categories.split(",") if c.strip()]
    if not categories:
        categories = sorted({p.category for p in load_catalog(args.catalog).products})

    table = bootstrap_static_table(build_gateway(config), categories)
    path = save_static_table(table, args.out, version=args.version)
    print(f"Wrote {len(table)} categories to {path}")
    for category in sorted(table):
        print(f"  {category}: {', '.join(table[category])}")


if __name__ == "__main__":
    main()
