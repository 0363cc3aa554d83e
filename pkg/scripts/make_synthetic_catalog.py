#!/usr/bin/env python3
from __future__ import annotations

import argparse
import json
from pathlib import Path

from price_audit.catalog import write_catalog
from price_audit.synthetic import planted_ids, planted_outlier_catalog, synthetic_label_rows


def parse_args() -> argparse.Namespace:
    p = argparse.ArgumentParser(description="Write the planted-outlier catalog and its label file")
    p.add_argument("--out-dir", default="data/synthetic")
    p.add_argument("--scale", type=float, default=1.0, help="multiply every price by this factor")
    return p.parse_args()


def main() -> None:
    args = parse_args()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    catalog = planted_outlier_catalog()
    if args.scale != 1.0:
        catalog = catalog.scaled(args.scale)

    catalog_path = write_catalog(catalog.products, str(out_dir / "catalog.jsonl"))
    labels_path = out_dir / "labels.jsonl"
    with labels_path.open("w", encoding="utf-8") as f:
        for row in synthetic_label_rows(catalog):
            f.write(json.dumps(row) + "\n")

    print(f"Wrote {len(catalog)} products to {catalog_path}")
    print(f"Wrote labels to {labels_path} ({len(planted_ids(catalog))} planted outliers)")


if __name__ == "__main__":
    main()
