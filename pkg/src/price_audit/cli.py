from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from dataclasses import asdict
from pathlib import Path
from typing import Any

from dotenv import load_dotenv

from .catalog import Catalog, knn_neighbors, load_catalog
from .config import PipelineConfig, load_pipeline_config
from .errors import ConfigError, PriceAuditError
from .eval_harness import (
    COST_PROFILES,
    UNSURE_POLICY,
    SweepGrid,
    TokenRates,
    cost_for_profile,
    evaluate_config,
    load_labels,
    metrics_frame,
    sweep,
    token_cost,
    write_metrics,
)
from .pipeline import assess_batch, assess_target, build_gateway, dump_record, usage_totals, write_records
from .plotting import plot_quadrants
from .settings import settings

COMMANDS = ("ingest", "neighbors", "assess", "batch", "eval", "sweep", "cost", "plot")


def parse_int_list(raw: str) -> list[int]:
    return [int(x.strip()) for x in raw.split(",") if x.strip()]


def parse_padding_list(raw: str) -> list[float | str]:
    out: list[float | str] = []
    for x in raw.split(","):
        x = x.strip()
        if not x:
            continue
        out.append("llm" if x.lower() == "llm" else float(x))
    return out


def parse_str_list(raw: str) -> list[str]:
    return [x.strip() for x in raw.split(",") if x.strip()]


def _pipeline_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON pipeline config file")
    p.add_argument("--k", type=int)
    p.add_argument("--price-padding", type=float)
    p.add_argument("--utility-padding", type=int)
    p.add_argument("--padding-mode", choices=["fixed", "llm"])
    p.add_argument("--attribute-mode", choices=["generic", "static", "dynamic", "weighted_dynamic"])
    p.add_argument("--top-n", type=int)
    p.add_argument("--static-table", help="JSONL static attribute table")
    p.add_argument("--strategy", choices=["veto", "voting"])
    p.add_argument("--decision-mode", choices=["deterministic", "llm"])
    p.add_argument("--mock", action="store_true", help="offline deterministic backend")
    p.add_argument("--max-concurrency", type=int)
    p.add_argument("--timing", action="store_true", help="include wall-clock durations in records")
    return p


def _catalog_flag() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--catalog", required=True, help="line-delimited JSON catalog")
    return p


def _rate_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--input-rate-per-1k", type=float, help="API price per 1k prompt tokens")
    p.add_argument("--output-rate-per-1k", type=float, help="API price per 1k completion tokens")
    p.add_argument("--batch-size", type=int, default=1, help="items sharing one call's tokens")
    return p


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    p = argparse.ArgumentParser(prog="price-audit", description="Explainable price outlier detection")
    sub = p.add_subparsers(dest="command", required=True, metavar="{" + ",".join(COMMANDS) + "}")
    flags = _pipeline_flags()
    catalog = _catalog_flag()
    rates = _rate_flags()

    sub.add_parser("ingest", parents=[flags, catalog], help="validate a catalog and report counts")

    s = sub.add_parser("neighbors", parents=[flags, catalog], help="print top-k embedding neighbors")
    s.add_argument("--target", required=True)

    s = sub.add_parser("assess", parents=[flags, catalog], help="assess one target")
    s.add_argument("--target", required=True)
    s.add_argument("--out", help="write the record here instead of stdout")

    s = sub.add_parser("batch", parents=[flags, catalog], help="assess many targets")
    s.add_argument("--targets", help="comma-separated ids (default: whole catalog)")
    s.add_argument("--out", help="JSONL output path (default: stdout)")

    s = sub.add_parser("eval", parents=[flags, catalog, rates], help="metrics for one configuration")
    s.add_argument("--labels", required=True)
    s.add_argument("--out", help="directory for metrics and records")

    s = sub.add_parser("sweep", parents=[flags, catalog, rates], help="metrics over a configuration grid")
    s.add_argument("--labels", required=True)
    s.add_argument("--paddings", default="0.30,0.50,0.75", help="comma list; 'llm' for proposed padding")
    s.add_argument("--ks", default="7")
    s.add_argument("--modes", default="generic")
    s.add_argument("--strategies", default="veto")
    s.add_argument("--out", help="directory for metrics.csv and metrics.jsonl")

    s = sub.add_parser("cost", parents=[flags, rates], help="time and cost of auditing n items")
    s.add_argument("--n", type=float, required=True)
    s.add_argument("--profile", choices=[*sorted(COST_PROFILES), "all"], default="all")
    s.add_argument("--prompt-tokens", type=int, help="prompt tokens spent per item")
    s.add_argument("--completion-tokens", type=int, help="completion tokens spent per item")

    s = sub.add_parser("plot", parents=[flags, catalog], help="quadrant chart for one target")
    s.add_argument("--target", required=True)
    s.add_argument("--out", help="SVG path (default: reports/quadrants_<target>.svg)")

    return p.parse_args(argv)


def token_rates(args: argparse.Namespace) -> TokenRates | None:
    if args.input_rate_per_1k is None and args.output_rate_per_1k is None:
        return None
    if args.input_rate_per_1k is None or args.output_rate_per_1k is None:
        raise ConfigError("--input-rate-per-1k and --output-rate-per-1k must be given together")
    return TokenRates(args.input_rate_per_1k, args.output_rate_per_1k, args.batch_size)


def flag_overrides(args: argparse.Namespace) -> dict[str, Any]:
    out: dict[str, Any] = {}
    padding: dict[str, Any] = {}
    attribute_mode: dict[str, Any] = {}
    if args.k is not None:
        out["k"] = args.k
    if args.price_padding is not None:
        padding["price_padding"] = args.price_padding
    if args.utility_padding is not None:
        padding["utility_padding"] = args.utility_padding
    if args.padding_mode is not None:
        padding["padding_mode"] = args.padding_mode
    if args.attribute_mode is not None:
        attribute_mode["mode"] = args.attribute_mode
    if args.top_n is not None:
        attribute_mode["top_n"] = args.top_n
    if args.static_table is not None:
        out["static_table_path"] = args.static_table
    if args.strategy is not None:
        out["strategy"] = args.strategy
    if args.decision_mode is not None:
        out["decision_mode"] = args.decision_mode
    if args.max_concurrency is not None:
        out["max_concurrency"] = args.max_concurrency
    if args.mock:
        out["backend"] = {"kind": "mock"}
    if padding:
        out["padding"] = padding
    if attribute_mode:
        out["attribute_mode"] = attribute_mode
    return out


def _header(command: str, payload: dict[str, Any]) -> None:
    print(f"# price-audit {command} " + json.dumps(payload, sort_keys=True), file=sys.stderr)


def _emit(text: str, out: str | None) -> None:
    if out:
        p = Path(out)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text + "\n", encoding="utf-8")
        print(f"wrote {p}", file=sys.stderr)
    else:
        print(text)


def cmd_ingest(args: argparse.Namespace) -> None:
    _header("ingest", {"catalog": args.catalog})
    catalog = load_catalog(args.catalog)
    categories = Counter(p.category for p in catalog.products)
    report = {
        "products": len(catalog),
        "embedded": sum(1 for p in catalog.products if p.embedding is not None),
        "embedding_dim": catalog.embedding_dim,
        "categories": dict(sorted(categories.items())),
    }
    print(json.dumps(report, sort_keys=True))


def cmd_neighbors(args: argparse.Namespace, catalog: Catalog, config: PipelineConfig) -> None:
    for c in knn_neighbors(catalog, args.target, config.k, config.fallback_dim):
        p = catalog.get(c.product_id)
        print(json.dumps({**asdict(c), "title": p.title, "price": p.price}, sort_keys=True))


def cmd_assess(args: argparse.Namespace, catalog: Catalog, config: PipelineConfig) -> None:
    record = assess_target(catalog, config, args.target)
    _emit(dump_record(record, args.timing), args.out)


def cmd_batch(args: argparse.Namespace, catalog: Catalog, config: PipelineConfig) -> None:
    ids = parse_str_list(args.targets) if args.targets else catalog.ids
    records = assess_batch(catalog, config, ids, build_gateway(config))
    if args.out:
        path = write_records(records, args.out, args.timing)
        print(f"wrote {len(records)} records to {path}", file=sys.stderr)
    else:
        for r in records:
            print(dump_record(r, args.timing))
    verdicts = Counter(r.verdict or "error" for r in records)
    print(f"# verdicts {dict(sorted(verdicts.items()))} usage {usage_totals(records)}", file=sys.stderr)


def cmd_eval(args: argparse.Namespace, catalog: Catalog, config: PipelineConfig) -> None:
    sets = load_labels(args.labels)
    row, records = evaluate_config(catalog, sets, config, rates=token_rates(args))
    print(f"# {UNSURE_POLICY}", file=sys.stderr)
    print(json.dumps(asdict(row), sort_keys=True))
    if args.out:
        csv_path, _ = write_metrics([row], args.out, stem="eval")
        write_records(records, str(Path(args.out) / "records.jsonl"), args.timing)
        print(f"wrote {csv_path}", file=sys.stderr)


def cmd_sweep(args: argparse.Namespace, catalog: Catalog, config: PipelineConfig) -> None:
    sets = load_labels(args.labels)
    grid = SweepGrid(
        paddings=parse_padding_list(args.paddings),
        ks=parse_int_list(args.ks),
        modes=parse_str_list(args.modes),
        strategies=parse_str_list(args.strategies),
    )
    rows = sweep(catalog, sets, config, grid, rates=token_rates(args))
    print(f"# {UNSURE_POLICY}")
    print(metrics_frame(rows).to_string(index=False))
    if args.out:
        csv_path, jsonl_path = write_metrics(rows, args.out)
        print(f"wrote {csv_path} and {jsonl_path}", file=sys.stderr)


def cmd_cost(args: argparse.Namespace) -> None:
    profiles = sorted(COST_PROFILES) if args.profile == "all" else [args.profile]
    rates = token_rates(args)
    header: dict[str, Any] = {"n": args.n, "profiles": {p: asdict(COST_PROFILES[p]) for p in profiles}}
    if rates is not None:
        header["token_rates"] = asdict(rates)
    _header("cost", header)
    for name in profiles:
        est = cost_for_profile(args.n, name).rounded()
        print(f"{name}: {est.hours:,.2f} h / ${est.cost:,.2f}")

    has_tokens = args.prompt_tokens is not None or args.completion_tokens is not None
    if rates is None and has_tokens:
        raise ConfigError("token counts need --input-rate-per-1k and --output-rate-per-1k")
    if rates is not None:
        if not has_tokens:
            raise ConfigError("token rates need --prompt-tokens and/or --completion-tokens")
        per_item = token_cost(
            args.prompt_tokens or 0,
            args.completion_tokens or 0,
            rates.input_rate_per_1k,
            rates.output_rate_per_1k,
            rates.batch_size,
        )
        print(f"tokens: ${per_item:,.4f} / item, ${per_item * args.n:,.2f} total")


def cmd_plot(args: argparse.Namespace, catalog: Catalog, config: PipelineConfig) -> None:
    record = assess_target(catalog, config, args.target)
    out = args.out or f"reports/quadrants_{args.target}.svg"
    svg, twin = plot_quadrants(record, out)
    print(f"Verdict: {record.verdict}")
    print(f"wrote {svg} and {twin}", file=sys.stderr)


PIPELINE_COMMANDS = {
    "neighbors": cmd_neighbors,
    "assess": cmd_assess,
    "batch": cmd_batch,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "plot": cmd_plot,
}
BACKEND_COMMANDS = frozenset({"assess", "batch", "eval", "sweep", "plot"})


def run(args: argparse.Namespace) -> None:
    config = load_pipeline_config(
        args.config, flag_overrides(args), needs_backend=args.command in BACKEND_COMMANDS
    )
    if args.command == "ingest":
        cmd_ingest(args)
        return
    if args.command == "cost":
        cmd_cost(args)
        return
    _header(args.command, config.snapshot())
    catalog = load_catalog(args.catalog)
    PIPELINE_COMMANDS[args.command](args, catalog, config)


def main(argv: list[str] | None = None) -> int:
    load_dotenv()
    logging.basicConfig(
        level=settings.log_level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    args = parse_args(argv)
    try:
        run(args)
    except PriceAuditError as exc:
        print(f"error [{exc.category}]: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
