import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from components.report_view import MetricReportView, render_cost_projection, render_run_report
from utils.config import CliConfig, load_config
from utils.dist_spec import parse_plan, serialize_plan
from utils.errors import FastgenError, InputError, UsageError
from utils.fidelity import estimate_cost_time, evaluate, parse_kinds, project_costs
from utils.llm_bridge import LLMClient, TokenUsage, build_transport
from utils.log import configure_logging, get_logger
from utils.pipeline import RunReport, enrich_metadata, plan_dataset, synthesize
from utils.schema import (
    attach_samples,
    parse_schema,
    parse_table,
    schema_to_document,
    serialize_table,
    serialize_table_jsonl,
)

logger = get_logger(__name__)


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so usage errors map to exit code 1"""

    def error(self, message):
        raise UsageError(message, payload=self.format_usage())


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise InputError(f"cannot read {path}: {e.strerror or e}")
    except UnicodeDecodeError as e:
        raise InputError(f"{path} is not valid UTF-8: byte {e.object[e.start]:#04x} at offset {e.start}")


def _write(path: Optional[str], text: str) -> None:
    if not path or path == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    try:
        with open(path, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
    except OSError as e:
        raise InputError(f"cannot write {path}: {e.strerror or e}")


def _dump(doc: Dict[str, Any]) -> str:
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def _client(config: CliConfig, fixtures: Optional[str]) -> LLMClient:
    endpoint = config.endpoint
    if fixtures:
        # replayed responses must be consumed in request order
        endpoint = endpoint.model_copy(update={"max_in_flight": 1})
    return LLMClient(endpoint, build_transport(endpoint, fixtures))


# -- subcommands ---------------------------------------------------------


def cmd_enrich(args, config: CliConfig) -> int:
    s = config.defaults.samples
    schema = parse_schema(_read(args.schema), max_samples=s)
    table = parse_table(_read(args.data))

    usage = TokenUsage()
    if args.no_enrich:
        schema = attach_samples(schema, table, s, config.seed)
    else:
        llm = _client(config, args.fixtures)
        schema = enrich_metadata(schema, table, s, llm, seed=config.seed, usage=usage)

    _write(args.out, schema_to_document(schema))
    logger.info("schema_written", path=args.out or "-", fields=len(schema.fields), tokens=usage.total_tokens)
    if args.report:
        report = RunReport(total_usage=usage, enrichment_usage=usage)
        _write(args.report, _dump(report.to_document()))
    return 0


def cmd_plan(args, config: CliConfig) -> int:
    defaults = config.defaults
    schema = parse_schema(_read(args.schema), max_samples=defaults.samples)
    if args.data:
        schema = attach_samples(schema, parse_table(_read(args.data)), defaults.samples, config.seed)

    llm = _client(config, args.fixtures)
    plan, report = plan_dataset(schema, llm, defaults.retries, defaults.top_k, master_seed=config.seed)

    _write(args.out, serialize_plan(plan))
    logger.info(
        "plan_written",
        path=args.out or "-",
        fields=len(plan.specs),
        placeholders=len(report.placeholders),
        tokens=report.total_usage.total_tokens,
    )
    if args.report:
        _write(args.report, _dump(report.to_document()))
    logger.debug("run_report", table="\n" + render_run_report(report))
    return 0


def cmd_generate(args, config: CliConfig) -> int:
    if args.n < 0:
        raise UsageError("--n must be non-negative")
    if args.workers < 1:
        raise UsageError("--workers must be at least 1")

    plan = parse_plan(_read(args.plan))
    if args.seed is not None:
        plan = plan.with_seed(args.seed)

    table, _ = synthesize(plan, args.n, workers=args.workers)
    text = serialize_table_jsonl(table) if args.format == "jsonl" else serialize_table(table)
    _write(args.out, text)
    logger.info("dataset_written", path=args.out or "-", rows=table.row_count, seed=plan.master_seed)
    return 0


def _kinds_for_eval(args):
    if args.kinds:
        return parse_kinds(_read(args.kinds))
    plan = parse_plan(_read(args.plan))
    kinds = {}
    for spec in plan.specs:
        if spec.placeholder:
            logger.warning("placeholder_field_skipped", field=spec.field_name)
            continue
        kinds[spec.field_name] = spec.kind
    if not kinds:
        raise InputError("plan has no evaluable fields")
    return kinds


def cmd_eval(args, config: CliConfig) -> int:
    if not args.kinds and not args.plan:
        raise UsageError("eval needs --kinds or --plan")
    generated = parse_table(_read(args.generated))
    reference = parse_table(_read(args.reference))
    report = evaluate(generated, reference, _kinds_for_eval(args), config.metric)

    if args.out:
        _write(args.out, report.to_json())
    if args.format == "text":
        _write(None, MetricReportView(report).render_text())
    elif not args.out:
        _write(None, report.to_json())
    return 0


def _parse_records(raw: str) -> List[int]:
    try:
        counts = [int(part) for part in raw.split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"--records expects comma separated integers, got {raw!r}")
    if not counts or any(c < 0 for c in counts):
        raise UsageError("--records needs at least one non-negative count")
    return counts


def cmd_cost(args, config: CliConfig) -> int:
    if args.tokens < 0:
        raise UsageError("--tokens must be non-negative")
    if args.tps <= 0:
        raise UsageError("--tps must be positive")

    estimate = estimate_cost_time(args.tokens, args.price, args.tps)
    _write(None, estimate.to_csv_row() + "\n")
    if args.direct_per_record is not None:
        projection = project_costs(args.tokens, args.direct_per_record, _parse_records(args.records), args.price, args.tps)
        _write(None, "\n" + render_cost_projection(projection))
    return 0


# -- parser --------------------------------------------------------------


def _common_flags() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file")
    noise = common.add_mutually_exclusive_group()
    noise.add_argument("--verbose", action="store_true", default=argparse.SUPPRESS, help="debug logging")
    noise.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="warnings and errors only")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = _Parser(prog="fastgen", description="Schema-driven synthetic table generator", parents=[common])
    sub = parser.add_subparsers(dest="command", metavar="{enrich,plan,generate,eval,cost}", required=True)

    enrich = sub.add_parser("enrich", parents=[common], help="attach samples and enrich field descriptions")
    enrich.add_argument("--schema", required=True)
    enrich.add_argument("--data", required=True, help="ground-truth CSV")
    enrich.add_argument("--samples", type=int, help="samples per field (default 100)")
    enrich.add_argument("--seed", type=int, help="seed for sample selection")
    enrich.add_argument("--fixtures", help="replay LLM responses from this JSON file")
    enrich.add_argument("--no-enrich", action="store_true", help="attach samples only, no LLM calls")
    enrich.add_argument("--out")
    enrich.add_argument("--report", help="write token usage JSON here")
    enrich.set_defaults(handler=cmd_enrich)

    plan = sub.add_parser("plan", parents=[common], help="ask the LLM for one spec per field")
    plan.add_argument("--schema", required=True)
    plan.add_argument("--data", help="ground-truth CSV to draw samples from")
    plan.add_argument("--samples", type=int)
    plan.add_argument("--retries", type=int, help="attempts per field (default 3)")
    plan.add_argument("--topk", type=int, help="category cap (default 10)")
    plan.add_argument("--seed", type=int, help="master seed stored in the plan")
    plan.add_argument("--fixtures")
    plan.add_argument("--out")
    plan.add_argument("--report", help="write the run report JSON here")
    plan.set_defaults(handler=cmd_plan)

    generate = sub.add_parser("generate", parents=[common], help="sample rows from a plan, no LLM")
    generate.add_argument("--plan", required=True)
    generate.add_argument("--n", type=int, required=True)
    generate.add_argument("--seed", type=int, help="override the plan's master seed")
    generate.add_argument("--out")
    generate.add_argument("--format", choices=["csv", "jsonl"], default="csv")
    generate.add_argument("--workers", type=int, default=1)
    generate.set_defaults(handler=cmd_generate)

    ev = sub.add_parser("eval", parents=[common], help="diversity and fidelity metrics")
    ev.add_argument("--generated", required=True)
    ev.add_argument("--reference", required=True)
    ev.add_argument("--kinds", help="JSON mapping of field name to kind")
    ev.add_argument("--plan", help="take field kinds from a plan file")
    ev.add_argument("--out")
    ev.add_argument("--format", choices=["json", "text"], default="json")
    ev.set_defaults(handler=cmd_eval)

    cost = sub.add_parser("cost", parents=[common], help="token cost and latency estimate")
    cost.add_argument("--tokens", type=int, required=True)
    cost.add_argument("--price", type=float, default=0.71, help="USD per million output tokens")
    cost.add_argument("--tps", type=float, default=55.0, help="output tokens per second")
    cost.add_argument("--direct-per-record", type=float, help="tokens per record of direct LLM generation")
    cost.add_argument("--records", default="1000,10000,100000")
    cost.set_defaults(handler=cmd_cost)

    return parser


def _overrides(args) -> Dict[str, Any]:
    defaults = {
        "samples": getattr(args, "samples", None),
        "retries": getattr(args, "retries", None),
        "top_k": getattr(args, "topk", None),
    }
    overrides: Dict[str, Any] = {"defaults": defaults}
    if args.command in ("enrich", "plan"):
        overrides["seed"] = getattr(args, "seed", None)
    return overrides


def run_cli(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        sys.stderr.write(f"{e.payload or parser.format_usage()}fastgen: error: {e.message}\n")
        return e.exit_code
    except SystemExit as e:  # --help
        return int(e.code or 0)

    if getattr(args, "verbose", False):
        configure_logging("verbose")
    elif getattr(args, "quiet", False):
        configure_logging("quiet")
    else:
        configure_logging("normal")

    try:
        config = load_config(getattr(args, "config", None), _overrides(args))
        return args.handler(args, config)
    except FastgenError as e:
        sys.stderr.write(f"fastgen: error: {e.message}\n")
        if isinstance(e, UsageError):
            sys.stderr.write(parser.format_usage())
        return e.exit_code
