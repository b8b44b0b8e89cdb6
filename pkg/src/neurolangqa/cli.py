"""``nlq`` command-line front end."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .datalog import EvaluationError
from .logic import Overlay, PredicateDecl, SchemaClass
from .parser import FactFileError, ParseError, SourceProgram, parse_fact_file, parse_program, parse_query
from .pipeline import PipelineError, ValidationFailed, answer_query
from .prob.circuit import CircuitBudgetExceeded
from .prob.worlds import DEFAULT_WORLD_CAP, CapExceeded
from .rewriter import NotSticky, RewriteBudgetExceeded
from .synthetic import SyntheticDatasetSpec, generate_synthetic
from .validation import StratificationError

EXIT_OK, EXIT_USER, EXIT_BUDGET = 0, 1, 2
BUDGET_ERRORS = (CircuitBudgetExceeded, CapExceeded, RewriteBudgetExceeded)
USER_ERRORS = (ParseError, FactFileError, ValidationFailed, StratificationError, NotSticky,
               EvaluationError, OSError, ValueError)


class UsageError(ValueError):
    pass


@dataclass
class FactBinding:
    predicate: str
    path: str
    kind: str = "auto"  # auto | deterministic | probabilistic | choice-group


@dataclass
class RunConfig:
    programs: list
    facts: list = field(default_factory=list)
    query: str = "Ans"
    output_format: str = "table"
    precision: int | None = None
    oracle: bool = False
    explain: bool = False
    world_cap: int = DEFAULT_WORLD_CAP
    circuit_cap: int = 10**7
    strategy: str = "auto"
    delimiter: str = "\t"
    header: bool = False
    overlay_dir: str | None = None
    output: str | None = None

    def __post_init__(self):
        if not self.programs:
            raise UsageError("at least one program file is required")
        if self.world_cap <= 0 or self.circuit_cap <= 0:
            raise UsageError("caps must be positive")


def _binding(text: str, kind: str) -> FactBinding:
    pred, sep, path = text.partition("=")
    if not sep or not pred or not path:
        raise argparse.ArgumentTypeError(f"expected PREDICATE=PATH, got {text!r}")
    return FactBinding(pred.strip(), path.strip(), kind)


def _manifest_bindings(directory: str) -> list:
    root = Path(directory)
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    return [FactBinding(pred, str(root / info["path"]), info["kind"]) for pred, info in manifest["files"].items()]


def _first_row(path: str, delimiter: str, header: bool) -> list:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = csv.reader(fh, delimiter=delimiter)
        if header:
            next(rows, None)
        for row in rows:
            if row:
                return row
    return []


def _is_probability(cell: str) -> bool:
    try:
        return 0 < Fraction(cell.strip()) <= 1
    except (ValueError, ZeroDivisionError):
        return False


def load_program(cfg: RunConfig):
    texts = []
    for path in cfg.programs:
        texts.append(Path(path).read_text(encoding="utf-8"))
    origin = cfg.programs[0] if len(cfg.programs) == 1 else "<programs>"
    program = parse_program(SourceProgram("\n".join(texts), origin))
    schema = program.schema
    facts, choices, decls = [], [], []
    for b in cfg.facts:
        known = schema.get(b.predicate)
        cls = known.schema_class if known is not None else SchemaClass.DETERMINISTIC
        if b.kind in ("probabilistic", "choice-group"):
            cls = SchemaClass.PROBABILISTIC
        if known is not None:
            arity = known.arity
        else:
            row = _first_row(b.path, cfg.delimiter, cfg.header)
            arity = len(row)
            if cls is SchemaClass.PROBABILISTIC and row and _is_probability(row[-1]):
                arity -= 1
        decl = PredicateDecl(b.predicate, arity, cls)
        if cls is SchemaClass.PROBABILISTIC and (known is None or known.schema_class is not cls):
            decls.append(decl)
        with open(b.path, encoding="utf-8", newline="") as fh:
            table = parse_fact_file(fh, decl, delimiter=cfg.delimiter, header=cfg.header,
                                    choice_group=b.kind == "choice-group", origin=b.path)
        facts.extend(table.facts)
        choices.extend(table.choices)
    return program.extend(facts=facts, choices=choices, declarations=decls)


def _write_overlays(answers, directory: str) -> list:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for r, row in enumerate(answers.rows):
        for c, value in enumerate(row):
            if isinstance(value, Overlay):
                path = out / f"overlay_{r}_{c}.csv"
                with open(path, "w", encoding="utf-8", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(["i", "j", "k", "p"])
                    for item in value.rows:
                        w.writerow([repr(x) if isinstance(x, float) else x for x in item])
                written.append(str(path))
    return written


def render(answers, cfg: RunConfig) -> str:
    if cfg.output_format == "csv":
        return answers.to_csv(cfg.precision)
    if cfg.output_format == "json":
        return answers.to_json(cfg.precision)
    return answers.to_table(6 if cfg.precision is None else cfg.precision)


def execute(cfg: RunConfig, out, err, *, report_only: bool = False) -> int:
    try:
        program = load_program(cfg)
        query = parse_query(cfg.query, program)
        answers, trace = answer_query(program, query, circuit_cap=cfg.circuit_cap, strategy=cfg.strategy,
                                      oracle=cfg.oracle, world_cap=cfg.world_cap)
    except PipelineError as exc:
        return _report_failure(exc.cause, err, step=exc.step)
    except BUDGET_ERRORS + USER_ERRORS as exc:
        return _report_failure(exc, err)
    if report_only:
        out.write(trace.to_text(explain=True))
        return EXIT_OK
    text = render(answers, cfg)
    if cfg.output:
        Path(cfg.output).write_text(text, encoding="utf-8")
    else:
        out.write(text)
    if cfg.overlay_dir:
        for path in _write_overlays(answers, cfg.overlay_dir):
            err.write(f"wrote {path}\n")
    if cfg.oracle:
        delta = trace.max_oracle_delta
        err.write(f"oracle max |Δp|: {'n/a (no probability rules)' if delta is None else format(delta, '.3g')}\n")
    if cfg.explain:
        err.write(trace.to_text(explain=True))
    return EXIT_OK


def _report_failure(exc: BaseException, err, step: str | None = None) -> int:
    prefix = f"error in step {step}: " if step else "error: "
    if isinstance(exc, ParseError):
        for d in exc.diagnostics:
            err.write(f"{d}\n")
        return EXIT_USER
    if isinstance(exc, FactFileError):
        for d in exc.diagnostics:
            err.write(f"{d}\n")
        return EXIT_USER
    if isinstance(exc, FileNotFoundError):
        err.write(f"{prefix}file not found: {exc.filename}\n")
        return EXIT_USER
    if isinstance(exc, BUDGET_ERRORS):
        err.write(f"{prefix}budget exceeded: {exc}\n")
        return EXIT_BUDGET
    if isinstance(exc, USER_ERRORS):
        err.write(f"{prefix}{exc}\n")
        return EXIT_USER
    raise exc


def _add_run_args(p: argparse.ArgumentParser):
    p.add_argument("-p", "--program", action="append", required=True, help="program file (repeatable)")
    p.add_argument("-d", "--facts", action="append", default=[], metavar="PRED=PATH",
                   type=lambda t: _binding(t, "auto"), help="fact file for a predicate")
    p.add_argument("--prob-facts", action="append", default=[], metavar="PRED=PATH",
                   type=lambda t: _binding(t, "probabilistic"),
                   help="independent probabilistic facts, optional trailing probability column")
    p.add_argument("-g", "--choice-group", action="append", default=[], metavar="PRED=PATH",
                   type=lambda t: _binding(t, "choice-group"),
                   help="rows form one annotated disjunction (uniform without a probability column)")
    p.add_argument("--data-dir", action="append", default=[], help="directory with a generator manifest.json")
    p.add_argument("-q", "--query", default="Ans", help="query: a predicate name or a conjunction")
    p.add_argument("--format", dest="output_format", choices=("table", "csv", "json"), default="table")
    p.add_argument("--precision", type=int, default=None, help="significant digits for floats")
    p.add_argument("--oracle", action="store_true", help="cross-check each probability rule by world enumeration")
    p.add_argument("--explain", action="store_true", help="print the pipeline trace to stderr")
    p.add_argument("--strategy", choices=("auto", "lifted", "compiled"), default="auto")
    p.add_argument("--world-cap", type=int, default=DEFAULT_WORLD_CAP)
    p.add_argument("--circuit-cap", type=int, default=10**7)
    p.add_argument("--delimiter", default="\t")
    p.add_argument("--header", action="store_true", help="fact files have a header row")
    p.add_argument("--overlay-dir", default=None, help="write region overlays as CSV files here")
    p.add_argument("-o", "--output", default=None, help="write answers to this file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nlq", description="Probabilistic ontology query answering.")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run_args(sub.add_parser("run", help="answer a query"))
    _add_run_args(sub.add_parser("explain", help="print rewriting, split and inference plans"))
    gen = sub.add_parser("gen", help="generate a synthetic meta-analysis fixture")
    gen.add_argument("--studies", type=int, default=100)
    gen.add_argument("--terms", type=int, default=20)
    gen.add_argument("--voxels", type=int, default=125)
    gen.add_argument("--regions", type=int, default=5)
    gen.add_argument("--term-density", type=float, default=0.1)
    gen.add_argument("--focus-density", type=float, default=0.05)
    gen.add_argument("--sigma", type=float, default=2.0)
    gen.add_argument("--spacing", type=int, default=2)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("-o", "--outdir", required=True)
    return parser


def config_from_args(args) -> RunConfig:
    bindings = []
    for d in args.data_dir:
        bindings.extend(_manifest_bindings(d))
    bindings.extend(args.facts + args.prob_facts + args.choice_group)
    return RunConfig(
        programs=args.program,
        facts=bindings,
        query=args.query,
        output_format=args.output_format,
        precision=args.precision,
        oracle=args.oracle,
        explain=args.explain,
        world_cap=args.world_cap,
        circuit_cap=args.circuit_cap,
        strategy=args.strategy,
        delimiter=args.delimiter.encode().decode("unicode_escape"),
        header=args.header,
        overlay_dir=args.overlay_dir,
        output=args.output,
    )


def main(argv=None, out=None, err=None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    args = build_parser().parse_args(argv)
    if args.command == "gen":
        try:
            spec = SyntheticDatasetSpec(args.studies, args.terms, args.voxels, args.regions, args.term_density,
                                        args.focus_density, args.sigma, args.spacing, args.seed)
            manifest = generate_synthetic(spec, args.outdir)
        except (ValueError, OSError) as exc:
            err.write(f"error: {exc}\n")
            return EXIT_USER
        for pred, info in manifest["files"].items():
            out.write(f"{pred}\t{info['rows']}\t{info['path']}\n")
        return EXIT_OK
    try:
        cfg = config_from_args(args)
    except (UsageError, OSError, KeyError, json.JSONDecodeError) as exc:
        err.write(f"error: {exc}\n")
        return EXIT_USER
    return execute(cfg, out, err, report_only=args.command == "explain")


if __name__ == "__main__":
    sys.exit(main())
