"""Subcommand implementations. Each takes a validated ``CliConfig`` and an output
stream and returns a process exit code."""
import asyncio
import itertools
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, TextIO, Tuple

from pydantic import BaseModel, ConfigDict, Field

from src.automata.dfa import Dfa, compile_pattern_set
from src.automata.rules import load_rules
from src.app.reports import (
    inspect_from_database,
    inspect_from_detection,
    render_dot,
    render_inspect_text,
)
from src.engine.codec import FILE_SUFFIX, database_digest, load_database, save_database
from src.engine.database import DEFAULT_BATCH_LENGTH, EngineParams, HybridDb, assemble
from src.engine.scanner import (
    Engine,
    MatchEvent,
    StreamState,
    initial_state,
    scan_bytes,
    scan_stream,
)
from src.errors import PatternSetError
from src.region.detector import (
    DEFAULT_LEAK_DEPTH,
    DEFAULT_LEAK_THRESHOLD,
    DEFAULT_SIGMA,
    DetectorConfig,
    RegionMode,
    RegionReport,
    detect_report,
)
from src.utils.timing import Timing, throughput_bps, time_repeated
from src.utils.workload import WorkloadKind, difftest_cases, shrink, synthetic_workload

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_COMPILE = 2
EXIT_IO = 3
EXIT_DIVERGENCE = 4

READ_CHUNK = 1 << 20


class OutputFormat(str, Enum):
    JSONL = "jsonl"
    TEXT = "text"


class CliConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    command: str
    rules: Optional[Path] = None
    db: Optional[Path] = None
    inputs: List[Path] = Field(default_factory=list)
    out: Optional[Path] = None
    sigma: int = Field(DEFAULT_SIGMA, ge=0)
    leak_threshold: float = Field(DEFAULT_LEAK_THRESHOLD, ge=0.0, le=1.0)
    leak_depth: int = Field(DEFAULT_LEAK_DEPTH, ge=1)
    batch_length: int = Field(DEFAULT_BATCH_LENGTH, ge=1, le=64)
    region_mode: RegionMode = RegionMode.HYPER
    seed: int = 0
    engines: List[Engine] = Field(default_factory=lambda: [Engine.HYBRID])
    format: OutputFormat = OutputFormat.JSONL
    repeat: int = Field(5, ge=1)
    dot: Optional[Path] = None
    cases: int = Field(1000, ge=1)
    no_gutter: bool = False
    workload: WorkloadKind = WorkloadKind.REGION
    size: int = Field(1 << 20, ge=1)
    sigma_grid: List[int] = Field(default_factory=list)
    lambda_grid: List[float] = Field(default_factory=list)
    batch_grid: List[int] = Field(default_factory=list)
    host: str = "127.0.0.1"
    port: int = Field(8000, ge=1, le=65535)

    def detector_config(self, **overrides) -> DetectorConfig:
        values = dict(sigma=self.sigma, leak_threshold=self.leak_threshold,
                      leak_depth=self.leak_depth, mode=self.region_mode, seed=self.seed)
        values.update(overrides)
        return DetectorConfig(**values)

    def engine_params(self, **overrides) -> EngineParams:
        values = dict(batch_length=self.batch_length, sigma=self.sigma,
                      leak_threshold=self.leak_threshold, leak_depth=self.leak_depth)
        values.update(overrides)
        return EngineParams(**values)


@dataclass
class FileScan:
    path: Path
    bytes_scanned: int = 0
    events: List[MatchEvent] = field(default_factory=list)
    elapsed: float = 0.0


@dataclass
class ScanReport:
    files: List[FileScan]
    elapsed: float

    @property
    def bytes_scanned(self) -> int:
        return sum(f.bytes_scanned for f in self.files)

    @property
    def event_count(self) -> int:
        return sum(len(f.events) for f in self.files)

    @property
    def throughput_bps(self) -> float:
        return throughput_bps(self.bytes_scanned, self.elapsed)


# Building blocks

def compile_rules(path: Path, cfg: CliConfig) -> Tuple[Dfa, RegionReport, HybridDb]:
    rules = load_rules(path)
    if not rules:
        raise PatternSetError([])
    try:
        dfa = compile_pattern_set([rule.pattern for rule in rules])
    except PatternSetError as err:
        lines = {rule.pattern_id: rule.line for rule in rules}
        raise PatternSetError(err.errors, lines={index: lines[index] for index, _ in err.errors}) from err
    report, db = build_database(dfa, cfg.detector_config(), cfg.engine_params())
    return dfa, report, db


def build_database(dfa: Dfa, detector: DetectorConfig, params: EngineParams) -> Tuple[RegionReport, HybridDb]:
    """Detect the region and assemble; stage times land in the database metadata."""
    started = time.perf_counter()
    report = detect_report(dfa, detector)
    detected = time.perf_counter()
    db = assemble(dfa, report.plan, params)
    db.metadata["detect_seconds"] = detected - started
    db.metadata["assemble_seconds"] = time.perf_counter() - detected
    return report, db


def _stage_times(db: HybridDb) -> Dict[str, float]:
    times = {key: db.metadata.get(key, 0.0) for key in ("compile_seconds", "detect_seconds", "assemble_seconds")}
    times["total_seconds"] = sum(times.values())
    return {key: round(value, 6) for key, value in times.items()}


def open_database(cfg: CliConfig) -> HybridDb:
    if cfg.db is not None:
        return load_database(cfg.db)
    if cfg.rules is not None:
        return compile_rules(cfg.rules, cfg)[2]
    raise ValueError("either --db or --rules is required")


def scan_file(db: HybridDb, path: Path, engine: Engine, gutter: bool = True) -> FileScan:
    """Stream one file through the engine in chunks; events are buffered per file."""
    result = FileScan(path=path)
    state: StreamState = initial_state(db)
    started = time.perf_counter()
    with open(path, "rb") as handle:
        while True:
            chunk = handle.read(READ_CHUNK)
            if not chunk:
                break
            state = scan_stream(db, state, chunk, result.events.append, engine, gutter)
    result.elapsed = time.perf_counter() - started
    result.bytes_scanned = state.consumed
    return result


async def scan_files(db: HybridDb, paths: List[Path], engine: Engine,
                     gutter: bool = True) -> List[FileScan]:
    """Scan several files concurrently against one shared database."""
    return list(await asyncio.gather(
        *(asyncio.to_thread(scan_file, db, path, engine, gutter) for path in paths)
    ))


def _emit(out: TextIO, fmt: OutputFormat, payload: dict) -> None:
    if fmt == OutputFormat.JSONL:
        out.write(json.dumps(payload, sort_keys=False) + "\n")
    else:
        out.write(" ".join(f"{key}={value}" for key, value in payload.items()) + "\n")


# Subcommands

def cmd_compile(cfg: CliConfig, out: TextIO = sys.stdout) -> int:
    if cfg.rules is None:
        raise ValueError("--rules is required")
    dfa, report, db = compile_rules(cfg.rules, cfg)
    target = cfg.out or cfg.rules.with_suffix(FILE_SUFFIX)
    save_database(db, target)
    plan = report.plan
    summary = {
        "database": str(target),
        "patterns": dfa.pattern_count,
        "dfa_states": dfa.state_count,
        "region": plan.size if plan else "none",
        "s_limit": db.s_limit,
        "leakiness": plan.leakiness if plan else None,
        "stickiness_sum": plan.stickiness_sum if plan else None,
        **_stage_times(db),
        "digest": database_digest(db),
    }
    _emit(out, cfg.format, summary)
    return EXIT_OK


def cmd_scan(cfg: CliConfig, out: TextIO = sys.stdout) -> int:
    if not cfg.inputs:
        raise ValueError("--input is required")
    db = open_database(cfg)
    engine = cfg.engines[0]
    if cfg.no_gutter:
        logger.warning("scanning without the gutter table; results may be wrong")
    started = time.perf_counter()
    files = asyncio.run(scan_files(db, list(cfg.inputs), engine, gutter=not cfg.no_gutter))
    report = ScanReport(files=files, elapsed=time.perf_counter() - started)
    for scanned in report.files:
        for event in sorted(scanned.events, key=lambda e: (e.offset, e.pattern)):
            payload = {"pattern": event.pattern, "offset": event.offset}
            if len(report.files) > 1:
                payload["input"] = str(scanned.path)
            _emit(out, cfg.format, payload)
    _emit(out, cfg.format, {
        "summary": "totals",
        "inputs": len(report.files),
        "bytes": report.bytes_scanned,
        "events": report.event_count,
        "elapsed_seconds": round(report.elapsed, 6),
        "throughput_bps": round(report.throughput_bps, 1),
    })
    return EXIT_OK


def _bench_input(cfg: CliConfig, db: HybridDb) -> bytes:
    if cfg.inputs:
        return b"".join(Path(p).read_bytes() for p in cfg.inputs)
    return synthetic_workload(db, cfg.size, cfg.workload, cfg.seed)


def _bench_engine(db: HybridDb, data: bytes, engine: Engine, repeat: int, gutter: bool = True) -> Timing:
    return time_repeated(engine.value, lambda: scan_bytes(db, data, engine, gutter), len(data), repeat)


def cmd_bench(cfg: CliConfig, out: TextIO = sys.stdout) -> int:
    db = open_database(cfg)
    data = _bench_input(cfg, db)
    timings = {}
    for engine in dict.fromkeys(cfg.engines):
        timing = _bench_engine(db, data, engine, cfg.repeat)
        timings[engine] = timing
        _emit(out, cfg.format, {
            "engine": engine.value,
            "bytes": len(data),
            "repeat": cfg.repeat,
            "median_seconds": round(timing.median_seconds, 6),
            "gbit_per_second": round(timing.gbits_per_second, 6),
        })
    if Engine.HYBRID in timings and Engine.SCALAR in timings:
        scalar = timings[Engine.SCALAR].median_seconds
        hybrid = timings[Engine.HYBRID].median_seconds
        ratio = scalar / hybrid if hybrid > 0 else 0.0
        _emit(out, cfg.format, {"ratio_hybrid_over_scalar": round(ratio, 4)})
    return EXIT_OK


def cmd_inspect(cfg: CliConfig, out: TextIO = sys.stdout) -> int:
    if cfg.db is not None:
        db = load_database(cfg.db)
        data = inspect_from_database(db)
        dfa = db.to_dfa()
        region = db.renumbering.members if db.has_region else ()
    elif cfg.rules is not None:
        dfa, report, _ = compile_rules(cfg.rules, cfg)
        data = inspect_from_detection(dfa, report, cfg.engine_params())
        region = report.plan.members if report.plan else ()
    else:
        raise ValueError("either --db or --rules is required")
    if cfg.format == OutputFormat.JSONL:
        out.write(json.dumps(data) + "\n")
    else:
        out.write(render_inspect_text(data))
    if cfg.dot is not None:
        cfg.dot.write_text(render_dot(dfa, region), encoding="utf-8")
        logger.info(f"wrote DOT graph {cfg.dot}")
    return EXIT_OK


def _diverges(db: HybridDb, data: bytes, gutter: bool) -> bool:
    return scan_bytes(db, data, Engine.HYBRID, gutter) != scan_bytes(db, data, Engine.SCALAR)


def cmd_difftest(cfg: CliConfig, out: TextIO = sys.stdout) -> int:
    db = open_database(cfg)
    gutter = not cfg.no_gutter
    if not gutter:
        logger.warning("difftest running the gutter-free ablation engine")
    for number, data in enumerate(difftest_cases(db, cfg.seed, cfg.cases), start=1):
        if _diverges(db, data, gutter):
            reproducer = shrink(data, lambda candidate: _diverges(db, candidate, gutter))
            hybrid = scan_bytes(db, reproducer, Engine.HYBRID, gutter)
            scalar = scan_bytes(db, reproducer, Engine.SCALAR)
            _emit(out, cfg.format, {
                "result": "divergence",
                "case": number,
                "input_length": len(data),
                "reproducer_hex": reproducer.hex(),
                "hybrid_events": [list(e) for e in hybrid[1]],
                "scalar_events": [list(e) for e in scalar[1]],
                "hybrid_state": hybrid[0].state,
                "scalar_state": scalar[0].state,
            })
            return EXIT_DIVERGENCE
        if number % 1000 == 0:
            logger.info(f"difftest: {number} cases, no divergence")
    _emit(out, cfg.format, {"result": "pass", "cases": cfg.cases, "divergences": 0, "seed": cfg.seed})
    return EXIT_OK


def cmd_sweep(cfg: CliConfig, out: TextIO = sys.stdout) -> int:
    """Parameter-tuning grid over sigma, lambda and batch length."""
    if cfg.rules is None:
        raise ValueError("--rules is required")
    rules = load_rules(cfg.rules)
    if not rules:
        raise PatternSetError([])
    dfa = compile_pattern_set([rule.pattern for rule in rules])
    sigmas = cfg.sigma_grid or [cfg.sigma]
    lambdas = cfg.lambda_grid or [cfg.leak_threshold]
    batches = cfg.batch_grid or [cfg.batch_length]
    data: Optional[bytes] = None
    for sigma, leak, batch in itertools.product(sigmas, lambdas, batches):
        report, db = build_database(
            dfa,
            cfg.detector_config(sigma=sigma, leak_threshold=leak),
            cfg.engine_params(sigma=sigma, leak_threshold=leak, batch_length=batch),
        )
        if data is None or not cfg.inputs:
            data = _bench_input(cfg, db)
        timing = _bench_engine(db, data, Engine.HYBRID, cfg.repeat)
        _emit(out, cfg.format, {
            "sigma": sigma,
            "lambda": leak,
            "batch": batch,
            "region": report.plan.size if report.plan else 0,
            "leakiness": report.plan.leakiness if report.plan else None,
            **_stage_times(db),
            "gbit_per_second": round(timing.gbits_per_second, 6),
        })
    return EXIT_OK


def cmd_serve(cfg: CliConfig, out: TextIO = sys.stdout) -> int:
    import uvicorn

    from src.app.main_fastapi import DB_ENV

    if cfg.db is None:
        raise ValueError("--db is required")
    os.environ[DB_ENV] = str(cfg.db)
    uvicorn.run("src.app.main_fastapi:app", host=cfg.host, port=cfg.port)
    return EXIT_OK


COMMANDS = {
    "compile": cmd_compile,
    "scan": cmd_scan,
    "bench": cmd_bench,
    "inspect": cmd_inspect,
    "difftest": cmd_difftest,
    "sweep": cmd_sweep,
    "serve": cmd_serve,
}
