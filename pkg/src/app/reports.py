"""Inspect reports and DOT export, rendered with Jinja2 templates."""
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

from jinja2 import Environment, FileSystemLoader

from src.automata.dfa import Dfa
from src.engine.database import EngineParams, HybridDb
from src.region.detector import (
    RegionPlan,
    RegionReport,
    eligible_stickiness,
)
from src.region.graph import compute_sccs, edge_bundles, stickiness_all

BASE_DIR = Path(__file__).resolve().parent
TEMPLATES_DIR = BASE_DIR / "templates"
MAX_LISTED_SCCS = 64

templates = Environment(
    loader=FileSystemLoader(str(TEMPLATES_DIR)),
    autoescape=False,
    trim_blocks=True,
    lstrip_blocks=True,
    keep_trailing_newline=True,
)


def describe_chars(chars: Iterable[int]) -> str:
    """Compact range notation for a byte set, e.g. ``a-z,\\x00``."""
    values = sorted(chars)
    if len(values) > 128:
        rest = sorted(set(range(256)) - set(values))
        return "^" + describe_chars(rest) if rest else "any"
    parts: List[str] = []
    index = 0
    while index < len(values):
        end = index
        while end + 1 < len(values) and values[end + 1] == values[end] + 1:
            end += 1
        low, high = values[index], values[end]
        if high - low >= 2:
            parts.append(f"{_char(low)}-{_char(high)}")
        else:
            parts.extend(_char(v) for v in values[index:end + 1])
        index = end + 1
    return ",".join(parts)


def _char(value: int) -> str:
    if 0x21 <= value <= 0x7E and chr(value) not in "\\\",-^":
        return chr(value)
    return f"\\x{value:02x}"


def _dot_escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


def inspect_data(dfa: Dfa, plan: Optional[RegionPlan], params: EngineParams,
                 mode: str, decision: str, reason: str = "") -> Dict[str, Any]:
    """Plain dict behind both the text and the JSON inspect output."""
    sccs = compute_sccs(dfa)
    stickiness = stickiness_all(dfa)
    listed = [
        {
            "first": scc.members[0],
            "size": len(scc.members),
            "distance": scc.distance,
            "stickiness": scc.stickiness_sum,
            "eligible": eligible_stickiness(dfa, scc, stickiness),
        }
        for scc in sccs
    ]
    region = None
    if plan is not None:
        region = {
            "members": list(plan.members),
            "size": plan.size,
            "start": plan.start,
            "leakiness": plan.leakiness,
            "stickiness_sum": plan.stickiness_sum,
        }
    return {
        "states": dfa.state_count,
        "patterns": dfa.pattern_count,
        "scc_count": len(sccs),
        "sccs": listed[:MAX_LISTED_SCCS],
        "sccs_hidden": max(len(listed) - MAX_LISTED_SCCS, 0),
        "params": {**params.model_dump(), "mode": mode},
        "region": region,
        "decision": decision,
        "reason": reason,
        "accepts": sorted(dfa.accepts),
    }


def inspect_from_detection(dfa: Dfa, report: RegionReport, params: EngineParams) -> Dict[str, Any]:
    decision = "accepted" if report.accepted else "rejected"
    return inspect_data(dfa, report.plan, params, report.mode.value, decision, report.reason)


def inspect_from_database(db: HybridDb) -> Dict[str, Any]:
    """Inspect a compiled database; region statistics are the ones stored at compile time."""
    dfa = db.to_dfa()
    plan = None
    if db.has_region:
        members = db.renumbering.members
        plan = RegionPlan(
            members=members,
            start=members[0],
            stickiness_sum=int(db.metadata.get("stickiness_sum", 0)),
            leakiness=float(db.metadata.get("leakiness", 0.0)),
        )
    decision = "accepted" if plan else "rejected"
    reason = "" if plan else "database is scalar-only"
    return inspect_data(dfa, plan, db.params, "database", decision, reason)


def render_inspect_text(data: Dict[str, Any]) -> str:
    return templates.get_template("inspect.txt.j2").render(**data)


def render_dot(dfa: Dfa, region: Iterable[int] = ()) -> str:
    """Graphviz digraph; hyper-region nodes carry ``class="hyper"`` and a fill."""
    hyper = set(region)
    nodes = [
        {
            "id": state,
            "label": str(state),
            "hyper": state in hyper,
            "accept": dfa.is_accepting(state),
            "start": state == dfa.start,
        }
        for state in range(dfa.state_count)
    ]
    edges = [
        {
            "source": bundle.source,
            "destination": bundle.destination,
            "label": _dot_escape(describe_chars(bundle.chars)),
        }
        for state in range(dfa.state_count)
        for bundle in edge_bundles(dfa, state)
    ]
    return templates.get_template("region.dot.j2").render(nodes=nodes, edges=edges)

