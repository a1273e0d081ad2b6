from dataclasses import dataclass
from pathlib import Path
from typing import List, Union


@dataclass(frozen=True)
class Rule:
    pattern_id: int
    line: int  # 1-based line number in the rule file
    pattern: str


def parse_rules(text: str) -> List[Rule]:
    """One regex per line; blank lines and lines starting with '#' are skipped."""
    rules = []
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        rules.append(Rule(pattern_id=len(rules), line=line_number, pattern=line))
    return rules


def load_rules(path: Union[str, Path]) -> List[Rule]:
    """Read a UTF-8 rule file."""
    return parse_rules(Path(path).read_text(encoding="utf-8"))
