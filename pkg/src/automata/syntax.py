"""Parser for the restricted, byte-oriented regex dialect.

Supported: literals, ``.``, bracket classes (ranges, negation), the escapes
``\\\\ \\. \\n \\t \\r \\f \\v \\xHH \\d \\w \\s \\D \\W \\S`` plus escaped
punctuation, ``|``, ``(...)``, ``(?:...)`` and the quantifiers ``* + ? {m}
{m,} {m,n}``. Matching is on raw bytes: no case folding, ``.`` matches every
byte value including newline. Anchors, backreferences and lookaround are
rejected because a DFA scan cannot honour them.
"""
from dataclasses import dataclass
from typing import ClassVar, FrozenSet, List, Optional, Tuple

from src.errors import RegexSyntaxError, UnsupportedFeatureError

ALL_BYTES: FrozenSet[int] = frozenset(range(256))
MAX_REPEAT = 1000

_DIGITS = frozenset(range(ord("0"), ord("9") + 1))
_WORD = (
    _DIGITS
    | frozenset(range(ord("a"), ord("z") + 1))
    | frozenset(range(ord("A"), ord("Z") + 1))
    | {ord("_")}
)
_SPACE = frozenset(b" \t\n\r\f\v")

CLASS_ESCAPES = {
    "d": _DIGITS,
    "w": frozenset(_WORD),
    "s": _SPACE,
    "D": ALL_BYTES - _DIGITS,
    "W": ALL_BYTES - _WORD,
    "S": ALL_BYTES - _SPACE,
}
CHAR_ESCAPES = {"n": 0x0A, "t": 0x09, "r": 0x0D, "f": 0x0C, "v": 0x0B, "0": 0x00}
ANCHOR_ESCAPES = set("bBAZzG")


@dataclass(frozen=True)
class Node:
    kind: ClassVar[str] = "node"

    @property
    def children(self) -> Tuple["Node", ...]:
        return ()


@dataclass(frozen=True)
class Literal(Node):
    byte: int
    kind: ClassVar[str] = "literal"


@dataclass(frozen=True)
class ByteClass(Node):
    chars: FrozenSet[int]
    kind: ClassVar[str] = "class"

    def __post_init__(self):
        if not self.chars:
            raise ValueError("byte class must not be empty")
        if min(self.chars) < 0 or max(self.chars) > 255:
            raise ValueError("byte class values must lie in 0..255")


@dataclass(frozen=True)
class Concat(Node):
    items: Tuple[Node, ...]
    kind: ClassVar[str] = "concat"

    @property
    def children(self) -> Tuple[Node, ...]:
        return self.items


@dataclass(frozen=True)
class Alternation(Node):
    options: Tuple[Node, ...]
    kind: ClassVar[str] = "alternation"

    @property
    def children(self) -> Tuple[Node, ...]:
        return self.options


@dataclass(frozen=True)
class Repeat(Node):
    child: Node
    min: int
    max: Optional[int]  # None means unbounded
    kind: ClassVar[str] = "repeat"

    def __post_init__(self):
        if self.min < 0 or (self.max is not None and self.max < self.min):
            raise ValueError(f"invalid repetition bounds {{{self.min},{self.max}}}")

    @property
    def children(self) -> Tuple[Node, ...]:
        return (self.child,)


@dataclass(frozen=True)
class Group(Node):
    child: Node
    kind: ClassVar[str] = "group"

    @property
    def children(self) -> Tuple[Node, ...]:
        return (self.child,)


SyntaxTree = Node
EMPTY = Concat(())


def nullable(node: Node) -> bool:
    """True if the node matches the empty string."""
    if isinstance(node, (Literal, ByteClass)):
        return False
    if isinstance(node, Concat):
        return all(nullable(item) for item in node.items)
    if isinstance(node, Alternation):
        return any(nullable(option) for option in node.options)
    if isinstance(node, Repeat):
        return node.min == 0 or nullable(node.child)
    if isinstance(node, Group):
        return nullable(node.child)
    raise TypeError(f"unknown node {node!r}")


def _concat(items: List[Node]) -> Node:
    flat: List[Node] = []
    for item in items:
        if isinstance(item, Concat):
            flat.extend(item.items)
        else:
            flat.append(item)
    if len(flat) == 1:
        return flat[0]
    return Concat(tuple(flat))


class _Parser:
    def __init__(self, pattern: str):
        self.pattern = pattern
        self.pos = 0
        # byte offset of every character position, plus the end
        self._offsets = [0]
        for ch in pattern:
            self._offsets.append(self._offsets[-1] + len(ch.encode("utf-8")))

    # helpers

    def offset(self, pos: Optional[int] = None) -> int:
        return self._offsets[self.pos if pos is None else pos]

    def syntax_error(self, message: str, pos: Optional[int] = None) -> RegexSyntaxError:
        return RegexSyntaxError(message, self.pattern, self.offset(pos))

    def unsupported(self, message: str, pos: Optional[int] = None) -> UnsupportedFeatureError:
        return UnsupportedFeatureError(message, self.pattern, self.offset(pos))

    def peek(self, ahead: int = 0) -> Optional[str]:
        index = self.pos + ahead
        return self.pattern[index] if index < len(self.pattern) else None

    def take(self) -> str:
        ch = self.pattern[self.pos]
        self.pos += 1
        return ch

    # grammar

    def parse(self) -> Node:
        node = self.alternation()
        if self.pos < len(self.pattern):
            # only an unmatched ')' can stop the top-level alternation early
            raise self.syntax_error("unbalanced parenthesis")
        return node

    def alternation(self) -> Node:
        options = [self.concatenation()]
        while self.peek() == "|":
            self.take()
            options.append(self.concatenation())
        if len(options) == 1:
            return options[0]
        return Alternation(tuple(options))

    def concatenation(self) -> Node:
        items: List[Node] = []
        while True:
            ch = self.peek()
            if ch is None or ch in "|)":
                break
            if ch in "*+?" or (ch == "{" and self._quantifier_ahead()):
                raise self.syntax_error("nothing to repeat")
            atom = self.atom()
            items.append(self.quantified(atom))
        return _concat(items) if items else EMPTY

    def quantified(self, atom: Node) -> Node:
        bounds = self._quantifier()
        if bounds is None:
            return atom
        low, high = bounds
        nxt = self.peek()
        if nxt is not None and (nxt in "*+?" or (nxt == "{" and self._quantifier_ahead())):
            raise self.syntax_error("multiple repeat")
        return Repeat(atom, low, high)

    def _quantifier_ahead(self) -> bool:
        saved = self.pos
        try:
            return self._quantifier() is not None
        except RegexSyntaxError:
            return True
        finally:
            self.pos = saved

    def _quantifier(self) -> Optional[Tuple[int, Optional[int]]]:
        ch = self.peek()
        if ch == "*":
            self.take()
            return 0, None
        if ch == "+":
            self.take()
            return 1, None
        if ch == "?":
            self.take()
            return 0, 1
        if ch != "{":
            return None
        start = self.pos
        end = self.pattern.find("}", start)
        if end < 0:
            return None
        body = self.pattern[start + 1:end]
        low_text, comma, high_text = body.partition(",")
        if not low_text.isdigit() or (high_text and not high_text.isdigit()):
            return None  # not a quantifier, '{' is a literal
        low = int(low_text)
        high = int(high_text) if high_text else (None if comma else low)
        if low > MAX_REPEAT or (high is not None and high > MAX_REPEAT):
            raise self.unsupported(f"repetition bound exceeds {MAX_REPEAT}", start)
        if high is not None and high < low:
            raise self.syntax_error("min repeat greater than max repeat", start)
        self.pos = end + 1
        return low, high

    def atom(self) -> Node:
        start = self.pos
        ch = self.take()
        if ch == "(":
            return self.group(start)
        if ch == "[":
            return ByteClass(self.bracket(start))
        if ch == ".":
            return ByteClass(ALL_BYTES)
        if ch in "^$":
            raise self.unsupported(f"anchor '{ch}' is not supported", start)
        if ch == "\\":
            return self.escape(start, in_class=False)
        return self.literal_char(ch)

    def literal_char(self, ch: str) -> Node:
        encoded = ch.encode("utf-8")
        if len(encoded) == 1:
            return Literal(encoded[0])
        return Group(Concat(tuple(Literal(b) for b in encoded)))

    def group(self, start: int) -> Node:
        if self.peek() == "?":
            if self.peek(1) == ":":
                self.pos += 2
            elif self.peek(1) in ("=", "!") or (self.peek(1) == "<" and self.peek(2) in ("=", "!")):
                raise self.unsupported("lookaround is not supported", start)
            else:
                raise self.unsupported("group extensions are not supported", start)
        body = self.alternation()
        if self.peek() != ")":
            raise self.syntax_error("missing ')'", start)
        self.take()
        return Group(body)

    def escape(self, start: int, in_class: bool):
        ch = self.peek()
        if ch is None:
            raise self.syntax_error("trailing backslash", start)
        self.take()
        if ch in CLASS_ESCAPES:
            chars = CLASS_ESCAPES[ch]
            return chars if in_class else ByteClass(chars)
        if ch in CHAR_ESCAPES:
            value = CHAR_ESCAPES[ch]
            return value if in_class else Literal(value)
        if ch == "x":
            digits = self.pattern[self.pos:self.pos + 2]
            if len(digits) != 2 or any(d not in "0123456789abcdefABCDEF" for d in digits):
                raise self.syntax_error("\\x needs two hex digits", start)
            self.pos += 2
            value = int(digits, 16)
            return value if in_class else Literal(value)
        if ch.isdigit():
            raise self.unsupported("backreferences are not supported", start)
        if ch in ANCHOR_ESCAPES and not in_class:
            raise self.unsupported(f"assertion '\\{ch}' is not supported", start)
        if ch in "pPk":
            raise self.unsupported(f"escape '\\{ch}' is not supported", start)
        if ch.isalnum():
            raise self.syntax_error(f"bad escape '\\{ch}'", start)
        encoded = ch.encode("utf-8")
        if len(encoded) != 1:
            raise self.unsupported("non-ASCII escapes are not supported", start)
        return encoded[0] if in_class else Literal(encoded[0])

    def bracket(self, start: int) -> FrozenSet[int]:
        negate = False
        if self.peek() == "^":
            self.take()
            negate = True
        chars = set()
        first = True
        while True:
            ch = self.peek()
            if ch is None:
                raise self.syntax_error("unterminated character class", start)
            if ch == "]" and not first:
                self.take()
                break
            first = False
            low = self._class_item()
            if isinstance(low, frozenset):
                chars |= low
                continue
            if self.peek() == "-" and self.peek(1) not in (None, "]"):
                dash = self.pos
                self.take()
                high = self._class_item()
                if isinstance(high, frozenset):
                    raise self.syntax_error("bad character range", dash)
                if high < low:
                    raise self.syntax_error("bad character range", dash)
                chars.update(range(low, high + 1))
            else:
                chars.add(low)
        result = ALL_BYTES - chars if negate else frozenset(chars)
        if not result:
            raise self.syntax_error("character class matches nothing", start)
        return frozenset(result)

    def _class_item(self):
        item_start = self.pos
        ch = self.take()
        if ch == "\\":
            return self.escape(item_start, in_class=True)
        encoded = ch.encode("utf-8")
        if len(encoded) != 1:
            raise self.unsupported("non-ASCII characters in classes are not supported", item_start)
        return encoded[0]


def parse_pattern(pattern: str) -> SyntaxTree:
    """Parse one pattern of the supported dialect into a syntax tree."""
    return _Parser(pattern).parse()
