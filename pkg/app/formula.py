"""
State formulas: boolean combinations of comparisons over integer state variables.

Formulas are immutable values. They can be built in code

    conj(eq("energy", 25), eq("tick", 0))
    cmp("robotX", "!=", "humanX") | cmp("robotY", "!=", "humanY")

or parsed from PRISM-style text with parse_formula(). Two evaluation paths
exist: holds() checks a single valuation and mask() evaluates a whole column
table at once.
"""
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Tuple, Union
import operator
import re

import numpy as np

from app.core.errors import FormulaError

Operand = Union[int, str]

_OPS = {
    "=": operator.eq,
    "!=": operator.ne,
    "<=": operator.le,
    "<": operator.lt,
    ">=": operator.ge,
    ">": operator.gt,
}

_ALIASES = {"==": "=", "≠": "!=", "≤": "<=", "≥": ">=", "∧": "&", "∨": "|", "¬": "!"}


class StateFormula:
    """Base class of all formula nodes."""

    def holds(self, valuation: Mapping[str, int]) -> bool:
        raise NotImplementedError

    def mask(self, columns: Mapping[str, np.ndarray], size: int) -> np.ndarray:
        raise NotImplementedError

    def variables(self) -> frozenset:
        raise NotImplementedError

    def validate(self, names: Iterable[str]) -> None:
        """Raise FormulaError if the formula mentions a name outside `names`."""
        unknown = sorted(self.variables() - set(names))
        if unknown:
            raise FormulaError(f"Unknown variable(s) {', '.join(unknown)} in formula {self}")

    def __and__(self, other: "StateFormula") -> "StateFormula":
        return conj(self, other)

    def __or__(self, other: "StateFormula") -> "StateFormula":
        return disj(self, other)

    def __invert__(self) -> "StateFormula":
        return neg(self)


@dataclass(frozen=True)
class Const(StateFormula):
    value: bool

    def holds(self, valuation):
        return self.value

    def mask(self, columns, size):
        return np.full(size, self.value, dtype=bool)

    def variables(self):
        return frozenset()

    def __str__(self):
        return "true" if self.value else "false"


TRUE = Const(True)
FALSE = Const(False)


def _lookup(valuation: Mapping[str, int], name: str) -> int:
    try:
        return valuation[name]
    except KeyError:
        raise FormulaError(f"Unknown variable '{name}'") from None


def _column(columns: Mapping[str, np.ndarray], name: str) -> np.ndarray:
    try:
        return columns[name]
    except KeyError:
        raise FormulaError(f"Unknown variable '{name}'") from None


@dataclass(frozen=True)
class Compare(StateFormula):
    left: str
    op: str
    right: Operand

    def __post_init__(self):
        if self.op not in _OPS:
            raise FormulaError(f"Unknown comparison operator '{self.op}'")

    def holds(self, valuation):
        left = _lookup(valuation, self.left)
        right = _lookup(valuation, self.right) if isinstance(self.right, str) else self.right
        return bool(_OPS[self.op](left, right))

    def mask(self, columns, size):
        left = _column(columns, self.left)
        right = _column(columns, self.right) if isinstance(self.right, str) else self.right
        return np.asarray(_OPS[self.op](left, right), dtype=bool)

    def variables(self):
        if isinstance(self.right, str):
            return frozenset((self.left, self.right))
        return frozenset((self.left,))

    def __str__(self):
        return f"{self.left}{self.op}{self.right}"


@dataclass(frozen=True)
class And(StateFormula):
    parts: Tuple[StateFormula, ...]

    def holds(self, valuation):
        return all(p.holds(valuation) for p in self.parts)

    def mask(self, columns, size):
        result = np.ones(size, dtype=bool)
        for part in self.parts:
            result &= part.mask(columns, size)
        return result

    def variables(self):
        return frozenset().union(*(p.variables() for p in self.parts))

    def __str__(self):
        return " & ".join(_wrap(p) for p in self.parts)


@dataclass(frozen=True)
class Or(StateFormula):
    parts: Tuple[StateFormula, ...]

    def holds(self, valuation):
        return any(p.holds(valuation) for p in self.parts)

    def mask(self, columns, size):
        result = np.zeros(size, dtype=bool)
        for part in self.parts:
            result |= part.mask(columns, size)
        return result

    def variables(self):
        return frozenset().union(*(p.variables() for p in self.parts))

    def __str__(self):
        return " | ".join(_wrap(p) for p in self.parts)


@dataclass(frozen=True)
class Not(StateFormula):
    inner: StateFormula

    def holds(self, valuation):
        return not self.inner.holds(valuation)

    def mask(self, columns, size):
        return ~self.inner.mask(columns, size)

    def variables(self):
        return self.inner.variables()

    def __str__(self):
        return f"!{_wrap(self.inner)}"


def _wrap(f: StateFormula) -> str:
    return f"({f})" if isinstance(f, (And, Or, Not)) else str(f)


def cmp(left: str, op: str, right: Operand) -> Compare:
    return Compare(left, _ALIASES.get(op, op), right)


def eq(name: str, value: Operand) -> Compare:
    return Compare(name, "=", value)


def ne(name: str, value: Operand) -> Compare:
    return Compare(name, "!=", value)


def le(name: str, value: Operand) -> Compare:
    return Compare(name, "<=", value)


def conj(*parts: StateFormula) -> StateFormula:
    flat = []
    for part in parts:
        if isinstance(part, And):
            flat.extend(part.parts)
        elif part == TRUE:
            continue
        else:
            flat.append(part)
    if not flat:
        return TRUE
    if len(flat) == 1:
        return flat[0]
    return And(tuple(flat))


def disj(*parts: StateFormula) -> StateFormula:
    flat = []
    for part in parts:
        if isinstance(part, Or):
            flat.extend(part.parts)
        elif part == FALSE:
            continue
        else:
            flat.append(part)
    if not flat:
        return FALSE
    if len(flat) == 1:
        return flat[0]
    return Or(tuple(flat))


_NEGATED = {"=": "!=", "!=": "=", "<=": ">", ">": "<=", "<": ">=", ">=": "<"}


def neg(inner: StateFormula) -> StateFormula:
    if isinstance(inner, Not):
        return inner.inner
    if isinstance(inner, Const):
        return Const(not inner.value)
    if isinstance(inner, Compare):
        return Compare(inner.left, _NEGATED[inner.op], inner.right)
    return Not(inner)


# ---------------------------------------------------------------------------
# Parser for PRISM-style formula text
# ---------------------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(-?\d+)|([A-Za-z_][A-Za-z0-9_]*)|(==|!=|<=|>=|[=<>()&|!]|[≠≤≥∧∨¬]))")


def _tokenize(text: str):
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        match = _TOKEN.match(text, pos)
        if not match:
            raise FormulaError(f"Unexpected character at position {pos} in '{text}'")
        number, name, symbol = match.groups()
        if number is not None:
            tokens.append(("int", int(number)))
        elif name is not None:
            tokens.append(("name", name))
        else:
            tokens.append(("sym", _ALIASES.get(symbol, symbol)))
        pos = match.end()
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else (None, None)

    def take(self):
        token = self.peek()
        self.pos += 1
        return token

    def expect(self, symbol: str):
        kind, value = self.take()
        if kind != "sym" or value != symbol:
            raise FormulaError(f"Expected '{symbol}' in '{self.text}'")

    def parse(self) -> StateFormula:
        result = self.disjunction()
        if self.pos != len(self.tokens):
            raise FormulaError(f"Trailing input after position {self.pos} in '{self.text}'")
        return result

    def disjunction(self):
        parts = [self.conjunction()]
        while self.peek() == ("sym", "|"):
            self.take()
            parts.append(self.conjunction())
        return disj(*parts)

    def conjunction(self):
        parts = [self.unary()]
        while self.peek() == ("sym", "&"):
            self.take()
            parts.append(self.unary())
        return conj(*parts)

    def unary(self):
        if self.peek() == ("sym", "!"):
            self.take()
            return neg(self.unary())
        return self.primary()

    def primary(self):
        kind, value = self.take()
        if kind == "sym" and value == "(":
            inner = self.disjunction()
            self.expect(")")
            return inner
        if kind == "name" and value in ("true", "false"):
            return TRUE if value == "true" else FALSE
        if kind != "name":
            raise FormulaError(f"Expected a variable in '{self.text}'")
        op_kind, op = self.peek()
        if op_kind == "sym" and op in _OPS:
            self.take()
            right_kind, right = self.take()
            if right_kind not in ("int", "name"):
                raise FormulaError(f"Expected a value after '{op}' in '{self.text}'")
            return Compare(value, op, right)
        # bare boolean variable
        return Compare(value, "!=", 0)


def parse_formula(text: str) -> StateFormula:
    """Parse text such as '(robotX!=humanX) | (robotY!=humanY)'."""
    if not text or not text.strip():
        raise FormulaError("Empty formula")
    return _Parser(text).parse()


def valuation_dict(names: Tuple[str, ...], values) -> Dict[str, int]:
    return {name: int(v) for name, v in zip(names, values)}
