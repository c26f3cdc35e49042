"""Expression DSL for the coefficient functions of connections and fields.

Expressions are immutable trees over the base coordinates ``x1 … xm``. They
can be parsed from and printed to text, evaluated at a base point,
differentiated symbolically and, as an independent oracle, by central
differences.

Symbolic assembly elsewhere in the package goes through the folding
constructors (``add``, ``mul``, ``total`` …) which drop zeros and ones and fold
constant subtrees. ``parse`` never folds, so ``parse(to_text(parse(t)))`` is
structurally equal to ``parse(t)``.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

from bundlecalc.common.config import FD_RELATIVE_TOLERANCE, FD_STEP

logger = logging.getLogger(__name__)

FUNCTIONS = ("sin", "cos", "exp")

BasePoint = Sequence[float]


class ExpressionError(ValueError):
    pass


class ExpressionSyntaxError(ExpressionError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class VariableRangeError(ExpressionError):
    pass


class EvaluationError(ExpressionError):
    pass


# -------------------------------
# Nodes
# -------------------------------

@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    k: int


@dataclass(frozen=True)
class Sum:
    left: "ScalarExpr"
    right: "ScalarExpr"


@dataclass(frozen=True)
class Product:
    left: "ScalarExpr"
    right: "ScalarExpr"


@dataclass(frozen=True)
class Quotient:
    numerator: "ScalarExpr"
    denominator: "ScalarExpr"


@dataclass(frozen=True)
class Power:
    base: "ScalarExpr"
    exponent: int

    def __post_init__(self):
        if self.exponent < 0:
            raise ExpressionError(f"Negative power {self.exponent}; write it as a quotient")


@dataclass(frozen=True)
class Negation:
    operand: "ScalarExpr"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "ScalarExpr"

    def __post_init__(self):
        if self.func not in FUNCTIONS:
            raise ExpressionError(f"Unknown function '{self.func}'")


ScalarExpr = Union[Const, Var, Sum, Product, Quotient, Power, Negation, Call]

ZERO = Const(0.0)
ONE = Const(1.0)


def is_zero(e: ScalarExpr) -> bool:
    return isinstance(e, Const) and e.value == 0.0


def is_one(e: ScalarExpr) -> bool:
    return isinstance(e, Const) and e.value == 1.0


# -------------------------------
# Folding constructors
# -------------------------------

def const(value: float) -> Const:
    value = float(value)
    if not math.isfinite(value):
        raise ExpressionError(f"Constant {value} is not finite")
    return Const(value)


def _folded(compute, fallback: ScalarExpr) -> ScalarExpr:
    try:
        value = compute()
    except OverflowError:
        return fallback
    return Const(value) if math.isfinite(value) else fallback


def var(k: int) -> Var:
    if k < 1:
        raise VariableRangeError(f"Variable index x{k} must be >= 1")
    return Var(k)


def add(a: ScalarExpr, b: ScalarExpr) -> ScalarExpr:
    if is_zero(a):
        return b
    if is_zero(b):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return _folded(lambda: a.value + b.value, Sum(a, b))
    return Sum(a, b)


def neg(a: ScalarExpr) -> ScalarExpr:
    if isinstance(a, Const):
        return Const(-a.value) if a.value != 0.0 else ZERO
    if isinstance(a, Negation):
        return a.operand
    return Negation(a)


def sub(a: ScalarExpr, b: ScalarExpr) -> ScalarExpr:
    return add(a, neg(b))


def mul(a: ScalarExpr, b: ScalarExpr) -> ScalarExpr:
    if is_zero(a) or is_zero(b):
        return ZERO
    if is_one(a):
        return b
    if is_one(b):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return _folded(lambda: a.value * b.value, Product(a, b))
    if isinstance(a, Const) and a.value == -1.0:
        return neg(b)
    if isinstance(b, Const) and b.value == -1.0:
        return neg(a)
    return Product(a, b)


def quotient(a: ScalarExpr, b: ScalarExpr) -> ScalarExpr:
    if is_zero(a):
        return ZERO
    if is_one(b):
        return a
    return Quotient(a, b)


def power(a: ScalarExpr, n: int) -> ScalarExpr:
    if n == 0:
        return ONE
    if n == 1:
        return a
    if isinstance(a, Const):
        return _folded(lambda: a.value ** n, Power(a, n))
    return Power(a, n)


def call(func: str, a: ScalarExpr) -> ScalarExpr:
    if isinstance(a, Const) and a.value == 0.0:
        return ZERO if func == "sin" else ONE
    return Call(func, a)


def total(terms: Iterable[ScalarExpr]) -> ScalarExpr:
    """Sum of terms as a balanced tree; zero terms are dropped"""
    items = [t for t in terms if not is_zero(t)]
    if not items:
        return ZERO

    def build(lo: int, hi: int) -> ScalarExpr:
        if hi - lo == 1:
            return items[lo]
        mid = (lo + hi) // 2
        return add(build(lo, mid), build(mid, hi))

    return build(0, len(items))


def lift(value: Union[ScalarExpr, float, int, str], m: Optional[int] = None) -> ScalarExpr:
    """Coerce numbers and DSL strings into expressions"""
    if isinstance(value, (int, float)):
        return const(value)
    if isinstance(value, str):
        if m is None:
            raise ExpressionError("Base dimension is required to parse an expression string")
        return parse(value, m)
    return value


# -------------------------------
# Parsing
# -------------------------------

_NUMBER = re.compile(r"(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?", re.ASCII)
_UINT = re.compile(r"\d+", re.ASCII)
_NAME = re.compile(r"[A-Za-z]+")
_DIGITS = "0123456789"


class _Parser:
    """Recursive-descent parser for the coefficient grammar

    expr   := term (('+'|'-') term)* ;
    term   := factor (('*'|'/') factor)* ;
    factor := '-' factor | base ('^' uint)? ;
    base   := number | 'x' uint | func '(' expr ')' | '(' expr ')' ;
    """

    def __init__(self, text: str, m: int):
        self.text = text
        self.m = m
        self.pos = 0
        self.length = len(text)

    def offset(self, pos: Optional[int] = None) -> int:
        return len(self.text[: self.pos if pos is None else pos].encode("utf-8"))

    def error(self, message: str, pos: Optional[int] = None) -> ExpressionSyntaxError:
        return ExpressionSyntaxError(message, self.offset(pos))

    def skip_whitespace(self):
        while self.pos < self.length and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip_whitespace()
        return self.text[self.pos] if self.pos < self.length else ""

    def match(self, terminal: str) -> bool:
        if self.peek() == terminal:
            self.pos += 1
            return True
        return False

    def expect(self, terminal: str):
        if not self.match(terminal):
            found = self.peek() or "end of input"
            raise self.error(f"Expected '{terminal}', found '{found}'")

    def parse(self) -> ScalarExpr:
        result = self.parse_expr()
        self.skip_whitespace()
        if self.pos < self.length:
            raise self.error(f"Unexpected input '{self.text[self.pos]}'")
        return result

    def parse_expr(self) -> ScalarExpr:
        node = self.parse_term()
        while True:
            if self.match("+"):
                node = Sum(node, self.parse_term())
            elif self.match("-"):
                node = Sum(node, Negation(self.parse_term()))
            else:
                return node

    def parse_term(self) -> ScalarExpr:
        node = self.parse_factor()
        while True:
            if self.match("*"):
                node = Product(node, self.parse_factor())
            elif self.match("/"):
                node = Quotient(node, self.parse_factor())
            else:
                return node

    def parse_factor(self) -> ScalarExpr:
        if self.match("-"):
            return Negation(self.parse_factor())
        node = self.parse_base()
        if self.match("^"):
            self.skip_whitespace()
            found = _UINT.match(self.text, self.pos)
            if not found:
                raise self.error("Expected a non-negative integer exponent")
            self.pos = found.end()
            node = Power(node, int(found.group()))
        return node

    def parse_base(self) -> ScalarExpr:
        ch = self.peek()
        start = self.pos
        if ch == "(":
            self.pos += 1
            node = self.parse_expr()
            self.expect(")")
            return node
        if ch in _DIGITS or ch == ".":
            found = _NUMBER.match(self.text, self.pos)
            if not found:
                raise self.error("Malformed number")
            value = float(found.group())
            if not math.isfinite(value):
                raise self.error("Number out of range")
            self.pos = found.end()
            return Const(value)
        if ch == "x":
            found = _UINT.match(self.text, self.pos + 1)
            if not found:
                raise self.error("Expected variable index after 'x'")
            k = int(found.group())
            if not 1 <= k <= self.m:
                raise VariableRangeError(
                    f"Variable x{k} out of range [1, {self.m}] at byte offset {self.offset(start)}"
                )
            self.pos = found.end()
            return Var(k)
        if ch.isascii() and ch.isalpha():
            found = _NAME.match(self.text, self.pos)
            name = found.group()
            if name not in FUNCTIONS:
                raise self.error(f"Unknown function '{name}'")
            self.pos = found.end()
            self.expect("(")
            arg = self.parse_expr()
            self.expect(")")
            return Call(name, arg)
        raise self.error(f"Unexpected {repr(ch) if ch else 'end of input'}")


def parse(text: str, m: int) -> ScalarExpr:
    """Parse a coefficient expression valid over an m-dimensional chart"""
    return _Parser(text, m).parse()


# -------------------------------
# Printing
# -------------------------------

def _precedence(e: ScalarExpr) -> int:
    if isinstance(e, Sum):
        return 1
    if isinstance(e, (Product, Quotient)):
        return 2
    if isinstance(e, Negation):
        return 3
    if isinstance(e, Power):
        return 4
    if isinstance(e, Const) and e.value < 0:
        return 1
    return 5


def _wrap(e: ScalarExpr, minimum: int) -> str:
    text = to_text(e)
    return f"({text})" if _precedence(e) < minimum else text


def to_text(e: ScalarExpr) -> str:
    match e:
        case Const(value=value):
            if value < 0:
                return f"-{repr(-value)}"
            return repr(value)
        case Var(k=k):
            return f"x{k}"
        case Sum(left=left, right=Negation(operand=operand)):
            return f"{_wrap(left, 1)} - {_wrap(operand, 2)}"
        case Sum(left=left, right=right):
            return f"{_wrap(left, 1)} + {_wrap(right, 2)}"
        case Product(left=left, right=right):
            return f"{_wrap(left, 2)}*{_wrap(right, 3)}"
        case Quotient(numerator=num, denominator=den):
            return f"{_wrap(num, 2)}/{_wrap(den, 3)}"
        case Negation(operand=operand):
            return f"-{_wrap(operand, 3)}"
        case Power(base=base, exponent=exponent):
            return f"{_wrap(base, 5)}^{exponent}"
        case Call(func=func, arg=arg):
            return f"{func}({to_text(arg)})"
    raise ExpressionError(f"Not an expression: {e!r}")


def variables(e: ScalarExpr) -> Set[int]:
    found: Set[int] = set()
    seen: Set[int] = set()
    stack: List[ScalarExpr] = [e]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        match node:
            case Var(k=k):
                found.add(k)
            case Sum(left=a, right=b) | Product(left=a, right=b) | Quotient(numerator=a, denominator=b):
                stack.extend((a, b))
            case Power(base=a) | Negation(operand=a) | Call(arg=a):
                stack.append(a)
    return found


# -------------------------------
# Evaluation
# -------------------------------

Memo = Dict[int, Tuple[ScalarExpr, object]]


def evaluate(e: ScalarExpr, p: BasePoint, memo: Optional[Memo] = None) -> float:
    """Evaluate e at p

    memo is keyed by node identity and may be shared across the entries of a
    field evaluated at the same point, so shared subtrees run once.
    """
    if memo is None:
        memo = {}
    hit = memo.get(id(e))
    if hit is not None and hit[0] is e:
        return hit[1]

    match e:
        case Const(value=value):
            result = value
        case Var(k=k):
            if not 1 <= k <= len(p):
                raise VariableRangeError(f"Variable x{k} out of range for a point of dimension {len(p)}")
            result = float(p[k - 1])
        case Sum(left=a, right=b):
            result = evaluate(a, p, memo) + evaluate(b, p, memo)
        case Product(left=a, right=b):
            result = evaluate(a, p, memo) * evaluate(b, p, memo)
        case Quotient(numerator=a, denominator=b):
            denominator = evaluate(b, p, memo)
            if denominator == 0.0:
                raise EvaluationError(f"Division by zero in '{to_text(e)}' at {tuple(p)}")
            result = evaluate(a, p, memo) / denominator
        case Power(base=a, exponent=n):
            x = evaluate(a, p, memo)
            try:
                result = x ** n
            except OverflowError as exc:
                raise EvaluationError(f"Overflow in {x}^{n}") from exc
        case Negation(operand=a):
            result = -evaluate(a, p, memo)
        case Call(func=func, arg=a):
            x = evaluate(a, p, memo)
            try:
                result = getattr(math, func)(x)
            except OverflowError as exc:
                raise EvaluationError(f"Overflow in {func}({x})") from exc
        case _:
            raise ExpressionError(f"Not an expression: {e!r}")

    if isinstance(result, float) and not math.isfinite(result):
        raise EvaluationError(f"Non-finite value in '{to_text(e)}' at {tuple(p)}")
    memo[id(e)] = (e, result)
    return result


# -------------------------------
# Differentiation
# -------------------------------

def diff_symbolic(e: ScalarExpr, k: int, memo: Optional[Memo] = None) -> ScalarExpr:
    """Exact partial derivative d e / d x_k by structural rules

    memo is keyed by node identity and is only valid for a single k.
    """
    if memo is None:
        memo = {}
    hit = memo.get(id(e))
    if hit is not None and hit[0] is e:
        return hit[1]

    match e:
        case Const():
            result = ZERO
        case Var(k=j):
            result = ONE if j == k else ZERO
        case Sum(left=a, right=b):
            result = add(diff_symbolic(a, k, memo), diff_symbolic(b, k, memo))
        case Product(left=a, right=b):
            result = add(
                mul(diff_symbolic(a, k, memo), b),
                mul(a, diff_symbolic(b, k, memo)),
            )
        case Quotient(numerator=a, denominator=b):
            da = diff_symbolic(a, k, memo)
            db = diff_symbolic(b, k, memo)
            if is_zero(db):
                result = quotient(da, b)
            else:
                result = quotient(sub(mul(da, b), mul(a, db)), power(b, 2))
        case Power(base=a, exponent=n):
            if n == 0:
                result = ZERO
            else:
                result = mul(mul(const(n), power(a, n - 1)), diff_symbolic(a, k, memo))
        case Negation(operand=a):
            result = neg(diff_symbolic(a, k, memo))
        case Call(func="sin", arg=a):
            result = mul(call("cos", a), diff_symbolic(a, k, memo))
        case Call(func="cos", arg=a):
            result = neg(mul(call("sin", a), diff_symbolic(a, k, memo)))
        case Call(func="exp", arg=a):
            result = mul(e, diff_symbolic(a, k, memo))
        case _:
            raise ExpressionError(f"Not an expression: {e!r}")

    memo[id(e)] = (e, result)
    return result


def diff_numeric(e: ScalarExpr, k: int, p: BasePoint, h: float = FD_STEP) -> float:
    """Central difference (e(p + h e_k) - e(p - h e_k)) / 2h"""
    if h <= 0:
        raise ValueError(f"Finite-difference step must be positive, got {h}")
    if not 1 <= k <= len(p):
        raise VariableRangeError(f"Variable x{k} out of range for a point of dimension {len(p)}")
    forward = list(map(float, p))
    backward = list(forward)
    forward[k - 1] += h
    backward[k - 1] -= h
    return (evaluate(e, forward) - evaluate(e, backward)) / (2.0 * h)


def diff_agrees(
    e: ScalarExpr, k: int, p: BasePoint, h: float = FD_STEP, rel: float = FD_RELATIVE_TOLERANCE
) -> bool:
    """|d_k e - central difference| <= rel * (1 + |d_k e|) at p"""
    exact = evaluate(diff_symbolic(e, k), p)
    return abs(exact - diff_numeric(e, k, p, h)) <= rel * (1.0 + abs(exact))
