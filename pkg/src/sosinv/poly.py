"""Sparse multivariate polynomials over real coefficients.

Polynomials live in a fixed ambient dimension ``d`` and are stored as a
mapping from exponent tuples to floats.  Terms whose coefficient is exactly
``0.0`` are dropped on construction; no other numerical pruning happens here.

The textual syntax (shared with the program DSL and the JSON files) looks like
``-0.6*x1^2*x2 + 0.3``.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, Mapping, Sequence

import numpy as np

Monomial = tuple  # tuple[int, ...] of length d


class DimensionError(ValueError):
    """Operands live in different ambient dimensions."""


class ExpressionError(ValueError):
    """Malformed or non-polynomial expression text.

    ``line``/``column`` are 1-based and refer to the text handed to the parser
    (offset by the caller when the expression is embedded in a larger file).
    """

    def __init__(self, message: str, line: int = 1, column: int = 1, snippet: str = ""):
        self.line = line
        self.column = column
        self.snippet = snippet
        super().__init__(f"{message} at line {line}, column {column}")


def grlex_key(mono: Monomial) -> tuple:
    """Sort key for graded lexicographic order (x1 > x2 > ... within a degree)."""
    return (sum(mono), tuple(-e for e in mono))


@lru_cache(maxsize=None)
def _basis(d: int, max_degree: int) -> tuple:
    out = []
    for deg in range(max_degree + 1):
        # compositions of deg into d parts, in lex-descending order
        for combo in itertools.combinations_with_replacement(range(d), deg):
            exps = [0] * d
            for v in combo:
                exps[v] += 1
            out.append(tuple(exps))
    out.sort(key=grlex_key)
    return tuple(out)


def monomial_basis(d: int, max_degree: int) -> list:
    """All monomials of total degree <= ``max_degree`` in graded-lex order."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if max_degree < 0:
        raise ValueError("max_degree must be >= 0")
    return list(_basis(d, max_degree))


def basis_size(d: int, max_degree: int) -> int:
    """Closed form ``C(d + max_degree, d)``; 0 for a negative degree."""
    if max_degree < 0:
        return 0
    return math.comb(d + max_degree, d)


def _mono_add(a: Monomial, b: Monomial) -> Monomial:
    return tuple(x + y for x, y in zip(a, b))


class Polynomial:
    """Immutable sparse polynomial in ``dim`` variables ``x1..x{dim}``."""

    __slots__ = ("dim", "_terms", "_hash")

    def __init__(self, dim: int, terms: Mapping[Monomial, float] | None = None):
        if dim < 1:
            raise ValueError("dimension must be >= 1")
        clean = {}
        if terms:
            for mono, coef in terms.items():
                mono = tuple(int(e) for e in mono)
                if len(mono) != dim:
                    raise DimensionError(f"monomial {mono} does not have {dim} exponents")
                if any(e < 0 for e in mono):
                    raise ValueError(f"negative exponent in {mono}")
                coef = float(coef)
                if coef != 0.0:
                    clean[mono] = coef
        self.dim = dim
        self._terms = clean
        self._hash = None

    # -- constructors -----------------------------------------------------
    @classmethod
    def zero(cls, dim: int) -> "Polynomial":
        return cls(dim)

    @classmethod
    def constant(cls, dim: int, value: float) -> "Polynomial":
        return cls(dim, {(0,) * dim: value})

    @classmethod
    def variable(cls, dim: int, index: int) -> "Polynomial":
        """The coordinate ``x_{index+1}`` (0-based ``index``)."""
        if not 0 <= index < dim:
            raise DimensionError(f"variable index {index} outside dimension {dim}")
        mono = [0] * dim
        mono[index] = 1
        return cls(dim, {tuple(mono): 1.0})

    @classmethod
    def monomial(cls, mono: Monomial, coef: float = 1.0) -> "Polynomial":
        return cls(len(mono), {tuple(mono): coef})

    @classmethod
    def _raw(cls, dim: int, terms: dict) -> "Polynomial":
        # terms already validated; only zero-pruning left to do
        obj = cls.__new__(cls)
        obj.dim = dim
        obj._terms = {m: c for m, c in terms.items() if c != 0.0}
        obj._hash = None
        return obj

    # -- inspection -------------------------------------------------------
    @property
    def terms(self) -> dict:
        return dict(self._terms)

    def items(self) -> Iterator:
        """Terms in graded-lex order."""
        for mono in sorted(self._terms, key=grlex_key):
            yield mono, self._terms[mono]

    def coefficient(self, mono: Monomial) -> float:
        return self._terms.get(tuple(mono), 0.0)

    def degree(self) -> int:
        if not self._terms:
            return 0
        return max(sum(m) for m in self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def is_constant(self) -> bool:
        return all(sum(m) == 0 for m in self._terms)

    def constant_term(self) -> float:
        return self._terms.get((0,) * self.dim, 0.0)

    def max_abs_coefficient(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def __len__(self) -> int:
        return len(self._terms)

    # -- arithmetic -------------------------------------------------------
    def _check(self, other: "Polynomial") -> None:
        if self.dim != other.dim:
            raise DimensionError(f"dimension mismatch: {self.dim} vs {other.dim}")

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            self._check(other)
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(self.dim, float(other))
        return NotImplemented

    def __add__(self, other) -> "Polynomial":
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for mono, coef in other._terms.items():
            out[mono] = out.get(mono, 0.0) + coef
        return Polynomial._raw(self.dim, out)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial._raw(self.dim, {m: -c for m, c in self._terms.items()})

    def __sub__(self, other) -> "Polynomial":
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other) -> "Polynomial":
        return (-self) + other

    def scale(self, factor: float) -> "Polynomial":
        factor = float(factor)
        return Polynomial._raw(self.dim, {m: c * factor for m, c in self._terms.items()})

    def __mul__(self, other) -> "Polynomial":
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        self._check(other)
        out: dict = {}
        for ma, ca in self._terms.items():
            for mb, cb in other._terms.items():
                mono = _mono_add(ma, mb)
                out[mono] = out.get(mono, 0.0) + ca * cb
        return Polynomial._raw(self.dim, out)

    __rmul__ = __mul__

    def __pow__(self, n: int) -> "Polynomial":
        if not isinstance(n, (int, np.integer)) or n < 0:
            raise ValueError("polynomial powers must be non-negative integers")
        result = Polynomial.constant(self.dim, 1.0)
        base = self
        while n:
            if n & 1:
                result = result * base
            n >>= 1
            if n:
                base = base * base
        return result

    def compose(self, maps: Sequence["Polynomial"]) -> "Polynomial":
        """Substitute ``x_l -> maps[l]``; the result lives in ``maps``' dimension."""
        return compose(self, maps)

    # -- evaluation -------------------------------------------------------
    def __call__(self, point) -> float | np.ndarray:
        return self.evaluate(point)

    def evaluate(self, point) -> float | np.ndarray:
        """Evaluate at a point of shape ``(d,)`` or a batch of shape ``(..., d)``."""
        x = np.asarray(point, dtype=float)
        if x.shape[-1:] != (self.dim,):
            raise DimensionError(f"point has shape {x.shape}, expected trailing {self.dim}")
        if not self._terms:
            out = np.zeros(x.shape[:-1])
            return float(out) if out.ndim == 0 else out
        monos = np.array(list(self._terms.keys()), dtype=np.int64)
        coefs = np.array(list(self._terms.values()))
        powers = x[..., None, :] ** monos  # (..., nterms, d)
        vals = np.prod(powers, axis=-1) @ coefs
        return float(vals) if np.ndim(vals) == 0 else vals

    # -- comparison, hashing, text ---------------------------------------
    def __eq__(self, other) -> bool:
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.dim == other.dim and self._terms == other._terms

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((self.dim, frozenset(self._terms.items())))
        return self._hash

    def allclose(self, other: "Polynomial", atol: float = 1e-12) -> bool:
        self._check(other)
        return (self - other).max_abs_coefficient() <= atol

    def to_text(self) -> str:
        """Canonical text; floats are printed with ``repr`` so parsing is exact."""
        if not self._terms:
            return "0"
        pieces = []
        for mono, coef in sorted(self._terms.items(), key=lambda kv: (-sum(kv[0]), grlex_key(kv[0]))):
            factors = [f"x{i + 1}" if e == 1 else f"x{i + 1}^{e}" for i, e in enumerate(mono) if e]
            mag = abs(coef)
            sign = "-" if coef < 0 else "+"
            if factors and mag == 1.0:
                body = "*".join(factors)
            else:
                body = "*".join([repr(mag)] + factors)
            pieces.append((sign, body))
        first_sign, first_body = pieces[0]
        text = ("-" if first_sign == "-" else "") + first_body
        for sign, body in pieces[1:]:
            text += f" {sign} {body}"
        return text

    def __str__(self) -> str:
        return self.to_text()

    def __repr__(self) -> str:
        return f"Polynomial({self.dim}, {self.to_text()!r})"

    @classmethod
    def parse(cls, text: str, dim: int) -> "Polynomial":
        """Parse ``text`` in variables ``x1..x{dim}``."""
        env = {f"x{i + 1}": cls.variable(dim, i) for i in range(dim)}
        return parse_expression(text, env, dim)


def add(a: Polynomial, b: Polynomial) -> Polynomial:
    a._check(b)
    return a + b


def mul(a: Polynomial, b: Polynomial) -> Polynomial:
    a._check(b)
    return a * b


def evaluate(p: Polynomial, point) -> float:
    return p.evaluate(point)


def compose(p: Polynomial, maps: Sequence[Polynomial]) -> Polynomial:
    """Return ``p(maps[0], ..., maps[d-1])``."""
    if len(maps) != p.dim:
        raise DimensionError(f"need {p.dim} component maps, got {len(maps)}")
    out_dim = maps[0].dim
    for t in maps:
        if t.dim != out_dim:
            raise DimensionError("component maps have different dimensions")
    return PowerTable(maps, p.degree()).combine(p)


class PowerTable:
    """Cache of products ``prod_l maps[l]**a_l`` for exponent vectors ``a``.

    Built incrementally along graded-lex order so each product costs one
    multiplication by a single component map.
    """

    def __init__(self, maps: Sequence[Polynomial], max_degree: int):
        self.maps = list(maps)
        self.out_dim = self.maps[0].dim
        self._cache = {(0,) * len(self.maps): Polynomial.constant(self.out_dim, 1.0)}
        self.max_degree = max_degree

    def __getitem__(self, mono: Monomial) -> Polynomial:
        mono = tuple(mono)
        hit = self._cache.get(mono)
        if hit is not None:
            return hit
        # peel off the last variable with a positive exponent
        idx = max(i for i, e in enumerate(mono) if e)
        prev = list(mono)
        prev[idx] -= 1
        val = self[tuple(prev)] * self.maps[idx]
        self._cache[mono] = val
        return val

    def combine(self, p: Polynomial) -> Polynomial:
        out: dict = {}
        for mono, coef in p.items():
            for m2, c2 in self[mono]._terms.items():
                out[m2] = out.get(m2, 0.0) + coef * c2
        return Polynomial._raw(self.out_dim, out)


def identity_map(dim: int) -> list:
    return [Polynomial.variable(dim, i) for i in range(dim)]


def evaluate_map(maps: Sequence[Polynomial], point) -> np.ndarray:
    return np.array([m.evaluate(point) for m in maps], dtype=float)


# ---------------------------------------------------------------------------
# Expression parsing
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\*\*|[-+*/^(),])
  """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # "num", "name", "op", "end"
    text: str
    line: int
    column: int


def tokenize(text: str, line: int = 1, column: int = 1) -> list:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ExpressionError(f"unexpected character {text[pos]!r}", line, column, text[pos])
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            column = 1
        elif kind != "ws":
            tokens.append(Token(kind, m.group(), line, column))
            column += len(m.group())
        else:
            column += len(m.group())
        pos = m.end()
    tokens.append(Token("end", "", line, column))
    return tokens


class ExpressionParser:
    """Recursive-descent parser for polynomial expressions over a name table.

    Grammar::

        expr   := term (('+'|'-') term)*
        term   := unary (('*'|'/') unary)*
        unary  := ('+'|'-') unary | power
        power  := atom (('^'|'**') unary)?
        atom   := NUMBER | NAME | NAME '(' ... ')' | '(' expr ')'

    Division is allowed only by constants; exponents must be non-negative
    integer constants.  A call ``f(...)`` is always rejected as non-polynomial.
    """

    def __init__(self, tokens: Sequence[Token], env: Mapping[str, Polynomial], dim: int,
                 source: str = ""):
        self.tokens = list(tokens)
        self.pos = 0
        self.env = env
        self.dim = dim
        self.source = source

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        t = self.tokens[self.pos]
        self.pos += 1
        return t

    def error(self, msg: str, tok: Token | None = None) -> ExpressionError:
        tok = tok or self.tok
        return ExpressionError(msg, tok.line, tok.column, tok.text)

    def expect(self, text: str) -> Token:
        if self.tok.text != text:
            raise self.error(f"expected {text!r}, found {self.tok.text or 'end of input'!r}")
        return self.advance()

    def parse_expr(self) -> Polynomial:
        value = self.parse_term()
        while self.tok.text in ("+", "-"):
            op = self.advance().text
            rhs = self.parse_term()
            value = value + rhs if op == "+" else value - rhs
        return value

    def parse_term(self) -> Polynomial:
        value = self.parse_unary()
        while self.tok.text in ("*", "/"):
            op_tok = self.advance()
            rhs = self.parse_unary()
            if op_tok.text == "*":
                value = value * rhs
            else:
                if not rhs.is_constant():
                    raise self.error("non-polynomial expression (division by a non-constant)", op_tok)
                c = rhs.constant_term()
                if c == 0.0:
                    raise self.error("division by zero", op_tok)
                value = value.scale(1.0 / c)
        return value

    def parse_unary(self) -> Polynomial:
        if self.tok.text == "-":
            self.advance()
            return -self.parse_unary()
        if self.tok.text == "+":
            self.advance()
            return self.parse_unary()
        return self.parse_power()

    def parse_power(self) -> Polynomial:
        base = self.parse_atom()
        if self.tok.text in ("^", "**"):
            op_tok = self.advance()
            exp = self.parse_unary()
            if not exp.is_constant():
                raise self.error("non-polynomial expression (variable exponent)", op_tok)
            e = exp.constant_term()
            if e < 0 or e != int(e):
                raise self.error(f"non-polynomial expression (exponent {e!r})", op_tok)
            base = base ** int(e)
        return base

    def parse_atom(self) -> Polynomial:
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            return Polynomial.constant(self.dim, float(tok.text))
        if tok.kind == "name":
            self.advance()
            if self.tok.text == "(":
                # find the matching parenthesis to quote the whole call
                depth, j = 0, self.pos
                while j < len(self.tokens) - 1:
                    if self.tokens[j].text == "(":
                        depth += 1
                    elif self.tokens[j].text == ")":
                        depth -= 1
                        if depth == 0:
                            break
                    j += 1
                call = tok.text + "".join(t.text for t in self.tokens[self.pos:j + 1])
                raise ExpressionError(f"non-polynomial expression {call!r}", tok.line, tok.column, call)
            if tok.text not in self.env:
                raise self.error(f"unknown variable {tok.text!r}", tok)
            return self.env[tok.text]
        if tok.text == "(":
            self.advance()
            value = self.parse_expr()
            self.expect(")")
            return value
        raise self.error(f"unexpected {tok.text or 'end of input'!r}")


def parse_expression(text: str, env: Mapping[str, Polynomial], dim: int) -> Polynomial:
    tokens = tokenize(text)
    parser = ExpressionParser(tokens, env, dim, text)
    value = parser.parse_expr()
    if parser.tok.kind != "end":
        raise parser.error(f"unexpected {parser.tok.text!r}")
    return value
