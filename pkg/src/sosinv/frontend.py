"""One-loop programs: the ``.ploop`` DSL, the CPDS data model and its JSON form.

A program is parsed into a :class:`Cpds` (initial set, loop guard, a list of
guarded polynomial branches) plus a :class:`SublevelProperty`.  Nested
``if``/``else`` chains are flattened so that each branch carries the full
conjunction of tests along its path.
"""

from __future__ import annotations

import hashlib
import json
import re
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .poly import (
    DimensionError,
    ExpressionError,
    ExpressionParser,
    Polynomial,
    Token,
)

BOUNDED = "bounded"
AVOID = "avoid"
FORMAT_TAG = "sosinv-cpds"


class ProgramError(ValueError):
    """Syntax or semantic error in a program, with a 1-based source location."""

    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        where = f"line {line}, column {column}: " if line else ""
        super().__init__(where + message)


# ---------------------------------------------------------------------------
# Data model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstraintSet:
    """``{x | s(x) < 0 for s in strict, w(x) <= 0 for w in weak}``."""

    dim: int
    strict: tuple = ()
    weak: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "strict", tuple(self.strict))
        object.__setattr__(self, "weak", tuple(self.weak))
        for p in self.strict + self.weak:
            if p.dim != self.dim:
                raise DimensionError(f"constraint {p} is not {self.dim}-dimensional")

    @classmethod
    def everything(cls, dim: int) -> "ConstraintSet":
        return cls(dim)

    @property
    def polynomials(self) -> tuple:
        """All tests, strict first; the SOS relaxation reads them all as ``<= 0``."""
        return self.strict + self.weak

    def __len__(self) -> int:
        return len(self.strict) + len(self.weak)

    def contains(self, points) -> np.ndarray | bool:
        pts = np.asarray(points, dtype=float)
        ok = np.ones(pts.shape[:-1], dtype=bool)
        for p in self.strict:
            ok &= np.asarray(p.evaluate(pts)) < 0
        for p in self.weak:
            ok &= np.asarray(p.evaluate(pts)) <= 0
        return bool(ok) if ok.ndim == 0 else ok

    def conjoin(self, other: "ConstraintSet") -> "ConstraintSet":
        return ConstraintSet(self.dim, self.strict + other.strict, self.weak + other.weak)


@dataclass(frozen=True)
class Branch:
    guard: ConstraintSet
    update: tuple

    def __post_init__(self):
        object.__setattr__(self, "update", tuple(self.update))
        if len(self.update) != self.guard.dim:
            raise DimensionError(
                f"update has {len(self.update)} components, expected {self.guard.dim}")
        for comp in self.update:
            if comp.dim != self.guard.dim:
                raise DimensionError("update component has the wrong dimension")

    def update_degree(self) -> int:
        return max(c.degree() for c in self.update)

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return np.stack([np.broadcast_to(c.evaluate(pts), pts.shape[:-1]) for c in self.update],
                        axis=-1)


def box_constraints(box: Sequence) -> ConstraintSet:
    """Box ``prod [a_l, b_l]`` as the weak tests ``(x_l - a_l)(x_l - b_l) <= 0``."""
    d = len(box)
    weak = []
    for l, (lo, hi) in enumerate(box):
        if not lo <= hi:
            raise ValueError(f"empty interval [{lo}, {hi}] for x{l + 1}")
        x = Polynomial.variable(d, l)
        weak.append((x - lo) * (x - hi))
    return ConstraintSet(d, (), tuple(weak))


@dataclass(frozen=True)
class Cpds:
    """Initial set, loop guard and guarded polynomial branches of a loop.

    ``init_box`` is set when the initial set was declared as a box; otherwise
    ``init_compact`` must be true (the user vouches for compactness) and
    sampling needs an explicit bounding box.
    """

    dim: int
    init: ConstraintSet
    loop_guard: ConstraintSet
    branches: tuple
    init_box: tuple | None = None
    init_compact: bool = False
    variables: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(self.branches))
        if not self.variables:
            object.__setattr__(self, "variables", tuple(f"x{i + 1}" for i in range(self.dim)))
        else:
            object.__setattr__(self, "variables", tuple(self.variables))
        if self.dim < 1:
            raise ValueError("dimension must be >= 1")
        if not self.branches:
            raise ValueError("a CPDS needs at least one branch")
        if len(self.variables) != self.dim:
            raise ValueError("variable names do not match the dimension")
        if self.init_box is not None:
            box = tuple((float(a), float(b)) for a, b in self.init_box)
            if len(box) != self.dim:
                raise DimensionError("init box has the wrong number of intervals")
            object.__setattr__(self, "init_box", box)
        elif not self.init_compact:
            raise ValueError("a non-box initial set needs an explicit compactness attestation")
        for part in (self.init, self.loop_guard):
            if part.dim != self.dim:
                raise DimensionError("constraint set has the wrong dimension")
        for b in self.branches:
            if b.guard.dim != self.dim:
                raise DimensionError("branch has the wrong dimension")

    def branch_index(self, x) -> list:
        """Indices of every branch whose guard contains ``x``."""
        return [i for i, b in enumerate(self.branches) if b.guard.contains(x)]


@dataclass(frozen=True)
class SublevelProperty:
    kappa: Polynomial
    mode: str = BOUNDED

    def __post_init__(self):
        if self.mode not in (BOUNDED, AVOID):
            raise ValueError(f"unknown property mode {self.mode!r}")


# ---------------------------------------------------------------------------
# Program AST (kept only long enough to flatten and to interpret in tests)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Test:
    poly: Polynomial
    strict: bool

    def holds(self, x) -> bool:
        v = self.poly.evaluate(x)
        return v < 0 if self.strict else v <= 0

    def negate(self) -> "Test":
        # not (r <= 0)  <=>  -r < 0 ;  not (r < 0)  <=>  -r <= 0
        return Test(-self.poly, not self.strict)


@dataclass(frozen=True)
class Update:
    maps: tuple


@dataclass(frozen=True)
class IfElse:
    tests: tuple
    then: object
    orelse: object | None = None


@dataclass(frozen=True)
class Cases:
    cases: tuple  # of (tests, body)


@dataclass
class Program:
    """Parsed source before flattening."""

    dim: int
    variables: tuple
    init_box: tuple | None
    init_region: tuple | None  # tests, for a non-box initial set
    loop_tests: tuple
    body: object
    kappa: Polynomial
    mode: str


def _tests_to_set(dim: int, tests: Sequence[Test]) -> ConstraintSet:
    return ConstraintSet(dim, tuple(t.poly for t in tests if t.strict),
                         tuple(t.poly for t in tests if not t.strict))


def _negation_pieces(tests: Sequence[Test]) -> list:
    """Disjoint conjunctions whose union is the complement of ``and(tests)``."""
    pieces = []
    for k, t in enumerate(tests):
        pieces.append(tuple(tests[:k]) + (t.negate(),))
    return pieces


def flatten(body, dim: int) -> list:
    """List of ``(tests, maps)`` pairs, one per control-flow path."""
    ident = tuple(Polynomial.variable(dim, i) for i in range(dim))
    if body is None:
        return [((), ident)]
    if isinstance(body, Update):
        return [((), body.maps)]
    if isinstance(body, Cases):
        return [(tuple(tests) + sub_tests, maps)
                for tests, sub in body.cases
                for sub_tests, maps in flatten(sub, dim)]
    if isinstance(body, IfElse):
        out = [(tuple(body.tests) + t, m) for t, m in flatten(body.then, dim)]
        for piece in _negation_pieces(body.tests):
            out += [(piece + t, m) for t, m in flatten(body.orelse, dim)]
        return out
    raise TypeError(f"unknown body node {body!r}")


def execute_body(body, x, dim: int) -> np.ndarray | None:
    """One loop iteration by walking the AST; ``None`` when no case applies."""
    x = np.asarray(x, dtype=float)
    if body is None:
        return x.copy()
    if isinstance(body, Update):
        return np.array([m.evaluate(x) for m in body.maps])
    if isinstance(body, IfElse):
        if all(t.holds(x) for t in body.tests):
            return execute_body(body.then, x, dim)
        return execute_body(body.orelse, x, dim)
    if isinstance(body, Cases):
        for tests, sub in body.cases:
            if all(t.holds(x) for t in tests):
                return execute_body(sub, x, dim)
        return None
    raise TypeError(f"unknown body node {body!r}")


def program_to_cpds(prog: Program) -> tuple:
    d = prog.dim
    branches = [Branch(_tests_to_set(d, tests), maps) for tests, maps in flatten(prog.body, d)]
    if prog.init_box is not None:
        init = box_constraints(prog.init_box)
        compact = False
    else:
        init = _tests_to_set(d, prog.init_region)
        compact = True
    cpds = Cpds(d, init, _tests_to_set(d, prog.loop_tests), tuple(branches),
                init_box=prog.init_box, init_compact=compact, variables=prog.variables)
    return cpds, SublevelProperty(prog.kappa, prog.mode)


# ---------------------------------------------------------------------------
# DSL parser
# ---------------------------------------------------------------------------

_DSL_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>(?://|\#)[^\n]*)
  | (?P<nl>\n)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\*\*|<=|>=|==|[-+*/^(),;{}\[\]<>=])
  """,
    re.VERBOSE,
)

KEYWORDS = {"vars", "param", "init", "in", "where", "compact", "property", "avoid",
            "while", "if", "else", "case", "and"}


def _tokenize_dsl(source: str) -> list:
    tokens = []
    pos, line, col = 0, 1, 1
    while pos < len(source):
        m = _DSL_TOKEN_RE.match(source, pos)
        if not m:
            raise ProgramError(f"unexpected character {source[pos]!r}", line, col)
        kind, text = m.lastgroup, m.group()
        if kind == "nl":
            line, col = line + 1, 1
        else:
            if kind in ("num", "name", "op"):
                tokens.append(Token(kind, text, line, col))
            col += len(text)
        pos = m.end()
    tokens.append(Token("end", "", line, col))
    return tokens


class _DslParser:
    def __init__(self, source: str):
        self.tokens = _tokenize_dsl(source)
        self.pos = 0
        self.dim = 0
        self.variables: tuple = ()
        self.params: dict = {}
        self.env: dict = {}

    # -- token helpers ----------------------------------------------------
    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def peek(self, k: int = 1) -> Token:
        return self.tokens[min(self.pos + k, len(self.tokens) - 1)]

    def advance(self) -> Token:
        t = self.tokens[self.pos]
        self.pos += 1
        return t

    def error(self, msg: str, tok: Token | None = None) -> ProgramError:
        tok = tok or self.tok
        return ProgramError(msg, tok.line, tok.column)

    def expect(self, text: str) -> Token:
        if self.tok.text != text:
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")
        return self.advance()

    def expect_name(self) -> Token:
        if self.tok.kind != "name" or self.tok.text in KEYWORDS:
            raise self.error(f"expected a name, found {self.tok.text or 'end of input'!r}")
        return self.advance()

    def expr(self, env: dict) -> tuple:
        """Parse an expression; returns the polynomial and the names it read."""
        if self.dim == 0:
            raise self.error("'vars' must be declared before any expression")
        parser = _TrackingParser(self.tokens, env, self.dim)
        parser.pos = self.pos
        try:
            value = parser.parse_expr()
        except ExpressionError as exc:
            raise ProgramError(str(exc).rsplit(" at line", 1)[0], exc.line, exc.column) from None
        self.pos = parser.pos
        return value, parser.used

    def const(self) -> float:
        value, _ = self.expr(self.params_env())
        if not value.is_constant():
            raise self.error("expected a constant")
        return value.constant_term()

    def params_env(self) -> dict:
        return {k: v for k, v in self.env.items() if k in self.params}

    # -- grammar ----------------------------------------------------------
    def parse(self) -> Program:
        init_box = None
        init_region = None
        kappa = None
        mode = BOUNDED
        while self.tok.kind != "end" and self.tok.text != "while":
            head = self.tok
            if head.text == "vars":
                self.advance()
                names = []
                while self.tok.text != ";":
                    names.append(self.expect_name().text)
                    if self.tok.text == ",":
                        self.advance()
                self.expect(";")
                if not names:
                    raise self.error("'vars' needs at least one variable", head)
                if len(set(names)) != len(names):
                    raise self.error("duplicate variable name", head)
                self.dim = len(names)
                self.variables = tuple(names)
                for i, n in enumerate(names):
                    self.env[n] = Polynomial.variable(self.dim, i)
            elif head.text == "param":
                self.advance()
                name = self.expect_name().text
                self.expect("=")
                value = self.const()
                self.expect(";")
                self.params[name] = value
                self.env[name] = Polynomial.constant(self.dim, value)
            elif head.text == "init":
                self.advance()
                if self.tok.text == "where":
                    self.advance()
                    init_region = self.conjunction(self.env)
                    if self.tok.text != "compact":
                        raise self.error("a non-box initial set must be marked 'compact'")
                    self.advance()
                    self.expect(";")
                else:
                    init_box = self.box()
            elif head.text == "property":
                self.advance()
                if self.tok.text != "kappa":
                    raise self.error("expected 'kappa'")
                self.advance()
                self.expect("=")
                kappa, _ = self.expr(self.env)
                if self.tok.text == "avoid":
                    self.advance()
                    mode = AVOID
                self.expect(";")
            elif head.kind == "name" and head.text not in KEYWORDS and self.peek().text == "=":
                # memory copy before the loop, e.g. ``oldx1 = x1;``
                self.memory_or_assign(self.env, top_level=True)
            else:
                raise self.error(f"unexpected {head.text!r}")
        if self.tok.text != "while":
            raise self.error("no loop found")
        if self.dim == 0:
            raise self.error("missing 'vars' declaration")
        if init_box is None and init_region is None:
            raise self.error("missing 'init' declaration")
        if kappa is None:
            raise self.error("missing 'property kappa = ...' declaration")
        self.advance()
        self.expect("(")
        loop_tests = self.conjunction(self.env)
        self.expect(")")
        body = self.block(dict(self.env), loop_body=True)
        if self.tok.kind != "end":
            raise self.error("only a single loop is supported; unexpected text after it")
        return Program(self.dim, self.variables, init_box, init_region, loop_tests, body,
                       kappa, mode)

    def box(self) -> tuple:
        bounds: dict = {}
        while True:
            name_tok = self.expect_name()
            if name_tok.text not in self.variables:
                raise self.error(f"unknown variable {name_tok.text!r}", name_tok)
            self.expect("in")
            self.expect("[")
            lo = self.const()
            self.expect(",")
            hi = self.const()
            self.expect("]")
            if lo > hi:
                raise self.error(f"empty interval for {name_tok.text}", name_tok)
            bounds[name_tok.text] = (lo, hi)
            if self.tok.text == ",":
                self.advance()
                continue
            break
        self.expect(";")
        missing = [v for v in self.variables if v not in bounds]
        if missing:
            raise self.error(f"init box misses {', '.join(missing)}")
        return tuple(bounds[v] for v in self.variables)

    def conjunction(self, env: dict) -> tuple:
        tests = [self.comparison(env)]
        while self.tok.text == "and":
            self.advance()
            tests.append(self.comparison(env))
        return tuple(tests)

    def comparison(self, env: dict) -> Test:
        lhs, _ = self.expr(env)
        op = self.tok
        if op.text not in ("<=", "<", ">=", ">"):
            raise self.error(f"expected a comparison, found {op.text or 'end of input'!r}")
        self.advance()
        rhs, _ = self.expr(env)
        if op.text in ("<=", "<"):
            return Test(lhs - rhs, op.text == "<")
        return Test(rhs - lhs, op.text == ">")

    def block(self, env: dict, loop_body: bool = False):
        self.expect("{")
        env = dict(env)
        assigned: dict = {}
        body = None
        cases = []
        while self.tok.text != "}":
            if self.tok.kind == "end":
                raise self.error("unterminated block")
            if self.tok.text == "case":
                if not loop_body or body is not None or assigned:
                    raise self.error("'case' is only allowed directly in the loop body")
                self.advance()
                self.expect("(")
                tests = self.conjunction(env)
                self.expect(")")
                cases.append((tests, self.block(env)))
                continue
            if cases:
                raise self.error("a loop body made of 'case' blocks cannot mix other statements")
            if self.tok.text == "if":
                if body is not None or assigned:
                    raise self.error("assignment not in parallel form: statements after an 'if'"
                                     " or mixed with assignments")
                body = self.if_statement(env)
                continue
            if body is not None:
                raise self.error("statements after an 'if' are not supported")
            self.memory_or_assign(env, assigned=assigned)
        self.expect("}")
        if cases:
            return Cases(tuple(cases))
        if body is not None:
            return body
        if assigned:
            maps = [assigned.get(v, Polynomial.variable(self.dim, i))
                    for i, v in enumerate(self.variables)]
            return Update(tuple(maps))
        return None

    def if_statement(self, env: dict) -> IfElse:
        self.expect("if")
        self.expect("(")
        tests = self.conjunction(env)
        self.expect(")")
        then = self.block(env)
        orelse = None
        if self.tok.text == "else":
            self.advance()
            if self.tok.text == "if":
                orelse = self.if_statement(env)
            else:
                orelse = self.block(env)
        return IfElse(tests, then, orelse)

    def memory_or_assign(self, env: dict, assigned: dict | None = None,
                         top_level: bool = False) -> None:
        targets = [self.expect_name()]
        while self.tok.text == ",":
            self.advance()
            targets.append(self.expect_name())
        eq = self.expect("=")
        values = []
        used_all: set = set()
        while True:
            value, used = self.expr(env)
            values.append(value)
            used_all |= used
            if self.tok.text != ",":
                break
            self.advance()
        self.expect(";")
        if len(values) != len(targets):
            raise self.error(f"{len(targets)} targets but {len(values)} values", eq)
        names = [t.text for t in targets]
        if len(set(names)) != len(names):
            raise self.error("a variable is assigned twice", targets[0])
        assigned = assigned if assigned is not None else {}
        stale = used_all & set(assigned)
        if stale:
            raise self.error("assignment not in parallel form: reads "
                             f"{', '.join(sorted(stale))} after it was assigned", targets[0])
        for tok, value in zip(targets, values):
            name = tok.text
            if name in self.params:
                raise self.error(f"cannot assign to parameter {name!r}", tok)
            if name in self.variables:
                if top_level:
                    raise self.error("state variables are initialised by 'init', not assigned"
                                     " before the loop", tok)
                if name in assigned:
                    raise self.error(f"{name} assigned twice in one block", tok)
                assigned[name] = value
            else:
                if assigned:
                    raise self.error("assignment not in parallel form: memory copy after an"
                                     " update", tok)
                # memory variable: eliminated by substitution
                env[name] = value


class _TrackingParser(ExpressionParser):
    def __init__(self, tokens, env, dim):
        super().__init__(tokens, env, dim)
        self.used: set = set()

    def parse_atom(self) -> Polynomial:
        tok = self.tok
        value = super().parse_atom()
        if tok.kind == "name":
            self.used.add(tok.text)
        return value


def parse_program_ast(source: str) -> Program:
    if not source.strip():
        raise ProgramError("no loop found")
    return _DslParser(source).parse()


def parse_program(source: str) -> tuple:
    """Parse ``.ploop`` source into ``(Cpds, SublevelProperty)``."""
    prog = parse_program_ast(source)
    return program_to_cpds(prog)


# ---------------------------------------------------------------------------
# Pretty printing and the structured (JSON) format
# ---------------------------------------------------------------------------


def _rename(text: str, names: Sequence[str]) -> str:
    if list(names) == [f"x{i + 1}" for i in range(len(names))]:
        return text
    return re.sub(r"\bx(\d+)\b", lambda m: names[int(m.group(1)) - 1], text)


def _poly_src(p: Polynomial, names: Sequence[str]) -> str:
    return _rename(p.to_text(), names)


def _conj_src(cs: ConstraintSet, names) -> str:
    parts = [f"{_poly_src(p, names)} < 0" for p in cs.strict]
    parts += [f"{_poly_src(p, names)} <= 0" for p in cs.weak]
    return " and ".join(parts) if parts else "-1 <= 0"


def format_program(cpds: Cpds, prop: SublevelProperty) -> str:
    """Render as ``.ploop`` source using flat ``case`` blocks."""
    names = cpds.variables
    lines = [f"vars {' '.join(names)};"]
    if cpds.init_box is not None:
        parts = [f"{n} in [{lo!r}, {hi!r}]" for n, (lo, hi) in zip(names, cpds.init_box)]
        lines.append("init " + ", ".join(parts) + ";")
    else:
        lines.append(f"init where {_conj_src(cpds.init, names)} compact;")
    suffix = " avoid" if prop.mode == AVOID else ""
    lines.append(f"property kappa = {_poly_src(prop.kappa, names)}{suffix};")
    lines.append(f"while ({_conj_src(cpds.loop_guard, names)}) {{")
    if len(cpds.branches) == 1 and not len(cpds.branches[0].guard):
        # a lone unguarded branch is a plain assignment
        rhs = ", ".join(_poly_src(c, names) for c in cpds.branches[0].update)
        lines.append(f"  {', '.join(names)} = {rhs};")
        lines.append("}")
        return "\n".join(lines) + "\n"
    for br in cpds.branches:
        lines.append(f"  case ({_conj_src(br.guard, names)}) {{")
        lhs = ", ".join(names)
        rhs = ", ".join(_poly_src(c, names) for c in br.update)
        lines.append(f"    {lhs} = {rhs};")
        lines.append("  }")
    lines.append("}")
    return "\n".join(lines) + "\n"


def _set_to_json(cs: ConstraintSet) -> dict:
    return {"strict": [p.to_text() for p in cs.strict], "weak": [p.to_text() for p in cs.weak]}


def _set_from_json(obj: dict, dim: int) -> ConstraintSet:
    return ConstraintSet(dim, tuple(Polynomial.parse(t, dim) for t in obj.get("strict", [])),
                         tuple(Polynomial.parse(t, dim) for t in obj.get("weak", [])))


def cpds_to_dict(cpds: Cpds, prop: SublevelProperty) -> dict:
    if cpds.init_box is not None:
        init = {"box": [[lo, hi] for lo, hi in cpds.init_box]}
    else:
        init = dict(_set_to_json(cpds.init), compact=True)
    return {
        "format": FORMAT_TAG,
        "version": 1,
        "dimension": cpds.dim,
        "variables": list(cpds.variables),
        "init": init,
        "loop_guard": _set_to_json(cpds.loop_guard),
        "branches": [{"guard": _set_to_json(b.guard), "update": [c.to_text() for c in b.update]}
                     for b in cpds.branches],
        "kappa": prop.kappa.to_text(),
        "mode": prop.mode,
    }


def cpds_from_dict(obj: dict) -> tuple:
    try:
        d = int(obj["dimension"])
        init = obj["init"]
        if "box" in init:
            box = tuple((float(a), float(b)) for a, b in init["box"])
            init_set, compact = box_constraints(box), False
        else:
            box = None
            init_set, compact = _set_from_json(init, d), bool(init.get("compact", False))
        branches = tuple(
            Branch(_set_from_json(b["guard"], d), tuple(Polynomial.parse(t, d) for t in b["update"]))
            for b in obj["branches"])
        cpds = Cpds(d, init_set, _set_from_json(obj.get("loop_guard", {}), d), branches,
                    init_box=box, init_compact=compact,
                    variables=tuple(obj.get("variables") or ()))
        prop = SublevelProperty(Polynomial.parse(obj["kappa"], d), obj.get("mode", BOUNDED))
    except (KeyError, TypeError) as exc:
        raise ProgramError(f"malformed CPDS document: {exc}") from None
    return cpds, prop


def dumps_cpds(cpds: Cpds, prop: SublevelProperty) -> str:
    return json.dumps(cpds_to_dict(cpds, prop), indent=2) + "\n"


def loads_cpds(text: str) -> tuple:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProgramError(f"invalid JSON: {exc.msg}", exc.lineno, exc.colno) from None
    return cpds_from_dict(obj)


def cpds_hash(cpds: Cpds, prop: SublevelProperty) -> str:
    """SHA-256 of the canonical structured form; binds certificates to inputs."""
    canon = json.dumps(cpds_to_dict(cpds, prop), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def load_input(path) -> tuple:
    """Read either a ``.ploop`` program or a structured JSON document."""
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        return loads_cpds(text)
    return parse_program(text)


# ---------------------------------------------------------------------------
# Partition validation
# ---------------------------------------------------------------------------


@dataclass
class PartitionReport:
    samples: int
    uncovered: list = field(default_factory=list)
    overlapping: list = field(default_factory=list)  # (point, branch indices)

    @property
    def ok(self) -> bool:
        return not self.uncovered and not self.overlapping

    def summary(self) -> str:
        if self.ok:
            return f"partition plausible ({self.samples} samples)"
        return (f"{len(self.uncovered)} uncovered and {len(self.overlapping)} multiply covered"
                f" points out of {self.samples}")


def validate_partition(cpds: Cpds, samples: int, box: Sequence, seed: int = 0) -> PartitionReport:
    """Sample ``box`` uniformly and report points in zero or several branch guards.

    Pairwise disjointness is the condition checked, together with coverage.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in box], dtype=float)
    hi = np.array([b[1] for b in box], dtype=float)
    pts = lo + (hi - lo) * rng.random((samples, cpds.dim))
    member = np.stack([np.atleast_1d(b.guard.contains(pts)) for b in cpds.branches], axis=1)
    counts = member.sum(axis=1)
    report = PartitionReport(samples)
    for k in np.flatnonzero(counts == 0):
        report.uncovered.append(pts[k])
    for k in np.flatnonzero(counts >= 2):
        report.overlapping.append((pts[k], tuple(np.flatnonzero(member[k]))))
    return report


def warn_if_not_partition(cpds: Cpds, box: Sequence, samples: int = 1000) -> None:
    report = validate_partition(cpds, samples, box)
    if not report.ok:
        warnings.warn(report.summary(), stacklevel=2)
