"""SPICE-like netlist parsing and elaboration.

The accepted input is line oriented and case-insensitive.  Full-line comments
start with ``*``, continuation lines with ``+``.  Grammar:

    element   := LETTER name node node [node node] (value | waveform | expr)
    waveform  := DC v | SIN(o a f [d [ph]]) | PULSE(v1 v2 td tr tf pw per)
                 | PWL(t1 v1 t2 v2 ...)
    directive := .tran tstep tstop | .wavelet tol tstop [window]
                 | .print v(node)... | .end

Supported elements: R, C, L, V, I, D (diode), G (linear VCCS) and B
(behavioral current source whose value is an expression of node voltages).
Numbers take engineering suffixes f p n u m k meg g; any further trailing
unit letters are ignored, so ``1kOhm`` reads as 1000.  Node ``0`` is ground.

Elaboration assigns the unknown ordering used by the solvers: node voltages
in first-appearance order, then one branch current per voltage source, then
one per inductor.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NetlistError",
    "ElaborationError",
    "ExprEvalError",
    "DcWaveform",
    "SinWaveform",
    "PulseWaveform",
    "PwlWaveform",
    "eval_waveform",
    "waveform_breakpoints",
    "Expr",
    "parse_expr",
    "eval_expr",
    "expr_partials",
    "NetlistAst",
    "Circuit",
    "GROUND",
    "parse",
    "elaborate",
    "parse_number",
]

GROUND = -1

_SUFFIX_SCALE = {
    "f": 1e-15,
    "p": 1e-12,
    "n": 1e-9,
    "u": 1e-6,
    "m": 1e-3,
    "k": 1e3,
    "g": 1e9,
}

_NUMBER_RE = re.compile(
    r"([+-]?(?:\d+\.?\d*|\.\d+)(?:e[+-]?\d+)?)([a-z]*)\Z", re.IGNORECASE
)


class NetlistError(Exception):
    """Parse failure, annotated with the 1-based source line when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


class ElaborationError(Exception):
    pass


class ExprEvalError(Exception):
    """Expression evaluation failure; carries the offending subexpression."""

    def __init__(self, message: str, subexpr: str):
        self.subexpr = subexpr
        super().__init__(f"{message} in {subexpr!r}")


def parse_number(token: str, line: int | None = None) -> float:
    """Convert a netlist number with optional engineering suffix to a float."""
    match = _NUMBER_RE.match(token.strip())
    if not match:
        raise NetlistError(f"malformed number {token!r}", line)
    value = float(match.group(1))
    suffix = match.group(2).lower()
    if suffix.startswith("meg"):
        value *= 1e6
    elif suffix and suffix[0] in _SUFFIX_SCALE:
        value *= _SUFFIX_SCALE[suffix[0]]
    return value


# ---------------------------------------------------------------------------
# Source waveforms


@dataclass(frozen=True)
class DcWaveform:
    value: float

    def eval(self, t: float) -> float:
        return self.value

    def breakpoints(self, t0: float, t1: float) -> list[float]:
        return []

    def period(self) -> float | None:
        return None


@dataclass(frozen=True)
class SinWaveform:
    offset: float
    amplitude: float
    freq: float
    delay: float = 0.0
    phase_deg: float = 0.0

    def __post_init__(self):
        if self.freq <= 0.0:
            raise ValueError("SIN frequency must be positive")

    def eval(self, t: float) -> float:
        if t < self.delay:
            return self.offset
        arg = 2.0 * math.pi * self.freq * (t - self.delay) + math.radians(self.phase_deg)
        return self.offset + self.amplitude * math.sin(arg)

    def breakpoints(self, t0: float, t1: float) -> list[float]:
        return [self.delay] if t0 <= self.delay <= t1 else []

    def period(self) -> float | None:
        return 1.0 / self.freq


@dataclass(frozen=True)
class PulseWaveform:
    v1: float
    v2: float
    delay: float
    rise: float
    fall: float
    width: float
    period_s: float

    # Zero rise/fall times are replaced by this fraction of the period so the
    # source stays integrable and the solvers see a bounded slew.
    RISE_MIN_FRACTION = 1e-4

    def __post_init__(self):
        if self.period_s <= 0.0:
            raise ValueError("PULSE period must be positive")
        floor = self.period_s * self.RISE_MIN_FRACTION
        if self.rise <= 0.0:
            object.__setattr__(self, "rise", floor)
        if self.fall <= 0.0:
            object.__setattr__(self, "fall", floor)
        if self.width < 0.0:
            raise ValueError("PULSE width must be >= 0")
        if self.rise + self.width + self.fall > self.period_s:
            raise ValueError("PULSE edges and width exceed the period")

    def eval(self, t: float) -> float:
        if t < self.delay:
            return self.v1
        tau = (t - self.delay) % self.period_s
        if tau < self.rise:
            return self.v1 + (self.v2 - self.v1) * tau / self.rise
        if tau < self.rise + self.width:
            return self.v2
        if tau < self.rise + self.width + self.fall:
            return self.v2 + (self.v1 - self.v2) * (tau - self.rise - self.width) / self.fall
        return self.v1

    def breakpoints(self, t0: float, t1: float) -> list[float]:
        corners = (0.0, self.rise, self.rise + self.width, self.rise + self.width + self.fall)
        out = []
        k = max(0, math.floor((t0 - self.delay) / self.period_s) - 1)
        while True:
            base = self.delay + k * self.period_s
            if base > t1:
                break
            for c in corners:
                t = base + c
                if t0 <= t <= t1:
                    out.append(t)
            k += 1
        return out

    def period(self) -> float | None:
        return self.period_s


@dataclass(frozen=True)
class PwlWaveform:
    times: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.times) != len(self.values) or not self.times:
            raise ValueError("PWL needs matching, nonempty time/value lists")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("PWL times must be strictly increasing")

    def eval(self, t: float) -> float:
        return float(np.interp(t, self.times, self.values))

    def breakpoints(self, t0: float, t1: float) -> list[float]:
        return [t for t in self.times if t0 <= t <= t1]

    def period(self) -> float | None:
        return None


SourceWaveform = DcWaveform | SinWaveform | PulseWaveform | PwlWaveform


def eval_waveform(waveform, t: float) -> float:
    return waveform.eval(t)


def waveform_breakpoints(waveform, t0: float, t1: float) -> list[float]:
    return sorted(set(waveform.breakpoints(t0, t1)))


# ---------------------------------------------------------------------------
# Behavioral expressions

_MAX_EXPR_DEPTH = 64


class Expr:
    """Expression tree over node voltages; supports exact partial derivatives."""

    def value(self, env: dict[str, float]) -> float:
        raise NotImplementedError

    def partials(self, env: dict[str, float]) -> dict[str, float]:
        raise NotImplementedError

    def nodes(self) -> set[str]:
        raise NotImplementedError

    def depth(self) -> int:
        raise NotImplementedError

    def _check(self, value: float) -> float:
        if not math.isfinite(value):
            raise ExprEvalError("non-finite value", str(self))
        return value


@dataclass(frozen=True)
class Num(Expr):
    literal: float

    def value(self, env):
        return self.literal

    def partials(self, env):
        return {}

    def nodes(self):
        return set()

    def depth(self):
        return 1

    def __str__(self):
        return repr(self.literal)


@dataclass(frozen=True)
class NodeRef(Expr):
    node: str

    def value(self, env):
        try:
            return env[self.node]
        except KeyError:
            raise ExprEvalError(f"no value for node {self.node!r}", str(self)) from None

    def partials(self, env):
        return {self.node: 1.0}

    def nodes(self):
        return {self.node}

    def depth(self):
        return 1

    def __str__(self):
        return f"v({self.node})"


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr

    def value(self, env):
        return -self.arg.value(env)

    def partials(self, env):
        return {k: -v for k, v in self.arg.partials(env).items()}

    def nodes(self):
        return self.arg.nodes()

    def depth(self):
        return 1 + self.arg.depth()

    def __str__(self):
        return f"(-{self.arg})"


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr

    def value(self, env):
        a, b = self.left.value(env), self.right.value(env)
        if self.op == "+":
            out = a + b
        elif self.op == "-":
            out = a - b
        elif self.op == "*":
            out = a * b
        else:
            if b == 0.0:
                raise ExprEvalError("division by zero", str(self))
            out = a / b
        return self._check(out)

    def partials(self, env):
        a, b = self.left.value(env), self.right.value(env)
        da, db = self.left.partials(env), self.right.partials(env)
        out: dict[str, float] = {}
        for node in set(da) | set(db):
            ga, gb = da.get(node, 0.0), db.get(node, 0.0)
            if self.op == "+":
                g = ga + gb
            elif self.op == "-":
                g = ga - gb
            elif self.op == "*":
                g = ga * b + a * gb
            else:
                if b == 0.0:
                    raise ExprEvalError("division by zero", str(self))
                g = (ga * b - a * gb) / (b * b)
            out[node] = g
        return out

    def nodes(self):
        return self.left.nodes() | self.right.nodes()

    def depth(self):
        return 1 + max(self.left.depth(), self.right.depth())

    def __str__(self):
        return f"({self.left}{self.op}{self.right})"


_FUNCTIONS = {"sin", "cos", "exp", "tanh", "pow"}


@dataclass(frozen=True)
class Func(Expr):
    name: str
    args: tuple[Expr, ...]

    def value(self, env):
        vals = [a.value(env) for a in self.args]
        try:
            if self.name == "pow":
                out = math.pow(vals[0], vals[1])
            else:
                out = getattr(math, self.name)(vals[0])
        except (ValueError, OverflowError) as exc:
            raise ExprEvalError(str(exc), str(self)) from None
        return self._check(out)

    def partials(self, env):
        if self.name == "pow":
            base, expo = (a.value(env) for a in self.args)
            dbase = self.args[0].partials(env)
            dexpo = self.args[1].partials(env)
            out: dict[str, float] = {}
            for node in set(dbase) | set(dexpo):
                g = 0.0
                gb = dbase.get(node, 0.0)
                ge = dexpo.get(node, 0.0)
                if gb:
                    g += expo * math.pow(base, expo - 1.0) * gb
                if ge:
                    if base <= 0.0:
                        raise ExprEvalError(
                            "pow with variable exponent needs a positive base", str(self)
                        )
                    g += math.pow(base, expo) * math.log(base) * ge
                out[node] = self._check(g)
            return out
        x = self.args[0].value(env)
        dx = self.args[0].partials(env)
        if self.name == "sin":
            slope = math.cos(x)
        elif self.name == "cos":
            slope = -math.sin(x)
        elif self.name == "exp":
            slope = math.exp(x)
        else:  # tanh
            slope = 1.0 - math.tanh(x) ** 2
        return {node: self._check(slope * g) for node, g in dx.items()}

    def nodes(self):
        out: set[str] = set()
        for a in self.args:
            out |= a.nodes()
        return out

    def depth(self):
        return 1 + max(a.depth() for a in self.args)

    def __str__(self):
        return f"{self.name}({', '.join(str(a) for a in self.args)})"


_EXPR_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<number>(?:\d+\.?\d*|\.\d+)(?:e[+-]?\d+)?[a-z]*)"
    r"|(?P<ident>[a-z_][a-z0-9_]*)"
    r"|(?P<op>[-+*/(),])"
    r")",
    re.IGNORECASE,
)


class _ExprParser:
    def __init__(self, text: str, line: int | None = None):
        self.text = text
        self.line = line
        self.tokens = self._tokenize(text)
        self.pos = 0

    def _tokenize(self, text: str):
        tokens = []
        index = 0
        while index < len(text):
            match = _EXPR_TOKEN.match(text, index)
            if not match or match.end() == index:
                raise NetlistError(f"bad expression syntax near {text[index:]!r}", self.line)
            index = match.end()
            if match.lastgroup == "number":
                tokens.append(("number", match.group("number")))
            elif match.lastgroup == "ident":
                tokens.append(("ident", match.group("ident").lower()))
            else:
                tokens.append(("op", match.group("op")))
        return tokens

    def _peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else (None, None)

    def _next(self):
        tok = self._peek()
        self.pos += 1
        return tok

    def _expect(self, op: str):
        kind, text = self._next()
        if kind != "op" or text != op:
            raise NetlistError(f"expected {op!r} in expression {self.text!r}", self.line)

    def parse(self) -> Expr:
        expr = self._sum()
        if self.pos != len(self.tokens):
            raise NetlistError(f"trailing junk in expression {self.text!r}", self.line)
        if expr.depth() > _MAX_EXPR_DEPTH:
            raise NetlistError("expression too deeply nested", self.line)
        return expr

    def _sum(self) -> Expr:
        expr = self._term()
        while True:
            kind, text = self._peek()
            if kind == "op" and text in "+-":
                self._next()
                expr = BinOp(text, expr, self._term())
            else:
                return expr

    def _term(self) -> Expr:
        expr = self._unary()
        while True:
            kind, text = self._peek()
            if kind == "op" and text in "*/":
                self._next()
                expr = BinOp(text, expr, self._unary())
            else:
                return expr

    def _unary(self) -> Expr:
        kind, text = self._peek()
        if kind == "op" and text == "-":
            self._next()
            return Neg(self._unary())
        if kind == "op" and text == "+":
            self._next()
            return self._unary()
        return self._primary()

    def _primary(self) -> Expr:
        kind, text = self._next()
        if kind == "number":
            return Num(parse_number(text, self.line))
        if kind == "op" and text == "(":
            expr = self._sum()
            self._expect(")")
            return expr
        if kind == "ident":
            if text == "v":
                self._expect("(")
                node_kind, node = self._next()
                if node_kind not in ("ident", "number"):
                    raise NetlistError("expected a node name inside v(...)", self.line)
                self._expect(")")
                return NodeRef(str(node).lower())
            if text in _FUNCTIONS:
                self._expect("(")
                args = [self._sum()]
                kind2, text2 = self._peek()
                if kind2 == "op" and text2 == ",":
                    self._next()
                    args.append(self._sum())
                self._expect(")")
                if text == "pow" and len(args) != 2:
                    raise NetlistError("pow() takes two arguments", self.line)
                if text != "pow" and len(args) != 1:
                    raise NetlistError(f"{text}() takes one argument", self.line)
                return Func(text, tuple(args))
            raise NetlistError(f"unknown function or symbol {text!r}", self.line)
        raise NetlistError(f"unexpected end of expression {self.text!r}", self.line)


def parse_expr(text: str, line: int | None = None) -> Expr:
    return _ExprParser(text, line).parse()


def eval_expr(expr: Expr, node_values: dict[str, float]) -> float:
    return expr.value(node_values)


def expr_partials(expr: Expr, node_values: dict[str, float]) -> dict[str, float]:
    return expr.partials(node_values)


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class ElementDecl:
    kind: str
    name: str
    nodes: tuple[str, ...]
    value: float | None = None
    waveform: SourceWaveform | None = None
    expr: Expr | None = None
    params: dict[str, float] = field(default_factory=dict)
    line: int = 0


@dataclass(frozen=True)
class TranDirective:
    tstep: float
    tstop: float


@dataclass(frozen=True)
class WaveletDirective:
    tol: float
    tstop: float
    window: float | None = None


@dataclass(frozen=True)
class NetlistAst:
    title: str
    elements: tuple[ElementDecl, ...]
    prints: tuple[str, ...]
    tran: TranDirective | None
    wavelet: WaveletDirective | None


def _logical_lines(text: str):
    """Merge continuation lines; yields (line_number, content) pairs."""
    merged: list[tuple[int, str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if stripped.startswith("+"):
            if not merged:
                raise NetlistError("continuation line with nothing to continue", lineno)
            prev_no, prev = merged[-1]
            merged[-1] = (prev_no, prev + " " + stripped[1:].strip())
        else:
            merged.append((lineno, stripped))
    return merged


def _parse_waveform(tokens: list[str], line: int) -> SourceWaveform:
    text = " ".join(tokens)
    match = re.match(r"(dc|sin|pulse|pwl)\b\s*(.*)\Z", text, re.IGNORECASE | re.DOTALL)
    try:
        if not match:
            if len(tokens) == 1:
                return DcWaveform(parse_number(tokens[0], line))
            raise NetlistError(f"malformed source value {text!r}", line)
        kind = match.group(1).lower()
        rest = match.group(2).strip()
        if kind == "dc":
            args = re.split(r"[\s,]+", rest) if rest else []
            if len(args) != 1:
                raise NetlistError("DC takes exactly one value", line)
            return DcWaveform(parse_number(args[0], line))
        paren = re.fullmatch(r"\((.*)\)", rest, re.DOTALL)
        if not paren:
            raise NetlistError(f"{kind.upper()} needs a parenthesized argument list", line)
        args = [a for a in re.split(r"[\s,]+", paren.group(1).strip()) if a]
        values = [parse_number(a, line) for a in args]
        if kind == "sin":
            if not 3 <= len(values) <= 5:
                raise NetlistError("SIN takes 3 to 5 arguments", line)
            return SinWaveform(*values)
        if kind == "pulse":
            if len(values) != 7:
                raise NetlistError("PULSE takes exactly 7 arguments", line)
            return PulseWaveform(*values)
        if len(values) < 4 or len(values) % 2:
            raise NetlistError("PWL takes an even number (>= 4) of arguments", line)
        return PwlWaveform(tuple(values[0::2]), tuple(values[1::2]))
    except ValueError as exc:
        raise NetlistError(str(exc), line) from None


def _parse_element(lineno: int, content: str) -> ElementDecl:
    tokens = content.split()
    name = tokens[0].lower()
    kind = name[0].upper()
    if kind not in "RCLVIDGB":
        raise NetlistError(f"unsupported element letter {kind!r}", lineno)
    if kind in "RCL":
        if len(tokens) != 4:
            raise NetlistError(f"{kind} element takes 2 nodes and a value", lineno)
        value = parse_number(tokens[3], lineno)
        return ElementDecl(kind, name, (tokens[1].lower(), tokens[2].lower()), value=value, line=lineno)
    if kind in "VI":
        if len(tokens) < 4:
            raise NetlistError(f"{kind} element takes 2 nodes and a source value", lineno)
        waveform = _parse_waveform(tokens[3:], lineno)
        return ElementDecl(kind, name, (tokens[1].lower(), tokens[2].lower()), waveform=waveform, line=lineno)
    if kind == "D":
        if len(tokens) < 3:
            raise NetlistError("D element takes 2 nodes", lineno)
        params = {}
        for tok in tokens[3:]:
            if "=" not in tok:
                raise NetlistError(f"malformed diode parameter {tok!r}", lineno)
            key, _, val = tok.partition("=")
            key = key.lower()
            if key not in ("is", "vt", "n"):
                raise NetlistError(f"unknown diode parameter {key!r}", lineno)
            params[key] = parse_number(val, lineno)
        return ElementDecl(kind, name, (tokens[1].lower(), tokens[2].lower()), params=params, line=lineno)
    if kind == "G":
        if len(tokens) != 6:
            raise NetlistError("G element takes 4 nodes and a transconductance", lineno)
        return ElementDecl(
            kind,
            name,
            tuple(t.lower() for t in tokens[1:5]),
            value=parse_number(tokens[5], lineno),
            line=lineno,
        )
    # Behavioral current source: everything after the nodes is the expression,
    # optionally written as I=<expr>.
    if len(tokens) < 4:
        raise NetlistError("B element takes 2 nodes and an expression", lineno)
    expr_text = " ".join(tokens[3:])
    expr_text = re.sub(r"^\s*i\s*=", "", expr_text, flags=re.IGNORECASE)
    expr = parse_expr(expr_text, lineno)
    return ElementDecl(kind, name, (tokens[1].lower(), tokens[2].lower()), expr=expr, line=lineno)


def parse(text: str) -> NetlistAst:
    """Parse netlist text into an AST; raises :class:`NetlistError` on failure."""
    title = ""
    elements: list[ElementDecl] = []
    prints: list[str] = []
    tran: TranDirective | None = None
    wavelet: WaveletDirective | None = None
    seen: set[tuple[str, str]] = set()
    end_seen = False

    for lineno, content in _logical_lines(text):
        if not content:
            continue
        if content.startswith("*"):
            if not title and not elements and not end_seen:
                title = content[1:].strip()
            continue
        lowered = content.lower()
        if lowered.startswith("."):
            tokens = content.split()
            directive = tokens[0].lower()
            if directive == ".end":
                if end_seen:
                    raise NetlistError("duplicate .end", lineno)
                end_seen = True
                continue
            if end_seen:
                continue
            if directive == ".title":
                title = content[len(tokens[0]):].strip()
            elif directive == ".tran":
                if len(tokens) != 3:
                    raise NetlistError(".tran takes tstep and tstop", lineno)
                tran = TranDirective(parse_number(tokens[1], lineno), parse_number(tokens[2], lineno))
            elif directive == ".wavelet":
                if len(tokens) not in (3, 4):
                    raise NetlistError(".wavelet takes tol, tstop and an optional window", lineno)
                window = parse_number(tokens[3], lineno) if len(tokens) == 4 else None
                wavelet = WaveletDirective(
                    parse_number(tokens[1], lineno), parse_number(tokens[2], lineno), window
                )
            elif directive == ".print":
                for tok in tokens[1:]:
                    match = re.fullmatch(r"v\(([^)]+)\)", tok, re.IGNORECASE)
                    if not match:
                        raise NetlistError(f"unsupported print item {tok!r}", lineno)
                    prints.append(match.group(1).lower())
            else:
                raise NetlistError(f"unknown directive {directive!r}", lineno)
            continue
        if end_seen:
            continue
        element = _parse_element(lineno, content)
        key = (element.kind, element.name)
        if key in seen:
            raise NetlistError(f"duplicate element name {element.name!r}", lineno)
        seen.add(key)
        elements.append(element)

    if not end_seen:
        raise NetlistError("missing .end")
    return NetlistAst(title, tuple(elements), tuple(prints), tran, wavelet)


# ---------------------------------------------------------------------------
# Elaborated circuit


@dataclass(frozen=True)
class Resistor:
    name: str
    a: int
    b: int
    ohms: float


@dataclass(frozen=True)
class Capacitor:
    name: str
    a: int
    b: int
    farads: float


@dataclass(frozen=True)
class Inductor:
    name: str
    a: int
    b: int
    henries: float
    branch: int


@dataclass(frozen=True)
class VSource:
    name: str
    a: int
    b: int
    waveform: SourceWaveform
    branch: int


@dataclass(frozen=True)
class ISource:
    name: str
    a: int
    b: int
    waveform: SourceWaveform


@dataclass(frozen=True)
class Diode:
    name: str
    a: int
    b: int
    saturation: float = 1e-14
    thermal: float = 0.02585
    emission: float = 1.0


@dataclass(frozen=True)
class Vccs:
    name: str
    a: int
    b: int
    ctrl_p: int
    ctrl_m: int
    gm: float


@dataclass(frozen=True)
class Behavioral:
    name: str
    a: int
    b: int
    expr: Expr
    refs: tuple[tuple[str, int], ...]  # (node name, unknown index or GROUND)


@dataclass(frozen=True)
class Circuit:
    """Elaborated netlist with a fixed unknown ordering.

    Unknown vector layout: node voltages (first-appearance order, ground
    excluded), then voltage-source branch currents, then inductor branch
    currents.
    """

    title: str
    node_names: tuple[str, ...]
    node_index: dict[str, int]
    elements: tuple[object, ...]
    num_nodes: int
    size: int
    print_nodes: tuple[str, ...]
    tran: TranDirective | None
    wavelet: WaveletDirective | None
    warnings: tuple[str, ...]

    def variable_labels(self) -> list[str]:
        # Branch order is voltage sources first, then inductors.
        labels_v = [f"i({e.name})" for e in self.elements if isinstance(e, VSource)]
        labels_l = [f"i({e.name})" for e in self.elements if isinstance(e, Inductor)]
        return [f"v({name})" for name in self.node_names] + labels_v + labels_l

    def variable_is_current(self) -> np.ndarray:
        out = np.zeros(self.size, dtype=bool)
        out[self.num_nodes :] = True
        return out

    def print_indices(self) -> list[int]:
        nodes = self.print_nodes if self.print_nodes else self.node_names
        return [self.node_index[name] for name in nodes]

    def print_labels(self) -> list[str]:
        nodes = self.print_nodes if self.print_nodes else self.node_names
        return [f"v({name})" for name in nodes]

    def waveforms(self) -> list[SourceWaveform]:
        return [e.waveform for e in self.elements if isinstance(e, (VSource, ISource))]

    def breakpoints(self, t0: float, t1: float) -> np.ndarray:
        """Sorted distinct source corner times in [t0, t1]."""
        times: list[float] = []
        for waveform in self.waveforms():
            times.extend(waveform.breakpoints(t0, t1))
        if not times:
            return np.empty(0)
        merged = np.unique(np.asarray(times))
        if merged.size > 1:
            keep = np.concatenate([[True], np.diff(merged) > 1e-12 * (t1 - t0)])
            merged = merged[keep]
        return merged

    def shortest_source_period(self) -> float | None:
        periods = [w.period() for w in self.waveforms()]
        periods = [p for p in periods if p is not None]
        return min(periods) if periods else None


def elaborate(ast: NetlistAst) -> Circuit:
    """Resolve node names to unknown indices and build element instances."""
    node_names: list[str] = []
    node_index: dict[str, int] = {}

    def resolve(name: str) -> int:
        if name == "0":
            return GROUND
        if name not in node_index:
            node_index[name] = len(node_names)
            node_names.append(name)
        return node_index[name]

    # First pass: allocate node indices in first-appearance order.
    resolved_nodes = [tuple(resolve(n) for n in decl.nodes) for decl in ast.elements]
    num_nodes = len(node_names)

    vsource_decls = [d for d in ast.elements if d.kind == "V"]
    inductor_decls = [d for d in ast.elements if d.kind == "L"]
    branch_of: dict[str, int] = {}
    for offset, decl in enumerate(vsource_decls + inductor_decls):
        branch_of[decl.name] = num_nodes + offset
    size = num_nodes + len(vsource_decls) + len(inductor_decls)

    elements: list[object] = []
    for decl, nodes in zip(ast.elements, resolved_nodes):
        if decl.kind == "R":
            elements.append(Resistor(decl.name, nodes[0], nodes[1], decl.value))
        elif decl.kind == "C":
            elements.append(Capacitor(decl.name, nodes[0], nodes[1], decl.value))
        elif decl.kind == "L":
            elements.append(
                Inductor(decl.name, nodes[0], nodes[1], decl.value, branch_of[decl.name])
            )
        elif decl.kind == "V":
            elements.append(
                VSource(decl.name, nodes[0], nodes[1], decl.waveform, branch_of[decl.name])
            )
        elif decl.kind == "I":
            elements.append(ISource(decl.name, nodes[0], nodes[1], decl.waveform))
        elif decl.kind == "D":
            elements.append(
                Diode(
                    decl.name,
                    nodes[0],
                    nodes[1],
                    saturation=decl.params.get("is", 1e-14),
                    thermal=decl.params.get("vt", 0.02585),
                    emission=decl.params.get("n", 1.0),
                )
            )
        elif decl.kind == "G":
            elements.append(
                Vccs(decl.name, nodes[0], nodes[1], nodes[2], nodes[3], decl.value)
            )
        else:  # B
            refs = []
            for node in sorted(decl.expr.nodes()):
                if node == "0":
                    refs.append((node, GROUND))
                elif node in node_index:
                    refs.append((node, node_index[node]))
                else:
                    raise ElaborationError(
                        f"element {decl.name!r} references undeclared node {node!r}"
                    )
            elements.append(Behavioral(decl.name, nodes[0], nodes[1], decl.expr, tuple(refs)))

    for name in ast.prints:
        if name not in node_index:
            raise ElaborationError(f".print references undeclared node {name!r}")

    warnings = _connectivity_warnings(node_names, node_index, elements)
    return Circuit(
        title=ast.title,
        node_names=tuple(node_names),
        node_index=dict(node_index),
        elements=tuple(elements),
        num_nodes=num_nodes,
        size=size,
        print_nodes=ast.prints,
        tran=ast.tran,
        wavelet=ast.wavelet,
        warnings=tuple(warnings),
    )


def _connectivity_warnings(node_names, node_index, elements) -> list[str]:
    """Flag nodes without a terminal path to ground (gmin keeps them solvable)."""
    parent = list(range(len(node_names) + 1))  # extra slot for ground
    ground = len(node_names)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        parent[find(i)] = find(j)

    def slot(idx):
        return ground if idx == GROUND else idx

    for element in elements:
        if isinstance(element, Vccs):
            union(slot(element.a), slot(element.b))
        elif isinstance(element, (Resistor, Capacitor, Inductor, VSource, ISource, Diode, Behavioral)):
            union(slot(element.a), slot(element.b))
    out = []
    for name in node_names:
        if find(node_index[name]) != find(ground):
            out.append(f"node {name!r} has no element path to ground")
    return out
