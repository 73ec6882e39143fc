"""Learning-rate schedule programs.

A schedule is a tree of ``if_func(cond, then, else)`` nodes over the
previous epoch's learning rate and the 1-based epoch index, with grid
learning-rate constants at the leaves. It is called once per epoch.
"""

from __future__ import annotations

import csv
import operator
import re
from dataclasses import dataclass
from typing import Union

from .grammar import Grammar, format_real

LEARNING_RATE = "learning_rate"
EPOCH = "epoch"

OPS = {
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}

DEFAULT_INITIAL_LR = 0.01


@dataclass(frozen=True)
class Condition:
    variable: str
    op: str
    constant: Union[float, int]

    def holds(self, previous_lr: float, epoch: int) -> bool:
        value = previous_lr if self.variable == LEARNING_RATE else epoch
        return OPS[self.op](value, self.constant)

    def render(self) -> str:
        const = format_real(self.constant) if self.variable == LEARNING_RATE else str(self.constant)
        return f"{self.variable} {self.op} {const}"


@dataclass(frozen=True)
class Const:
    lr: float

    def render(self) -> str:
        return format_real(self.lr)


@dataclass(frozen=True)
class If:
    cond: Condition
    then: "SchedulerAst"
    orelse: "SchedulerAst"

    def render(self) -> str:
        return f"if_func({self.cond.render()}, {self.then.render()}, {self.orelse.render()})"


SchedulerAst = Union[Const, If]


def render(ast: SchedulerAst) -> str:
    return ast.render()


def depth(ast: SchedulerAst) -> int:
    """Tree depth counting leaves, so ``Const`` has depth 1."""
    if isinstance(ast, Const):
        return 1
    return 1 + max(depth(ast.then), depth(ast.orelse))


def conditions(ast: SchedulerAst):
    """Yield every Condition in pre-order."""
    if isinstance(ast, If):
        yield ast.cond
        yield from conditions(ast.then)
        yield from conditions(ast.orelse)


def constants(ast: SchedulerAst):
    if isinstance(ast, Const):
        yield ast.lr
    else:
        yield from constants(ast.then)
        yield from constants(ast.orelse)


def eval_scheduler(ast: SchedulerAst, previous_lr: float, epoch: int) -> float:
    node = ast
    while isinstance(node, If):
        node = node.then if node.cond.holds(previous_lr, epoch) else node.orelse
    return node.lr


# --- phenotype parsing ---------------------------------------------------------

class PhenotypeError(ValueError):
    def __init__(self, message, position=None):
        self.position = position
        if position is not None:
            message = f"at position {position}: {message}"
        super().__init__(message)


_TOKEN_RE = re.compile(r"\s*(if_func\(|<=|>=|<|>|,|\)|[A-Za-z_][A-Za-z0-9_]*|[-+0-9.eE]+)")


def _tokens(text):
    pos, out = 0, []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise PhenotypeError(f"unexpected character {text[pos]!r}", pos)
        out.append((m.group(1), m.start(1)))
        pos = m.end()
    out.append(("", len(text)))
    return out


@dataclass(frozen=True)
class _Domains:
    lr: frozenset
    ep: frozenset

    @classmethod
    def of(cls, grammar: Grammar):
        lr = frozenset(float(t) for t in grammar.terminal_values("lr_const"))
        ep = frozenset(int(t) for t in grammar.terminal_values("ep_const"))
        return cls(lr, ep)


_domain_cache: dict[int, tuple[Grammar, _Domains]] = {}


def _domains(grammar):
    hit = _domain_cache.get(id(grammar))
    if hit is None or hit[0] is not grammar:
        hit = (grammar, _Domains.of(grammar))
        _domain_cache[id(grammar)] = hit
    return hit[1]


def lr_grid(grammar: Grammar) -> list[float]:
    return [float(t) for t in grammar.terminal_values("lr_const")]


def parse_phenotype(text: str, grammar: Grammar) -> SchedulerAst:
    """Parse ``if_func(...)`` text; constants must lie on the grammar's grids."""
    dom = _domains(grammar)
    toks = _tokens(text)
    i = 0

    def peek():
        return toks[i]

    def take(expected=None):
        nonlocal i
        tok, pos = toks[i]
        if expected is not None and tok != expected:
            raise PhenotypeError(f"expected {expected!r}, found {tok or 'end of input'!r}", pos)
        i += 1
        return tok, pos

    def lr_value(tok, pos):
        try:
            v = float(tok)
        except ValueError:
            raise PhenotypeError(f"expected a learning-rate constant, found {tok!r}", pos) from None
        if v not in dom.lr:
            raise PhenotypeError(f"constant {tok} is not on the learning-rate grid", pos)
        return v

    def expr():
        tok, pos = peek()
        if tok == "if_func(":
            take()
            cond = condition()
            take(",")
            a = expr()
            take(",")
            b = expr()
            take(")")
            return If(cond, a, b)
        take()
        return Const(lr_value(tok, pos))

    def condition():
        var, pos = take()
        if var not in (LEARNING_RATE, EPOCH):
            raise PhenotypeError(f"expected learning_rate or epoch, found {var!r}", pos)
        op, pos = take()
        if op not in OPS:
            raise PhenotypeError(f"expected a comparison operator, found {op!r}", pos)
        tok, pos = take()
        if var == LEARNING_RATE:
            return Condition(var, op, lr_value(tok, pos))
        if not re.fullmatch(r"[0-9]+", tok):
            raise PhenotypeError(f"expected an epoch constant, found {tok!r}", pos)
        if int(tok) not in dom.ep:
            raise PhenotypeError(f"epoch constant {tok} is not in the grammar", pos)
        return Condition(var, op, int(tok))

    ast = expr()
    tok, pos = peek()
    if tok:
        raise PhenotypeError(f"trailing input {tok!r}", pos)
    return ast


# --- curves ----------------------------------------------------------------------

def simulate_schedule(ast: SchedulerAst, epochs: int, initial_prev_lr: float = DEFAULT_INITIAL_LR):
    """Learning rate per epoch as ``[(epoch, lr), ...]`` for epochs 1..epochs."""
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    curve, lr = [], initial_prev_lr
    for e in range(1, epochs + 1):
        lr = eval_scheduler(ast, lr, e)
        curve.append((e, lr))
    return curve


CONSTANT = "constant"
DECAYING = "decaying"
OSCILLATOR = "oscillator"
OTHER = "other"


def classify_shape(curve) -> str:
    """Classify a curve of ``(epoch, lr)`` pairs or a plain list of rates."""
    lrs = [p[1] if isinstance(p, tuple) else p for p in curve]
    if not lrs:
        raise ValueError("empty curve")
    diffs = [b - a for a, b in zip(lrs, lrs[1:])]
    if all(d == 0 for d in diffs):
        return CONSTANT
    if all(d <= 0 for d in diffs):
        return DECAYING
    signs = [1 if d > 0 else -1 for d in diffs if d != 0]
    changes = sum(1 for a, b in zip(signs, signs[1:]) if a != b)
    if changes >= 2:
        return OSCILLATOR
    return OTHER


def write_curve_csv(curve, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "lr"])
        for e, lr in curve:
            w.writerow([e, format_real(lr)])


def nearest_grid_value(grammar: Grammar, value: float) -> float:
    return min(lr_grid(grammar), key=lambda v: (abs(v - value), v))


def step_decay_example(grammar: Grammar) -> SchedulerAst:
    """Three-step decay: ~0.1 before epoch 10, ~0.05 through epoch 50, ~0.01 after.

    Rates are snapped to the nearest grid values.
    """
    g = lambda v: nearest_grid_value(grammar, v)  # noqa: E731
    return If(
        Condition(EPOCH, "<", 10),
        Const(g(0.1)),
        If(Condition(EPOCH, "<=", 50), Const(g(0.05)), Const(g(0.01))),
    )
