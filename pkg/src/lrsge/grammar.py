"""Context-free grammars: file parsing, validation, rendering and the
built-in learning-rate scheduler grammar.

Grammar file format (UTF-8, one rule per line, ``\\`` continues a line)::

    <name> ::= option | option ...

Symbols are whitespace separated. ``<ident>`` is a nonterminal, anything
else is a terminal token (quote with ``'`` or ``"`` to include spaces or
``|``). ``RANGE(lo, hi, n)`` expands to ``n`` evenly spaced real
terminals and ``IRANGE(lo, hi)`` to the integers ``lo..hi``. ``#`` at the
start of a token begins a comment.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources

NONTERMINAL = "nonterminal"
TERMINAL = "terminal"

_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_NT_TOKEN_RE = re.compile(r"<([A-Za-z_][A-Za-z0-9_]*)>\Z")
_RULE_HEAD_RE = re.compile(r"\s*<([A-Za-z_][A-Za-z0-9_]*)>\s*::=")
_DIRECTIVE_RE = re.compile(r"(I?RANGE)\(([^)]*)\)")


class GrammarError(ValueError):
    """Raised for malformed grammar text or an invalid grammar."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"line {line}, column {column}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Symbol:
    kind: str
    text: str

    def __post_init__(self):
        if self.kind not in (NONTERMINAL, TERMINAL):
            raise GrammarError(f"unknown symbol kind {self.kind!r}")
        if not self.text:
            raise GrammarError("empty symbol text")
        if self.kind == NONTERMINAL and not _NAME_RE.match(self.text):
            raise GrammarError(f"invalid nonterminal name {self.text!r}")

    @property
    def is_nonterminal(self):
        return self.kind == NONTERMINAL

    def __repr__(self):
        return f"<{self.text}>" if self.is_nonterminal else repr(self.text)


def NT(name: str) -> Symbol:
    return Symbol(NONTERMINAL, name)


def T(text: str) -> Symbol:
    return Symbol(TERMINAL, text)


@dataclass(frozen=True)
class Production:
    lhs: str
    options: tuple[tuple[Symbol, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "options", tuple(tuple(o) for o in self.options))
        if not self.options:
            raise GrammarError(f"<{self.lhs}> has no options")
        for opt in self.options:
            if not opt:
                raise GrammarError(f"<{self.lhs}> has an empty option")

    def __len__(self):
        return len(self.options)


@dataclass(frozen=True)
class Grammar:
    """Validated grammar. Option order is significant: genes index into it.

    ``metadata`` is a free-form source description and does not take part
    in equality.
    """

    axiom: str
    productions: dict[str, Production]
    metadata: str = field(default="", compare=False)

    def __post_init__(self):
        validate(self)

    def options(self, nt: str) -> tuple[tuple[Symbol, ...], ...]:
        return self.productions[nt].options

    def option_count(self, nt: str) -> int:
        return len(self.productions[nt].options)

    @property
    def nonterminals(self) -> list[str]:
        return list(self.productions)

    @cached_property
    def _reaches(self) -> dict[str, frozenset[str]]:
        # transitive closure of "appears in an option of"
        direct = {
            nt: {s.text for opt in p.options for s in opt if s.is_nonterminal}
            for nt, p in self.productions.items()
        }
        closure = {}
        for nt in self.productions:
            seen, stack = set(), list(direct[nt])
            while stack:
                cur = stack.pop()
                if cur not in seen:
                    seen.add(cur)
                    stack.extend(direct[cur])
            closure[nt] = frozenset(seen)
        return closure

    @cached_property
    def min_heights(self) -> dict[str, int]:
        """Minimum derivation height of each nonterminal (terminal leaves = 0)."""
        return _min_heights(self.productions)

    def is_recursive_option(self, nt: str, index: int) -> bool:
        """True when option ``index`` of ``nt`` can derive ``nt`` again."""
        for s in self.productions[nt].options[index]:
            if s.is_nonterminal and (s.text == nt or nt in self._reaches[s.text]):
                return True
        return False

    def is_recursive(self, nt: str) -> bool:
        return nt in self._reaches[nt]

    @cached_property
    def _restricted(self) -> dict[str, tuple[int, ...]]:
        out = {}
        for nt, p in self.productions.items():
            idx = tuple(i for i in range(len(p)) if not self.is_recursive_option(nt, i))
            if not idx:
                # no non-recursive option: fall back to the fastest-terminating ones
                h = [_option_height(opt, self.min_heights) for opt in p.options]
                idx = tuple(i for i, v in enumerate(h) if v == min(h))
            out[nt] = idx
        return out

    def restricted_options(self, nt: str) -> tuple[int, ...]:
        """Option indices allowed once the recursion bound has been reached."""
        return self._restricted[nt]

    def terminal_values(self, nt: str) -> list[str]:
        """Texts of a rule whose options are all single terminals."""
        out = []
        for opt in self.options(nt):
            if len(opt) != 1 or opt[0].is_nonterminal:
                raise GrammarError(f"<{nt}> is not a list of single terminals")
            out.append(opt[0].text)
        return out


def _option_height(opt, heights):
    inf = float("inf")
    return 1 + max((heights.get(s.text, inf) if s.is_nonterminal else 0 for s in opt), default=0)


def _min_heights(productions):
    inf = float("inf")
    heights = {nt: inf for nt in productions}
    changed = True
    while changed:
        changed = False
        for nt, p in productions.items():
            h = min(_option_height(opt, heights) for opt in p.options)
            if h < heights[nt]:
                heights[nt] = h
                changed = True
    return heights


def validate(grammar: Grammar) -> None:
    """Check the structural invariants; raises GrammarError on the first failure."""
    prods = grammar.productions
    if grammar.axiom not in prods:
        raise GrammarError(f"axiom <{grammar.axiom}> has no production")
    for nt, p in prods.items():
        if p.lhs != nt:
            raise GrammarError(f"production keyed <{nt}> has lhs <{p.lhs}>")
        if not _NAME_RE.match(nt):
            raise GrammarError(f"invalid nonterminal name {nt!r}")
        for opt in p.options:
            for s in opt:
                if s.is_nonterminal and s.text not in prods:
                    raise GrammarError(f"dangling nonterminal <{s.text}> in <{nt}>")
    reached, stack = {grammar.axiom}, [grammar.axiom]
    while stack:
        for opt in prods[stack.pop()].options:
            for s in opt:
                if s.is_nonterminal and s.text not in reached:
                    reached.add(s.text)
                    stack.append(s.text)
    unreachable = [nt for nt in prods if nt not in reached]
    if unreachable:
        raise GrammarError("unreachable nonterminal(s): " + ", ".join(f"<{n}>" for n in unreachable))
    heights = _min_heights(prods)
    stuck = [nt for nt, h in heights.items() if h == float("inf")]
    if stuck:
        raise GrammarError("non-terminating nonterminal(s): " + ", ".join(f"<{n}>" for n in stuck))


def evenly_spaced_grid(lo: float, hi: float, n: int) -> list[float]:
    """``n`` evenly spaced values from ``lo`` to ``hi``, both endpoints exact."""
    if not lo < hi:
        raise ValueError(f"invalid range: lo={lo!r} must be < hi={hi!r}")
    if n < 2:
        raise ValueError(f"invalid range: n={n!r} must be >= 2")
    step = (hi - lo) / (n - 1)
    values = [lo + i * step for i in range(n)]
    values[-1] = hi
    return values


def format_real(value: float) -> str:
    # shortest repr that round-trips the binary value
    return repr(float(value))


LR_BOUNDS = (0.0001, 0.1)
LR_COUNT = 100
EPOCH_BOUNDS = (1, 100)


def default_autolr_grammar() -> Grammar:
    """The scheduler grammar: nested ``if_func`` conditionals over
    ``learning_rate`` and ``epoch`` yielding grid learning rates."""
    lr = [(T(format_real(v)),) for v in evenly_spaced_grid(*LR_BOUNDS, LR_COUNT)]
    ep = [(T(str(i)),) for i in range(EPOCH_BOUNDS[0], EPOCH_BOUNDS[1] + 1)]
    prods = {
        "expr": Production("expr", [
            (T("if_func("), NT("logic_expr"), T(","), NT("expr"), T(","), NT("expr"), T(")")),
            (NT("lr_const"),),
        ]),
        "logic_expr": Production("logic_expr", [
            (T("learning_rate"), NT("logic_op"), NT("lr_const")),
            (T("epoch"), NT("logic_op"), NT("ep_const")),
        ]),
        "logic_op": Production("logic_op", [(T(op),) for op in ("<", "<=", ">", ">=")]),
        "lr_const": Production("lr_const", lr),
        "ep_const": Production("ep_const", ep),
    }
    return Grammar("expr", prods, metadata="builtin:autolr")


def builtin_grammar_text() -> str:
    return resources.files("lrsge").joinpath("grammars/autolr.bnf").read_text(encoding="utf-8")


def load_grammar(source: str) -> Grammar:
    """Load ``builtin:autolr`` or a grammar file path."""
    if source == "builtin:autolr":
        return default_autolr_grammar()
    with open(source, encoding="utf-8") as fh:
        text = fh.read()
    g = parse_grammar(text)
    return Grammar(g.axiom, g.productions, metadata=str(source))


# --- parsing -----------------------------------------------------------------

def _logical_lines(text):
    """Yield (line_no, col_offsets, text) joining ``\\`` continuations."""
    buf, start, offsets = "", None, []
    for no, raw in enumerate(text.splitlines(), start=1):
        if start is None:
            start = no
        stripped = raw.rstrip()
        if stripped.endswith("\\"):
            offsets.append((len(buf), no))
            buf += stripped[:-1] + " "
            continue
        offsets.append((len(buf), no))
        buf += raw
        yield offsets, buf
        buf, start, offsets = "", None, []
    if buf:
        yield offsets, buf


def _locate(offsets, pos):
    line, base = offsets[0][1], 0
    for off, no in offsets:
        if off <= pos:
            base, line = off, no
    return line, pos - base + 1


def _tokenize(body, body_start, offsets):
    """Split a rule body into options of raw tokens.

    Tokens are (kind, text, pos) with kind in {"sym", "quoted", "range", "irange"}.
    """
    options, current = [], []
    i, n = 0, len(body)
    while i < n:
        c = body[i]
        if c.isspace():
            i += 1
        elif c == "#":
            break
        elif c == "|":
            options.append((current, body_start + i))
            current = []
            i += 1
        elif c in "'\"":
            end = body.find(c, i + 1)
            if end < 0:
                line, col = _locate(offsets, body_start + i)
                raise GrammarError("unterminated quoted terminal", line, col)
            if end == i + 1:
                line, col = _locate(offsets, body_start + i)
                raise GrammarError("empty quoted terminal", line, col)
            current.append(("quoted", body[i + 1:end], body_start + i))
            i = end + 1
        else:
            m = _DIRECTIVE_RE.match(body, i)
            if m:
                current.append((m.group(1).lower(), m.group(2), body_start + i))
                i = m.end()
                continue
            j = i
            while j < n and not body[j].isspace() and body[j] != "|":
                j += 1
            current.append(("sym", body[i:j], body_start + i))
            i = j
    options.append((current, body_start + n))
    return options


def _expand_directive(kind, args, where):
    parts = [a.strip() for a in args.split(",")]
    try:
        if kind == "range":
            if len(parts) != 3:
                raise ValueError("RANGE takes (lo, hi, n)")
            vals = evenly_spaced_grid(float(parts[0]), float(parts[1]), int(parts[2]))
            return [format_real(v) for v in vals]
        if len(parts) != 2:
            raise ValueError("IRANGE takes (lo, hi)")
        lo, hi = int(parts[0]), int(parts[1])
        if lo > hi:
            raise ValueError(f"IRANGE lo={lo} > hi={hi}")
        return [str(v) for v in range(lo, hi + 1)]
    except ValueError as exc:
        raise GrammarError(str(exc), *where) from None


def parse_grammar(text: str) -> Grammar:
    """Parse grammar-file text; the first rule's lhs is the axiom."""
    prods: dict[str, Production] = {}
    axiom = None
    for offsets, line in _logical_lines(text):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        head = _RULE_HEAD_RE.match(line)
        if not head:
            first = len(line) - len(line.lstrip())
            raise GrammarError("expected '<name> ::='", *_locate(offsets, first))
        lhs = head.group(1)
        if lhs in prods:
            raise GrammarError(f"duplicate rule for <{lhs}>", *_locate(offsets, head.start(1) - 1))
        options = []
        for raw_tokens, end_pos in _tokenize(line[head.end():], head.end(), offsets):
            if not raw_tokens:
                raise GrammarError(f"empty option in <{lhs}>", *_locate(offsets, end_pos))
            expanded = None
            syms = []
            for kind, tok, pos in raw_tokens:
                if kind in ("range", "irange"):
                    if len(raw_tokens) != 1:
                        raise GrammarError(f"{kind.upper()} must be a whole option", *_locate(offsets, pos))
                    expanded = _expand_directive(kind, tok, _locate(offsets, pos))
                elif kind == "quoted":
                    syms.append(T(tok))
                else:
                    m = _NT_TOKEN_RE.match(tok)
                    syms.append(NT(m.group(1)) if m else T(tok))
            if expanded is not None:
                options.extend((T(v),) for v in expanded)
            else:
                options.append(tuple(syms))
        prods[lhs] = Production(lhs, options)
        if axiom is None:
            axiom = lhs
    if axiom is None:
        raise GrammarError("grammar has no rules")
    return Grammar(axiom, prods, metadata="parsed")


def _render_symbol(s: Symbol) -> str:
    if s.is_nonterminal:
        return f"<{s.text}>"
    t = s.text
    plain = (
        not any(ch.isspace() for ch in t)
        and "|" not in t and "'" not in t and '"' not in t
        and not t.startswith("#")
        and not _NT_TOKEN_RE.match(t)
        and not _DIRECTIVE_RE.match(t)
    )
    if plain:
        return t
    if '"' not in t:
        return f'"{t}"'
    if "'" not in t:
        return f"'{t}'"
    raise GrammarError(f"terminal {t!r} cannot be rendered (contains both quote kinds)")


def render_grammar(grammar: Grammar) -> str:
    """Render to grammar-file text, axiom first, every option written out."""
    order = [grammar.axiom] + [nt for nt in grammar.productions if nt != grammar.axiom]
    lines = []
    for nt in order:
        opts = [" ".join(_render_symbol(s) for s in opt) for opt in grammar.options(nt)]
        lines.append(f"<{nt}> ::= " + " | ".join(opts))
    return "\n".join(lines) + "\n"
