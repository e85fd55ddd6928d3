"""Model formulas.

Grammar::

    formula := term ("+" term)* ["|" "strata" "(" NAME ")"]
    term    := NAME
             | "s"  "(" NAME ["," "k" "=" INT] ["," "basis" "=" ("bs"|"tp")] ")"
             | "tv" "(" NAME ["," "k" "=" INT] ")"
             | "re" "(" NAME ["," "sigma2" "=" REAL] ")"
"""

import re
from dataclasses import dataclass, field

from .errors import FormulaError

DEFAULT_K = 10

_TOKEN = re.compile(r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][-+]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z0-9_.]*)"
                    r"|(?P<op>[+(),=|]))")


@dataclass(frozen=True)
class Term:
    """One additive component.

    kind is "linear", "nle" (smooth of a covariate), "tve" (time-varying
    coefficient) or "re" (random effect of a grouping factor).
    """

    kind: str
    var: str
    k: int = None
    basis: str = None
    sigma2: float = None

    @property
    def label(self):
        if self.kind == "linear":
            return self.var
        if self.kind == "nle":
            return f"s({self.var})"
        if self.kind == "tve":
            return f"tv({self.var})"
        return f"re({self.var})"

    @property
    def penalized(self):
        return self.kind != "linear"


@dataclass
class ModelSpec:
    terms: list
    strata: str = None
    text: str = ""
    coefficients: dict = field(default_factory=dict)

    @property
    def variables(self):
        return [t.var for t in self.terms if t.kind != "re"]

    def term(self, label):
        for t in self.terms:
            if t.label == label:
                return t
        raise KeyError(label)

    def __str__(self):
        parts = []
        for t in self.terms:
            if t.kind == "linear":
                parts.append(t.var)
            elif t.kind == "nle":
                parts.append(f"s({t.var}, k={t.k}, basis={t.basis})")
            elif t.kind == "tve":
                parts.append(f"tv({t.var}, k={t.k})")
            else:
                parts.append(f"re({t.var})" if t.sigma2 is None else f"re({t.var}, sigma2={t.sigma2:g})")
        s = " + ".join(parts)
        return s + (f" | strata({self.strata})" if self.strata else "")


def _tokenize(text):
    pos = 0
    toks = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m:
            ws = len(text[pos:]) - len(text[pos:].lstrip())
            _fail(text, pos + ws, f"unexpected character {text[pos + ws]!r}")
        kind = m.lastgroup
        start = m.start(kind)
        toks.append((kind, m.group(kind), start))
        pos = m.end()
    toks.append(("end", "", len(text)))
    return toks


def _fail(text, pos, msg):
    raise FormulaError(f"{msg} at position {pos}\n  {text}\n  {' ' * pos}^")


class _Parser:
    def __init__(self, text):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self, kind=None, value=None):
        tok = self.toks[self.i]
        if (kind and tok[0] != kind) or (value is not None and tok[1] != value):
            want = repr(value) if value is not None else kind
            got = "end of formula" if tok[0] == "end" else repr(tok[1])
            _fail(self.text, tok[2], f"expected {want}, got {got}")
        self.i += 1
        return tok

    def formula(self):
        terms = [self.term()]
        strata = None
        while self.peek()[1] == "+":
            self.take("op", "+")
            terms.append(self.term())
        if self.peek()[1] == "|":
            self.take("op", "|")
            self.take("name", "strata")
            self.take("op", "(")
            strata = self.take("name")[1]
            self.take("op", ")")
        self.take("end")
        return terms, strata

    def term(self):
        kind, val, pos = self.take("name")
        if self.peek()[1] != "(":
            return Term("linear", val), pos
        if val not in ("s", "tv", "re"):
            _fail(self.text, pos, f"unknown term function {val!r}")
        self.take("op", "(")
        var = self.take("name")[1]
        opts = {}
        while self.peek()[1] == ",":
            self.take("op", ",")
            key_tok = self.take("name")
            self.take("op", "=")
            vtok = self.peek()
            if vtok[0] not in ("num", "name"):
                _fail(self.text, vtok[2], "expected a value")
            self.i += 1
            if key_tok[1] in opts:
                _fail(self.text, key_tok[2], f"repeated option {key_tok[1]!r}")
            opts[key_tok[1]] = vtok
        self.take("op", ")")
        allowed = {"s": {"k", "basis"}, "tv": {"k"}, "re": {"sigma2"}}[val]
        for key, tok in opts.items():
            if key not in allowed:
                _fail(self.text, tok[2], f"option {key!r} not valid in {val}()")
        if val == "re":
            s2 = None
            if "sigma2" in opts:
                tok = opts["sigma2"]
                s2 = float(tok[1]) if tok[0] == "num" else _fail(self.text, tok[2], "sigma2 must be a number")
                if not s2 > 0:
                    _fail(self.text, tok[2], "sigma2 must be positive")
            return Term("re", var, sigma2=s2), pos
        k = DEFAULT_K
        if "k" in opts:
            tok = opts["k"]
            if tok[0] != "num" or not tok[1].isdigit():
                _fail(self.text, tok[2], "k must be an integer")
            k = int(tok[1])
            if k < 3:
                _fail(self.text, tok[2], f"k={k} too small (k >= 3 required)")
        if val == "tv":
            return Term("tve", var, k=k, basis="tp"), pos
        basis = "bs"
        if "basis" in opts:
            basis = opts["basis"][1]
            if basis not in ("bs", "tp"):
                _fail(self.text, opts["basis"][2], f"unknown basis {basis!r}")
        return Term("nle", var, k=k, basis=basis), pos


def parse_formula(text, known=None, factors=("sender", "receiver")):
    """Parse a formula string into a :class:`ModelSpec`.

    ``known`` (optional) is the set of declared statistic names; ``factors``
    lists names usable inside re().
    """
    if not text or not text.strip():
        raise FormulaError("empty formula")
    p = _Parser(text)
    terms_pos, strata = p.formula()
    seen = {}
    terms = []
    for term, pos in terms_pos:
        if term.kind == "re":
            if factors is not None and term.var not in factors:
                _fail(text, pos, f"unknown grouping factor {term.var!r}")
        elif known is not None and term.var not in known:
            _fail(text, pos, f"unknown statistic {term.var!r}")
        key = (term.kind, term.var)
        if key in seen:
            _fail(text, pos, f"duplicate term {term.label}")
        seen[key] = pos
        terms.append(term)
    return ModelSpec(terms, strata, text)
