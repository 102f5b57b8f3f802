"""Feature schemas and the linear-inequality constraint language.

A constraint file holds one constraint per line::

    # comments start with '#'
    amount_avg - amount_max <= 0
    if x1 >= 1 then x2 - x1 >= 0 and x3 >= 0

Every inequality is stored in canonical form ``sum_k w_k * x_k + b >= 0``
(``> 0`` when strict).
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Union

import numpy as np

logger = logging.getLogger(__name__)

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"


class SchemaError(ValueError):
    pass


class ConstraintError(ValueError):
    """Raised for constraint files that do not parse or do not fit the schema."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.message = message
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" at line {line}" + (f", column {column}" if column is not None else "")
        super().__init__(message + where)


class ConstraintSyntaxError(ConstraintError):
    pass


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str
    lower: float | None = None
    upper: float | None = None
    categories: tuple[str, ...] = ()
    mutable: bool = True

    @property
    def is_continuous(self) -> bool:
        return self.kind == CONTINUOUS


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[Feature, ...]

    def __post_init__(self):
        seen = set()
        for f in self.features:
            if not f.name or not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", f.name):
                raise SchemaError(f"invalid feature name {f.name!r}")
            if f.name in seen:
                raise SchemaError(f"duplicate feature name {f.name!r}")
            seen.add(f.name)
            if f.kind == CONTINUOUS:
                if f.lower is None or f.upper is None or not f.lower <= f.upper:
                    raise SchemaError(f"continuous feature {f.name!r} needs min <= max")
            elif f.kind == CATEGORICAL:
                if len(set(f.categories)) < 2 or len(set(f.categories)) != len(f.categories):
                    raise SchemaError(f"categorical feature {f.name!r} needs >= 2 distinct categories")
            else:
                raise SchemaError(f"feature {f.name!r} has unknown kind {f.kind!r}")
        if not self.features:
            raise SchemaError("schema has no features")

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def continuous(self) -> list[str]:
        return [f.name for f in self.features if f.is_continuous]

    def __getitem__(self, name: str) -> Feature:
        for f in self.features:
            if f.name == name:
                return f
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(f.name == name for f in self.features)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def to_dict(self) -> dict:
        out = []
        for f in self.features:
            d = {"name": f.name, "kind": f.kind}
            if f.is_continuous:
                d["min"], d["max"] = f.lower, f.upper
            else:
                d["categories"] = list(f.categories)
            d["mutable"] = f.mutable
            out.append(d)
        return {"features": out}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "FeatureSchema":
        try:
            feats = []
            for d in doc["features"]:
                kind = d["kind"]
                if kind == CONTINUOUS:
                    feats.append(Feature(d["name"], kind, float(d["min"]), float(d["max"]), mutable=bool(d.get("mutable", True))))
                else:
                    feats.append(Feature(d["name"], kind, categories=tuple(str(c) for c in d["categories"]), mutable=bool(d.get("mutable", True))))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema document: {exc}") from None
        return cls(tuple(feats))

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def load_schema(path) -> FeatureSchema:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"schema {path} is not valid JSON: {exc}") from None
    return FeatureSchema.from_dict(doc)


def save_schema(schema: FeatureSchema, path) -> None:
    Path(path).write_text(json.dumps(schema.to_dict(), indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class LinearConstraint:
    terms: tuple[tuple[str, float], ...]
    bias: float
    strict: bool = False
    id: str = field(default="", compare=False)
    line: int | None = field(default=None, compare=False)

    def __post_init__(self):
        if not any(w != 0 for _, w in self.terms):
            raise ConstraintError("constraint needs at least one nonzero coefficient", self.line)

    @property
    def coefficients(self) -> dict[str, float]:
        return dict(self.terms)

    @property
    def features(self) -> list[str]:
        return [name for name, _ in self.terms]

    def slack(self, record: Mapping[str, float]) -> float:
        total = 0.0
        for name, w in self.terms:
            try:
                total += w * record[name]
            except KeyError:
                raise KeyError(f"record has no value for feature {name!r}") from None
        return total + self.bias


@dataclass(frozen=True)
class ConditionalConstraint:
    antecedent: tuple[LinearConstraint, ...]
    consequent: tuple[LinearConstraint, ...]
    id: str = field(default="", compare=False)
    line: int | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.antecedent or not self.consequent:
            raise ConstraintError("conditional needs a non-empty antecedent and consequent", self.line)

    @property
    def features(self) -> list[str]:
        out: list[str] = []
        for c in self.antecedent + self.consequent:
            out.extend(n for n in c.features if n not in out)
        return out


Constraint = Union[LinearConstraint, ConditionalConstraint]


@dataclass(frozen=True)
class ConstraintSet:
    linear: tuple[LinearConstraint, ...]
    conditional: tuple[ConditionalConstraint, ...]
    schema: FeatureSchema
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if not self.linear and not self.conditional:
            raise ConstraintError("empty constraint set")
        for c in self.all():
            for name in _features_of(c):
                if name not in self.schema:
                    raise ConstraintError(f"unknown feature '{name}'", c.line)
                if not self.schema[name].is_continuous:
                    raise ConstraintError(f"categorical feature '{name}' cannot appear in a constraint", c.line)

    def all(self) -> list[Constraint]:
        """Constraints in file order."""
        items: list[Constraint] = [*self.linear, *self.conditional]
        return sorted(items, key=lambda c: (c.line if c.line is not None else 0, _id_key(c.id)))

    def __len__(self) -> int:
        return len(self.linear) + len(self.conditional)

    @property
    def features(self) -> list[str]:
        """Constrained features, in schema order."""
        used = {n for c in self.all() for n in _features_of(c)}
        return [n for n in self.schema.names if n in used]

    def by_id(self, cid: str) -> Constraint:
        for c in self.all():
            if c.id == cid:
                return c
        raise KeyError(cid)

    def fingerprint(self) -> str:
        text = "\n".join(render(c) for c in self.all())
        return hashlib.sha256((self.schema.fingerprint() + "\n" + text).encode()).hexdigest()


def _id_key(cid: str):
    digits = "".join(ch for ch in cid if ch.isdigit())
    return int(digits) if digits else 0


def _features_of(c: Constraint) -> list[str]:
    return c.features


# --- parsing -----------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>>=|<=|>|<|\+|-|\*)
    """,
    re.VERBOSE,
)
_KEYWORDS = {"if", "then", "and"}


@dataclass
class _Token:
    kind: str
    text: str
    col: int


def _tokenize(text: str, line: int) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ConstraintSyntaxError(f"unexpected character {text[pos]!r}", line, pos + 1)
        kind = m.lastgroup
        if kind != "ws":
            value = m.group()
            if kind == "ident" and value in _KEYWORDS:
                kind = value
            tokens.append(_Token(kind, value, pos + 1))
        pos = m.end()
    tokens.append(_Token("end", "", len(text) + 1))
    return tokens


class _LineParser:
    def __init__(self, text: str, line: int, schema: FeatureSchema):
        self.tokens = _tokenize(text, line)
        self.i = 0
        self.line = line
        self.schema = schema

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def take(self, kind: str | None = None, text: str | None = None) -> _Token:
        tok = self.peek()
        if (kind is not None and tok.kind != kind) or (text is not None and tok.text != text):
            want = text or kind
            got = tok.text or "end of line"
            raise ConstraintSyntaxError(f"expected {want}, found {got!r}", self.line, tok.col)
        self.i += 1
        return tok

    def constraint(self, cid: str) -> Constraint:
        if self.peek().kind == "if":
            self.take("if")
            antecedent = self.conj()
            self.take("then")
            consequent = self.conj()
            self.take("end")
            return ConditionalConstraint(tuple(antecedent), tuple(consequent), id=cid, line=self.line)
        c = self.linear()
        self.take("end")
        return LinearConstraint(c.terms, c.bias, c.strict, id=cid, line=self.line)

    def conj(self) -> list[LinearConstraint]:
        parts = [self.linear()]
        while self.peek().kind == "and":
            self.take("and")
            parts.append(self.linear())
        return parts

    def linear(self) -> LinearConstraint:
        start = self.peek()
        left = self.expr()
        tok = self.peek()
        if tok.text not in (">=", "<=", ">", "<"):
            raise ConstraintSyntaxError(f"expected comparison, found {tok.text or 'end of line'!r}", self.line, tok.col)
        self.take()
        right = self.expr()
        coeffs: dict[str, float] = {}
        # canonical orientation: (greater side) - (smaller side) >= 0
        for name, w in left[0].items():
            coeffs[name] = coeffs.get(name, 0.0) + w
        for name, w in right[0].items():
            coeffs[name] = coeffs.get(name, 0.0) - w
        bias = left[1] - right[1]
        if tok.text in ("<=", "<"):
            coeffs = {n: -w for n, w in coeffs.items()}
            bias = -bias
        terms = tuple((n, coeffs[n]) for n in self.schema_order(coeffs) if coeffs[n] != 0)
        if not terms:
            raise ConstraintError("constraint needs at least one nonzero coefficient", self.line, start.col)
        return LinearConstraint(terms, float(bias) + 0.0, tok.text in (">", "<"), line=self.line)

    def schema_order(self, coeffs) -> list[str]:
        names = [n for n in self.schema.names if n in coeffs]
        return names + sorted(n for n in coeffs if n not in self.schema)

    def expr(self) -> tuple[dict[str, float], float]:
        coeffs: dict[str, float] = {}
        const = 0.0
        sign = 1.0
        if self.peek().text in ("-", "+"):
            sign = -1.0 if self.take().text == "-" else 1.0
        while True:
            name, value = self.term()
            if name is None:
                const += sign * value
            else:
                coeffs[name] = coeffs.get(name, 0.0) + sign * value
            if self.peek().text in ("+", "-"):
                sign = -1.0 if self.take().text == "-" else 1.0
            else:
                return coeffs, const

    def term(self) -> tuple[str | None, float]:
        tok = self.peek()
        if tok.kind == "num":
            self.take()
            value = float(tok.text)
            if self.peek().text == "*":
                self.take()
                return self.identifier(), value
            return None, value
        if tok.kind == "ident":
            return self.identifier(), 1.0
        raise ConstraintSyntaxError(f"expected a number or feature name, found {tok.text or 'end of line'!r}", self.line, tok.col)

    def identifier(self) -> str:
        tok = self.take("ident")
        if tok.text not in self.schema:
            raise ConstraintError(f"unknown feature '{tok.text}'", self.line, tok.col)
        if not self.schema[tok.text].is_continuous:
            raise ConstraintError(f"categorical feature '{tok.text}' cannot appear in a constraint", self.line, tok.col)
        return tok.text


def parse_constraints(text: str, schema: FeatureSchema) -> ConstraintSet:
    """Parse constraint-file contents into a canonical :class:`ConstraintSet`.

    Constraint ids are ``c1, c2, ...`` in file order. Duplicates are kept and
    reported through ``ConstraintSet.warnings``.
    """
    linear: list[LinearConstraint] = []
    conditional: list[ConditionalConstraint] = []
    count = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        if not body.strip():
            continue
        count += 1
        c = _LineParser(body, lineno, schema).constraint(f"c{count}")
        (conditional if isinstance(c, ConditionalConstraint) else linear).append(c)
    if count == 0:
        raise ConstraintError("empty constraint set")
    warnings = []
    seen: dict = {}
    for c in sorted([*linear, *conditional], key=lambda c: c.line):
        if c in seen:
            msg = f"duplicate constraint {c.id} (line {c.line}) repeats {seen[c].id}"
            logger.warning(msg)
            warnings.append(msg)
        else:
            seen[c] = c
    return ConstraintSet(tuple(linear), tuple(conditional), schema, tuple(warnings))


def load_constraints(path, schema: FeatureSchema) -> ConstraintSet:
    return parse_constraints(Path(path).read_text(encoding="utf-8"), schema)


# --- rendering -----------------------------------------------------------------

def _num(x: float) -> str:
    return np.format_float_positional(x, unique=True, trim="-")


def render_linear(c: LinearConstraint) -> str:
    parts = []
    for name, w in c.terms:
        mag = abs(w)
        term = name if mag == 1 else f"{_num(mag)}*{name}"
        if not parts:
            parts.append(term if w > 0 else f"-{term}")
        else:
            parts.append(("+ " if w > 0 else "- ") + term)
    if c.bias != 0:
        parts.append(("+ " if c.bias > 0 else "- ") + _num(abs(c.bias)))
    return " ".join(parts) + (" > 0" if c.strict else " >= 0")


def render(c: Constraint) -> str:
    if isinstance(c, LinearConstraint):
        return render_linear(c)
    ante = " and ".join(render_linear(a) for a in c.antecedent)
    cons = " and ".join(render_linear(a) for a in c.consequent)
    return f"if {ante} then {cons}"


def render_set(cset: ConstraintSet) -> str:
    return "\n".join(render(c) for c in cset.all()) + "\n"


# --- evaluation ----------------------------------------------------------------

def _linear_holds(c: LinearConstraint, slack: float) -> bool:
    return slack > 0 if c.strict else slack >= 0


def evaluate(c: Constraint, record: Mapping[str, float]) -> tuple[bool, float]:
    """Return ``(satisfied, slack)``.

    Conditionals whose antecedent is false are vacuously satisfied with slack
    ``+inf``; otherwise the slack is the smallest consequent slack.
    """
    if isinstance(c, LinearConstraint):
        s = c.slack(record)
        return _linear_holds(c, s), s
    for a in c.antecedent:
        if not _linear_holds(a, a.slack(record)):
            return True, math.inf
    slacks = [(k, k.slack(record)) for k in c.consequent]
    return all(_linear_holds(k, s) for k, s in slacks), min(s for _, s in slacks)


def satisfies(c: Constraint, record: Mapping[str, float], tol: float = 1e-6) -> bool:
    """Tolerant check used for violation rates: strict constraints count as non-strict."""
    _, s = evaluate(c, record)
    return s >= -tol


def satisfies_all(cset: ConstraintSet, record: Mapping[str, float], tol: float = 1e-6) -> bool:
    return all(satisfies(c, record, tol) for c in cset.all())


def slack_array(c: Constraint, columns: Mapping[str, np.ndarray]) -> np.ndarray:
    """Vectorised slack of ``c`` over column arrays (``+inf`` where a conditional is vacuous)."""

    def lin(k: LinearConstraint) -> np.ndarray:
        total = 0.0
        for name, w in k.terms:
            total = total + w * np.asarray(columns[name], dtype=np.float64)
        return total + k.bias

    if isinstance(c, LinearConstraint):
        return np.asarray(lin(c), dtype=np.float64)
    active = None
    for a in c.antecedent:
        s = lin(a)
        holds = s > 0 if a.strict else s >= 0
        active = holds if active is None else active & holds
    cons = np.min(np.stack([lin(k) for k in c.consequent]), axis=0)
    return np.where(active, cons, np.inf)


def violation_mask(cset: ConstraintSet, columns: Mapping[str, np.ndarray], tol: float = 1e-6) -> np.ndarray:
    """Rows (of the column arrays) violating at least one constraint by more than ``tol``."""
    mask = None
    for c in cset.all():
        bad = slack_array(c, columns) < -tol
        mask = bad if mask is None else mask | bad
    return mask


# --- statistics ----------------------------------------------------------------

@dataclass(frozen=True)
class ConstraintStats:
    count: int
    features_in_constraints: int
    total_features: int
    avg_features_per_constraint: float
    avg_positive: float
    avg_negative: float

    HEADER = ("# Constr.", "F / D", "Avg. F_phi", "Avg. F_phi^+", "Avg. F_phi^-")

    def row(self) -> tuple[str, ...]:
        return (
            str(self.count),
            f"{self.features_in_constraints} / {self.total_features}",
            f"{self.avg_features_per_constraint:.2f}",
            f"{self.avg_positive:.2f}",
            f"{self.avg_negative:.2f}",
        )

    def to_markdown(self, dataset: str = "") -> str:
        head = ("Dataset",) + self.HEADER
        row = (dataset,) + self.row()
        lines = ["| " + " | ".join(head) + " |", "|" + "|".join("---" for _ in head) + "|", "| " + " | ".join(row) + " |"]
        return "\n".join(lines) + "\n"


def _signed_counts(c: Constraint) -> tuple[int, int]:
    parts = [c] if isinstance(c, LinearConstraint) else [*c.antecedent, *c.consequent]
    pos, neg = set(), set()
    for p in parts:
        for name, w in p.terms:
            (pos if w > 0 else neg).add(name)
    return len(pos), len(neg)


def constraint_stats(cset: ConstraintSet) -> ConstraintStats:
    counts = [_signed_counts(c) for c in cset.all()]
    n = len(counts)
    pos = [p for p, _ in counts]
    neg = [q for _, q in counts]
    avg_pos, avg_neg = sum(pos) / n, sum(neg) / n
    return ConstraintStats(
        count=n,
        features_in_constraints=len(cset.features),
        total_features=len(cset.schema.features),
        avg_features_per_constraint=avg_pos + avg_neg,
        avg_positive=avg_pos,
        avg_negative=avg_neg,
    )
