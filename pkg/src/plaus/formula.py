"""Additive model formulas: ``outcome ~ term (+ term)*``.

Terms are column/term names from the dataset, ``1`` (intercept only) or ``.``
(every non-reserved covariate term).  Factor terms resolve to their indicator
column blocks.  Interactions are not supported; every model keeps an
intercept.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DataError
from .model import RESERVED_COLUMNS, Dataset


@dataclass(frozen=True)
class Formula:
    outcome: str
    terms: tuple[str, ...]

    def resolve(self, data: Dataset) -> tuple[int, ...]:
        """Map terms to design column indices (intercept first)."""
        available = dict(data.terms)
        names: list[str] = []
        for term in self.terms:
            if term == "1":
                continue
            if term == ".":
                names.extend(
                    t for t in available
                    if t != "1" and t not in RESERVED_COLUMNS
                )
                continue
            if term not in available:
                known = ", ".join(t for t in available if t != "1")
                raise DataError(
                    f"unknown term {term!r}; available terms: {known or '(none)'}"
                )
            names.append(term)
        seen = set()
        cols: list[int] = list(available.get("1", (0,)))
        for name in names:
            if name in seen:
                continue
            seen.add(name)
            cols.extend(available[name])
        return tuple(cols)


def parse_formula(text: str) -> Formula:
    """Parse ``outcome ~ term (+ term)*`` into a :class:`Formula`."""
    if "~" not in text:
        raise DataError(f"formula {text!r} must contain '~'")
    left, _, right = text.partition("~")
    outcome = left.strip()
    if not outcome:
        raise DataError(f"formula {text!r} has no outcome")
    terms = [t.strip() for t in right.split("+")]
    if any(not t for t in terms):
        raise DataError(f"formula {text!r} has an empty term")
    seen = set()
    for t in terms:
        if t in seen:
            raise DataError(f"duplicate term {t!r} in formula {text!r}")
        seen.add(t)
    return Formula(outcome=outcome, terms=tuple(terms))


def formula_columns(data: Dataset, text: str) -> tuple[int, ...]:
    return parse_formula(text).resolve(data)
