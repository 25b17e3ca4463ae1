"""Bundled data fixtures.

``rb_table1.csv`` holds per-family outcome counts for retinoblastoma
mutation carriers (46 individuals across five families), expanded to one row
per carrier; ``rb_table1_poo.csv`` is the separate cross-tabulation of
outcome by parental origin.  These are published marginal summaries: the
joint (family x parental origin x outcome) data they came from is not
available, so joint-model fits cannot be reproduced from them.
"""

from importlib import resources


def table1_path() -> str:
    """Filesystem path of the carrier outcome fixture."""
    return str(resources.files(__package__) / "rb_table1.csv")


def table1_poo_path() -> str:
    """Filesystem path of the parental-origin cross-tabulation."""
    return str(resources.files(__package__) / "rb_table1_poo.csv")
