"""Admission-level in-bag plans shared by all trees of a forest.

Sampling is by whole admission, bootstrap (with replacement) or subsample
(without). Raw in-bags differ in row count, so every in-bag is trimmed,
uniformly at random, to the minimum size across trees; trimmed rows fall
out-of-bag for that tree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError

SAMPLE_MODES = ("bootstrap", "subsample")


@dataclass
class InBagPlan:
    minsize: int
    mode: str
    tree_rows: list[np.ndarray]        # trimmed in-bag row indices, repeats allowed
    tree_admissions: list[np.ndarray]  # sorted unique sampled admission codes
    adm_codes: np.ndarray              # row index -> admission code
    n_admissions: int

    @property
    def n_trees(self) -> int:
        return len(self.tree_rows)

    def oob_rows(self, t: int) -> np.ndarray:
        """Rows absent from tree t's in-bag multiset (includes trimmed rows)."""
        mask = np.ones(self.adm_codes.size, dtype=bool)
        mask[self.tree_rows[t]] = False
        return np.flatnonzero(mask)

    def admission_oob_mask(self, t: int) -> np.ndarray:
        """True where the row's admission was never sampled by tree t."""
        return ~np.isin(self.adm_codes, self.tree_admissions[t])


def plan_inbags(
    admission_id: np.ndarray,
    mode: str,
    n_trees: int,
    seed,
    subsample_fraction: float | None = None,
) -> InBagPlan:
    if mode not in SAMPLE_MODES:
        raise InvalidInputError(f"unknown sample mode {mode!r}")
    if n_trees < 1:
        raise InvalidInputError("n_trees must be at least 1")
    admission_id = np.asarray(admission_id)
    if admission_id.size == 0:
        raise InvalidInputError("no rows to sample")
    _, codes = np.unique(admission_id.astype(str), return_inverse=True)
    n_adm = int(codes.max()) + 1
    if mode == "subsample":
        if subsample_fraction is None or not (0.0 < subsample_fraction <= 1.0):
            raise InvalidInputError("subsample mode needs a fraction in (0, 1]")
        n_draw = int(math.floor(subsample_fraction * n_adm + 0.5))
        if n_draw < 1:
            raise InvalidInputError("subsample_fraction selects zero admissions")
    else:
        n_draw = n_adm

    # rows grouped by admission code so multiplicities expand in O(n)
    by_code_order = np.argsort(codes, kind="stable")
    codes_sorted = codes[by_code_order]

    ss = np.random.SeedSequence(seed) if not isinstance(seed, np.random.SeedSequence) else seed
    rngs = [np.random.Generator(np.random.PCG64(child)) for child in ss.spawn(n_trees)]

    raw_rows: list[np.ndarray] = []
    tree_admissions: list[np.ndarray] = []
    for rng in rngs:
        if mode == "bootstrap":
            sampled = rng.integers(0, n_adm, size=n_draw)
        else:
            sampled = rng.choice(n_adm, size=n_draw, replace=False)
        counts = np.bincount(sampled, minlength=n_adm)
        raw_rows.append(np.repeat(by_code_order, counts[codes_sorted]))
        tree_admissions.append(np.unique(sampled))

    minsize = min(rows.size for rows in raw_rows)
    tree_rows = []
    for rng, rows in zip(rngs, raw_rows):
        if rows.size > minsize:
            keep = rng.choice(rows.size, size=minsize, replace=False)
            keep.sort()
            rows = rows[keep]
        tree_rows.append(rows)

    return InBagPlan(minsize, mode, tree_rows, tree_admissions, codes, n_adm)
