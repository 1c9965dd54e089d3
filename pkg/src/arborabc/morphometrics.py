"""Morphometrics: reduce a neuron tree to a small quantity-of-interest vector.

The four supported morphometrics:

====  =========================================  =====
id    meaning                                    unit
====  =========================================  =====
M1    number of sections                         count
M2    mean section length                        μm
M3    std of section length (population, n)      μm
M4    total dendritic length                     μm
====  =========================================  =====

A *section* is a maximal unbranched path delimited by the soma attachment,
branch points, and tips.  Chain splits introduced by the L_max discretization
do not create section boundaries.  Note M4 == M1 * M2 by construction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .growth import NeuronTree

__all__ = [
    "MORPHOMETRIC_IDS",
    "Section",
    "sections",
    "extract",
    "assemble",
    "QoIExtractor",
    "write_qoi_csv",
    "read_qoi_csv",
]

MORPHOMETRIC_IDS = ("M1", "M2", "M3", "M4")


class MorphometricsError(ValueError):
    pass


@dataclass(frozen=True)
class Section:
    """Maximal unbranched neurite path: ordered points and its arc length."""

    agent_ids: tuple[int, ...]
    points: np.ndarray  # (k+1, 3) polyline

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())


def sections(tree: NeuronTree) -> list[Section]:
    """Partition the tree into sections.

    A section starts at each root agent and at each daughter of a
    two-daughter agent, and runs through one-daughter chains until it hits a
    branch point or a tip.  Every agent belongs to exactly one section.
    """
    n = tree.n_agents
    parent = tree.parent
    ndg = tree.n_daughters
    starts = [
        i
        for i in range(n)
        if parent[i] < 0 or ndg[parent[i]] >= 2
    ]
    kids = tree.children_map()
    out: list[Section] = []
    for head in starts:
        ids = [head]
        cur = head
        while ndg[cur] == 1:
            cur = kids[cur][0]
            ids.append(cur)
        pts = np.empty((len(ids) + 1, 3))
        pts[0] = tree.start[ids[0]]
        for k, a in enumerate(ids):
            pts[k + 1] = tree.end[a]
        out.append(Section(agent_ids=tuple(ids), points=pts))
    return out


def _stats_from_lengths(lengths: np.ndarray, selection: Sequence[str]) -> np.ndarray:
    vals = {
        "M1": float(len(lengths)),
        "M2": float(lengths.mean()),
        "M3": float(lengths.std()),  # population convention (divide by n)
        "M4": float(lengths.sum()),
    }
    try:
        return np.array([vals[m] for m in selection])
    except KeyError as e:
        raise MorphometricsError(f"unknown morphometric id {e.args[0]!r}") from None


def extract(tree: NeuronTree, selection: Sequence[str] = MORPHOMETRIC_IDS) -> np.ndarray:
    """QoI vector of one tree in the order given by ``selection``."""
    if tree.n_agents == 0:
        raise MorphometricsError("cannot extract morphometrics from an empty tree")
    lengths = np.array([s.length for s in sections(tree)])
    return _stats_from_lengths(lengths, selection)


def assemble(
    trees: Iterable[NeuronTree],
    selection: Sequence[str] = MORPHOMETRIC_IDS,
) -> np.ndarray:
    """QoI matrix: one row per tree, in input order."""
    rows = []
    for idx, tree in enumerate(trees):
        try:
            rows.append(extract(tree, selection))
        except MorphometricsError as e:
            raise MorphometricsError(f"tree {idx}: {e}") from e
    if not rows:
        raise MorphometricsError("need at least one morphology")
    return np.vstack(rows)


class QoIExtractor(BaseEstimator, TransformerMixin):
    """sklearn-style transformer mapping trees to a QoI matrix.

    Stateless; ``fit`` only validates the selection.  ``transform`` accepts a
    sequence of NeuronTree and returns an (n_trees, n_selected) float array.
    """

    def __init__(self, selection: Sequence[str] = MORPHOMETRIC_IDS):
        self.selection = tuple(selection)

    def fit(self, X=None, y=None):
        bad = [m for m in self.selection if m not in MORPHOMETRIC_IDS]
        if bad:
            raise MorphometricsError(f"unknown morphometric ids: {bad}")
        if not self.selection:
            raise MorphometricsError("selection must not be empty")
        return self

    def transform(self, X: Iterable[NeuronTree]) -> np.ndarray:
        self.fit()
        return assemble(X, self.selection)

    def get_feature_names_out(self, input_features=None):
        return np.asarray(self.selection, dtype=object)


def write_qoi_csv(path: str | Path, matrix: np.ndarray, selection: Sequence[str]):
    """CSV with a header of morphometric ids; '.' decimal separator."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.shape[1] != len(selection):
        raise MorphometricsError("column count does not match selection")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(selection)
        for row in matrix:
            w.writerow([repr(float(v)) for v in row])


def read_qoi_csv(path: str | Path) -> tuple[np.ndarray, tuple[str, ...]]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if not header:
            raise MorphometricsError(f"{path}: empty QoI csv")
        rows = [[float(v) for v in row] for row in r if row]
    if not rows:
        raise MorphometricsError(f"{path}: no data rows")
    return np.array(rows, dtype=float), tuple(header)
