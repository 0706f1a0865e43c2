"""Participant-grouped fold splitting with label-coverage rejection sampling."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleSplit

MAX_ATTEMPTS = 10_000


@dataclass(frozen=True)
class FoldSplit:
    """k disjoint participant groups; every group's windows carry all five labels."""

    groups: tuple
    seed: int

    def __post_init__(self):
        flat = [p for g in self.groups for p in g]
        if len(flat) != len(set(flat)):
            raise ValueError("fold groups must be disjoint")

    @property
    def k(self) -> int:
        return len(self.groups)

    def participants(self):
        return sorted(p for g in self.groups for p in g)


def make_folds(corpus_or_windows, k: int = 4, seed: int = 0,
               max_attempts: int = MAX_ATTEMPTS) -> FoldSplit:
    """Seeded randomized partition of participants into k groups, resampled
    until every group's windows cover labels 1..5.

    Deterministic for a fixed (corpus, seed): participants are canonically
    sorted before shuffling, so corpus file order cannot change the split.
    Raises InfeasibleSplit when no covering partition appears within
    ``max_attempts`` draws, or when the corpus itself lacks a label.
    """
    windows = getattr(corpus_or_windows, "windows", corpus_or_windows)
    labels_by_participant = {}
    for w in windows:
        labels_by_participant.setdefault(w.participant_id, set()).add(w.label)
    participants = sorted(labels_by_participant)
    if len(participants) < k:
        raise InfeasibleSplit(f"{len(participants)} participants < k={k}")
    corpus_labels = set().union(*labels_by_participant.values())
    missing = {1, 2, 3, 4, 5} - corpus_labels
    if missing:
        raise InfeasibleSplit(f"corpus lacks labels {sorted(missing)}")

    rng = np.random.default_rng(seed)
    n = len(participants)
    bounds = np.linspace(0, n, k + 1).astype(int)
    for _ in range(max_attempts):
        perm = rng.permutation(n)
        groups = tuple(
            tuple(participants[i] for i in perm[bounds[g]:bounds[g + 1]])
            for g in range(k)
        )
        ok = all(
            set().union(*(labels_by_participant[p] for p in group)) >= {1, 2, 3, 4, 5}
            for group in groups
        )
        if ok:
            return FoldSplit(groups=groups, seed=seed)
    raise InfeasibleSplit(
        f"no label-covering {k}-fold partition found in {max_attempts} attempts"
    )


def save_folds(path, split: FoldSplit) -> None:
    payload = {"seed": split.seed, "k": split.k,
               "folds": [list(g) for g in split.groups]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, separators=(",", ":"))
        fh.write("\n")


def load_folds(path) -> FoldSplit:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return FoldSplit(groups=tuple(tuple(g) for g in payload["folds"]),
                     seed=int(payload["seed"]))
