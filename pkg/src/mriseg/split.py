"""Stratified train/validation/test splitting and stratified downsampling of cohorts.

Strata are (diagnosis, age bin). Per-diagnosis partition sizes are the
largest-remainder rounding of ``n * ratios``; those totals are then spread
over the strata, again by largest fractional remainder, so every stratum is
cut as close to the ratios as the exact totals allow.
"""
from __future__ import annotations

import csv
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError
from .phantom import SubjectRecord, age_bin

__all__ = [
    "PARTITIONS",
    "DEFAULT_RATIOS",
    "SplitAssignment",
    "largest_remainder",
    "split_dataset",
    "downsample",
    "write_split_csv",
    "read_split_csv",
]

PARTITIONS = ("train", "val", "test")
DEFAULT_RATIOS = (0.6, 0.2, 0.2)


def largest_remainder(total: int, weights: Sequence[float]) -> np.ndarray:
    """Integers summing to ``total``, proportional to ``weights``; ties go to the earlier entry."""
    w = np.asarray(weights, dtype=float)
    quota = total * w / w.sum()
    out = np.floor(quota).astype(np.int64)
    frac = quota - out
    order = sorted(range(len(w)), key=lambda i: (-frac[i], i))
    for i in order[: total - int(out.sum())]:
        out[i] += 1
    return out


def _check_ratios(ratios) -> Tuple[float, ...]:
    r = tuple(float(x) for x in ratios)
    if len(r) != 3 or min(r) < 0 or abs(sum(r) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must be three non-negative numbers summing to 1, got {r}")
    return r


def _allocate(stratum_sizes: Sequence[int], totals: np.ndarray, ratios) -> np.ndarray:
    """``(S, P)`` counts with the given row sums (stratum sizes) and column sums (totals)."""
    sizes = np.asarray(stratum_sizes, dtype=np.int64)
    quota = sizes[:, None] * np.asarray(ratios)[None, :]
    counts = np.floor(quota).astype(np.int64)
    row_left = sizes - counts.sum(axis=1)
    col_left = totals - counts.sum(axis=0)
    frac = quota - counts
    while row_left.sum() > 0:
        # best remaining cell whose row and column both still need units
        score = np.where((row_left[:, None] > 0) & (col_left[None, :] > 0), frac, -np.inf)
        s, p = np.unravel_index(int(np.argmax(score)), score.shape)
        counts[s, p] += 1
        frac[s, p] -= 1.0
        row_left[s] -= 1
        col_left[p] -= 1
    return counts


def _strata(records: Sequence[SubjectRecord], age_bin_count: int) -> Dict[str, Dict[int, List[SubjectRecord]]]:
    groups: Dict[str, Dict[int, List[SubjectRecord]]] = defaultdict(lambda: defaultdict(list))
    for r in sorted(records, key=lambda r: r.subject_id):
        groups[r.diagnosis][age_bin(r.age, age_bin_count)].append(r)
    return groups


@dataclass
class SplitAssignment:
    partition: Dict[str, str]  # subject_id -> train / val / test
    diagnosis: Dict[str, str]

    def members(self, name: str) -> List[str]:
        return sorted(s for s, p in self.partition.items() if p == name)

    def counts(self) -> Dict[str, Dict[str, int]]:
        """``{partition: {"total": n, "AD": n_ad, "CN": n_cn}}``."""
        out = {p: {"total": 0, "AD": 0, "CN": 0} for p in PARTITIONS}
        for sid, p in self.partition.items():
            out[p]["total"] += 1
            out[p][self.diagnosis[sid]] += 1
        return out


def split_dataset(records: Sequence[SubjectRecord], ratios=DEFAULT_RATIOS, age_bin_count: int = 5,
                  seed: int = 0) -> SplitAssignment:
    """Assign each subject to train/val/test, stratified by diagnosis and age bin.

    Within a stratum, subjects (sorted by id) are shuffled with ``seed`` and
    cut in partition order. Empty strata contribute nothing.
    """
    if not records:
        raise ValueError("records must be nonempty")
    ratios = _check_ratios(ratios)
    if age_bin_count < 1:
        raise ConfigError("age_bin_count must be >= 1")
    ids = [r.subject_id for r in records]
    if len(set(ids)) != len(ids):
        raise ValueError("subject ids must be unique")
    rng = np.random.default_rng(seed)
    partition: Dict[str, str] = {}
    groups = _strata(records, age_bin_count)
    for diagnosis in sorted(groups):
        bins = sorted(groups[diagnosis])
        members = [groups[diagnosis][b] for b in bins]
        sizes = [len(m) for m in members]
        totals = largest_remainder(sum(sizes), ratios)
        alloc = _allocate(sizes, totals, ratios)
        for group, row in zip(members, alloc):
            order = rng.permutation(len(group))
            cuts = np.cumsum(row)[:-1]
            for name, chunk in zip(PARTITIONS, np.split(order, cuts)):
                for j in chunk:
                    partition[group[j].subject_id] = name
    return SplitAssignment(partition, {r.subject_id: r.diagnosis for r in records})


def downsample(records: Sequence[SubjectRecord], target: int, diagnosis: Optional[str] = None,
               age_bin_count: int = 5, seed: int = 0) -> List[SubjectRecord]:
    """Keep ``target`` subjects, drawn at random in proportion to the age-bin strata.

    With ``diagnosis`` set, only that group shrinks to ``target`` and the rest
    are kept; otherwise strata span both diagnoses. The result is in the
    input order.
    """
    pool = [r for r in records if diagnosis is None or r.diagnosis == diagnosis]
    if not 0 <= target <= len(pool):
        raise ValueError(f"target {target} outside [0, {len(pool)}]")
    strata: Dict[tuple, List[SubjectRecord]] = defaultdict(list)
    for r in sorted(pool, key=lambda r: r.subject_id):
        strata[(r.diagnosis, age_bin(r.age, age_bin_count))].append(r)
    keys = sorted(strata)
    keep_n = largest_remainder(target, [len(strata[k]) for k in keys]) if keys else []
    rng = np.random.default_rng(seed)
    kept = set()
    for k, n in zip(keys, keep_n):
        group = strata[k]
        for j in rng.choice(len(group), size=int(n), replace=False):
            kept.add(group[j].subject_id)
    return [r for r in records if (diagnosis is not None and r.diagnosis != diagnosis) or r.subject_id in kept]


def write_split_csv(assignment: SplitAssignment, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id", "partition"])
        for sid in sorted(assignment.partition):
            w.writerow([sid, assignment.partition[sid]])


def read_split_csv(path) -> Dict[str, str]:
    with open(path, newline="") as fh:
        return {row["subject_id"]: row["partition"] for row in csv.DictReader(fh)}


def stratum_counts(records: Sequence[SubjectRecord], age_bin_count: int = 5) -> Counter:
    return Counter((r.diagnosis, age_bin(r.age, age_bin_count)) for r in records)
