"""Independent order checker for delivery transcripts."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence


@dataclass(frozen=True)
class OracleResult:
    violations: int
    duplicates: int
    gaps: int

    @property
    def ok(self) -> bool:
        return self.violations == 0 and self.duplicates == 0 and self.gaps == 0


def count_inversions(seq: Sequence[int]) -> int:
    """Number of pairs i < j with seq[i] > seq[j] (merge sort, O(n log n))."""
    items = list(seq)
    tmp = [0] * len(items)

    def sort(lo: int, hi: int) -> int:
        if hi - lo < 2:
            return 0
        mid = (lo + hi) // 2
        inv = sort(lo, mid) + sort(mid, hi)
        i, j, k = lo, mid, lo
        while i < mid and j < hi:
            if items[i] <= items[j]:
                tmp[k] = items[i]
                i += 1
            else:
                tmp[k] = items[j]
                inv += mid - i
                j += 1
            k += 1
        tmp[k:k + mid - i] = items[i:mid]
        k += mid - i
        tmp[k:k + hi - j] = items[j:hi]
        items[lo:hi] = tmp[lo:hi]
        return inv

    return sort(0, len(items))


def oracle_check(delivered_keys: Sequence[int], produced: Iterable[int]) -> OracleResult:
    """Compare a delivery order against the total order of the produced keys."""
    counts = Counter(delivered_keys)
    duplicates = sum(c - 1 for c in counts.values())
    gaps = sum(1 for k in set(produced) if k not in counts)
    return OracleResult(count_inversions(delivered_keys), duplicates, gaps)


def per_partition_violations(records) -> int:
    """Inversions of offset order within each partition's delivery subsequence."""
    by_partition: dict[int, list[int]] = defaultdict(list)
    for r in records:
        by_partition[r.partition].append(r.offset)
    return sum(count_inversions(offsets) for offsets in by_partition.values())


def is_contiguous_prefix(keys: Sequence[int]) -> bool:
    return list(keys) == list(range(len(keys)))
