"""Data-splitting strategies for the four classification schemes.

Every scheme maps raw window labels {0..3} to class indices (or drops
the window) and then assigns the surviving windows to disjoint train,
validation, and test sets:

* ``error_detection``: binary NoError vs AnyError.
* ``multiple_error_detection``: four classes, identity relabeling.
* ``first_to_successive``: binary, but the training pool contains only
  Error1 windows plus an equal-size random subset of NoError windows;
  the test set is the remaining NoError windows plus every Error2 and
  Error3 window, so the model is scored on generalization from first
  errors to successive ones.  Error1 windows never reach the test set.
* ``successive_discrimination``: three classes over Error1/2/3 only.

Schemes other than first_to_successive use a seeded shuffle with the
last 20% as test and 10% of the remaining pool as validation.  Sizes
use round-half-up; shortfalls land in train.
"""

from __future__ import annotations

from dataclasses import dataclass

from .rng import SplitMix64, derive_seed

SCHEMES = (
    "error_detection",
    "multiple_error_detection",
    "first_to_successive",
    "successive_discrimination",
)

NUM_CLASSES = {
    "error_detection": 2,
    "multiple_error_detection": 4,
    "first_to_successive": 2,
    "successive_discrimination": 3,
}


class SplitError(ValueError):
    """A scheme's membership rules cannot be satisfied on these windows."""


def relabel(raw_label: int, scheme: str) -> int | None:
    """Map a raw window label to the scheme's class index; None = excluded."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if raw_label not in (0, 1, 2, 3):
        raise ValueError(f"raw label must be in 0..3, got {raw_label}")
    if scheme in ("error_detection", "first_to_successive"):
        return 0 if raw_label == 0 else 1
    if scheme == "multiple_error_detection":
        return raw_label
    return None if raw_label == 0 else raw_label - 1


def _round_half_up_fraction(count: int, tenths: int) -> int:
    # round(tenths/10 * count) with half-up rounding, in exact integers
    return (tenths * count + 5) // 10


@dataclass(frozen=True)
class SplitPlan:
    """Index-level description of one train/val/test partition.

    Index tuples are sorted; training order is a later, separately
    seeded concern.  ``class_of`` covers exactly the included indices.
    """

    scheme: str
    seed: int
    num_classes: int
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]
    class_of: dict[int, int]

    def classes_in(self, indices: tuple[int, ...]) -> list[int]:
        return [self.class_of[i] for i in indices]


def _raw_labels(windows) -> list[int]:
    labels = []
    for w in windows:
        raw = int(getattr(w, "raw_label", w))
        if raw not in (0, 1, 2, 3):
            raise ValueError(f"raw label must be in 0..3, got {raw}")
        labels.append(raw)
    return labels


def _standard_split(labels: list[int], scheme: str, seed: int) -> SplitPlan:
    k = NUM_CLASSES[scheme]
    class_of = {}
    for i, raw in enumerate(labels):
        c = relabel(raw, scheme)
        if c is not None:
            class_of[i] = c
    missing = sorted(set(range(k)) - set(class_of.values()))
    if missing:
        raise SplitError(f"insufficient classes for {scheme}: missing {missing}")
    stream = SplitMix64(derive_seed(seed, "split", scheme))
    order = stream.shuffled(sorted(class_of))
    n = len(order)
    n_test = _round_half_up_fraction(n, 2)
    pool = order[: n - n_test]
    n_val = _round_half_up_fraction(len(pool), 1)
    return SplitPlan(
        scheme=scheme,
        seed=seed,
        num_classes=k,
        train=tuple(sorted(pool[: len(pool) - n_val])),
        val=tuple(sorted(pool[len(pool) - n_val :])),
        test=tuple(sorted(order[n - n_test :])),
        class_of=class_of,
    )


def _first_to_successive_split(labels: list[int], seed: int) -> SplitPlan:
    scheme = "first_to_successive"
    no_error = [i for i, raw in enumerate(labels) if raw == 0]
    first = [i for i, raw in enumerate(labels) if raw == 1]
    successive = [i for i, raw in enumerate(labels) if raw in (2, 3)]
    if not first:
        raise SplitError("insufficient classes for first_to_successive: no Error1 windows")
    if not successive:
        raise SplitError(
            "insufficient classes for first_to_successive: no Error2/Error3 windows"
        )
    if len(no_error) < len(first):
        raise SplitError(
            "unsatisfiable downsampling: "
            f"{len(no_error)} NoError windows < {len(first)} Error1 windows"
        )
    stream = SplitMix64(derive_seed(seed, "split", scheme))
    shuffled_no_error = stream.shuffled(no_error)
    sampled = shuffled_no_error[: len(first)]
    leftover = shuffled_no_error[len(first) :]
    shuffled_first = stream.shuffled(first)
    # balanced pool by construction: |sampled| = |first|
    n_val = _round_half_up_fraction(len(sampled) + len(shuffled_first), 1)
    per_class, extra = divmod(n_val, 2)
    n_val0 = per_class + extra  # remainder to the larger class; tie goes to class 0
    n_val1 = per_class
    train = sampled[: len(sampled) - n_val0] + shuffled_first[: len(shuffled_first) - n_val1]
    val = sampled[len(sampled) - n_val0 :] + shuffled_first[len(shuffled_first) - n_val1 :]
    class_of = {i: 0 for i in no_error}
    class_of.update({i: 1 for i in first})
    class_of.update({i: 1 for i in successive})
    return SplitPlan(
        scheme=scheme,
        seed=seed,
        num_classes=2,
        train=tuple(sorted(train)),
        val=tuple(sorted(val)),
        test=tuple(sorted(leftover + successive)),
        class_of=class_of,
    )


def split(windows, scheme: str, seed: int) -> SplitPlan:
    """Partition labeled windows (or bare raw labels) under a scheme.

    Raises SplitError when a scheme's required classes are missing or
    first_to_successive cannot downsample NoError to match Error1.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    labels = _raw_labels(windows)
    if scheme == "first_to_successive":
        return _first_to_successive_split(labels, seed)
    return _standard_split(labels, scheme, seed)
