"""Family-stratified train/test splitting."""

from __future__ import annotations

from collections import defaultdict

from reaction_forge.data.types import InteractionPair
from reaction_forge.errors import ConfigError
from reaction_forge.rng import substream


def split(corpus: list[InteractionPair], ratio: float, seed: int
          ) -> tuple[list[InteractionPair], list[InteractionPair]]:
    """Disjoint, exhaustive train/test split; the train side takes
    floor(ratio * n) of every family."""
    if not (0.0 < ratio < 1.0):
        raise ConfigError(f"split ratio must be in (0, 1), got {ratio}")
    by_family: dict[int, list[int]] = defaultdict(list)
    for i, pair in enumerate(corpus):
        by_family[pair.family].append(i)

    train_idx: list[int] = []
    test_idx: list[int] = []
    for fam in sorted(by_family):
        idx = by_family[fam]
        rng = substream(seed, "split", str(fam))
        perm = rng.permutation(len(idx))
        n_train = int(ratio * len(idx))
        train_idx.extend(idx[j] for j in perm[:n_train])
        test_idx.extend(idx[j] for j in perm[n_train:])
    train_idx.sort()
    test_idx.sort()
    return [corpus[i] for i in train_idx], [corpus[i] for i in test_idx]
