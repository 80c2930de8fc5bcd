from __future__ import annotations

import numpy as np
from sklearn.model_selection import StratifiedKFold


class StratificationError(ValueError):
    pass


def stratified_folds(y, n_folds: int = 5, seed=0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Class-ratio preserving (train_idx, test_idx) pairs, shuffled by seed."""
    y = np.asarray(y).astype(int)
    n_pos = int(y.sum())
    if min(n_pos, y.size - n_pos) < n_folds:
        raise StratificationError(
            f"stratification failed: {min(n_pos, y.size - n_pos)} minority cases for {n_folds} folds"
        )
    skf = StratifiedKFold(n_splits=n_folds, shuffle=True, random_state=_seed_int(seed))
    folds = [(tr, te) for tr, te in skf.split(np.zeros(y.size), y)]
    for _, te in folds:
        if y[te].sum() == 0:
            raise StratificationError("stratification failed: a fold has no positive labels")
    return folds


def _seed_int(seed) -> int:
    if isinstance(seed, (int, np.integer)):
        return int(seed) % (2**32)
    return int(np.random.SeedSequence(seed).generate_state(1)[0])
