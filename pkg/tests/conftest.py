import numpy as np
import pytest

from gclr.core import Dataset, Entity


def make_dataset(I=6, J=3, L=8, K=2, n=1, seed=0, noise=0.1, betas=None,
                 labels=None):
    """Small dense random instance for unit tests.

    ``betas`` (K, J) plus ``labels`` plants a ground-truth structure;
    otherwise every entity gets its own random coefficient vector.
    """
    rng = np.random.default_rng(seed)
    entities = []
    for i in range(I):
        X = rng.normal(size=(L, J))
        if betas is not None:
            beta = np.asarray(betas)[labels[i] if labels is not None else i % len(betas)]
        else:
            beta = rng.normal(size=J)
        y = X @ beta + noise * rng.normal(size=L)
        entities.append(Entity(id=f"e{i}", y=y, X=X, weeks=np.arange(1, L + 1)))
    return Dataset(entities=entities, J=J, n=n, K=K)


@pytest.fixture
def small_dataset():
    return make_dataset(I=6, J=3, L=8, K=2, n=1, seed=42)
