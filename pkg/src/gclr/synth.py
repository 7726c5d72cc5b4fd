"""Synthetic retail-demand instance generators.

Two flavours: type 1 draws an independent seasonal pattern per entity
(unlabeled); type 2 plants K pattern-sharing clusters and records the target
partition.  Predictor layout is J = 53: column 1 the discount fraction,
columns 2-53 one-hot week dummies (no intercept; the dummy block spans it).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from gclr.core import ContractError, Dataset, Entity, InfeasibilityError

WEEKS = 52
J_SYNTH = 53
DISCOUNT_LEVELS = (0.15, 0.20, 0.25, 0.30)
PROMO_LIFT = {0.15: (0.4, 0.5), 0.20: (0.5, 0.6), 0.25: (0.6, 0.7), 0.30: (0.7, 0.8)}
N_PATTERNS = 7


@dataclass
class SyntheticConfig:
    I: int
    K: int = 1
    L: int = WEEKS
    seed: int = 0
    noise_scale: float = 5.0
    n: int = 1

    def __post_init__(self):
        if self.L != WEEKS:
            raise ContractError("L must be 52")
        if self.I < 1:
            raise ContractError("I must be positive")


@dataclass
class SyntheticInstance:
    dataset: Dataset
    target: object = None          # Partition for type 2, else None
    ground_params: list = field(default_factory=list)


def seasonal_pattern(pattern_id: int, t) -> float:
    """Multiplier of one of seven fixed week-of-year shapes."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 1) or np.any(t > WEEKS):
        raise ContractError("week out of range 1..52")
    if pattern_id == 1:      # flat
        out = np.zeros_like(t)
    elif pattern_id == 2:    # U shape (winter-peaking)
        out = 1.2 * np.cos(2.0 * math.pi * (t - 1.0) / 52.0)
    elif pattern_id == 3:    # inverted U (summer-peaking)
        out = 1.2 * np.sin(math.pi * (t - 1.0) / 51.0)
    elif pattern_id == 4:    # mild rising trend
        out = 0.43 * (t - 26.5) / 25.5
    elif pattern_id == 5:    # strong falling trend
        out = -1.2 * (t - 26.5) / 25.5
    elif pattern_id == 6:    # late-autumn slump
        out = -1.25 * np.exp(-(((t - 40.0) / 8.0) ** 2))
    elif pattern_id == 7:    # post-holiday slump
        out = -1.25 * np.exp(-(((t - 10.0) / 8.0) ** 2))
    else:
        raise ContractError(f"pattern id {pattern_id} not in 1..7")
    return float(out) if out.ndim == 0 else out


def _gen_entity(eid: str, pattern_id: int, seed: int, idx: int, noise_scale: float):
    """One entity's year of data, from its own derived seed stream."""
    rng = np.random.default_rng([seed, idx])
    s_a = rng.uniform(100.0, 200.0)
    n_promo = int(rng.integers(3, 7))
    promo_weeks = np.sort(rng.choice(WEEKS, size=n_promo, replace=False) + 1)
    discounts = {}
    t = np.arange(1, WEEKS + 1)
    d_p = np.full(WEEKS, s_a)
    for w in promo_weeks:
        disc = DISCOUNT_LEVELS[int(rng.integers(len(DISCOUNT_LEVELS)))]
        lo, hi = PROMO_LIFT[disc]
        p_promo = rng.uniform(lo, hi)
        discounts[int(w)] = (disc, p_promo)
        d_p[w - 1] = s_a * (1.0 + p_promo)
    d_s = s_a * seasonal_pattern(pattern_id, t)
    if math.isinf(noise_scale):
        eps = np.zeros(WEEKS)
    else:
        eps = rng.normal(0.0, s_a / noise_scale, size=WEEKS)
    y = d_p + d_s + eps

    X = np.zeros((WEEKS, J_SYNTH))
    for w, (disc, _) in discounts.items():
        X[w - 1, 0] = disc
    X[t - 1, t] = 1.0   # week dummies occupy columns 1..52
    params = {
        "entity_id": eid,
        "S_A": s_a,
        "pattern": pattern_id,
        "promo_weeks": [int(w) for w in promo_weeks],
        "discounts": {str(w): discounts[w][0] for w in discounts},
        "p_promo": {str(w): discounts[w][1] for w in discounts},
    }
    return Entity(id=eid, y=y, X=X, weeks=t.copy()), params


def gen_type1(cfg: SyntheticConfig) -> SyntheticInstance:
    """Independent entities, each with its own random seasonal pattern."""
    rng = np.random.default_rng([cfg.seed, 10**9])
    entities, params = [], []
    for i in range(cfg.I):
        pattern = int(rng.integers(1, N_PATTERNS + 1))
        e, p = _gen_entity(f"sku{i + 1}", pattern, cfg.seed, i, cfg.noise_scale)
        entities.append(e)
        params.append(p)
    ds = Dataset(entities=entities, J=J_SYNTH, n=cfg.n, K=cfg.K)
    return SyntheticInstance(dataset=ds, target=None, ground_params=params)


def gen_type2(cfg: SyntheticConfig, max_retries: int = 200) -> SyntheticInstance:
    """K pattern-sharing planted clusters with a recorded target partition."""
    from gclr.core import Partition

    if cfg.K < 1:
        raise ContractError("K must be positive")
    rng = np.random.default_rng([cfg.seed, 10**9])
    if cfg.K <= N_PATTERNS:
        patterns = rng.choice(N_PATTERNS, size=cfg.K, replace=False) + 1
    else:
        patterns = rng.integers(1, N_PATTERNS + 1, size=cfg.K)
    labels = None
    for _ in range(max_retries):
        cand = rng.integers(0, cfg.K, size=cfg.I)
        if np.bincount(cand, minlength=cfg.K).min() >= cfg.n:
            labels = cand
            break
    if labels is None:
        raise InfeasibilityError(
            f"could not plant {cfg.K} clusters of size >= {cfg.n} in {cfg.I} entities")
    entities, params = [], []
    for i in range(cfg.I):
        pattern = int(patterns[labels[i]])
        e, p = _gen_entity(f"sku{i + 1}", pattern, cfg.seed, i, cfg.noise_scale)
        p["cluster"] = int(labels[i])
        entities.append(e)
        params.append(p)
    ds = Dataset(entities=entities, J=J_SYNTH, n=cfg.n, K=cfg.K)
    return SyntheticInstance(dataset=ds, target=Partition(assignment=labels, K=cfg.K),
                             ground_params=params)


def write_instance(instance: SyntheticInstance, path: str) -> None:
    """CSV per the core schema plus a `<path>.meta.json` sidecar."""
    ds = instance.dataset
    lines = ["entity_id,week," + "y," + ",".join(f"x{j + 1}" for j in range(ds.J))]
    for e in ds.entities:
        weeks = e.weeks if e.weeks is not None else np.arange(1, e.L + 1)
        for l in range(e.L):
            row = [e.id, str(int(weeks[l])), f"{e.y[l]:.17g}"]
            row.extend(f"{v:.17g}" for v in e.X[l])
            lines.append(",".join(row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    meta = {"ground_params": instance.ground_params}
    if instance.target is not None:
        meta["target"] = [int(k) for k in instance.target.assignment]
        meta["K"] = int(instance.target.K)
    with open(_sidecar_path(path), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _sidecar_path(path: str) -> str:
    base, ext = os.path.splitext(path)
    return base + ".meta.json"
