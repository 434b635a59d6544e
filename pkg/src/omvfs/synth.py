"""Synthetic multi-view streams with planted informative features and drift.

Each class owns a disjoint block of the informative features in every view.
An instance of class ``c`` carries ``signal`` on the features owned by ``c``;
non-informative features sit at a constant ``background`` level. Every
entry then receives Gaussian noise of scale ``noise_scale`` and is clipped
at zero. Under drift, the sampling prior favours a pair of dominant
classes that changes every ``drift_period`` instances.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import ingest
from .types import FeatureRanking, ValidationError, ViewSpec


@dataclass(frozen=True)
class PlantSpec:
    n: int
    dims: tuple
    k: int
    informative: tuple
    noise_scale: float = 0.3
    drift_period: int = 0
    seed: int = 0
    signal: float = 1.0
    # share of the prior held by the two dominant classes of a drift regime
    imbalance: float = 0.7
    # constant level of the non-informative features
    background: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "informative", tuple(int(i) for i in self.informative))

    def check(self) -> None:
        if self.n < 0:
            raise ValidationError("n must be ≥ 0")
        if not self.dims:
            raise ValidationError("at least one view required")
        if len(self.informative) != len(self.dims):
            raise ValidationError("informative arity mismatch")
        if self.k < 1:
            raise ValidationError("k must be ≥ 1")
        for d, i in zip(self.dims, self.informative):
            if d < 1:
                raise ValidationError("dims must be ≥ 1")
            if not 0 <= i <= d:
                raise ValidationError(f"informative count {i} exceeds dimension {d}")
        if self.noise_scale < 0:
            raise ValidationError("noise_scale must be ≥ 0")
        if self.drift_period < 0:
            raise ValidationError("drift_period must be ≥ 0")
        if self.drift_period > 0 and self.k < 2:
            raise ValidationError("drift needs k ≥ 2")
        if self.signal < 0 or self.background < 0:
            raise ValidationError("signal and background must be ≥ 0")
        if not 0 < self.imbalance <= 1:
            raise ValidationError("imbalance must lie in (0, 1]")


@dataclass
class SynthDataset:
    spec: PlantSpec
    views: list
    labels: np.ndarray
    informative_sets: list
    # feature indices owned by each class, per view
    class_features: list
    priors: list
    schedule: list = field(default_factory=list)

    def truth_dict(self) -> dict:
        return {
            "spec": asdict(self.spec),
            "informative_sets": [s.tolist() for s in self.informative_sets],
            "class_features": [[f.tolist() for f in per] for per in self.class_features],
            "priors": [p.tolist() for p in self.priors],
            "schedule": self.schedule,
        }


def regime_priors(k: int, dominant: Sequence[int], imbalance: float) -> np.ndarray:
    """Prior giving ``imbalance`` to the dominant classes and the rest uniformly."""
    prior = np.zeros(k)
    rest = [c for c in range(k) if c not in dominant]
    if not rest:
        return np.full(k, 1.0 / k)
    prior[list(dominant)] = imbalance / len(dominant)
    prior[rest] = (1.0 - imbalance) / len(rest)
    return prior


def _drift_schedule(spec: PlantSpec, rng: np.random.Generator) -> tuple[list, list]:
    n_regimes = max(1, -(-spec.n // spec.drift_period))
    pairs = [(a, b) for a in range(spec.k) for b in range(a + 1, spec.k)] or [(0,)]
    schedule, priors, prev = [], [], None
    for r in range(n_regimes):
        choices = [p for p in pairs if p != prev] or pairs
        pair = choices[rng.integers(len(choices))]
        prev = pair
        start = r * spec.drift_period
        schedule.append({"start": start, "stop": min(spec.n, start + spec.drift_period), "dominant": list(pair)})
        priors.append(regime_priors(spec.k, pair, spec.imbalance))
    return schedule, priors


def generate(spec: PlantSpec) -> SynthDataset:
    """Draw a dataset in memory; see :func:`write_dataset` for the on-disk form."""
    spec.check()
    rng = np.random.default_rng(spec.seed)

    informative_sets, class_features = [], []
    for d, n_inf in zip(spec.dims, spec.informative):
        chosen = np.sort(rng.choice(d, size=n_inf, replace=False))
        informative_sets.append(chosen)
        shuffled = rng.permutation(chosen)
        class_features.append([np.sort(shuffled[c::spec.k]) for c in range(spec.k)])

    if spec.drift_period > 0:
        schedule, priors = _drift_schedule(spec, rng)
        labels = np.concatenate([
            rng.choice(spec.k, size=s["stop"] - s["start"], p=p) for s, p in zip(schedule, priors)
        ]).astype(np.int64) if spec.n else np.zeros(0, dtype=np.int64)
    else:
        priors = [np.full(spec.k, 1.0 / spec.k)]
        schedule = [{"start": 0, "stop": spec.n, "dominant": []}]
        labels = rng.choice(spec.k, size=spec.n, p=priors[0]).astype(np.int64)

    views = []
    for d, owned in zip(spec.dims, class_features):
        base = np.full((spec.k, d), spec.background)
        informative = np.concatenate(owned) if owned else np.zeros(0, dtype=int)
        base[:, informative] = 0.0
        for c in range(spec.k):
            base[c, owned[c]] = spec.signal
        x = base[labels] + spec.noise_scale * rng.standard_normal((spec.n, d))
        np.maximum(x, 0.0, out=x)
        views.append(x)
    return SynthDataset(spec, views, labels, informative_sets, class_features, priors, schedule)


def write_dataset(ds: SynthDataset, out_dir, fmt: str = "dense") -> Path:
    """Write views, labels, manifest and a truth sidecar; return the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files, formats, views = [], [], []
    for i, x in enumerate(ds.views):
        name = f"view{i}.csv" if fmt == "dense" else f"view{i}.coo"
        if fmt == "dense":
            ingest.write_dense(out / name, x)
        elif fmt == "sparse":
            ingest.write_sparse(out / name, x)
        else:
            raise ValidationError(f"unknown format {fmt!r}")
        files.append(name)
        formats.append(fmt)
        views.append(ViewSpec(i, x.shape[1], f"view{i}"))
    ingest.write_labels(out / "labels.txt", ds.labels)
    manifest = out / "manifest.json"
    ingest.write_manifest(manifest, views, files, formats, labels="labels.txt", rows=int(ds.labels.size))
    (out / "truth.json").write_text(json.dumps(ds.truth_dict(), indent=2) + "\n")
    return manifest


def selection_precision(ranking: FeatureRanking | np.ndarray, informative, p: int) -> float:
    """Fraction of the top ``p`` ranked features that are planted informative ones."""
    if p < 1:
        raise ValidationError("p must be ≥ 1")
    order = ranking.order if isinstance(ranking, FeatureRanking) else np.asarray(ranking)
    top = set(int(i) for i in order[:p])
    return len(top & set(int(i) for i in informative)) / p
