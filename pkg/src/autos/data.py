"""Multi-domain datasets: synthetic Gaussian benchmarks and CSV feature tables.

Domains store features as dense ``(n, d)`` float64 arrays. Individual
:class:`SampleRecord` views are available for code that wants row objects.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, DataError, IngestionError

# sub-stream tags for np.random.default_rng([seed, tag, ...])
_LAYOUT, _IRRELEVANT, _SOURCE_NOISE, _TARGET_NOISE, _PRETRAIN_NOISE, _SHIFT = range(6)


@dataclass(frozen=True)
class SampleRecord:
    id: str
    features: np.ndarray
    label: int | None = None


@dataclass
class LabeledDomain:
    name: str
    features: np.ndarray
    labels: np.ndarray
    class_count: int
    ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise DataError(f"{self.name}: features must be a 2-D array")
        if self.labels.shape != (self.features.shape[0],):
            raise DataError(f"{self.name}: one label per sample required")
        if not np.all(np.isfinite(self.features)):
            raise DataError(f"{self.name}: non-finite feature values")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DataError(f"{self.name}: label outside [0, {self.class_count})")
        if not self.ids:
            self.ids = [f"{self.name}-{i:05d}" for i in range(len(self))]
        elif len(self.ids) != len(self):
            raise DataError(f"{self.name}: ids length does not match sample count")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def samples(self) -> Iterator[SampleRecord]:
        for i, x, y in zip(self.ids, self.features, self.labels):
            yield SampleRecord(i, x, int(y))

    def subset(self, idx, name=None) -> "LabeledDomain":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDomain(name or self.name, self.features[idx], self.labels[idx],
                             self.class_count, [self.ids[i] for i in idx])


@dataclass
class UnlabeledDomain:
    name: str
    features: np.ndarray
    ids: list[str] = field(default_factory=list)
    # evaluation only; training code receives ``unlabeled()`` views
    hidden_labels: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise DataError(f"{self.name}: features must be a 2-D array")
        if not np.all(np.isfinite(self.features)):
            raise DataError(f"{self.name}: non-finite feature values")
        if not self.ids:
            self.ids = [f"{self.name}-{i:05d}" for i in range(len(self))]
        elif len(self.ids) != len(self):
            raise DataError(f"{self.name}: ids length does not match sample count")
        if self.hidden_labels is not None:
            self.hidden_labels = np.asarray(self.hidden_labels, dtype=np.int64)
            if self.hidden_labels.shape != (len(self),):
                raise DataError(f"{self.name}: hidden_labels must have length {len(self)}")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def samples(self) -> Iterator[SampleRecord]:
        for i, x in zip(self.ids, self.features):
            yield SampleRecord(i, x)

    def unlabeled(self) -> "UnlabeledDomain":
        """Copy with the evaluation labels stripped."""
        return UnlabeledDomain(self.name, self.features, list(self.ids))


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian class clusters shared by relevant domains and the target.

    Class means are drawn with expected pairwise distance ``separation``;
    each sample adds isotropic noise of scale ``sigma``. Domains listed in
    ``irrelevant_domains`` get their own independently drawn means. Target
    samples are displaced along one random unit direction by an amount drawn
    uniformly from ``[0, domain_shift]``, so part of the target looks like the
    sources and the rest needs adapting.
    """

    K: int = 3
    C: int = 4
    d: int = 16
    separation: float = 4.0
    sigma: float = 1.0
    irrelevant_domains: tuple[int, ...] = ()
    per_class: int = 50
    domain_shift: float = 0.0

    def validate(self):
        if self.K < 1 or self.C < 2 or self.d < 2 or self.per_class < 1:
            raise ConfigError(f"invalid synthetic spec {self}: need K>=1, C>=2, d>=2, per_class>=1")
        if not (self.separation >= 0 and self.sigma > 0 and self.domain_shift >= 0):
            raise ConfigError("separation and domain_shift must be >= 0 and sigma > 0")
        for k in self.irrelevant_domains:
            if not 0 <= k < self.K:
                raise ConfigError(f"irrelevant domain index {k} outside [0, {self.K})")


def _class_means(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    # independent N(0, s^2 I) means: E||m_a - m_b||^2 = 2 d s^2 = separation^2
    return rng.normal(size=(spec.C, spec.d)) * (spec.separation / math.sqrt(2 * spec.d))


def _draw(means, per_class, sigma, rng):
    C, d = means.shape
    y = np.repeat(np.arange(C), per_class)
    x = means[y] + sigma * rng.normal(size=(y.size, d))
    perm = rng.permutation(y.size)
    return x[perm], y[perm]


def _target_shift(spec: SyntheticSpec, seed: int, x: np.ndarray, stream: int) -> np.ndarray:
    if spec.domain_shift == 0:
        return x
    direction = np.random.default_rng([seed, _SHIFT]).normal(size=spec.d)
    direction /= np.linalg.norm(direction)
    amount = np.random.default_rng([seed, _SHIFT, stream]).uniform(0, spec.domain_shift, size=x.shape[0])
    return x + amount[:, None] * direction


def class_layout(spec: SyntheticSpec, seed: int) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    """Relevant class means and the re-drawn means of each irrelevant domain."""
    spec.validate()
    means = _class_means(spec, np.random.default_rng([seed, _LAYOUT]))
    irrelevant = {k: _class_means(spec, np.random.default_rng([seed, _IRRELEVANT, k]))
                  for k in sorted(set(spec.irrelevant_domains))}
    return means, irrelevant


def generate_synthetic(spec: SyntheticSpec, seed: int) -> tuple[list[LabeledDomain], UnlabeledDomain]:
    means, irrelevant = class_layout(spec, seed)
    sources = []
    for k in range(spec.K):
        rng = np.random.default_rng([seed, _SOURCE_NOISE, k])
        x, y = _draw(irrelevant.get(k, means), spec.per_class, spec.sigma, rng)
        sources.append(LabeledDomain(f"source{k}", x, y, spec.C))
    x, y = _draw(means, spec.per_class, spec.sigma, np.random.default_rng([seed, _TARGET_NOISE]))
    x = _target_shift(spec, seed, x, _TARGET_NOISE)
    return sources, UnlabeledDomain("target", x, hidden_labels=y)


def generate_pretraining_split(spec: SyntheticSpec, seed: int, per_class: int) -> LabeledDomain:
    """Small labeled draw from the target layout, disjoint from every generated domain.

    Stands in for the web-scale data a frozen foundation model has seen; it
    follows the target's offset.
    """
    means, _ = class_layout(spec, seed)
    x, y = _draw(means, per_class, spec.sigma, np.random.default_rng([seed, _PRETRAIN_NOISE]))
    x = _target_shift(spec, seed, x, _PRETRAIN_NOISE)
    return LabeledDomain("pretrain", x, y, spec.C)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, domains: Sequence[LabeledDomain]) -> "Standardizer":
        x = np.concatenate([dom.features for dom in domains])
        std = x.std(axis=0)
        return cls(x.mean(axis=0), np.where(std > 0, std, 1.0))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.scale


# ---------------------------------------------------------------- CSV tables

def write_feature_table(domain: LabeledDomain | UnlabeledDomain, path) -> Path:
    """Write ``id,label,f0..f{d-1}``; floats use repr so values round-trip exactly."""
    path = Path(path)
    labels = domain.labels if isinstance(domain, LabeledDomain) else None
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label"] + [f"f{j}" for j in range(domain.dim)])
        for i, x in enumerate(domain.features):
            label = "" if labels is None else str(int(labels[i]))
            w.writerow([domain.ids[i], label] + [repr(float(v)) for v in x])
    return path


def load_feature_table(path, has_labels: bool, class_count: int | None = None,
                       name: str | None = None) -> LabeledDomain | UnlabeledDomain:
    """Parse a feature table. Errors name the 1-based data row (header is row 0)."""
    path = Path(path)
    name = name or path.stem
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["id", "label"] or len(header) < 3:
            raise IngestionError(path, 0, "header must start with id,label followed by feature columns")
        d = len(header) - 2
        ids, feats, labels = [], [], []
        for row_no, row in enumerate(reader, start=1):
            if len(row) != d + 2:
                raise IngestionError(path, row_no, f"expected {d + 2} fields, got {len(row)}")
            try:
                x = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise IngestionError(path, row_no, str(exc)) from None
            if not all(math.isfinite(v) for v in x):
                raise IngestionError(path, row_no, "non-finite feature value")
            if has_labels:
                try:
                    y = int(row[1])
                except ValueError:
                    raise IngestionError(path, row_no, f"bad label {row[1]!r}") from None
                if y < 0 or (class_count is not None and y >= class_count):
                    raise IngestionError(path, row_no, f"label {y} out of range")
                labels.append(y)
            ids.append(row[0])
            feats.append(x)
    x = np.array(feats, dtype=np.float64).reshape(len(feats), d)
    if has_labels:
        C = class_count if class_count is not None else (max(labels) + 1 if labels else 0)
        return LabeledDomain(name, x, np.array(labels, dtype=np.int64), C, ids)
    return UnlabeledDomain(name, x, ids)


def write_labels(ids: Sequence[str], labels, path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label"])
        for i, y in zip(ids, labels):
            w.writerow([i, int(y)])
    return path


def read_labels(path, column: str = "label") -> tuple[list[str], np.ndarray]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "id" not in reader.fieldnames or column not in reader.fieldnames:
            raise IngestionError(path, 0, f"header must contain id and {column}")
        ids, ys = [], []
        for row_no, row in enumerate(reader, start=1):
            try:
                ys.append(int(row[column]))
            except (TypeError, ValueError):
                raise IngestionError(path, row_no, f"bad {column} {row[column]!r}") from None
            ids.append(row["id"])
    return ids, np.array(ys, dtype=np.int64)
