"""Density-controlled selection of confident samples and relevant source domains.

Per source domain k the classifier rows give class centers; target features
are assigned to their nearest center; cluster radii set per-class
thresholds; confident source and target samples renew the domain; and the
share and density of confident target samples decide whether domain k keeps
contributing to the federated model.

Distances are cosine distances ``1 - cos(a, b)`` throughout, so smaller
means closer.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, gammaln

from .data import LabeledDomain
from .errors import DegenerateClusterError, EmptyCluster, EmptyDomain, ShapeError
from .nn import Hyperparams, Model, forward


def _unit_rows(x: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DegenerateClusterError(f"{what} contains an all-zero row")
    return x / norms


def cluster_centers(decision_w: np.ndarray) -> np.ndarray:
    """L2-normalized classifier weight rows."""
    return _unit_rows(np.asarray(decision_w, dtype=np.float64), "decision layer")


def cosine_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateClusterError("cosine distance of a zero vector")
    return float(np.clip(1.0 - a @ b / (na * nb), 0.0, 2.0))


def cosine_distances(features: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """(n, C) matrix of cosine distances between feature rows and center rows."""
    if features.shape[1] != centers.shape[1]:
        raise ShapeError(f"features width {features.shape[1]} != centers width {centers.shape[1]}")
    sim = _unit_rows(features, "feature matrix") @ _unit_rows(centers, "centers").T
    return np.clip(1.0 - sim, 0.0, 2.0)


def assign_targets(features: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Nearest center per row; np.argmin breaks ties toward the lowest class."""
    return np.argmin(cosine_distances(features, centers), axis=1)


def cluster_radius(distances, metric: str = "mean") -> float:
    d = np.asarray(distances, dtype=np.float64)
    if d.size == 0:
        raise EmptyCluster("radius of an empty cluster")
    if metric == "mean":
        return float(d.mean())
    if metric == "rms":
        return float(np.sqrt(np.mean(d ** 2)))
    if metric == "max":
        return float(d.max())
    raise ValueError(f"unknown radius metric {metric!r}")


def thresholds(r_s: float, alpha: float, s_adj: float, t_adj: float) -> tuple[float, float]:
    """Source threshold alpha*r + s_adj; target threshold alpha*r - t_adj floored at 0."""
    if r_s < 0:
        raise ValueError("radius must be non-negative")
    return alpha * r_s + s_adj, max(alpha * r_s - t_adj, 0.0)


def compute_adjustments(source_distances, r_s: float) -> tuple[float, float]:
    """s_adj = median source-to-center distance; t_adj = a third of the source radius."""
    d = np.asarray(source_distances, dtype=np.float64)
    if d.size == 0:
        raise EmptyCluster("adjustments of an empty cluster")
    return float(np.median(d)), r_s / 3.0


def target_density(count: int, radius: float, dim: int, exponent: str | int = "1") -> float:
    """count / (V_dim * radius^e), V_dim = pi^(dim/2) / Gamma(dim/2 + 1), evaluated in log space.

    ``exponent`` "1" keeps the radius linear; "d" uses the true ball volume radius^dim.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    if count == 0:
        return 0.0
    if radius <= 0:
        raise DegenerateClusterError(f"{count} members inside a zero-radius cluster")
    e = dim if str(exponent) == "d" else 1
    log_volume = 0.5 * dim * np.log(np.pi) - gammaln(0.5 * dim + 1.0) + e * np.log(radius)
    with np.errstate(over="ignore"):
        return float(np.exp(np.log(count) - log_volume))


def domain_weights(n_t: np.ndarray, n: int, rho: np.ndarray, lam: float,
                   valid: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Confident-share weight, density weight and their lambda mix for each domain.

    ``rho`` is (K, C); ``valid`` masks (k, c) cells whose source cluster is
    empty, which are left out of the per-class average.
    """
    if n <= 0:
        raise ValueError("target size must be positive")
    n_t = np.asarray(n_t, dtype=np.float64)
    rho = np.atleast_2d(np.asarray(rho, dtype=np.float64))
    valid = np.ones(rho.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    omega1 = n_t / n
    s = np.where(valid, expit(rho), 0.0)  # 1 - 1/(1+e^rho) == sigmoid(rho)
    counts = valid.sum(axis=1)
    omega2 = np.divide(s.sum(axis=1), counts, out=np.zeros(len(counts)), where=counts > 0)
    return omega1, omega2, lam * omega1 + (1.0 - lam) * omega2


def keep_rule(omega, K: int, sigma: float) -> np.ndarray:
    """Keep domain k iff omega_k >= 1/K - sigma."""
    if K < 1 or sigma < 0:
        raise ValueError("need K >= 1 and sigma >= 0")
    return np.asarray(omega, dtype=np.float64) >= 1.0 / K - sigma


# ----------------------------------------------------------- statistics

@dataclass
class DomainSelection:
    """Statistics and confident sets for one source domain."""

    centers: np.ndarray  # (C, hidden)
    assignments: np.ndarray  # (n,) target cluster labels
    radius_s: np.ndarray  # (C,) nan for empty source clusters
    radius_t: np.ndarray  # (C,) nan for empty target clusters
    d_s: np.ndarray
    d_t: np.ndarray
    target_counts: np.ndarray  # (C,) confident targets per class
    density: np.ndarray  # (C,)
    valid: np.ndarray  # (C,) source cluster nonempty
    confident_src: np.ndarray
    confident_tgt: np.ndarray

    @property
    def pseudo_labels(self) -> np.ndarray:
        return self.assignments[self.confident_tgt]


def select_confident(src_dist: np.ndarray, src_labels: np.ndarray, tgt_dist: np.ndarray,
                     assignments: np.ndarray, d_s: np.ndarray, d_t: np.ndarray):
    """Indices of confident source and target samples (strict inequality).

    ``src_dist`` and ``tgt_dist`` are full (n, C) distance matrices; a sample
    is compared with the threshold of its own (source) or assigned (target)
    class. NaN thresholds never admit a sample.
    """
    own = src_dist[np.arange(len(src_labels)), src_labels]
    src = np.flatnonzero(own < d_s[src_labels])
    near = tgt_dist[np.arange(len(assignments)), assignments]
    tgt = np.flatnonzero(near < d_t[assignments])
    return src, tgt


def domain_statistics(model: Model, source: LabeledDomain, target_x: np.ndarray,
                      hp: Hyperparams) -> DomainSelection:
    C = model.dims[2]
    centers = cluster_centers(model.decision_w)
    f_s, _ = forward(model, source.features)
    f_t, _ = forward(model, target_x)
    src_dist = cosine_distances(f_s, centers)
    tgt_dist = cosine_distances(f_t, centers)
    assignments = np.argmin(tgt_dist, axis=1)

    nan = np.full(C, np.nan)
    r_s, r_t, d_s, d_t = nan.copy(), nan.copy(), nan.copy(), nan.copy()
    valid = np.zeros(C, dtype=bool)
    alpha = hp.radius_alpha
    for c in range(C):
        own = src_dist[source.labels == c, c]
        if own.size == 0:
            continue
        valid[c] = True
        r_s[c] = cluster_radius(own, hp.radius_metric)
        s_adj, t_adj = compute_adjustments(own, r_s[c])
        d_s[c], d_t[c] = thresholds(r_s[c], alpha, s_adj, t_adj)

    with np.errstate(invalid="ignore"):
        conf_src, conf_tgt = select_confident(src_dist, source.labels, tgt_dist, assignments, d_s, d_t)

    counts = np.bincount(assignments[conf_tgt], minlength=C)
    density = np.zeros(C)
    hidden = model.dims[1]
    for c in range(C):
        members = tgt_dist[assignments == c, c]
        if members.size:
            r_t[c] = cluster_radius(members, hp.radius_metric)
        if valid[c] and counts[c] > 0:
            density[c] = target_density(int(counts[c]), r_t[c], hidden, hp.density_exponent)
    return DomainSelection(centers, assignments, r_s, r_t, d_s, d_t, counts, density, valid,
                           conf_src, conf_tgt)


def renew_domain(source: LabeledDomain, confident_src, target_x: np.ndarray, confident_tgt,
                 pseudo_labels, target_ids=None, name: str | None = None) -> LabeledDomain:
    """Confident source samples plus pseudo-labeled confident target samples."""
    confident_src = np.asarray(confident_src, dtype=np.int64)
    confident_tgt = np.asarray(confident_tgt, dtype=np.int64)
    if confident_src.size + confident_tgt.size == 0:
        raise EmptyDomain(f"{source.name}: no confident samples left")
    if target_ids is None:
        target_ids = [f"target-{i:05d}" for i in range(len(target_x))]
    x = np.concatenate([source.features[confident_src], target_x[confident_tgt]])
    y = np.concatenate([source.labels[confident_src], np.asarray(pseudo_labels, dtype=np.int64)])
    ids = [source.ids[i] for i in confident_src] + [target_ids[i] for i in confident_tgt]
    return LabeledDomain(name or source.name, x, y, source.class_count, ids)


@dataclass
class ClusterStats:
    """Stacked (K, C) statistics of the live domains."""

    centers: np.ndarray
    radii_s: np.ndarray
    radii_t: np.ndarray
    d_s: np.ndarray
    d_t: np.ndarray
    target_counts: np.ndarray
    density: np.ndarray

    @classmethod
    def stack(cls, per_domain: list[DomainSelection]) -> "ClusterStats":
        def get(name):
            return np.stack([getattr(s, name) for s in per_domain])
        return cls(get("centers"), get("radius_s"), get("radius_t"), get("d_s"), get("d_t"),
                   get("target_counts"), get("density"))


@dataclass
class SelectionOutcome:
    domains: list[int]  # original indices of the domains evaluated
    stats: ClusterStats
    assignments: np.ndarray  # (K, n)
    confident_src: list[np.ndarray]
    confident_tgt: list[np.ndarray]
    pseudo_labels: list[np.ndarray]
    renewed_domains: list[LabeledDomain | None]
    omega1: np.ndarray
    omega2: np.ndarray
    omega: np.ndarray
    keep: np.ndarray
    threshold: float = field(default=0.0)

    @property
    def kept_count(self) -> int:
        return int(self.keep.sum())


def select_domains(models: list[Model], sources: list[LabeledDomain], target_x: np.ndarray,
                   hp: Hyperparams, sigma: float, domains: list[int] | None = None,
                   include_target: bool = True, target_ids=None,
                   domain_count: int | None = None) -> SelectionOutcome:
    """Run the full selection step over the live domains.

    ``models[i]`` and ``sources[i]`` belong to original domain ``domains[i]``.
    The keep threshold uses ``domain_count`` (default: the number of live
    domains). If the rule would drop every domain, the single
    highest-weight domain is kept.
    """
    domains = list(range(len(models))) if domains is None else list(domains)
    per = [domain_statistics(m, s, target_x, hp) for m, s in zip(models, sources)]
    n = target_x.shape[0]
    n_t = np.array([s.confident_tgt.size for s in per])
    rho = np.stack([s.density for s in per])
    valid = np.stack([s.valid for s in per])
    omega1, omega2, omega = domain_weights(n_t, n, rho, hp.lam, valid)
    renewed = []
    for s, src in zip(per, sources):
        tgt = s.confident_tgt if include_target else s.confident_tgt[:0]
        try:
            renewed.append(renew_domain(src, s.confident_src, target_x, tgt, s.assignments[tgt], target_ids))
        except EmptyDomain:
            renewed.append(None)

    K = len(per) if domain_count is None else domain_count
    # a domain that renewed to nothing is droppable regardless of its weight
    keep = keep_rule(omega, K, sigma) & np.array([r is not None for r in renewed])
    if not keep.any():
        keep[int(np.argmax(omega))] = True
    return SelectionOutcome(
        domains=domains, stats=ClusterStats.stack(per), assignments=np.stack([s.assignments for s in per]),
        confident_src=[s.confident_src for s in per], confident_tgt=[s.confident_tgt for s in per],
        pseudo_labels=[s.pseudo_labels for s in per], renewed_domains=renewed,
        omega1=omega1, omega2=omega2, omega=omega, keep=keep, threshold=1.0 / K - sigma)
