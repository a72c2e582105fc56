"""Gaussian mixtures: EM fitting, silhouette-based model selection, Monte-Carlo KL."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .errors import DegenerateData, DimensionMismatch, SingleCluster, ValidationError

FLOOR_REL = 1e-6
_TINY = 10 * np.finfo(float).eps


@dataclass
class FeatureSet:
    values: np.ndarray
    path: str | None = None
    phase: str | None = None  # "baseline" or "monitoring"

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def _matrix(x) -> np.ndarray:
    if isinstance(x, FeatureSet):
        return x.values
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


@dataclass
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    log_likelihood: float = float("nan")  # mean per-sample, at the end of the fit
    floor: float = float("nan")  # covariance eigenvalue floor used by the fit
    trace: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.covariances = np.asarray(self.covariances, dtype=float).reshape(
            self.k, self.dim, self.dim)
        if self.weights.shape != (self.k,):
            raise ValidationError("one weight per component required")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1) > 1e-9:
            raise ValidationError("mixture weights must form a probability vector")
        self._chol = np.linalg.cholesky(self.covariances)

    @property
    def k(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component_log_pdf(self, x) -> np.ndarray:
        """(n, k) matrix of log(pi_i) + log N(x; mu_i, Sigma_i)."""
        x = _matrix(x)
        if x.shape[1] != self.dim:
            raise DimensionMismatch(f"expected dimension {self.dim}, got {x.shape[1]}")
        out = np.empty((x.shape[0], self.k))
        for i in range(self.k):
            L = self._chol[i]
            z = np.linalg.solve(L, (x - self.means[i]).T)
            log_det = 2 * np.sum(np.log(np.diag(L)))
            out[:, i] = -0.5 * (np.sum(z * z, axis=0) + log_det + self.dim * math.log(2 * math.pi))
        with np.errstate(divide="ignore"):
            return out + np.log(self.weights)

    def log_pdf(self, x) -> np.ndarray | float:
        x_arr = np.asarray(x.values if isinstance(x, FeatureSet) else x, dtype=float)
        single = x_arr.ndim == 0 or (x_arr.ndim == 1 and self.dim > 1)
        lp = logsumexp(self.component_log_pdf(x_arr.reshape(1, -1) if single else x_arr), axis=1)
        return float(lp[0]) if single else lp

    def predict(self, x) -> np.ndarray:
        """Hard assignment by maximum responsibility."""
        return np.argmax(self.component_log_pdf(x), axis=1)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        counts = rng.multinomial(n, self.weights)
        parts = [self.means[i] + rng.standard_normal((c, self.dim)) @ self._chol[i].T
                 for i, c in enumerate(counts)]
        return np.concatenate(parts, axis=0)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "dimension": self.dim,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "log_likelihood": self.log_likelihood,
            "floor": self.floor,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GmmModel":
        g = cls(np.array(data["weights"]), np.array(data["means"]), np.array(data["covariances"]),
                log_likelihood=float(data.get("log_likelihood", float("nan"))),
                floor=float(data.get("floor", float("nan"))))
        if g.k != int(data["k"]) or g.dim != int(data["dimension"]):
            raise ValidationError("GMM file header disagrees with its arrays")
        return g

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "GmmModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def covariance_floor(x: np.ndarray) -> float:
    """Eigenvalue floor 1e-6 * trace(cov)/d of the data the mixture is fitted to."""
    d = x.shape[1]
    tr = float(np.trace(np.atleast_2d(np.cov(x, rowvar=False, bias=True)))) if x.shape[0] > 1 else 0.0
    return FLOOR_REL * tr / d if tr > 0 else 1e-12


def floor_covariance(cov: np.ndarray, floor: float) -> np.ndarray:
    """Clip eigenvalues from below; this is the constrained ML covariance."""
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    return (vecs * np.maximum(vals, floor)) @ vecs.T


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            raise DegenerateData(f"fewer than {k} distinct samples")
        c = x[rng.choice(n, p=d2 / total)]
        centers.append(c)
        d2 = np.minimum(d2, np.sum((x - c) ** 2, axis=1))
    return np.array(centers)


def _m_step(x, resp, floor):
    nk = resp.sum(axis=0) + _TINY
    means = (resp.T @ x) / nk[:, None]
    covs = np.empty((resp.shape[1], x.shape[1], x.shape[1]))
    for i in range(resp.shape[1]):
        diff = x - means[i]
        covs[i] = floor_covariance((resp[:, i, None] * diff).T @ diff / nk[i], floor)
    weights = nk / nk.sum()
    return weights, means, covs


def _single_run(x, k, rng, floor, max_iter, tol) -> GmmModel:
    centers = _kmeans_pp(x, k, rng)
    nearest = np.argmin(cdist(x, centers, "sqeuclidean"), axis=1)
    resp = np.eye(k)[nearest]
    g = GmmModel(*_m_step(x, resp, floor))
    trace = []
    for _ in range(max_iter):
        comp = g.component_log_pdf(x)
        lp = logsumexp(comp, axis=1)
        ll = float(lp.mean())
        trace.append(ll)
        if len(trace) > 1 and ll - trace[-2] < tol * abs(trace[-2]):
            break
        g = GmmModel(*_m_step(x, np.exp(comp - lp[:, None]), floor))
    g.log_likelihood = trace[-1]
    g.trace = trace
    return g


def em_fit(fs, k: int, seed: int = 0, *, n_init: int = 5, max_iter: int = 500,
           tol: float = 1e-7, floor: float | None = None) -> GmmModel:
    """Full-covariance EM from k-means++ seeds; best of ``n_init`` restarts.

    ``floor`` defaults to :func:`covariance_floor` of the data; passing the
    baseline's floor keeps mixtures of the same feature space comparable.
    ``trace`` on the returned model holds the mean log-likelihood per iteration.
    """
    x = _matrix(fs)
    n = x.shape[0]
    if k < 1:
        raise ValidationError("k must be at least 1")
    if n < k:
        raise ValidationError(f"need at least k={k} samples, got {n}")
    if k > 1 and np.all(x == x[0]):
        raise DegenerateData("all samples are identical")
    floor = covariance_floor(x) if floor is None else float(floor)
    if not floor > 0:
        raise ValidationError("covariance floor must be positive")
    if k == 1:
        g = GmmModel(*_m_step(x, np.ones((n, 1)), floor))
        g.log_likelihood = float(g.log_pdf(x).mean())
        g.trace = [g.log_likelihood]
        g.floor = floor
        return g
    best = None
    for child in np.random.SeedSequence(seed).spawn(n_init):
        g = _single_run(x, k, np.random.default_rng(child), floor, max_iter, tol)
        if best is None or g.log_likelihood > best.log_likelihood:
            best = g
    best.floor = floor
    return best


def silhouette_score(fs, labels) -> float:
    """Mean silhouette with Euclidean distances; singleton clusters score 0."""
    x = _matrix(fs)
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    if uniq.size < 2:
        raise SingleCluster("silhouette needs at least two non-empty clusters")
    dist = cdist(x, x)
    idx = np.searchsorted(uniq, labels)
    onehot = np.eye(uniq.size)[idx]
    sizes = onehot.sum(axis=0)
    sums = dist @ onehot  # (n, n_clusters) distance totals per cluster
    own = sizes[idx]
    a = sums[np.arange(x.shape[0]), idx] / np.maximum(own - 1, 1)
    other = sums / sizes
    other[np.arange(x.shape[0]), idx] = np.inf
    b = other.min(axis=1)
    denom = np.maximum(a, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(denom > 0, (b - a) / denom, 0.0)
    s[own == 1] = 0.0
    return float(s.mean())


def _select(x: np.ndarray, ks: list[int], seed: int, **fit_kwargs):
    scores, models = [], []
    for k in ks:
        g = em_fit(x, k, seed, **fit_kwargs)
        labels = g.predict(x)
        scores.append(silhouette_score(x, labels) if np.unique(labels).size > 1 else -1.0)
        models.append(g)
    best = int(np.argmax(scores))  # first maximum, i.e. the smaller k on ties
    return ks[best], scores, models[best]


def select_k(fs, k_range: Sequence[int], seed: int = 0, **fit_kwargs) -> tuple[int, list[float]]:
    """Component count maximising the silhouette of the hard assignment.

    A fit whose hard assignment collapses onto one cluster scores -1.  Ties go
    to the smaller k.
    """
    x = _matrix(fs)
    ks = sorted(int(k) for k in k_range)
    if not ks or ks[0] < 2:
        raise ValidationError("k_range must contain integers >= 2")
    if ks[-1] > x.shape[0] / 2:
        raise ValidationError(f"k_max={ks[-1]} exceeds n_samples/2={x.shape[0] / 2}")
    k, scores, _ = _select(x, ks, seed, **fit_kwargs)
    return k, scores


def max_components(n: int, d: int, k_max: int) -> int:
    """Largest k allowed by k_max, n/2 and the n >= d+1 per component guard."""
    return max(1, min(k_max, n // 2, n // (d + 1)))


def fit_selected(fs, k_max: int = 8, seed: int = 0, **fit_kwargs) -> GmmModel:
    """Mixture with silhouette-selected k in [2, cap]; one component when cap < 2."""
    x = _matrix(fs)
    cap = max_components(x.shape[0], x.shape[1], k_max)
    if cap < 2 or np.all(x == x[0]):
        return em_fit(x, 1, seed, **fit_kwargs)
    return _select(x, list(range(2, cap + 1)), seed, **fit_kwargs)[2]


def kl_divergence(p: GmmModel, q: GmmModel, n_mc: int = 10_000, seed: int = 0, *,
                  clamp: bool = True) -> float:
    """Monte-Carlo KL(p || q) from ``n_mc`` seeded draws of p."""
    if p.dim != q.dim:
        raise DimensionMismatch(f"dimensions differ: {p.dim} vs {q.dim}")
    if n_mc < 1:
        raise ValidationError("n_mc must be positive")
    x = p.sample(int(n_mc), np.random.default_rng(seed))
    est = float(np.mean(p.log_pdf(x) - q.log_pdf(x)))
    return max(est, 0.0) if clamp else est


@dataclass
class Pca:
    mean: np.ndarray
    components: np.ndarray  # (n_components, d), rows are unit loadings
    explained_variance: np.ndarray
    all_variances: np.ndarray

    def transform(self, fs) -> np.ndarray:
        return (_matrix(fs) - self.mean) @ self.components.T

    def inverse_transform(self, z) -> np.ndarray:
        return np.asarray(z) @ self.components + self.mean


def pca(fs, n_components: int = 2) -> Pca:
    x = _matrix(fs)
    n = x.shape[0]
    if n < 3:
        raise ValidationError("PCA needs at least 3 samples")
    mean = x.mean(axis=0)
    _, s, vt = np.linalg.svd(x - mean, full_matrices=False)
    comps = vt[:n_components].copy()
    # sign convention: largest-magnitude loading of each component is positive
    pick = np.argmax(np.abs(comps), axis=1)
    comps *= np.sign(comps[np.arange(comps.shape[0]), pick])[:, None]
    var = s**2 / (n - 1)
    return Pca(mean, comps, var[:n_components], var)


def top2_pca(fs) -> np.ndarray:
    return pca(fs, 2).transform(fs)
