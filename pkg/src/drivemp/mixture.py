"""Gaussian mixture density, k-means init, EM fitting and BIC selection.

Both levels of the hierarchy (path-feature clustering and motion-primitive
training) fit full-covariance mixtures with this module.  All density
arithmetic runs in log space: motion-primitive vectors reach d ~ 160 and
linear-space densities underflow long before that.
"""

from __future__ import annotations

import base64
import json
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

SERIAL_FORMAT = "drivemp-gmm-v1"


class DegenerateComponentError(RuntimeError):
    """A component covariance stayed non-positive-definite after flooring."""


@dataclass(frozen=True)
class FitConfig:
    k: int
    max_iters: int = 300
    tol: float = 1e-6      # relative log-likelihood improvement threshold
    seed: int = 0
    cov_floor: float = 1e-6  # scaled by mean data variance, added each M-step

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")


@dataclass(frozen=True)
class GaussianMixture:
    """Weighted sum of multivariate normal densities.

    weights: (K,) nonnegative, sums to 1.  means: (K, d).
    covariances: (K, d, d) symmetric positive definite.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.means, dtype=float)
        cov = np.asarray(self.covariances, dtype=float)
        if mu.ndim != 2:
            raise ValueError("means must be (K, d)")
        k, d = mu.shape
        if w.shape != (k,) or cov.shape != (k, d, d):
            raise ValueError(
                f"inconsistent shapes: weights {w.shape}, means {mu.shape}, "
                f"covariances {cov.shape}"
            )
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")
        for a in (w, mu, cov):
            a.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariances", cov)

    @property
    def k(self) -> int:
        return self.means.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]


def _chol_lower(cov: np.ndarray) -> np.ndarray:
    try:
        return scipy.linalg.cholesky(cov, lower=True)
    except scipy.linalg.LinAlgError as e:
        raise DegenerateComponentError(f"degenerate component: {e}") from e


def _component_log_density(mean, cov, X) -> np.ndarray:
    """log N(x; mean, cov) for rows of X, via the Cholesky factor.

    log g = -d/2 log(2pi) - sum(log diag L) - 1/2 |L^-1 (x - mean)|^2
    """
    L = _chol_lower(cov)
    diff = (X - mean).T  # (d, n)
    sol = scipy.linalg.solve_triangular(L, diff, lower=True, check_finite=False)
    d = len(mean)
    return (
        -0.5 * d * np.log(2.0 * np.pi)
        - np.sum(np.log(np.diag(L)))
        - 0.5 * np.sum(sol * sol, axis=0)
    )


def _as_batch(x, d: int) -> tuple[np.ndarray, bool]:
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[1] != d:
        raise ValueError(f"dimension mismatch: expected d={d}, got {X.shape[1]}")
    return X, single


def log_joint(gmm: GaussianMixture, x) -> np.ndarray:
    """log(p_i * g_i(x)) per component: (n, K) or (K,) for a single x."""
    X, single = _as_batch(x, gmm.d)
    out = np.empty((X.shape[0], gmm.k))
    for i in range(gmm.k):
        out[:, i] = np.log(gmm.weights[i]) if gmm.weights[i] > 0 else -np.inf
        if gmm.weights[i] > 0:
            out[:, i] += _component_log_density(gmm.means[i], gmm.covariances[i], X)
    return out[0] if single else out


def log_density(gmm: GaussianMixture, x) -> np.ndarray | float:
    """log of the mixture density at x (scalar for a single point)."""
    lj = log_joint(gmm, x)
    out = logsumexp(lj, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def density(gmm: GaussianMixture, x) -> np.ndarray | float:
    """Mixture density at x in linear form; see log_density for log form."""
    return np.exp(log_density(gmm, x))


def responsibility(gmm: GaussianMixture, x) -> np.ndarray:
    """Posterior component probabilities Pr(j | x), computed in log space.

    If every component log-density is -inf the posterior is undefined; a
    uniform vector is returned with a warning.
    """
    lj = log_joint(gmm, x)
    lj = np.atleast_2d(lj)
    norm = logsumexp(lj, axis=1, keepdims=True)
    bad = ~np.isfinite(norm[:, 0])
    if np.any(bad):
        warnings.warn("all component densities vanished; returning uniform responsibilities")
        lj[bad] = 0.0
        norm[bad] = np.log(gmm.k)
    resp = np.exp(lj - norm)
    return resp[0] if np.ndim(x) == 1 else resp


def _floor_value(data: np.ndarray, cov_floor: float) -> float:
    """Regularization added to covariance diagonals: relative to the mean
    per-dimension variance of the training data."""
    var = np.var(data, axis=0)
    mean_var = float(np.mean(var))
    if mean_var <= 0.0:
        mean_var = 1.0
    return cov_floor * mean_var


def kmeans_init(
    data,
    k: int,
    seed: int = 0,
    cov_floor: float = 1e-6,
    max_iters: int = 100,
) -> GaussianMixture:
    """Lloyd's k-means from seeded distinct-point centers, packaged as a
    mixture (centroid means, within-cluster covariances, fraction weights).

    Empty clusters are re-seeded from the point farthest from its center.
    """
    X = np.asarray(data, dtype=float)
    if X.ndim != 2:
        raise ValueError("data must be (n, d)")
    n, d = X.shape
    if k > n:
        raise ValueError(f"k={k} exceeds n={n}")
    rng = np.random.default_rng(seed)
    centers = X[rng.choice(n, size=k, replace=False)].copy()
    assign = np.zeros(n, dtype=int)
    for _ in range(max_iters):
        d2 = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_assign = np.argmin(d2, axis=1)
        for j in range(k):
            if not np.any(new_assign == j):
                # re-seed dead center from the farthest point
                far = int(np.argmax(np.min(d2, axis=1)))
                centers[j] = X[far]
                new_assign[far] = j
                d2[far] = 0.0  # keep later dead centers from picking it again
        moved = np.any(new_assign != assign)
        assign = new_assign
        for j in range(k):
            centers[j] = X[assign == j].mean(axis=0)
        if not moved:
            break
    floor = _floor_value(X, cov_floor)
    weights = np.bincount(assign, minlength=k).astype(float) / n
    covs = np.empty((k, d, d))
    for j in range(k):
        Xi = X[assign == j]
        diff = Xi - centers[j]
        covs[j] = diff.T @ diff / max(len(Xi), 1)
        covs[j][np.diag_indices(d)] += floor
    return GaussianMixture(weights=weights, means=centers, covariances=covs)


def _m_step(X: np.ndarray, log_resp: np.ndarray, floor: float) -> GaussianMixture:
    """Weighted maximum-likelihood update from log responsibilities."""
    n, d = X.shape
    resp = np.exp(log_resp)
    nk = resp.sum(axis=0)  # (K,)
    nk = np.maximum(nk, 1e-300)
    weights = nk / n
    means = (resp.T @ X) / nk[:, None]
    k = resp.shape[1]
    covs = np.empty((k, d, d))
    for j in range(k):
        rw = np.sqrt(resp[:, j])[:, None]
        diff = (X - means[j]) * rw
        cov = diff.T @ diff / nk[j]
        cov = 0.5 * (cov + cov.T)
        cov[np.diag_indices(d)] += floor
        covs[j] = cov
    return GaussianMixture(weights=weights / weights.sum(), means=means, covariances=covs)


def em_fit(data, cfg: FitConfig) -> tuple[GaussianMixture, list[float]]:
    """Standard EM from a k-means start.

    Each loop evaluates the log-likelihood of the current parameters (the
    recorded history, guaranteed non-decreasing), stops when the relative
    improvement drops below cfg.tol or max_iters is hit, then applies the
    M-step.  The covariance floor is applied every M-step.
    """
    X = np.asarray(data, dtype=float)
    if X.ndim != 2:
        raise ValueError("data must be (n, d)")
    n, d = X.shape
    if n <= cfg.k:
        raise ValueError(f"need n > k, got n={n}, k={cfg.k}")
    if not np.all(np.isfinite(X)):
        raise ValueError("data must be finite")
    floor = _floor_value(X, cfg.cov_floor)
    gmm = kmeans_init(X, cfg.k, seed=cfg.seed, cov_floor=cfg.cov_floor)
    history: list[float] = []
    for _ in range(cfg.max_iters):
        lj = log_joint(gmm, X)
        norm = logsumexp(lj, axis=1)
        ll = float(np.sum(norm))
        if history and ll - history[-1] < cfg.tol * abs(history[-1]):
            break
        history.append(ll)
        gmm = _m_step(X, lj - norm[:, None], floor)
    return gmm, history


def n_free_params(k: int, d: int) -> int:
    """Free parameters of a full-covariance K-component mixture in d dims."""
    return (k - 1) + k * d + k * d * (d + 1) // 2


def bic(gmm: GaussianMixture, data) -> float:
    """Bayes information criterion, lower is better."""
    X = np.asarray(data, dtype=float)
    ll = float(np.sum(log_density(gmm, X)))
    m = n_free_params(gmm.k, gmm.d)
    return -2.0 * ll + m * np.log(X.shape[0])


@dataclass(frozen=True)
class KFit:
    gmm: GaussianMixture
    history: tuple[float, ...]
    bic: float


def select_k(data, k_range, cfg: FitConfig) -> tuple[int, dict[int, KFit]]:
    """Fit every candidate K with a fresh seed and pick the BIC argmin.

    Ties break toward smaller K.  Candidates whose fit degenerates are
    skipped; if all degenerate, raises DegenerateComponentError.
    """
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise ValueError("k_range is empty")
    X = np.asarray(data, dtype=float)
    if max(ks) >= X.shape[0]:
        raise ValueError(f"max k {max(ks)} must be < n {X.shape[0]}")
    fits: dict[int, KFit] = {}
    for k in ks:
        sub_seed = int(np.random.SeedSequence((cfg.seed, k)).generate_state(1)[0])
        try:
            gmm, history = em_fit(X, replace(cfg, k=k, seed=sub_seed))
        except DegenerateComponentError:
            continue
        fits[k] = KFit(gmm=gmm, history=tuple(history), bic=bic(gmm, X))
    if not fits:
        raise DegenerateComponentError("all candidate fits degenerate")
    best = min(fits, key=lambda k: (fits[k].bic, k))
    return best, fits


# -- serialization -----------------------------------------------------------
#
# One JSON file per mixture, arrays as base64 of little-endian float64 bytes:
# exact round trip and byte-stable output (no zip timestamps).

def _enc(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _dec(obj: dict) -> np.ndarray:
    a = np.frombuffer(base64.b64decode(obj["data"]), dtype="<f8")
    return a.reshape(obj["shape"]).copy()


def mixture_to_dict(gmm: GaussianMixture, cfg: FitConfig | None = None) -> dict:
    out = {
        "format": SERIAL_FORMAT,
        "k": gmm.k,
        "d": gmm.d,
        "weights": _enc(gmm.weights),
        "means": _enc(gmm.means),
        "covariances": _enc(gmm.covariances),
    }
    if cfg is not None:
        out["fit_config"] = {
            "k": cfg.k,
            "max_iters": cfg.max_iters,
            "tol": cfg.tol,
            "seed": cfg.seed,
            "cov_floor": cfg.cov_floor,
        }
    return out


def mixture_from_dict(obj: dict) -> tuple[GaussianMixture, FitConfig | None]:
    if obj.get("format") != SERIAL_FORMAT:
        raise ValueError(f"unknown mixture format {obj.get('format')!r}")
    gmm = GaussianMixture(
        weights=_dec(obj["weights"]),
        means=_dec(obj["means"]),
        covariances=_dec(obj["covariances"]),
    )
    cfg = None
    if "fit_config" in obj:
        c = obj["fit_config"]
        cfg = FitConfig(
            k=int(c["k"]),
            max_iters=int(c["max_iters"]),
            tol=float(c["tol"]),
            seed=int(c["seed"]),
            cov_floor=float(c["cov_floor"]),
        )
    return gmm, cfg


def save_mixture(gmm: GaussianMixture, path, cfg: FitConfig | None = None) -> None:
    Path(path).write_text(json.dumps(mixture_to_dict(gmm, cfg), indent=1), encoding="utf-8")


def load_mixture(path) -> tuple[GaussianMixture, FitConfig | None]:
    return mixture_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
