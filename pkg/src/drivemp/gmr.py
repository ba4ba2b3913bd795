"""Gaussian mixture regression: condition a joint mixture on an input block.

Per component k the conditional Gaussian is

    mu_hat_k  = mu_out_k + S_oi_k S_in_k^-1 (x_in - mu_in_k)
    cov_hat_k = S_out_k  - S_oi_k S_in_k^-1 S_io_k

mixed with input-posterior weights beta_k.  The mixture covariance uses
beta_k^2 weighting and omits the between-component mean-spread term, so it
understates the true conditional variance; that is deliberate fidelity to
the source formulation and is documented wherever the bands are consumed.
All input-block solves go through a Cholesky factorization, never an
explicit inverse (input blocks reach ~100 dims in this package).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

from .mixture import GaussianMixture


@dataclass(frozen=True)
class BlockPartition:
    """Split of the d joint dimensions into input and output blocks."""

    input_indices: tuple[int, ...]
    output_indices: tuple[int, ...]

    def __post_init__(self):
        ii = tuple(int(i) for i in self.input_indices)
        oi = tuple(int(i) for i in self.output_indices)
        if not ii or not oi:
            raise ValueError("both blocks must be nonempty")
        if set(ii) & set(oi):
            raise ValueError("input and output indices overlap")
        d = len(ii) + len(oi)
        if set(ii) | set(oi) != set(range(d)):
            raise ValueError(f"indices must cover 0..{d - 1} exactly")
        object.__setattr__(self, "input_indices", ii)
        object.__setattr__(self, "output_indices", oi)

    @property
    def d(self) -> int:
        return len(self.input_indices) + len(self.output_indices)


@dataclass(frozen=True)
class ConditionalEstimate:
    mean: np.ndarray        # (d_out,)
    covariance: np.ndarray  # (d_out, d_out), symmetric PSD
    mixing: np.ndarray      # (K,), sums to 1


class PartitionedMixture:
    """Per-component block parameters with cached factorizations.

    Caches, per component: the Cholesky factor of the input block, the
    regression gain S_oi S_in^-1, and the input-independent conditional
    covariance.  Immutable once built; prediction over many queries reuses
    the factorizations.
    """

    def __init__(self, gmm: GaussianMixture, blocks: BlockPartition):
        if blocks.d != gmm.d:
            raise ValueError(f"partition covers {blocks.d} dims, mixture has {gmm.d}")
        ii = np.asarray(blocks.input_indices, dtype=int)
        oi = np.asarray(blocks.output_indices, dtype=int)
        self.blocks = blocks
        self.k = gmm.k
        self.d_in = len(ii)
        self.d_out = len(oi)
        self.weights = gmm.weights
        self.mu_in = gmm.means[:, ii]
        self.mu_out = gmm.means[:, oi]
        self.cov_in = gmm.covariances[:, ii[:, None], ii[None, :]]
        self.cov_out = gmm.covariances[:, oi[:, None], oi[None, :]]
        self.cov_oi = gmm.covariances[:, oi[:, None], ii[None, :]]
        self.cov_io = gmm.covariances[:, ii[:, None], oi[None, :]]
        self._chol = []
        self._gain = np.empty((self.k, self.d_out, self.d_in))
        self._cond_cov = np.empty((self.k, self.d_out, self.d_out))
        for j in range(self.k):
            try:
                c, low = scipy.linalg.cho_factor(self.cov_in[j], lower=True)
            except scipy.linalg.LinAlgError as e:
                raise ValueError(f"singular input block in component {j}: {e}") from e
            self._chol.append((c, low))
            self._gain[j] = scipy.linalg.cho_solve((c, low), self.cov_io[j]).T
            cc = self.cov_out[j] - self._gain[j] @ self.cov_io[j]
            self._cond_cov[j] = 0.5 * (cc + cc.T)

    def input_log_joint(self, X_in: np.ndarray) -> np.ndarray:
        """log(p_k N(x_in; mu_in_k, S_in_k)) for rows of X_in: (n, K)."""
        X_in = np.atleast_2d(np.asarray(X_in, dtype=float))
        n = X_in.shape[0]
        out = np.empty((n, self.k))
        for j in range(self.k):
            c, low = self._chol[j]
            diff = (X_in - self.mu_in[j]).T
            sol = scipy.linalg.solve_triangular(c, diff, lower=low, check_finite=False)
            out[:, j] = (
                np.log(self.weights[j])
                - 0.5 * self.d_in * np.log(2.0 * np.pi)
                - np.sum(np.log(np.diag(c)))
                - 0.5 * np.sum(sol * sol, axis=0)
            )
        return out


def partition(gmm: GaussianMixture, blocks: BlockPartition) -> PartitionedMixture:
    """Extract per-component input/output means and covariance blocks."""
    return PartitionedMixture(gmm, blocks)


def condition_component(pm: PartitionedMixture, j: int, x_in) -> tuple[np.ndarray, np.ndarray]:
    """Conditional mean and covariance of component j given the input block."""
    x_in = np.asarray(x_in, dtype=float)
    if x_in.shape != (pm.d_in,):
        raise ValueError(f"x_in must have shape ({pm.d_in},), got {x_in.shape}")
    mu = pm.mu_out[j] + pm._gain[j] @ (x_in - pm.mu_in[j])
    return mu, pm._cond_cov[j].copy()


def mixing_weights(pm: PartitionedMixture, x_in) -> np.ndarray:
    """Posterior component weights given the input block, in log space."""
    lj = pm.input_log_joint(np.asarray(x_in, dtype=float)[None, :])[0]
    norm = logsumexp(lj)
    if not np.isfinite(norm):
        warnings.warn("all input-block densities vanished; returning uniform mixing weights")
        return np.full(pm.k, 1.0 / pm.k)
    return np.exp(lj - norm)


def regress(pm: PartitionedMixture, x_in) -> ConditionalEstimate:
    """Mix the per-component conditionals: mean with beta, covariance with
    beta^2 (see module docstring for the variance caveat)."""
    x_in = np.asarray(x_in, dtype=float)
    beta = mixing_weights(pm, x_in)
    mean = np.zeros(pm.d_out)
    cov = np.zeros((pm.d_out, pm.d_out))
    for j in range(pm.k):
        mu_j, cov_j = condition_component(pm, j, x_in)
        mean += beta[j] * mu_j
        cov += beta[j] ** 2 * cov_j
    return ConditionalEstimate(mean=mean, covariance=cov, mixing=beta)


def regress_batch(pm: PartitionedMixture, X_in) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized regression over query rows.

    Returns (means (n, d_out), variances (n, d_out)); the variances are the
    diagonals of the beta^2-mixed conditional covariances.
    """
    X_in = np.atleast_2d(np.asarray(X_in, dtype=float))
    n = X_in.shape[0]
    lj = pm.input_log_joint(X_in)
    norm = logsumexp(lj, axis=1, keepdims=True)
    bad = ~np.isfinite(norm[:, 0])
    if np.any(bad):
        warnings.warn("all input-block densities vanished; returning uniform mixing weights")
        lj[bad] = 0.0
        norm[bad] = np.log(pm.k)
    beta = np.exp(lj - norm)  # (n, K)
    means = np.zeros((n, pm.d_out))
    for j in range(pm.k):
        mu_j = pm.mu_out[j] + (X_in - pm.mu_in[j]) @ pm._gain[j].T
        means += beta[:, j, None] * mu_j
    cond_var = np.stack([np.diag(pm._cond_cov[j]) for j in range(pm.k)])  # (K, d_out)
    variances = (beta ** 2) @ cond_var
    return means, variances
