"""Full-covariance Gaussian mixture fitted by EM.

Used as the latent-space sampler of the VAE: instead of drawing codes from
the N(0, I) prior, generation draws them from a mixture fitted to the
posterior means of the training rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    loglik_trace: tuple[float, ...] = ()
    dropped: tuple[int, ...] = ()
    converged: bool = True

    @property
    def k(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def log_prob_components(self, x: np.ndarray) -> np.ndarray:
        return _component_log_prob(x, self.weights, self.means, self.covariances)

    def log_likelihood(self, x: np.ndarray) -> float:
        """Mean per-row log-density of ``x``."""
        return float(logsumexp(self.log_prob_components(x), axis=1).mean())

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(self.k, size=n, p=self.weights)
        eps = rng.standard_normal((n, self.dim))
        out = np.empty((n, self.dim))
        for j in range(self.k):
            sel = comp == j
            chol = np.linalg.cholesky(self.covariances[j])
            out[sel] = self.means[j] + eps[sel] @ chol.T
        return out

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "loglik_trace": list(self.loglik_trace),
            "dropped": list(self.dropped),
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d: dict) -> GmmModel:
        return cls(
            np.asarray(d["weights"], dtype=np.float64),
            np.asarray(d["means"], dtype=np.float64),
            np.asarray(d["covariances"], dtype=np.float64),
            tuple(d.get("loglik_trace", ())),
            tuple(d.get("dropped", ())),
            bool(d.get("converged", True)),
        )


def _component_log_prob(x, weights, means, covs) -> np.ndarray:
    n, d = x.shape
    out = np.empty((n, weights.size))
    for j in range(weights.size):
        chol = np.linalg.cholesky(covs[j])
        diff = np.linalg.solve(chol, (x - means[j]).T)
        maha = np.sum(diff * diff, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        out[:, j] = np.log(weights[j]) - 0.5 * (d * LOG_2PI + logdet + maha)
    return out


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers)


def _regularize(cov: np.ndarray, jitter: float) -> np.ndarray:
    cov = 0.5 * (cov + cov.T)
    # only ill-conditioned components are touched, so well-posed fits keep exact moments
    if np.linalg.eigvalsh(cov)[0] < jitter:
        cov = cov + jitter * np.eye(cov.shape[0])
    return cov


def _m_step(x, resp, jitter):
    nk = resp.sum(axis=0)
    weights = nk / nk.sum()
    means = (resp.T @ x) / nk[:, None]
    covs = np.empty((nk.size, x.shape[1], x.shape[1]))
    for j in range(nk.size):
        diff = x - means[j]
        covs[j] = _regularize((resp[:, j, None] * diff).T @ diff / nk[j], jitter)
    return weights, means, covs


def fit_gmm(
    x: np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = 200,
    tol: float = 1e-7,
    jitter: float = 1e-6,
    min_weight: float = 1e-8,
) -> GmmModel:
    """Fit a ``k``-component mixture by EM with k-means++ seeding.

    Stops after ``max_iter`` iterations or when the mean log-likelihood
    improves by less than ``tol``. Components whose weight drops below
    ``min_weight`` are removed and recorded in ``dropped``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("need a non-empty 2-D data matrix")
    if not 1 <= k <= x.shape[0]:
        raise ValueError(f"k must be between 1 and the number of rows ({x.shape[0]}), got {k}")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(x, k, rng)
    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    resp = np.zeros((x.shape[0], k))
    resp[np.arange(x.shape[0]), np.argmin(d2, axis=1)] = 1.0
    alive = np.arange(k)
    keep = resp.sum(axis=0) > 0
    dropped = [int(j) for j in alive[~keep]]
    resp, alive = resp[:, keep], alive[keep]
    weights, means, covs = _m_step(x, resp, jitter)

    trace: list[float] = []
    converged = False
    for _ in range(max_iter):
        logp = _component_log_prob(x, weights, means, covs)
        norm = logsumexp(logp, axis=1)
        trace.append(float(norm.mean()))
        if len(trace) > 1 and trace[-1] - trace[-2] < tol:
            converged = True
            break
        resp = np.exp(logp - norm[:, None])
        weights, means, covs = _m_step(x, resp, jitter)
        low = weights < min_weight
        if low.any():
            dropped += [int(j) for j in alive[low]]
            alive = alive[~low]
            resp = resp[:, ~low]
            weights, means, covs = _m_step(x, resp, jitter)
    return GmmModel(weights, means, covs, tuple(trace), tuple(dropped), converged)
