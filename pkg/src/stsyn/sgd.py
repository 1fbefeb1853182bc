"""Objectives, stochastic gradients, the local update rule and model averaging.

Models are plain 1-D ``float64`` numpy arrays. Batched variants take a stack of
models ``W`` with shape ``(n, d)`` and a matching stack of batch index rows with
shape ``(n, B)``; the single-model functions route through the same batched
code so that both paths produce bit-identical results.
"""
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .errors import NonFiniteError


def check_finite(x, what="model"):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite {what}: {x!r}")
    return x


@dataclass(frozen=True)
class MiniBatch:
    """Sample indices (global dataset indices) for one local step."""

    indices: np.ndarray
    worker: int = 0
    round: int = 0
    step: int = 0

    def __post_init__(self):
        if np.ndim(self.indices) != 1 or len(self.indices) < 1:
            raise ValueError("a minibatch needs a non-empty 1-D index array")


class Objective:
    """Empirical risk ``F(w) = mean_i f(w; xi_i)`` over a fixed dataset."""

    kind = None

    def __init__(self, features, targets):
        self.features = np.ascontiguousarray(features, dtype=np.float64)
        self.targets = np.ascontiguousarray(targets, dtype=np.float64)
        if self.features.ndim != 2 or len(self.targets) != len(self.features):
            raise ValueError("features must be (N, d) with N matching targets")
        if len(self.targets) == 0:
            raise ValueError("empty dataset")

    @property
    def n_samples(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    # subclasses implement the three kernels below
    def sample_losses(self, w, idx=None):
        raise NotImplementedError

    def batch_gradients(self, W, idx):
        """Mean gradient over ``idx[r]`` evaluated at ``W[r]``, for every row ``r``."""
        raise NotImplementedError

    def per_sample_gradients(self, w):
        raise NotImplementedError

    def loss(self, w):
        return float(np.mean(self.sample_losses(w)))

    def loss_and_grad(self, w):
        g = self.per_sample_gradients(w).mean(axis=0)
        return self.loss(w), g

    def gradient_variance(self, w):
        """Exact ``E_i ||grad f(w; xi_i) - grad F(w)||^2`` by enumerating all samples."""
        G = self.per_sample_gradients(w)
        dev = G - G.mean(axis=0)
        return float(np.mean(np.einsum("nd,nd->n", dev, dev)))

    def accuracy(self, w):
        return None


class QuadraticObjective(Objective):
    """Least squares, ``f(w; (a, b)) = 0.5 * (a . w - b)**2``.

    ``smoothness`` (largest eigenvalue of the averaged Hessian), ``minimizer``
    and ``f_star`` are exact.
    """

    kind = "quadratic"

    def __init__(self, features, targets):
        super().__init__(features, targets)
        A, b = self.features, self.targets
        self.hessian = A.T @ A / self.n_samples
        self.smoothness = float(np.linalg.eigvalsh(self.hessian)[-1])
        self.minimizer = np.linalg.lstsq(A, b, rcond=None)[0]
        self.f_star = self.loss(self.minimizer)

    def sample_losses(self, w, idx=None):
        A = self.features if idx is None else self.features[idx]
        b = self.targets if idx is None else self.targets[idx]
        r = A @ w - b
        return 0.5 * r * r

    def batch_gradients(self, W, idx):
        X = self.features[idx]
        r = np.einsum("nbd,nd->nb", X, W) - self.targets[idx]
        return np.einsum("nbd,nb->nd", X, r) / idx.shape[1]

    def per_sample_gradients(self, w):
        r = self.features @ w - self.targets
        return self.features * r[:, None]

    def variance_bound(self, radius):
        """Upper bound on the gradient variance over the ball ``||w - w*|| <= radius``.

        Uses ``g_i(w) - grad F(w) = g_i(w*) + (H_i - H)(w - w*)``.
        """
        A = self.features
        g_star = self.per_sample_gradients(self.minimizer)
        g_star_norm = np.linalg.norm(g_star - g_star.mean(axis=0), axis=1)
        sq = np.einsum("nd,nd->n", A, A)
        # spectral norm of a a^T - H is bounded by max(|a|^2, lambda_max(H))
        dev_norm = np.maximum(sq, self.smoothness)
        return float(np.mean((g_star_norm + dev_norm * radius) ** 2))


class LogisticObjective(Objective):
    """Binary logistic regression with labels in {-1, +1}.

    The loss ``log(1 + exp(-y a.w))`` is evaluated with ``logaddexp``.
    ``smoothness`` is the standard bound ``lambda_max(A^T A / N) / 4`` and
    ``f_star`` is the trivial lower bound 0.
    """

    kind = "logistic"
    f_star = 0.0

    def __init__(self, features, targets):
        super().__init__(features, targets)
        if not np.all(np.isin(self.targets, (-1.0, 1.0))):
            raise ValueError("logistic labels must be -1 or +1")
        A = self.features
        self.smoothness = float(np.linalg.eigvalsh(A.T @ A / self.n_samples)[-1] / 4.0)

    def sample_losses(self, w, idx=None):
        A = self.features if idx is None else self.features[idx]
        y = self.targets if idx is None else self.targets[idx]
        return np.logaddexp(0.0, -y * (A @ w))

    def batch_gradients(self, W, idx):
        X = self.features[idx]
        y = self.targets[idx]
        z = y * np.einsum("nbd,nd->nb", X, W)
        coef = -y * special.expit(-z)
        return np.einsum("nbd,nb->nd", X, coef) / idx.shape[1]

    def per_sample_gradients(self, w):
        y = self.targets
        coef = -y * special.expit(-y * (self.features @ w))
        return self.features * coef[:, None]

    def accuracy(self, w):
        pred = np.where(self.features @ w >= 0, 1.0, -1.0)
        return float(np.mean(pred == self.targets))

    def reference_minimum(self, w0=None):
        """Numerically minimise F; returns ``(w_min, F_min)``."""
        w0 = np.zeros(self.dim) if w0 is None else w0
        res = optimize.minimize(
            lambda w: self.loss_and_grad(w), w0, jac=True, method="L-BFGS-B",
            options={"gtol": 1e-12, "ftol": 1e-15, "maxiter": 10000},
        )
        return res.x, float(res.fun)


def minibatch_gradient(obj, w, batch):
    """Average of per-sample gradients over ``batch`` at ``w``."""
    g = obj.batch_gradients(np.asarray(w, dtype=np.float64)[None, :], np.asarray(batch.indices)[None, :])[0]
    return check_finite(g, "gradient")


def local_update(obj, w, batch, alpha):
    """One local SGD step ``w - alpha * minibatch_gradient``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return local_updates(obj, np.asarray(w, dtype=np.float64)[None, :], np.asarray(batch.indices)[None, :], alpha)[0]


def local_updates(obj, W, idx, alpha):
    """One step for a stack of models, each on its own batch row."""
    G = check_finite(obj.batch_gradients(W, idx), "gradient")
    return W - alpha * G


def _tree_sum(X):
    while X.shape[0] > 1:
        if X.shape[0] % 2:
            head = X[:-1:2] + X[1::2]
            X = np.concatenate([head, X[-1:]])
        else:
            X = X[0::2] + X[1::2]
    return X[0]


def aggregate(models):
    """Unweighted coordinate-wise mean of the uploaded models.

    Values are sorted per coordinate and averaged as ``lowest + tree-sum of
    deviations / S``. The result does not depend on the input order, and
    averaging identical copies returns the copy exactly.
    """
    if len(models) == 0:
        raise ValueError("cannot aggregate an empty set of models")
    try:
        X = np.array(models, dtype=np.float64)
    except ValueError as exc:
        raise ValueError("models must share one dimension") from exc
    if X.ndim != 2:
        raise ValueError("models must share one dimension")
    X = np.sort(X, axis=0)
    base = X[0]
    out = base + _tree_sum(X - base) / X.shape[0]
    return check_finite(out)


def full_loss_and_grad(obj, w):
    """Exact ``F(w)`` and ``grad F(w)`` over the whole dataset."""
    loss, grad = obj.loss_and_grad(np.asarray(w, dtype=np.float64))
    if not np.isfinite(loss):
        raise NonFiniteError(f"non-finite loss {loss}")
    return loss, check_finite(grad, "gradient")


def exact_variance_bound(obj, probe_points):
    """Max over probes of the exactly enumerated gradient variance."""
    return max(obj.gradient_variance(np.asarray(w, dtype=np.float64)) for w in probe_points)


def estimate_variance_bound(obj, probe_points, trials=1000, seed=0, inflation=1.5):
    """Sampled estimate of the gradient-variance constant, times ``inflation``.

    At every probe ``trials`` samples are drawn uniformly with replacement and
    the mean squared deviation of their gradients from the full gradient is
    taken; the maximum over probes is inflated by the safety factor.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for w in probe_points:
        w = check_finite(np.asarray(w, dtype=np.float64))
        full = obj.per_sample_gradients(w)
        mean = full.mean(axis=0)
        pick = rng.integers(0, obj.n_samples, size=trials)
        dev = full[pick] - mean
        worst = max(worst, float(np.mean(np.einsum("nd,nd->n", dev, dev))))
    return inflation * worst
