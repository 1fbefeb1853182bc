"""Per-update compute times and round-level order statistics.

Each local update takes an exponential amount of time with mean ``mu``. A
worker therefore needs an Erlang(U, mu) time to finish ``U`` updates, and a
round that waits for the ``K`` fastest of ``M`` workers lasts the K-th order
statistic of ``M`` i.i.d. Erlang variables. This module evaluates the mean of
that order statistic by quadrature, derives the expected update and uploader
counts from it, and provides the Monte-Carlo oracle those formulas are checked
against.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import QuadratureError
from .rng import keyed_rng

# Gauss-Legendre nodes on [-1, 1]; 15 points integrate polynomials of degree 29 exactly.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(15)


@dataclass
class TimingModel:
    """Exponential per-update compute time with its own random stream."""

    mu: float
    seed: int = 0
    stream_id: int = 0
    _rng: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        self._rng = keyed_rng(self.seed, "timing", self.stream_id)

    def sample(self, size=None):
        return self._rng.exponential(self.mu, size=size)


def sample_update_time(model):
    """Draw one per-update compute time from ``model``'s stream."""
    return float(model.sample())


@dataclass(frozen=True)
class OrderStatParams:
    M: int
    K: int
    U: int

    def __post_init__(self):
        if self.M < 1:
            raise ValueError(f"M must be >= 1, got {self.M}")
        if not 1 <= self.K <= self.M:
            raise ValueError(f"K must lie in [1, M={self.M}], got {self.K}")
        if self.U < 1:
            raise ValueError(f"U must be >= 1, got {self.U}")


@dataclass(frozen=True)
class AnalyticsResult:
    t_bar: float
    u_bar: float
    s_bar: float
    quadrature_abs_err: float


# -- regularized incomplete gamma ------------------------------------------

def regularized_gamma(a, x, rtol=1e-15, max_iter=500):
    """Return ``(P(a, x), Q(a, x))`` for ``a > 0`` and ``x >= 0``.

    Series expansion below ``x < a + 1``, Lentz continued fraction above.
    Whichever of P and Q is computed directly keeps full relative accuracy;
    the other is its complement.
    """
    a = float(a)
    if a <= 0:
        raise ValueError("a must be positive")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("x must be non-negative")
    flat = np.atleast_1d(x).ravel()
    P = np.zeros_like(flat)
    Q = np.ones_like(flat)
    lg = math.lgamma(a)

    lo = (flat > 0) & (flat < a + 1)
    if lo.any():
        xs = flat[lo]
        term = np.full_like(xs, 1.0 / a)
        total = term.copy()
        ap = a
        for _ in range(max_iter):
            ap += 1.0
            term = term * xs / ap
            total += term
            if np.all(np.abs(term) < np.abs(total) * rtol):
                break
        else:
            raise ArithmeticError("incomplete gamma series did not converge")
        p = total * np.exp(-xs + a * np.log(xs) - lg)
        P[lo] = p
        Q[lo] = 1.0 - p

    hi = flat >= a + 1
    if hi.any():
        xs = flat[hi]
        tiny = 1e-300
        b = xs + 1.0 - a
        c = np.full_like(xs, 1.0 / tiny)
        d = 1.0 / b
        h = d.copy()
        for i in range(1, max_iter + 1):
            an = -i * (i - a)
            b = b + 2.0
            d = an * d + b
            d = np.where(np.abs(d) < tiny, tiny, d)
            c = b + an / c
            c = np.where(np.abs(c) < tiny, tiny, c)
            d = 1.0 / d
            delta = d * c
            h = h * delta
            if np.all(np.abs(delta - 1.0) < rtol):
                break
        else:
            raise ArithmeticError("incomplete gamma continued fraction did not converge")
        q = np.exp(-xs + a * np.log(xs) - lg) * h
        Q[hi] = q
        P[hi] = 1.0 - q

    shape = np.shape(x)
    return P.reshape(shape), Q.reshape(shape)


def erlang_cdf_finite_sum(U, x):
    """P(U, x) = 1 - exp(-x) * sum_{k<U} x**k / k! for integer ``U``."""
    x = np.asarray(x, dtype=float)
    term = np.ones_like(x)
    total = np.ones_like(x)
    for k in range(1, int(U)):
        term = term * x / k
        total = total + term
    return 1.0 - np.exp(-x) * total


# -- quadrature ---------------------------------------------------------------

def _gl_panel(f, a, b):
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    return half * np.dot(_GL_WEIGHTS, f(mid + half * _GL_NODES))


def adaptive_gauss_legendre(f, a, b, tol, initial_panels=16, max_panels=20000):
    """Integrate a vectorised ``f`` over ``[a, b]`` by panel bisection.

    A panel is accepted when its 15-point rule and the sum of the rules on its
    two halves differ by at most its share of ``tol``. Returns
    ``(value, abs_err_estimate)``.
    """
    edges = np.linspace(a, b, initial_panels + 1)
    stack = [(lo, hi, _gl_panel(f, lo, hi)) for lo, hi in zip(edges[:-1], edges[1:])]
    width = b - a
    total = 0.0
    err = 0.0
    evaluated = len(stack)
    while stack:
        lo, hi, coarse = stack.pop()
        mid = 0.5 * (lo + hi)
        left = _gl_panel(f, lo, mid)
        right = _gl_panel(f, mid, hi)
        evaluated += 2
        fine = left + right
        diff = abs(fine - coarse)
        if diff <= tol * (hi - lo) / width or hi - lo < 1e-13 * width:
            total += fine
            err += diff
            continue
        if evaluated > max_panels:
            raise QuadratureError(
                f"quadrature budget of {max_panels} panels exhausted", estimate=total, abs_err=err
            )
        stack.append((lo, mid, left))
        stack.append((mid, hi, right))
    return total, err


def _upper_limit(p, survival=1e-12):
    # P(max of M Erlangs > x) <= M * Q(U, x); grow x until that is negligible
    x = float(p.U) + 10.0
    while p.M * regularized_gamma(p.U, x)[1] > survival:
        x *= 1.5
    return x


def _scaled_order_stat_mean(p, tol):
    """E[T_{K:M}] / mu, evaluated in units of mu. Returns ``(value, abs_err)``."""
    M, K, U = p.M, p.K, p.U
    log_coef = math.log(K) + math.lgamma(M + 1) - math.lgamma(K + 1) - math.lgamma(M - K + 1)
    log_norm = math.lgamma(U)

    def integrand(x):
        out = np.zeros_like(x)
        pos = x > 0
        xs = x[pos]
        P, Q = regularized_gamma(U, xs)
        with np.errstate(divide="ignore"):
            logv = log_coef + U * np.log(xs) - xs - log_norm
            if K > 1:
                logv = logv + (K - 1) * np.log(P)
            if M > K:
                logv = logv + (M - K) * np.log(Q)
        out[pos] = np.exp(logv)
        return out

    upper = _upper_limit(p)
    return adaptive_gauss_legendre(integrand, 0.0, upper, tol)


def erlang_round_time_mean(p, mu, tol=None):
    """Mean of the K-th smallest of M i.i.d. Erlang(U, mu) round times.

    Parameters
    ----------
    p : OrderStatParams
    mu : float
        Mean per-update compute time in seconds.
    tol : float, optional
        Absolute error target in seconds. Defaults to ``1e-8 * U * mu``.

    Returns
    -------
    AnalyticsResult
        ``t_bar`` is the requested mean; ``u_bar`` and ``s_bar`` are filled in
        from it. Raises :class:`QuadratureError` if ``tol`` is not reached.
    """
    if not mu > 0:
        raise ValueError("mu must be positive")
    if tol is None:
        tol = 1e-8 * p.U * mu
    if not tol > 0:
        raise ValueError("tol must be positive")
    scaled, err = _scaled_order_stat_mean(p, tol / mu)
    t_bar = float(scaled * mu)
    u_bar = t_bar / mu
    return AnalyticsResult(
        t_bar=t_bar,
        u_bar=u_bar,
        s_bar=upload_count_from_updates(p.M, u_bar),
        quadrature_abs_err=float(err * mu),
    )


def avg_local_updates(p, tol=1e-10):
    """Expected number of local updates a worker completes per round."""
    return erlang_round_time_mean(p, 1.0, tol=tol).u_bar


def upload_count_from_updates(M, u_bar):
    return M - math.exp(math.log(M) - u_bar)


def avg_upload_count(p, tol=1e-10):
    """Approximate expected number of workers with at least one finished update."""
    return upload_count_from_updates(p.M, avg_local_updates(p, tol=tol))


def first_update_order_stat_mean(s, M, mu, mode="exact"):
    """Mean of the s-th smallest of M i.i.d. Exp(mu) first-update times.

    ``mode="exact"`` sums ``mu / i`` for ``i = M-s+1 .. M``; ``mode="approx"``
    uses ``mu * log(M / (M - s))``, which is undefined at ``s == M``.
    """
    if mode == "exact":
        if not 1 <= s <= M:
            raise ValueError(f"s must lie in [1, M], got {s}")
        return mu * math.fsum(1.0 / i for i in range(M - s + 1, M + 1))
    if mode == "approx":
        if s == M:
            raise ValueError("approximation is singular at s == M")
        if not 1 <= s < M:
            raise ValueError(f"s must lie in [1, M), got {s}")
        return mu * math.log(M / (M - s))
    raise ValueError(f"unknown mode {mode!r}")


# -- Monte-Carlo oracle ----------------------------------------------------------

@dataclass(frozen=True)
class MonteCarloStats:
    t_bar: float
    u_bar: float
    s_bar: float
    t_se: float
    u_se: float
    s_se: float
    trials: int


def _mc_chunk(rng, n, M, K, U, mu):
    durations = rng.exponential(mu, size=(n, M, U))
    done_at = np.cumsum(durations, axis=2)
    finish_U = done_at[:, :, -1]
    cutoff = np.partition(finish_U, K - 1, axis=1)[:, K - 1]

    counts = np.sum(done_at <= cutoff[:, None, None], axis=2)
    # workers that finished U updates keep going until the cutoff
    rows, cols = np.nonzero(finish_U <= cutoff[:, None])
    clock = finish_U[rows, cols]
    limit = cutoff[rows]
    while rows.size:
        clock = clock + rng.exponential(mu, size=rows.size)
        more = clock <= limit
        rows, cols, clock, limit = rows[more], cols[more], clock[more], limit[more]
        counts[rows, cols] += 1

    return cutoff, counts.mean(axis=1), np.count_nonzero(counts, axis=1)


def monte_carlo_round_stats(p, mu, trials, seed=0, chunk=20000):
    """Simulate ``trials`` independent rounds of the K-of-M protocol.

    Every worker draws exponential update times; the round ends when the K-th
    worker completes ``U`` updates. An update still running at that instant is
    cancelled. Reported per round: its length, the mean number of completed
    updates over all ``M`` workers, and the number of workers with at least one.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = keyed_rng(seed, "mc", p.M, p.K, p.U)
    t_parts, u_parts, s_parts = [], [], []
    left = trials
    while left:
        n = min(chunk, left)
        t, u, s = _mc_chunk(rng, n, p.M, p.K, p.U, mu)
        t_parts.append(t)
        u_parts.append(u)
        s_parts.append(s)
        left -= n
    t = np.concatenate(t_parts)
    u = np.concatenate(u_parts)
    s = np.concatenate(s_parts).astype(float)

    def se(v):
        return float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0

    return MonteCarloStats(
        t_bar=float(t.mean()), u_bar=float(u.mean()), s_bar=float(s.mean()),
        t_se=se(t), u_se=se(u), s_se=se(s), trials=trials,
    )


def analyze(p, mu, mc_trials=0, seed=0, tol=None):
    """Quadrature analytics plus an optional Monte-Carlo column, as a dict."""
    res = erlang_round_time_mean(p, mu, tol=tol)
    row = {
        "M": p.M, "K": p.K, "U": p.U, "mu": mu,
        "t_bar": res.t_bar, "u_bar": res.u_bar, "s_bar": res.s_bar,
        "quadrature_abs_err": res.quadrature_abs_err,
    }
    if mc_trials:
        mc = monte_carlo_round_stats(p, mu, mc_trials, seed=seed)
        row.update(
            t_bar_mc=mc.t_bar, u_bar_mc=mc.u_bar, s_bar_mc=mc.s_bar,
            t_se_mc=mc.t_se, u_se_mc=mc.u_se, s_se_mc=mc.s_se, mc_trials=mc_trials,
        )
    return row
