"""Numeric checks of the stepsize conditions and convergence bounds.

Nothing here proves anything: the functions evaluate the closed-form
inequalities for concrete constants and compare them with simulated traces.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConditionsViolated, InsufficientReplicates
from .rng import derive_seed
from .sgd import exact_variance_bound
from .simulator import execute_plan, prepare
from .strategies import RoundPlan
from .timing import OrderStatParams, avg_local_updates


@dataclass(frozen=True)
class StepsizeCheck:
    passed: bool
    step_value: float      # L^2 a^2 (U0+1)(U0-2)/2 + L a U0, must be <= 1
    step_slack: float      # 1 - step_value
    delta_slack: float     # (1 - delta) - L^2 a^2, must be >= 0


def check_lemma1_conditions(L, alpha, U0, delta):
    """Evaluate both stepsize conditions at the worst case ``U = U0``.

    The first condition grows with U for U >= 1, so holding at ``U0`` covers
    every smaller update count.
    """
    if not (L > 0 and alpha > 0 and U0 >= 1):
        raise ValueError("L, alpha must be positive and U0 >= 1")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    la = L * alpha
    value = la * la * (U0 + 1) * (U0 - 2) / 2.0 + la * U0
    step_slack = 1.0 - value
    delta_slack = (1.0 - delta) - la * la
    return StepsizeCheck(step_slack >= 0 and delta_slack >= 0, value, step_slack, delta_slack)


def default_delta(L, alpha, margin=1e-6):
    """Largest admissible delta, ``1 - L^2 a^2 - margin``, clamped into (0, 1)."""
    d = 1.0 - (L * alpha) ** 2 - margin
    return min(max(d, 1e-12), 1.0 - 1e-12)


@dataclass(frozen=True)
class ConvergenceInputs:
    L: float
    alpha: float
    C: float
    B: int
    U0: float
    u_bar: float
    delta: float
    K: int
    J: int
    F0: float
    F_star: float

    def __post_init__(self):
        for name in ("L", "alpha", "B", "U0", "u_bar", "K", "J"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.C < 0:
            raise ValueError("C must be non-negative")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.u_bar > self.U0:
            raise ValueError("u_bar cannot exceed U0")
        if self.F0 < self.F_star:
            raise ValueError("F0 must be at least F_star")

    @property
    def effective_steps(self):
        return self.u_bar - 1.0 + self.delta


def theorem1_terms(inp):
    """The optimisation and variance terms of the average-gradient bound."""
    check = check_lemma1_conditions(inp.L, inp.alpha, inp.U0, inp.delta)
    if not check.passed:
        raise ConditionsViolated(
            f"stepsize conditions fail: step slack {check.step_slack:.3g}, delta slack {check.delta_slack:.3g}"
        )
    a, L, U0 = inp.alpha, inp.L, inp.U0
    eff = inp.effective_steps
    opt = 2.0 * (inp.F0 - inp.F_star) / (eff * a * inp.J)
    var = L * a * U0 * inp.C / (eff * inp.B) * (U0 / inp.K + L * (2 * U0 - 1) * (U0 - 1) * a / 6.0)
    return opt, var


def theorem1_bound(inp):
    """Upper bound on ``(1/J) sum_j ||grad F(w^j)||^2``.

    Raises :class:`ConditionsViolated` when the stepsize conditions fail.
    """
    opt, var = theorem1_terms(inp)
    return opt + var


def corollary1_rhs(grad_sq, inp, S):
    """Right-hand side of the per-round expected descent inequality."""
    a, L, U0 = inp.alpha, inp.L, inp.U0
    descent = -inp.effective_steps * a / 2.0 * grad_sq
    noise = L * a * a * U0 * inp.C / (2.0 * inp.B) * (U0 / S + L * (2 * U0 - 1) * (U0 - 1) * a / 6.0)
    return descent + noise


def grad_sq_sequence(trace, J=None):
    """``||grad F(w^j)||^2`` for ``j = 0 .. J-1`` (record ``j`` holds ``w^{j+1}``)."""
    values = [trace.initial_grad_sq_norm] + [r.grad_sq_norm for r in trace.records[:-1]]
    J = len(trace.records) if J is None else J
    if J > len(values):
        raise ValueError(f"trace has only {len(trace.records)} rounds, asked for {J}")
    values = values[:J]
    if any(v is None for v in values):
        raise ValueError("trace was not evaluated every round")
    return np.asarray(values, dtype=float)


def empirical_avg_grad_norm(traces, J=None):
    """Average squared gradient norm over rounds, then over replicate traces."""
    if not isinstance(traces, (list, tuple)):
        traces = [traces]
    return float(np.mean([grad_sq_sequence(t, J).mean() for t in traces]))


def max_updates(traces):
    return max(max(max(r.U) for r in t.records) for t in traces)


def plan_from_record(rec):
    U = np.asarray(rec.U, dtype=np.int64)
    uploaders = tuple(int(m) for m in np.flatnonzero(U >= 1))
    return RoundPlan(updates=U, uploaders=uploaders, participants=tuple(range(len(U))),
                     duration=rec.T, comm_cost=rec.C, cutoff=rec.T)


@dataclass
class DescentReport:
    rounds: list          # per-round dicts: j, mean_diff, rhs, margin, violated
    violation_rate: float
    replicates: int


def corollary1_descent_check(trace, inp, obj=None, shards=None, replicates=64, min_replicates=16):
    """Compare realised one-step descent with the per-round bound.

    For every recorded round the starting model ``w^j`` is frozen and the
    round is replayed with the recorded update counts but ``replicates``
    independent batch streams; the mean of ``F(w^{j+1}) - F(w^j)`` estimates
    the expectation. The check is conditional on the realised uploader set.
    ``trace`` must have been produced with ``keep_models=True``.
    """
    if replicates < min_replicates:
        raise InsufficientReplicates(f"need at least {min_replicates} replicates, got {replicates}")
    check = check_lemma1_conditions(inp.L, inp.alpha, inp.U0, inp.delta)
    if not check.passed:
        raise ConditionsViolated("stepsize conditions fail for this trace")
    if trace.models is None:
        raise ValueError("trace has no model snapshots; rerun with keep_models=True")
    cfg = trace.config
    if obj is None or shards is None:
        obj, shards = prepare(cfg)
    seeds = [derive_seed(cfg.seed, "replicate", r) for r in range(replicates)]
    rows = []
    for rec in trace.records:
        w = trace.models[rec.j]
        plan = plan_from_record(rec)
        f0, g = obj.loss_and_grad(w)
        diffs = [obj.loss(execute_plan(obj, w, plan, shards, cfg.alpha, cfg.batch_size, s, rec.j)) - f0
                 for s in seeds]
        mean_diff = math.fsum(diffs) / replicates
        rhs = corollary1_rhs(float(g @ g), inp, plan.n_uploaders)
        rows.append({"j": rec.j, "mean_diff": mean_diff, "rhs": rhs,
                     "margin": rhs - mean_diff, "violated": mean_diff > rhs})
    rate = sum(r["violated"] for r in rows) / len(rows) if rows else 0.0
    return DescentReport(rows, rate, replicates)


def bound_inputs(traces, obj, delta=None, U0=None, C=None, J=None, u_bar=None):
    """Assemble :class:`ConvergenceInputs` for replicate STSyn traces of one config.

    Defaults: ``U0`` is one more than the largest update count observed,
    ``C`` is the exactly enumerated gradient variance maximised over every
    stored model, ``u_bar`` comes from the order-statistic quadrature and
    ``delta`` is :func:`default_delta`.
    """
    cfg = traces[0].config
    s = cfg.scheme
    if s.kind != "stsyn":
        raise ValueError("the convergence bound applies to the stsyn scheme only")
    L = obj.smoothness
    if U0 is None:
        U0 = max_updates(traces) + 1
    if C is None:
        probes = [m for t in traces for m in (t.models or [np.zeros(obj.dim), t.final_model])]
        C = exact_variance_bound(obj, probes)
    if u_bar is None:
        u_bar = avg_local_updates(OrderStatParams(cfg.workers, s.K, s.U))
    if delta is None:
        delta = default_delta(L, cfg.alpha)
    return ConvergenceInputs(
        L=L, alpha=cfg.alpha, C=C, B=cfg.batch_size, U0=U0, u_bar=u_bar, delta=delta,
        K=s.K, J=J or len(traces[0].records), F0=traces[0].initial_loss, F_star=obj.f_star,
    )


def bound_report(traces, obj, J_values=None, **overrides):
    """Empirical average gradient norm against the bound for each horizon."""
    J_values = J_values or [len(traces[0].records)]
    base = bound_inputs(traces, obj, J=J_values[0], **overrides)
    check = check_lemma1_conditions(base.L, base.alpha, base.U0, base.delta)
    out = {
        "L": base.L, "alpha": base.alpha, "C": base.C, "B": base.B, "U0": base.U0,
        "u_bar": base.u_bar, "delta": base.delta, "K": base.K, "F0": base.F0, "F_star": base.F_star,
        "replicates": len(traces), "conditions_pass": check.passed,
        "step_slack": check.step_slack, "delta_slack": check.delta_slack, "horizons": [],
    }
    for J in J_values:
        inp = ConvergenceInputs(**{**base.__dict__, "J": J})
        emp = empirical_avg_grad_norm(traces, J)
        row = {"J": J, "empirical": emp}
        if check.passed:
            bound = theorem1_bound(inp)
            row.update(bound=bound, holds=emp <= bound)
        else:
            row.update(bound=None, holds=None)
        out["horizons"].append(row)
    return out
