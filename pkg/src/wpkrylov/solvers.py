"""Weighted, preconditioned GCR-type solvers and a GMRES oracle.

The central iteration is the right-preconditioned generalized conjugate
residual method run in a weighted inner product: search directions p_i
with images q_i = A p_i kept pairwise W-orthogonal, the residual update
r <- r - alpha q with alpha = <q, r>_W / <q, q>_W.  Truncated
(Orthomin(k), minimal-residual) and restarted variants reuse the same
loop with a direction window.  When the preconditioner is symmetric
positive definite and doubles as the weight, specialized arrangements
save applications of it; two storage-lean rearrangements of that scheme
are provided as well.  A modified-Gram-Schmidt Arnoldi GMRES in the same
inner product serves as an independent reference implementation.

All solvers report per-iteration residual norms in both the weighted and
the Euclidean norm, the iteration coefficients, and breakdown events.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .linalg import LinearOperator, aslinearoperator
from .weighting import (
    NotHermitianPreconditionerError,
    PreconditionerHandle,
    WeightOperator,
)

__all__ = [
    "LinearSystem",
    "SolveConfig",
    "BreakdownEvent",
    "IterationTrace",
    "SolveResult",
    "wp_gcr_right",
    "wp_gcr_left",
    "wp_mr",
    "wp_orthomin",
    "wp_gcr_restarted",
    "whp_gcr",
    "whp_gcr_alt_a",
    "whp_gcr_alt_b",
    "gmres_arnoldi_oracle",
]

# |gamma| at or below this multiple of ||q||_W ||r||_W counts as a breakdown;
# relative scaling avoids false positives on badly scaled systems.
BREAKDOWN_RTOL = 1e-14

# a second orthogonalization pass is run when the normalized Gram
# off-diagonal of the new direction exceeds this
_REORTH_TRIGGER = 1e-6


@dataclass
class LinearSystem:
    """The problem A x = b with an optional initial guess."""

    operator: LinearOperator
    rhs: np.ndarray
    x0: np.ndarray | None = None

    def __post_init__(self):
        self.operator = aslinearoperator(self.operator)
        self.rhs = np.asarray(self.rhs, dtype=float)
        if self.rhs.shape != (self.operator.dim,):
            raise ValueError("right-hand side does not match operator dimension")
        if self.x0 is not None:
            self.x0 = np.asarray(self.x0, dtype=float)
            if self.x0.shape != (self.operator.dim,):
                raise ValueError("initial guess does not match operator dimension")

    @property
    def dim(self) -> int:
        return self.operator.dim

    def initial_guess(self) -> np.ndarray:
        return np.zeros(self.dim) if self.x0 is None else self.x0.copy()


@dataclass
class SolveConfig:
    """Iteration limits, stopping rule and variant selection.

    truncation_window selects Orthomin(k) orthogonalization against the
    last k directions only (0 means the bare minimal-residual iteration),
    restart_period clears the direction set every that many iterations.
    At most one of the two may be set.
    """

    max_iterations: int = 500
    rel_tolerance: float = 1e-6
    restart_period: int | None = None
    truncation_window: int | None = None
    stopping_norm: str = "weighted"
    breakdown_policy: str = "halt"
    record_iterates: bool = False

    def __post_init__(self):
        if self.rel_tolerance <= 0:
            raise ValueError("rel_tolerance must be positive")
        if self.restart_period is not None and self.truncation_window is not None:
            raise ValueError("restart_period and truncation_window are mutually exclusive")
        if self.restart_period is not None and self.restart_period < 1:
            raise ValueError("restart_period must be >= 1")
        if self.truncation_window is not None and self.truncation_window < 0:
            raise ValueError("truncation_window must be >= 0")
        if self.stopping_norm not in ("weighted", "euclidean"):
            raise ValueError(f"unknown stopping norm {self.stopping_norm!r}")
        if self.breakdown_policy not in ("halt", "restart_orthodir_style"):
            raise ValueError(f"unknown breakdown policy {self.breakdown_policy!r}")


@dataclass
class BreakdownEvent:
    iteration: int
    gamma_value: float


@dataclass
class IterationTrace:
    """Per-iteration record of a solve.

    residual_norm_* start with the initial residual, so they are one
    longer than the coefficient lists.  beta_rows[i]/phi_rows[i] are the
    orthogonalization coefficients that built the direction used at
    iteration i (empty for the first direction of a cycle).
    """

    residual_norm_weighted: list = field(default_factory=list)
    residual_norm_euclidean: list = field(default_factory=list)
    alpha: list = field(default_factory=list)
    gamma: list = field(default_factory=list)
    delta: list = field(default_factory=list)
    beta_rows: list = field(default_factory=list)
    phi_rows: list = field(default_factory=list)
    az_norm_weighted: list = field(default_factory=list)
    restart_markers: list = field(default_factory=list)
    iterates: list = field(default_factory=list)
    breakdown: BreakdownEvent | None = None
    status: str = "max_iter"


@dataclass
class SolveResult:
    x: np.ndarray
    trace: IterationTrace
    iterations: int
    q_directions: list = field(default_factory=list)
    p_directions: list = field(default_factory=list)

    @property
    def status(self) -> str:
        return self.trace.status


class _Stopping:
    def __init__(self, cfg: SolveConfig, b_norm_weighted: float, b_norm_euclidean: float):
        self.norm = cfg.stopping_norm
        self.target = cfg.rel_tolerance * (
            b_norm_weighted if cfg.stopping_norm == "weighted" else b_norm_euclidean
        )

    def done(self, rw: float, r2: float) -> bool:
        return (rw if self.norm == "weighted" else r2) < self.target


def _clamped_sqrt(value: float) -> float:
    return float(np.sqrt(max(value, 0.0)))


def wp_gcr_right(system: LinearSystem, h: PreconditionerHandle, w: WeightOperator,
                 cfg: SolveConfig) -> SolveResult:
    """Right-preconditioned GCR in the W-inner product.

    Each iteration preconditions the residual, z = H r, and appends the
    direction p = z (image q = A z) orthogonalized in <.,.>_W against the
    currently held directions: all of them for the full method, the last
    k for Orthomin(k), none for the minimal-residual iteration, and the
    current cycle for the restarted variant.  The residual norm
    ||r_i||_W is then minimal over x0 + span of the directions taken.

    An iteration with <q, r>_W = 0 but a nonzero residual cannot make
    progress (an unlucky breakdown).  Depending on
    cfg.breakdown_policy the solve either halts with status "breakdown"
    or keeps the direction set and continues with one replacement
    direction built Orthodir-style from H applied to the image of the
    last direction.
    """
    a = system.operator
    b = system.rhs
    x = system.initial_guess()
    trace = IterationTrace()
    result_q: list = []
    result_p: list = []

    bw = _weighted_norm(w, b)
    b2 = float(np.linalg.norm(b))
    stop = _Stopping(cfg, bw, b2)

    r = b - a.apply(x)
    rw = _weighted_norm(w, r)
    r2 = float(np.linalg.norm(r))
    trace.residual_norm_weighted.append(rw)
    trace.residual_norm_euclidean.append(r2)
    if cfg.record_iterates:
        trace.iterates.append(x.copy())
    if stop.done(rw, r2):
        trace.status = "converged"
        return SolveResult(x, trace, 0)

    dirs: list = []  # (p, q, wq, delta)
    z = h.apply(r)
    v = z  # source vector for the next direction

    for i in range(cfg.max_iterations):
        p = v.copy()
        az = a.apply(v)
        waz = w.apply(az)
        az_norm = _clamped_sqrt(float(waz @ az))
        q = az.copy()
        wq = waz.copy()
        phi_row = []
        beta_row = []
        for pj, qj, wqj, dj in dirs:
            phi = float(wqj @ az)
            beta = phi / dj
            phi_row.append(phi)
            beta_row.append(beta)
            p -= beta * pj
            q -= beta * qj
            wq -= beta * wqj
        delta = float(wq @ q)
        if dirs and delta > 0.0:
            # classical Gram-Schmidt can leak; one corrective pass when it does
            worst = max(
                abs(float(wqj @ q)) / max(np.sqrt(dj * delta), 1e-300)
                for _, qj, wqj, dj in dirs
            )
            if worst > _REORTH_TRIGGER:
                for k, (pj, qj, wqj, dj) in enumerate(dirs):
                    beta2 = float(wqj @ q) / dj
                    beta_row[k] += beta2
                    p -= beta2 * pj
                    q -= beta2 * qj
                    wq -= beta2 * wqj
                delta = float(wq @ q)

        degenerate = not np.isfinite(delta) or delta <= 0.0 or np.sqrt(max(delta, 0.0)) <= BREAKDOWN_RTOL * az_norm
        gamma = float(wq @ r) if not degenerate else 0.0
        if degenerate or abs(gamma) <= BREAKDOWN_RTOL * np.sqrt(max(delta, 0.0)) * rw:
            if trace.breakdown is None:
                trace.breakdown = BreakdownEvent(iteration=i, gamma_value=gamma)
            if cfg.breakdown_policy == "halt" or (degenerate and not dirs):
                trace.status = "breakdown"
                return SolveResult(x, trace, len(trace.alpha), result_q, result_p)
            # Orthodir-style recovery: keep the direction when it is usable,
            # derive the next one from the image of the last direction
            trace.alpha.append(0.0)
            trace.gamma.append(gamma)
            trace.delta.append(delta)
            trace.beta_rows.append(beta_row)
            trace.phi_rows.append(phi_row)
            trace.az_norm_weighted.append(az_norm)
            trace.residual_norm_weighted.append(rw)
            trace.residual_norm_euclidean.append(r2)
            if cfg.record_iterates:
                trace.iterates.append(x.copy())
            if not degenerate:
                dirs.append((p, q, wq, delta))
                result_p.append(p)
                result_q.append(q)
                dirs = _trim_window(dirs, cfg, trace, i + 1)
                v = h.apply(q)  # Orthodir-style: continue from the image of p
            else:
                v = h.apply(dirs[-1][1])
            continue

        alpha = gamma / delta
        x = x + alpha * p
        r = r - alpha * q
        rw = _weighted_norm(w, r)
        r2 = float(np.linalg.norm(r))
        trace.alpha.append(alpha)
        trace.gamma.append(gamma)
        trace.delta.append(delta)
        trace.beta_rows.append(beta_row)
        trace.phi_rows.append(phi_row)
        trace.az_norm_weighted.append(az_norm)
        trace.residual_norm_weighted.append(rw)
        trace.residual_norm_euclidean.append(r2)
        result_p.append(p)
        result_q.append(q)
        if cfg.record_iterates:
            trace.iterates.append(x.copy())
        if stop.done(rw, r2):
            trace.status = "converged"
            return SolveResult(x, trace, len(trace.alpha), result_q, result_p)

        dirs.append((p, q, wq, delta))
        dirs = _trim_window(dirs, cfg, trace, i + 1)
        z = h.apply(r)
        v = z

    trace.status = "max_iter"
    return SolveResult(x, trace, len(trace.alpha), result_q, result_p)


def _trim_window(dirs: list, cfg: SolveConfig, trace: IterationTrace, next_iter: int) -> list:
    if cfg.restart_period is not None and next_iter % cfg.restart_period == 0:
        trace.restart_markers.append(next_iter)
        return []
    if cfg.truncation_window is not None:
        return dirs[-cfg.truncation_window:] if cfg.truncation_window > 0 else []
    return dirs


def _weighted_norm(w: WeightOperator, x: np.ndarray) -> float:
    if w.is_identity:
        return float(np.linalg.norm(x))
    return _clamped_sqrt(float(w.apply(x) @ x))


def wp_mr(system: LinearSystem, h: PreconditionerHandle, w: WeightOperator,
          cfg: SolveConfig) -> SolveResult:
    """Minimal-residual iteration: GCR with no orthogonalization history."""
    if cfg.truncation_window not in (None, 0):
        raise ValueError("wp_mr requires truncation_window 0")
    return wp_gcr_right(system, h, w, dataclasses.replace(cfg, truncation_window=0,
                                                          restart_period=None))


def wp_orthomin(system: LinearSystem, h: PreconditionerHandle, w: WeightOperator,
                cfg: SolveConfig, k: int | None = None) -> SolveResult:
    """Orthomin(k): orthogonalize against the k most recent directions."""
    window = cfg.truncation_window if k is None else k
    if window is None:
        raise ValueError("wp_orthomin needs a truncation window")
    return wp_gcr_right(system, h, w, dataclasses.replace(cfg, truncation_window=window,
                                                          restart_period=None))


def wp_gcr_restarted(system: LinearSystem, h: PreconditionerHandle, w: WeightOperator,
                     cfg: SolveConfig, k: int | None = None) -> SolveResult:
    """Restarted GCR(k): the direction set is cleared every k iterations."""
    period = cfg.restart_period if k is None else k
    if period is None:
        raise ValueError("wp_gcr_restarted needs a restart period")
    return wp_gcr_right(system, h, w, dataclasses.replace(cfg, restart_period=period,
                                                          truncation_window=None))


def wp_gcr_left(system: LinearSystem, h: PreconditionerHandle, w: WeightOperator,
                cfg: SolveConfig) -> SolveResult:
    """Left-preconditioned GCR in the W-inner product.

    Solves H A x = H b; the tracked quantity is the preconditioned
    residual z = H(b - A x), whose W-norm is minimized over the search
    space and recorded as the weighted residual norm.  The Euclidean
    column of the trace likewise reports ||z||_2, since the plain
    residual never appears in this data flow.  Stopping compares
    against the corresponding norm of H b.
    """
    a = system.operator
    b = system.rhs
    x = system.initial_guess()
    trace = IterationTrace()
    result_y: list = []
    result_p: list = []

    hb = h.apply(b)
    stop = _Stopping(cfg, _weighted_norm(w, hb), float(np.linalg.norm(hb)))

    r = b - a.apply(x)
    z = h.apply(r)
    zw = _weighted_norm(w, z)
    z2 = float(np.linalg.norm(z))
    trace.residual_norm_weighted.append(zw)
    trace.residual_norm_euclidean.append(z2)
    if cfg.record_iterates:
        trace.iterates.append(x.copy())
    if stop.done(zw, z2):
        trace.status = "converged"
        return SolveResult(x, trace, 0)

    dirs: list = []  # (p, y, wy, delta)
    v = z

    for i in range(cfg.max_iterations):
        p = v.copy()
        hay = h.apply(a.apply(v))
        why = w.apply(hay)
        hay_norm = _clamped_sqrt(float(why @ hay))
        y = hay.copy()
        wy = why.copy()
        phi_row = []
        beta_row = []
        for pj, yj, wyj, dj in dirs:
            phi = float(wyj @ hay)
            beta = phi / dj
            phi_row.append(phi)
            beta_row.append(beta)
            p -= beta * pj
            y -= beta * yj
            wy -= beta * wyj
        delta = float(wy @ y)
        if dirs and delta > 0.0:
            worst = max(
                abs(float(wyj @ y)) / max(np.sqrt(dj * delta), 1e-300)
                for _, yj, wyj, dj in dirs
            )
            if worst > _REORTH_TRIGGER:
                for k, (pj, yj, wyj, dj) in enumerate(dirs):
                    beta2 = float(wyj @ y) / dj
                    beta_row[k] += beta2
                    p -= beta2 * pj
                    y -= beta2 * yj
                    wy -= beta2 * wyj
                delta = float(wy @ y)

        degenerate = not np.isfinite(delta) or delta <= 0.0 or np.sqrt(max(delta, 0.0)) <= BREAKDOWN_RTOL * hay_norm
        gamma = float(wy @ z) if not degenerate else 0.0
        if degenerate or abs(gamma) <= BREAKDOWN_RTOL * np.sqrt(max(delta, 0.0)) * zw:
            if trace.breakdown is None:
                trace.breakdown = BreakdownEvent(iteration=i, gamma_value=gamma)
            if cfg.breakdown_policy == "halt" or (degenerate and not dirs):
                trace.status = "breakdown"
                return SolveResult(x, trace, len(trace.alpha), result_y, result_p)
            trace.alpha.append(0.0)
            trace.gamma.append(gamma)
            trace.delta.append(delta)
            trace.beta_rows.append(beta_row)
            trace.phi_rows.append(phi_row)
            trace.az_norm_weighted.append(hay_norm)
            trace.residual_norm_weighted.append(zw)
            trace.residual_norm_euclidean.append(z2)
            if cfg.record_iterates:
                trace.iterates.append(x.copy())
            if not degenerate:
                dirs.append((p, y, wy, delta))
                result_p.append(p)
                result_y.append(y)
                dirs = _trim_window(dirs, cfg, trace, i + 1)
                v = y  # Orthodir-style: next direction from (HA) p
            else:
                v = dirs[-1][1]
            continue

        alpha = gamma / delta
        x = x + alpha * p
        z = z - alpha * y
        zw = _weighted_norm(w, z)
        z2 = float(np.linalg.norm(z))
        trace.alpha.append(alpha)
        trace.gamma.append(gamma)
        trace.delta.append(delta)
        trace.beta_rows.append(beta_row)
        trace.phi_rows.append(phi_row)
        trace.az_norm_weighted.append(hay_norm)
        trace.residual_norm_weighted.append(zw)
        trace.residual_norm_euclidean.append(z2)
        result_p.append(p)
        result_y.append(y)
        if cfg.record_iterates:
            trace.iterates.append(x.copy())
        if stop.done(zw, z2):
            trace.status = "converged"
            return SolveResult(x, trace, len(trace.alpha), result_y, result_p)

        dirs.append((p, y, wy, delta))
        dirs = _trim_window(dirs, cfg, trace, i + 1)
        v = z

    trace.status = "max_iter"
    return SolveResult(x, trace, len(trace.alpha), result_y, result_p)


def _require_spd_preconditioner(h: PreconditionerHandle):
    if not h.hermitian_flag:
        raise NotHermitianPreconditionerError(
            "this solver requires a symmetric positive definite preconditioner"
        )


def _reject_variants(cfg: SolveConfig, name: str):
    if cfg.restart_period is not None or cfg.truncation_window is not None:
        raise ValueError(
            f"{name} runs with full orthogonalization; use wp_orthomin/wp_gcr_restarted "
            "with w set to the preconditioner for truncated or restarted runs"
        )


def whp_gcr(system: LinearSystem, h: PreconditionerHandle, cfg: SolveConfig) -> SolveResult:
    """GCR with an SPD preconditioner H used as the inner-product weight.

    Produces the iterates of wp_gcr_right(h, w=h) while applying H only
    once per iteration: the vectors y = H q are stored alongside each
    direction and the preconditioned residual z = H r is updated by the
    same recurrence as r.  All inner products reduce to Euclidean dots
    of stored vectors; ||r||_H comes from <r, z>.
    """
    _require_spd_preconditioner(h)
    _reject_variants(cfg, "whp_gcr")
    a = system.operator
    b = system.rhs
    x = system.initial_guess()
    trace = IterationTrace()
    result_q: list = []
    result_p: list = []

    hb = h.apply(b)
    stop = _Stopping(cfg, _clamped_sqrt(float(b @ hb)), float(np.linalg.norm(b)))

    r = b - a.apply(x)
    z = h.apply(r)
    rw = _clamped_sqrt(float(r @ z))
    r2 = float(np.linalg.norm(r))
    trace.residual_norm_weighted.append(rw)
    trace.residual_norm_euclidean.append(r2)
    if cfg.record_iterates:
        trace.iterates.append(x.copy())
    if stop.done(rw, r2):
        trace.status = "converged"
        return SolveResult(x, trace, 0)

    dirs: list = []  # (p, q, y, delta)
    v = z

    for i in range(cfg.max_iterations):
        p = v.copy()
        az = a.apply(v)
        q = az.copy()
        phi_row = []
        beta_row = []
        for pj, qj, yj, dj in dirs:
            phi = float(yj @ az)
            beta = phi / dj
            phi_row.append(phi)
            beta_row.append(beta)
            p -= beta * pj
            q -= beta * qj
        y = h.apply(q)
        delta = float(y @ q)
        if dirs and delta > 0.0:
            worst = max(
                abs(float(yj @ q)) / max(np.sqrt(dj * delta), 1e-300)
                for _, qj, yj, dj in dirs
            )
            if worst > _REORTH_TRIGGER:
                for k, (pj, qj, yj, dj) in enumerate(dirs):
                    beta2 = float(yj @ q) / dj
                    beta_row[k] += beta2
                    p -= beta2 * pj
                    q -= beta2 * qj
                    y -= beta2 * yj
                delta = float(y @ q)

        degenerate = (not np.isfinite(delta) or delta <= 0.0
                      or np.linalg.norm(q) <= BREAKDOWN_RTOL * max(np.linalg.norm(az), 1e-300))
        gamma = float(q @ z) if not degenerate else 0.0
        if degenerate or abs(gamma) <= BREAKDOWN_RTOL * np.sqrt(max(delta, 0.0)) * rw:
            if trace.breakdown is None:
                trace.breakdown = BreakdownEvent(iteration=i, gamma_value=gamma)
            if cfg.breakdown_policy == "halt" or (degenerate and not dirs):
                trace.status = "breakdown"
                return SolveResult(x, trace, len(trace.alpha), result_q, result_p)
            trace.alpha.append(0.0)
            trace.gamma.append(gamma)
            trace.delta.append(delta)
            trace.beta_rows.append(beta_row)
            trace.phi_rows.append(phi_row)
            trace.residual_norm_weighted.append(rw)
            trace.residual_norm_euclidean.append(r2)
            if cfg.record_iterates:
                trace.iterates.append(x.copy())
            if not degenerate:
                dirs.append((p, q, y, delta))
                result_p.append(p)
                result_q.append(q)
                v = y  # Orthodir-style: H times the image of p
            else:
                v = dirs[-1][2]
            continue

        alpha = gamma / delta
        x = x + alpha * p
        r = r - alpha * q
        z = z - alpha * y
        rw = _clamped_sqrt(float(r @ z))
        r2 = float(np.linalg.norm(r))
        trace.alpha.append(alpha)
        trace.gamma.append(gamma)
        trace.delta.append(delta)
        trace.beta_rows.append(beta_row)
        trace.phi_rows.append(phi_row)
        trace.residual_norm_weighted.append(rw)
        trace.residual_norm_euclidean.append(r2)
        result_p.append(p)
        result_q.append(q)
        if cfg.record_iterates:
            trace.iterates.append(x.copy())
        if stop.done(rw, r2):
            trace.status = "converged"
            return SolveResult(x, trace, len(trace.alpha), result_q, result_p)

        dirs.append((p, q, y, delta))
        v = z

    trace.status = "max_iter"
    return SolveResult(x, trace, len(trace.alpha), result_q, result_p)


def whp_gcr_alt_a(system: LinearSystem, h: PreconditionerHandle, cfg: SolveConfig) -> SolveResult:
    """Storage-lean rearrangement that orthogonalizes p and y = H q only.

    The image of the new direction is used fresh (never stored), the
    plain residual is not updated at all, and ||r||_H^2 is tracked by the
    one-step recurrence.  The Euclidean residual column of the trace is
    recomputed as b - A x for reporting; the iteration itself never
    forms it.  Iterates coincide with whp_gcr in exact arithmetic.
    """
    _require_spd_preconditioner(h)
    _reject_variants(cfg, "whp_gcr_alt_a")
    a = system.operator
    b = system.rhs
    x = system.initial_guess()
    trace = IterationTrace()
    result_y: list = []
    result_p: list = []

    hb = h.apply(b)
    stop = _Stopping(cfg, _clamped_sqrt(float(b @ hb)), float(np.linalg.norm(b)))

    r0 = b - a.apply(x)
    z = h.apply(r0)
    rw2 = max(float(r0 @ z), 0.0)
    rw = _clamped_sqrt(rw2)
    r2 = float(np.linalg.norm(r0))
    trace.residual_norm_weighted.append(rw)
    trace.residual_norm_euclidean.append(r2)
    if cfg.record_iterates:
        trace.iterates.append(x.copy())
    if stop.done(rw, r2):
        trace.status = "converged"
        return SolveResult(x, trace, 0)

    dirs: list = []  # (p, y, delta)
    v = z

    for i in range(cfg.max_iterations):
        p = v.copy()
        qt = a.apply(v)
        y = h.apply(qt)
        phi_row = []
        beta_row = []
        for pj, yj, dj in dirs:
            phi = float(yj @ qt)
            beta = phi / dj
            phi_row.append(phi)
            beta_row.append(beta)
            p -= beta * pj
            y -= beta * yj
        delta = float(y @ qt)

        degenerate = not np.isfinite(delta) or delta <= 0.0
        gamma = float(qt @ z) if not degenerate else 0.0
        if degenerate or abs(gamma) <= BREAKDOWN_RTOL * np.sqrt(max(delta, 0.0)) * rw:
            if trace.breakdown is None:
                trace.breakdown = BreakdownEvent(iteration=i, gamma_value=gamma)
            if cfg.breakdown_policy == "halt" or (degenerate and not dirs):
                trace.status = "breakdown"
                return SolveResult(x, trace, len(trace.alpha), result_y, result_p)
            trace.alpha.append(0.0)
            trace.gamma.append(gamma)
            trace.delta.append(delta)
            trace.beta_rows.append(beta_row)
            trace.phi_rows.append(phi_row)
            trace.residual_norm_weighted.append(rw)
            trace.residual_norm_euclidean.append(r2)
            if cfg.record_iterates:
                trace.iterates.append(x.copy())
            if not degenerate:
                dirs.append((p, y, delta))
                result_p.append(p)
                result_y.append(y)
                v = y
            else:
                v = dirs[-1][1]
            continue

        alpha = gamma / delta
        x = x + alpha * p
        z = z - alpha * y
        rw2 = max(rw2 - gamma * gamma / delta, 0.0)
        rw = _clamped_sqrt(rw2)
        r2 = float(np.linalg.norm(b - a.apply(x)))
        trace.alpha.append(alpha)
        trace.gamma.append(gamma)
        trace.delta.append(delta)
        trace.beta_rows.append(beta_row)
        trace.phi_rows.append(phi_row)
        trace.residual_norm_weighted.append(rw)
        trace.residual_norm_euclidean.append(r2)
        result_p.append(p)
        result_y.append(y)
        if cfg.record_iterates:
            trace.iterates.append(x.copy())
        if stop.done(rw, r2):
            trace.status = "converged"
            return SolveResult(x, trace, len(trace.alpha), result_y, result_p)

        dirs.append((p, y, delta))
        v = z

    trace.status = "max_iter"
    return SolveResult(x, trace, len(trace.alpha), result_y, result_p)


def whp_gcr_alt_b(system: LinearSystem, h: PreconditionerHandle, cfg: SolveConfig) -> SolveResult:
    """Storage-lean rearrangement that orthogonalizes p and q only.

    H is applied once per iteration to the not-yet-orthogonalized image
    t = H(A z); the orthogonalization coefficients come from <q_j, t>,
    and the preconditioned residual update reuses t.  The drift this
    introduces into z stays inside the span of retired directions, so
    iterates again match whp_gcr in exact arithmetic.
    """
    _require_spd_preconditioner(h)
    _reject_variants(cfg, "whp_gcr_alt_b")
    a = system.operator
    b = system.rhs
    x = system.initial_guess()
    trace = IterationTrace()
    result_q: list = []
    result_p: list = []

    hb = h.apply(b)
    stop = _Stopping(cfg, _clamped_sqrt(float(b @ hb)), float(np.linalg.norm(b)))

    r = b - a.apply(x)
    z = h.apply(r)
    rw = _clamped_sqrt(float(r @ z))
    r2 = float(np.linalg.norm(r))
    trace.residual_norm_weighted.append(rw)
    trace.residual_norm_euclidean.append(r2)
    if cfg.record_iterates:
        trace.iterates.append(x.copy())
    if stop.done(rw, r2):
        trace.status = "converged"
        return SolveResult(x, trace, 0)

    dirs: list = []  # (p, q, delta)
    v = z

    for i in range(cfg.max_iterations):
        p = v.copy()
        qhat = a.apply(v)
        t = h.apply(qhat)
        q = qhat.copy()
        phi_row = []
        beta_row = []
        for pj, qj, dj in dirs:
            phi = float(qj @ t)
            beta = phi / dj
            phi_row.append(phi)
            beta_row.append(beta)
            p -= beta * pj
            q -= beta * qj
        delta = float(t @ q)

        degenerate = not np.isfinite(delta) or delta <= 0.0
        gamma = float(q @ z) if not degenerate else 0.0
        if degenerate or abs(gamma) <= BREAKDOWN_RTOL * np.sqrt(max(delta, 0.0)) * rw:
            if trace.breakdown is None:
                trace.breakdown = BreakdownEvent(iteration=i, gamma_value=gamma)
            if cfg.breakdown_policy == "halt" or (degenerate and not dirs):
                trace.status = "breakdown"
                return SolveResult(x, trace, len(trace.alpha), result_q, result_p)
            trace.alpha.append(0.0)
            trace.gamma.append(gamma)
            trace.delta.append(delta)
            trace.beta_rows.append(beta_row)
            trace.phi_rows.append(phi_row)
            trace.residual_norm_weighted.append(rw)
            trace.residual_norm_euclidean.append(r2)
            if cfg.record_iterates:
                trace.iterates.append(x.copy())
            if not degenerate:
                dirs.append((p, q, delta))
                result_p.append(p)
                result_q.append(q)
                v = h.apply(q)
            else:
                v = h.apply(dirs[-1][1])
            continue

        alpha = gamma / delta
        x = x + alpha * p
        r = r - alpha * q
        z = z - alpha * t
        rw = _clamped_sqrt(float(r @ z))
        r2 = float(np.linalg.norm(r))
        trace.alpha.append(alpha)
        trace.gamma.append(gamma)
        trace.delta.append(delta)
        trace.beta_rows.append(beta_row)
        trace.phi_rows.append(phi_row)
        trace.residual_norm_weighted.append(rw)
        trace.residual_norm_euclidean.append(r2)
        result_p.append(p)
        result_q.append(q)
        if cfg.record_iterates:
            trace.iterates.append(x.copy())
        if stop.done(rw, r2):
            trace.status = "converged"
            return SolveResult(x, trace, len(trace.alpha), result_q, result_p)

        dirs.append((p, q, delta))
        v = z

    trace.status = "max_iter"
    return SolveResult(x, trace, len(trace.alpha), result_q, result_p)


def gmres_arnoldi_oracle(system: LinearSystem, h: PreconditionerHandle, w: WeightOperator,
                         cfg: SolveConfig) -> SolveResult:
    """Right-preconditioned GMRES via Arnoldi in the W-inner product.

    Modified Gram-Schmidt Arnoldi on the map v -> A H v with the basis
    kept W-orthonormal, least squares by Givens rotations.  Serves as an
    independent reference: its weighted residual norms equal those of the
    full GCR iteration whenever the latter does not break down.  A
    vanishing Arnoldi extension (happy breakdown) means the projected
    problem is solved exactly and counts as convergence.

    The coefficient lists of the trace stay empty; only residual norms
    (and iterates on request) are recorded.
    """
    if cfg.truncation_window is not None:
        raise ValueError("gmres_arnoldi_oracle does not support truncated orthogonalization")
    a = system.operator
    b = system.rhs
    x0 = system.initial_guess()
    trace = IterationTrace()

    bw = _weighted_norm(w, b)
    b2 = float(np.linalg.norm(b))
    stop = _Stopping(cfg, bw, b2)

    restart = cfg.restart_period or cfg.max_iterations
    x = x0.copy()
    total_iters = 0

    r = b - a.apply(x)
    rw = _weighted_norm(w, r)
    r2 = float(np.linalg.norm(r))
    trace.residual_norm_weighted.append(rw)
    trace.residual_norm_euclidean.append(r2)
    if cfg.record_iterates:
        trace.iterates.append(x.copy())
    if stop.done(rw, r2):
        trace.status = "converged"
        return SolveResult(x, trace, 0)

    while total_iters < cfg.max_iterations:
        cycle = min(restart, cfg.max_iterations - total_iters)
        wr = w.apply(r)
        beta = _clamped_sqrt(float(wr @ r))
        basis = [r / beta]
        wbasis = [wr / beta]
        hess = np.zeros((cycle + 1, cycle))
        cs = np.zeros(cycle)
        sn = np.zeros(cycle)
        g = np.zeros(cycle + 1)
        g[0] = beta
        j = 0
        happy = False
        for j in range(cycle):
            u = a.apply(h.apply(basis[j]))
            for i in range(j + 1):
                hess[i, j] = float(wbasis[i] @ u)
                u -= hess[i, j] * basis[i]
            wu = w.apply(u)
            hnorm = _clamped_sqrt(float(wu @ u))
            hess[j + 1, j] = hnorm
            happy = hnorm <= 1e-14 * max(abs(hess[: j + 2, j]).max(), 1e-300)
            if not happy:
                basis.append(u / hnorm)
                wbasis.append(wu / hnorm)
            for i in range(j):
                t = hess[i, j]
                hess[i, j] = cs[i] * t + sn[i] * hess[i + 1, j]
                hess[i + 1, j] = -sn[i] * t + cs[i] * hess[i + 1, j]
            d = float(np.hypot(hess[j, j], hess[j + 1, j]))
            cs[j] = hess[j, j] / d
            sn[j] = hess[j + 1, j] / d
            hess[j, j] = d
            hess[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            rw = abs(float(g[j + 1]))
            total_iters += 1

            need_x = (
                cfg.record_iterates
                or not w.is_identity
                or cfg.stopping_norm == "euclidean"
                or happy
            )
            if need_x:
                y = scipy.linalg.solve_triangular(hess[: j + 1, : j + 1], g[: j + 1], lower=False)
                xk = x + h.apply(np.column_stack(basis[: j + 1]) @ y)
                r2 = float(np.linalg.norm(b - a.apply(xk)))
            else:
                xk = None
                r2 = rw  # Euclidean inner product: the Givens estimate is the 2-norm
            trace.residual_norm_weighted.append(rw)
            trace.residual_norm_euclidean.append(r2)
            if cfg.record_iterates:
                trace.iterates.append(xk if xk is not None else x.copy())

            if happy or stop.done(rw, r2) or total_iters >= cfg.max_iterations:
                break

        y = scipy.linalg.solve_triangular(hess[: j + 1, : j + 1], g[: j + 1], lower=False)
        x = x + h.apply(np.column_stack(basis[: j + 1]) @ y)
        r = b - a.apply(x)
        rw_true = _weighted_norm(w, r)
        r2 = float(np.linalg.norm(r))
        if happy or stop.done(rw_true, r2):
            trace.status = "converged"
            return SolveResult(x, trace, total_iters)
        if cfg.restart_period is not None and total_iters < cfg.max_iterations:
            trace.restart_markers.append(total_iters)
            continue
        break

    trace.status = "max_iter"
    return SolveResult(x, trace, total_iters)
