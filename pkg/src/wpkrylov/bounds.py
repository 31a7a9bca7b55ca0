"""Convergence-bound quantities for the weighted, preconditioned solvers.

Everything here is desk scale: operators are densified (dimension cap in
:mod:`wpkrylov.linalg`) and handled with dense factorizations.  The
reported per-iteration contraction factors are

* bound1: from the infimum of the normalized quadratic-form quotient of
  the preconditioned operator in the weighted geometry (the sharpest of
  the three, valid for any nonsingular preconditioner),
* bound2: the product-of-infima form available when the preconditioner
  is SPD and also the inner-product weight,
* bound3: the split into the preconditioned-symmetric-part condition
  number and the skewness measure rho, additionally requiring a positive
  definite symmetric part.

bound1 has no closed eigen-form; it is evaluated by multi-start
quasi-Newton minimization and is therefore a numerical infimum (an upper
bound on the true one).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
import scipy.linalg
import scipy.optimize

from .linalg import (
    DENSIFY_LIMIT,
    NotPositiveDefiniteError,
    cholesky,
    densify,
    gen_sym_eig,
    sym_eig,
)
from .weighting import PreconditionerHandle, WeightOperator

__all__ = [
    "HermitianSplit",
    "BoundReport",
    "split",
    "spectral_radius_skew",
    "fov_distance",
    "weighted_operator_norm",
    "compute_bound_report",
    "johnson_identity_check",
    "analytic_rho_bound",
]

# multi-start minimization for bound1 is restricted to modest dimensions
RAYLEIGH_DIM_LIMIT = 512
_RAYLEIGH_SEED = 0xC0FFEE

# beyond this dimension the rotation grid collapses to the real axis,
# which is exact for real operators (their numerical range is symmetric
# about the real axis, so the distance to zero is attained on it)
_FOV_SHORTCUT_DIM = 64


@dataclass
class HermitianSplit:
    """Symmetric part and skew-symmetric part of a real operator."""

    m_part: np.ndarray
    n_part: np.ndarray

    def __post_init__(self):
        self.m_part = np.asarray(self.m_part, dtype=float)
        self.n_part = np.asarray(self.n_part, dtype=float)
        if self.m_part.shape != self.n_part.shape or self.m_part.ndim != 2:
            raise ValueError("split parts must be square matrices of equal shape")

    @property
    def dim(self) -> int:
        return self.m_part.shape[0]


def split(a, limit: int = DENSIFY_LIMIT) -> HermitianSplit:
    """Split a (densifiable) operator into symmetric and skew parts."""
    dense = densify(a, limit=limit)
    return HermitianSplit(m_part=0.5 * (dense + dense.T), n_part=0.5 * (dense - dense.T))


def spectral_radius_skew(hs: HermitianSplit) -> float:
    """Spectral radius of M^{-1} N for the split A = M + N, M SPD.

    The eigenvalues of M^{-1} N are purely imaginary pairs; their largest
    modulus equals the largest singular value of L^{-1} N L^{-T} where
    M = L L^T, which keeps all arithmetic real and symmetric.
    """
    factor = cholesky(hs.m_part)
    y = scipy.linalg.solve_triangular(factor.lower, hs.n_part, lower=True)
    c = scipy.linalg.solve_triangular(factor.lower, y.T, lower=True).T
    gram = c.T @ c
    vals, _ = sym_eig(0.5 * (gram + gram.T))
    return float(np.sqrt(max(vals[-1], 0.0)))


def _whiten(b_dense: np.ndarray, w_dense: np.ndarray) -> np.ndarray:
    """Map B to L^T B L^{-T} with W = L L^T, turning W-geometry Euclidean."""
    factor = cholesky(w_dense)
    y = scipy.linalg.solve_triangular(factor.lower, b_dense.T, lower=True).T
    return factor.lower.T @ y


def _rotated_min_eig(m_sym: np.ndarray, n_skew: np.ndarray, theta: float) -> float:
    """Smallest eigenvalue of the Hermitian part of e^{i theta} C.

    Realized through the doubled real embedding of the complex Hermitian
    matrix cos(theta) M + i sin(theta) N.
    """
    c, s = math.cos(theta), math.sin(theta)
    top = np.hstack([c * m_sym, -s * n_skew])
    bot = np.hstack([s * n_skew, c * m_sym])
    embed = np.vstack([top, bot])
    vals = np.linalg.eigvalsh(0.5 * (embed + embed.T))
    return float(vals[0])


def fov_distance(b, w: WeightOperator, grid_size: int = 256,
                 limit: int = DENSIFY_LIMIT) -> float:
    """Distance from zero to the W-numerical range of an operator.

    The range is the set of Rayleigh quotients over complex vectors; its
    distance to the origin is the maximum over rotation angles of the
    smallest eigenvalue of the rotated operator's Hermitian part,
    clipped at zero.  A grid of angles with one golden-section
    refinement is used; for real operators above a small dimension the
    evaluation collapses to the two real-axis angles, which is exact.
    Returns 0 whenever zero lies inside the range (the associated
    residual estimate is then trivial).
    """
    b_dense = densify(b, limit=limit)
    w_dense = densify(w, limit=limit) if not w.is_identity else None
    c = _whiten(b_dense, w_dense) if w_dense is not None else b_dense
    m_sym = 0.5 * (c + c.T)
    n_skew = 0.5 * (c - c.T)
    m_eigs, _ = sym_eig(m_sym)
    if m_eigs[0] <= 0.0 and m_eigs[-1] >= 0.0:
        return 0.0  # zero is inside the (real-axis slice of the) range
    n = c.shape[0]
    if n > _FOV_SHORTCUT_DIM:
        return max(0.0, float(m_eigs[0]), float(-m_eigs[-1]))

    thetas = np.linspace(0.0, 2.0 * math.pi, grid_size, endpoint=False)
    values = [_rotated_min_eig(m_sym, n_skew, t) for t in thetas]
    k = int(np.argmax(values))
    lo = thetas[(k - 1) % grid_size]
    hi = thetas[(k + 1) % grid_size]
    if hi < lo:
        hi += 2.0 * math.pi
    # golden-section refinement of the unimodal bracket around the best angle
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a_t, b_t = lo, hi
    x1 = b_t - inv_phi * (b_t - a_t)
    x2 = a_t + inv_phi * (b_t - a_t)
    f1 = _rotated_min_eig(m_sym, n_skew, x1)
    f2 = _rotated_min_eig(m_sym, n_skew, x2)
    for _ in range(40):
        if f1 < f2:
            a_t, x1, f1 = x1, x2, f2
            x2 = a_t + inv_phi * (b_t - a_t)
            f2 = _rotated_min_eig(m_sym, n_skew, x2)
        else:
            b_t, x2, f2 = x2, x1, f1
            x1 = b_t - inv_phi * (b_t - a_t)
            f1 = _rotated_min_eig(m_sym, n_skew, x1)
    best = max(max(values), f1, f2)
    return max(0.0, float(best))


def weighted_operator_norm(b, w: WeightOperator, limit: int = DENSIFY_LIMIT) -> float:
    """Operator norm induced by the W-norm."""
    b_dense = densify(b, limit=limit)
    c = b_dense if w.is_identity else _whiten(b_dense, densify(w, limit=limit))
    gram = c.T @ c
    vals, _ = sym_eig(0.5 * (gram + gram.T))
    return float(np.sqrt(max(vals[-1], 0.0)))


def _ratio_and_grad(y, s_mat, k_mat):
    sy = s_mat @ y
    ky = k_mat @ y
    u = float(y @ sy)
    v = float(y @ ky)
    wn = float(y @ y)
    f = (u * u) / (v * wn)
    grad = (4.0 * u * sy * (v * wn) - u * u * (2.0 * ky * wn + 2.0 * v * y)) / (v * wn) ** 2
    return f, grad


def _min_normalized_quotient(c: np.ndarray, n_starts: int, seed: int) -> float:
    """Numerical infimum of (y^T S y)^2 / (||C y||^2 ||y||^2), S = sym(C).

    Multi-start L-BFGS over the (scale-invariant) quotient; start points
    are random plus the extreme eigenvectors of S and of the pencil
    (S, C^T C).  The achieved value upper-bounds the true infimum.
    """
    s_mat = 0.5 * (c + c.T)
    k_mat = c.T @ c
    s_vals, s_vecs = sym_eig(s_mat)
    if s_vals[0] <= 0.0:
        return 0.0
    starts = [s_vecs[:, 0], s_vecs[:, -1]]
    try:
        _, pencil_vecs = scipy.linalg.eigh(s_mat, 0.5 * (k_mat + k_mat.T))
        starts += [pencil_vecs[:, 0], pencil_vecs[:, -1]]
    except scipy.linalg.LinAlgError:
        pass
    rng = np.random.default_rng(seed)
    starts += [rng.standard_normal(c.shape[0]) for _ in range(n_starts)]
    best = np.inf
    for y0 in starts:
        res = scipy.optimize.minimize(
            _ratio_and_grad,
            y0 / np.linalg.norm(y0),
            args=(s_mat, k_mat),
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": 500, "gtol": 1e-14, "ftol": 1e-16},
        )
        best = min(best, float(res.fun))
    return float(np.clip(best, 0.0, 1.0))


@dataclass
class BoundReport:
    """Computed bound inputs and the three per-iteration contraction factors.

    Fields a given preconditioner/weight combination cannot support are
    left as None rather than failing the whole report.
    """

    lambda_min: float | None = None
    lambda_max: float | None = None
    kappa: float | None = None
    rho: float | None = None
    fov_distance: float | None = None
    op_norm: float | None = None
    bound1: float | None = None
    bound2: float | None = None
    bound3: float | None = None
    alpha_analytic: float | None = None

    def predicted_iterations(self, target: float = 1e-6) -> int | None:
        """Iterations after which bound3^i drops below the target ratio."""
        if self.bound3 is None or self.bound3 >= 1.0:
            return None
        if self.bound3 <= 0.0:
            return 1
        return int(math.ceil(math.log(target) / math.log(self.bound3)))

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "BoundReport":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


def direct_bound3(kappa: float, rho: float) -> float:
    """Contraction factor from a known condition number and skewness measure."""
    if kappa < 1.0:
        raise ValueError("condition number must be >= 1")
    value = 1.0 - (1.0 / kappa) / (1.0 + rho * rho)
    return float(np.sqrt(np.clip(value, 0.0, 1.0)))


def _operators_match(first, second, dim: int, probes: int = 8) -> bool:
    rng = np.random.default_rng(0xD1FF)
    for _ in range(probes):
        v = rng.standard_normal(dim)
        fv = first(v)
        sv = second(v)
        scale = max(np.linalg.norm(fv), np.linalg.norm(sv), 1e-300)
        if np.linalg.norm(fv - sv) > 1e-12 * scale:
            return False
    return True


def compute_bound_report(a, h: PreconditionerHandle, w: WeightOperator,
                         include_fov: bool = True,
                         rayleigh_starts: int = 64,
                         limit: int = DENSIFY_LIMIT) -> BoundReport:
    """Evaluate every bound quantity the given (A, H, W) triple supports.

    bound1 needs only an SPD weight; bound2 additionally requires the
    preconditioner to be SPD and equal to the weight; bound3 also needs
    the symmetric part of A to be positive definite.
    """
    a_dense = densify(a, limit=limit)
    h_dense = densify(h, limit=limit)
    n = a_dense.shape[0]
    report = BoundReport()

    b_dense = a_dense @ h_dense
    w_dense = None if w.is_identity else densify(w, limit=limit)
    c = b_dense if w_dense is None else _whiten(b_dense, w_dense)

    if include_fov:
        m_eigs, _ = sym_eig(0.5 * (c + c.T))
        if m_eigs[0] <= 0.0 and m_eigs[-1] >= 0.0:
            report.fov_distance = 0.0
        else:
            report.fov_distance = fov_distance(b_dense, w, limit=limit)
        gram = c.T @ c
        vals, _ = sym_eig(0.5 * (gram + gram.T))
        report.op_norm = float(np.sqrt(max(vals[-1], 0.0)))

    if n <= RAYLEIGH_DIM_LIMIT:
        inf_quotient = _min_normalized_quotient(c, rayleigh_starts, _RAYLEIGH_SEED)
        report.bound1 = float(np.sqrt(np.clip(1.0 - inf_quotient, 0.0, 1.0)))

    hs = split(a_dense, limit=limit)

    whp_mode = h.hermitian_flag and _operators_match(
        h.apply, (lambda v: v.copy()) if w.is_identity else w.apply, n
    )
    if not whp_mode:
        return report

    try:
        lh = cholesky(h_dense).lower
    except NotPositiveDefiniteError:
        return report
    hm = lh.T @ hs.m_part @ lh
    hm_eigs, _ = sym_eig(0.5 * (hm + hm.T))
    report.lambda_min = float(hm_eigs[0])
    report.lambda_max = float(hm_eigs[-1])
    if hm_eigs[0] > 0.0:
        report.kappa = float(hm_eigs[-1] / hm_eigs[0])

    # second estimate: product of the two generalized infima
    try:
        a_inv = np.linalg.inv(a_dense)
    except np.linalg.LinAlgError:
        a_inv = None
    if a_inv is not None:
        m_of_inv = 0.5 * (a_inv + a_inv.T)
        inv_eigs = gen_sym_eig(m_of_inv, h_dense)
        inf1 = _min_abs_over_range(inv_eigs)
        inf2 = _min_abs_over_range(hm_eigs)
        report.bound2 = float(np.sqrt(np.clip(1.0 - inf1 * inf2, 0.0, 1.0)))

    try:
        report.rho = spectral_radius_skew(hs)
    except NotPositiveDefiniteError:
        report.rho = None
    if report.rho is not None and report.kappa is not None:
        report.bound3 = direct_bound3(report.kappa, report.rho)
    return report


def _min_abs_over_range(eigs: np.ndarray) -> float:
    """Infimum of |t| over the interval spanned by the eigenvalues."""
    lo, hi = float(eigs[0]), float(eigs[-1])
    if lo <= 0.0 <= hi:
        return 0.0
    return min(abs(lo), abs(hi))


def johnson_identity_check(hs: HermitianSplit, a_inv) -> tuple[float, float]:
    """Both sides of the identity linking the split of A and of A^{-1}.

    Returns (lhs, rhs): the smallest generalized eigenvalue of the
    pencil (sym part of A^{-1}, inverse of sym part of A), and
    1 / (1 + rho^2).  For positive definite A the two agree.
    """
    a_inv = np.asarray(a_inv, dtype=float)
    factor = cholesky(hs.m_part)
    m_inverse = factor.solve(np.eye(hs.dim))
    m_of_inv = 0.5 * (a_inv + a_inv.T)
    eigs = gen_sym_eig(m_of_inv, 0.5 * (m_inverse + m_inverse.T))
    rho = spectral_radius_skew(hs)
    return float(eigs[0]), float(1.0 / (1.0 + rho * rho))


def _central_divergence(a_field, x: float, y: float, step: float = 1e-6) -> float:
    ax_p = a_field(x + step, y)[0]
    ax_m = a_field(x - step, y)[0]
    ay_p = a_field(x, y + step)[1]
    ay_m = a_field(x, y - step)[1]
    return float((ax_p - ax_m) / (2 * step) + (ay_p - ay_m) / (2 * step))


def _coeff_at(coeff, x: float, y: float) -> float:
    return float(coeff(x, y)) if callable(coeff) else float(coeff)


def analytic_rho_bound(problem) -> float:
    """Mesh-independent upper bound on the skewness measure of the
    convection-diffusion-reaction operator.

    Evaluates half the sup-norm of the convection field divided by the
    square root of inf(nu) * inf(c0 + div(a)/2), sampling the suprema and
    infima over the mesh vertices plus the four domain corners.  The
    divergence is obtained by central differences on the coefficient
    callbacks.
    """
    m = problem.mesh_divisions
    pts = [(i / m, j / m) for j in range(m + 1) for i in range(m + 1)]
    pts += [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
    a_max = 0.0
    nu_inf = math.inf
    c_inf = math.inf
    for x, y in pts:
        ax, ay = problem.a_field(x, y)
        a_max = max(a_max, math.hypot(float(ax), float(ay)))
        nu_inf = min(nu_inf, _coeff_at(problem.nu, x, y))
        # interior divergence sample; nudge boundary points inward
        xi = min(max(x, 1e-5), 1.0 - 1e-5)
        yi = min(max(y, 1e-5), 1.0 - 1e-5)
        c_inf = min(
            c_inf,
            _coeff_at(problem.c0, x, y) + 0.5 * _central_divergence(problem.a_field, xi, yi),
        )
    if nu_inf <= 0.0:
        raise ValueError("viscosity must be positive everywhere")
    if c_inf <= 0.0:
        raise ValueError("reaction plus half the convection divergence must be positive")
    if a_max == 0.0:
        return 0.0
    return 0.5 * a_max / math.sqrt(nu_inf * c_inf)
