"""One-dimensional Matern kernels and the conditional edge covariance family.

The Markov orders are alpha=1 (exponential kernel, nu=1/2) and alpha=2
(nu=3/2, once differentiable).  State on an edge of length T is the value
(alpha=1) or the value/derivative pair (alpha=2) at each endpoint; the
"free edge" covariance is the stationary kernel with the endpoint marginal
relaxed so that edges can be glued at vertices by pure conditioning.

All closed forms are written with non-positive exponents only, so they stay
finite and accurate for kappa*T in the thousands.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ModelParams",
    "EdgeGaussian",
    "matern_cov",
    "stationary_block",
    "stationary_r00",
    "edge_conditional_cov",
    "edge_precision",
    "edge_precision_alpha2_closed_form",
    "closed_form_interval",
    "closed_form_circle",
]


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    """Field parameters: smoothness alpha (1 or 2), inverse range kappa,
    precision scale tau, and measurement noise standard deviation sigma."""

    alpha: int
    kappa: float
    tau: float = 1.0
    sigma: float = 0.0

    def __post_init__(self):
        if self.alpha not in (1, 2):
            raise KernelError(f"alpha must be 1 or 2, got {self.alpha}")
        if not self.kappa > 0:
            raise KernelError("kappa must be positive")
        if not self.tau > 0:
            raise KernelError("tau must be positive")
        if self.sigma < 0:
            raise KernelError("sigma must be nonnegative")

    @property
    def nu(self):
        return self.alpha - 0.5

    @property
    def dim(self):
        """State dimension per endpoint (1 for alpha=1, 2 for alpha=2)."""
        return self.alpha


def _r_derivs(params: ModelParams, h):
    """(r, r', r'') of the stationary kernel at signed lag h.

    alpha=1: r(h) = e^{-k|h|} / (2 k tau^2)          (r', r'' unused)
    alpha=2: r(h) = (1 + k|h|) e^{-k|h|} / (4 k^3 tau^2)
    """
    k, t = params.kappa, params.tau
    a = abs(h)
    e = np.exp(-k * a)
    if params.alpha == 1:
        r = e / (2 * k * t * t)
        return r, None, None
    c = 1.0 / (4 * k**3 * t * t)
    r = c * (1 + k * a) * e
    rp = -c * k * k * h * np.exp(-k * a)  # odd in h
    rpp = c * k * k * (k * a - 1) * e
    return r, rp, rpp


def matern_cov(params: ModelParams, h, deriv_s=0, deriv_t=0):
    """Cov(u^(deriv_s)(s), u^(deriv_t)(t)) of the stationary kernel, h = t - s.

    Derivative orders are limited to alpha - 1.  The mixed derivative at
    h = 0 uses the stationary limit -r''(0).
    """
    if deriv_s > params.alpha - 1 or deriv_t > params.alpha - 1:
        raise KernelError(
            f"derivative order ({deriv_s},{deriv_t}) not available for alpha={params.alpha}"
        )
    r, rp, rpp = _r_derivs(params, h)
    order = deriv_s + deriv_t
    if order == 0:
        return r
    sign = (-1.0) ** deriv_s
    if order == 1:
        return sign * rp
    return sign * rpp


def stationary_block(params: ModelParams, s, t):
    """d x d covariance block of the state vector between positions s and t."""
    d = params.dim
    B = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            B[i, j] = matern_cov(params, t - s, i, j)
    return B


def stationary_r00(params: ModelParams):
    """r(0,0): the d x d marginal covariance of the state at a single point."""
    return stationary_block(params, 0.0, 0.0)


def _boundary_gram(params: ModelParams, T):
    """The 2d x 2d matrix [[r(0,0), -r(0,T)], [-r(T,0), r(0,0)]]."""
    B00 = stationary_r00(params)
    B0T = stationary_block(params, 0.0, T)
    return np.block([[B00, -B0T], [-B0T.T, B00]])


def edge_conditional_cov(params: ModelParams, T, s, t):
    """Free-edge covariance block r~_T(s, t) on [0, T].

    Equals the stationary block plus a boundary correction that inflates the
    variance near the endpoints; conditioning two such edges to agree at a
    shared vertex reproduces the free edge of the combined length.
    """
    if not (0 <= s <= T and 0 <= t <= T):
        raise KernelError(f"positions ({s},{t}) outside [0,{T}]")
    M = _boundary_gram(params, T)
    row = np.hstack([stationary_block(params, s, 0.0), stationary_block(params, s, T)])
    col = np.vstack([stationary_block(params, 0.0, t), stationary_block(params, T, t)])
    out = stationary_block(params, s, t) + row @ np.linalg.solve(M, col)
    return out if params.dim > 1 else float(out[0, 0])


def edge_joint_cov(params: ModelParams, T, positions):
    """Dense free-edge covariance of the state vector at the given positions."""
    d = params.dim
    n = len(positions)
    C = np.empty((n * d, n * d))
    for i, si in enumerate(positions):
        for j, sj in enumerate(positions):
            blk = edge_conditional_cov(params, T, si, sj)
            C[i * d:(i + 1) * d, j * d:(j + 1) * d] = np.atleast_2d(blk)
    return C


def _alpha1_q(kappa, T):
    """Edge precision entries for alpha=1, in units of 2*kappa*tau^2.

    q_diag = 1/2 + e^{-2kT}/(1 - e^{-2kT}),  q_off = -e^{-kT}/(1 - e^{-2kT}).
    """
    e1 = np.exp(-kappa * T)
    e2 = e1 * e1
    denom = 1.0 - e2
    if denom == 0.0:
        raise KernelError(f"edge with kappa*T = {kappa * T} is numerically singular")
    return 0.5 + e2 / denom, -e1 / denom


def edge_precision_alpha2_closed_form(params: ModelParams, T):
    """Closed-form 4x4 free-edge precision of [u(0), u'(0), u(T), u'(T)].

    The coefficients are functions of the dimensionless length Tc = kappa*T
    alone, scaled by powers of kappa; they were derived symbolically and are
    pinned against the numeric inverse of the free-edge covariance in the
    test suite.  Written with decaying exponentials for stability.
    """
    k, tau = params.kappa, params.tau
    Tc = k * T
    em1 = np.exp(-Tc)
    em2 = em1 * em1
    em3 = em2 * em1
    em4 = em2 * em2
    den = 1.0 - (4 * Tc**2 + 2) * em2 + em4
    if den <= 0:
        raise KernelError(f"edge with kappa*T = {Tc} is numerically singular")
    q1 = 1 + 4 * Tc * em2 - em4
    q2 = 4 * Tc**2 * em2
    q3 = -2 * ((Tc + 1) * em1 + (Tc - 1) * em3)
    q4 = 2 * Tc * (em1 - em3)
    q5 = 1 - 4 * Tc * em2 - em4
    q6 = 2 * ((Tc - 1) * em1 + (Tc + 1) * em3)
    M = np.array(
        [
            [k * k * q1, k * q2, k * k * q3, k * q4],
            [k * q2, q5, -k * q4, q6],
            [k * k * q3, -k * q4, k * k * q1, -k * q2],
            [k * q4, q6, -k * q2, q5],
        ]
    )
    return (2 * k * tau * tau / den) * M


def edge_precision(params: ModelParams, T):
    """Free-edge precision Q~ of the endpoint state [state(0), state(T)].

    Q~ = Q_stationary - (1/2) blockdiag(r(0,0)^{-1}, r(0,0)^{-1}); closed
    forms are used for both Markov orders.
    """
    if not T > 0:
        raise KernelError("edge length must be positive")
    if params.kappa * T < 1e-8:
        raise KernelError(
            f"kappa*T = {params.kappa * T:.3e} below 1e-8: endpoint states are "
            "numerically indistinguishable and the edge precision is near singular"
        )
    if params.alpha == 1:
        qd, qo = _alpha1_q(params.kappa, T)
        f = 2 * params.kappa * params.tau**2
        return f * np.array([[qd, qo], [qo, qd]])
    return edge_precision_alpha2_closed_form(params, T)


@dataclass(frozen=True)
class EdgeGaussian:
    """Free-edge Gaussian on [0, T]: boundary precision plus covariance access."""

    params: ModelParams
    T: float

    @property
    def boundary_precision(self):
        return edge_precision(self.params, self.T)

    def cov(self, s, t):
        return edge_conditional_cov(self.params, self.T, s, t)


# ---------------------------------------------------------------------------
# exact closed forms on the two analytically solvable domains
# ---------------------------------------------------------------------------

def closed_form_interval(params: ModelParams, T, s, t):
    """Field covariance on a single interval [0, T] with free vertex conditions."""
    if not (0 <= s <= T and 0 <= t <= T):
        raise KernelError(f"positions ({s},{t}) outside [0,{T}]")
    k, tau = params.kappa, params.tau
    if params.alpha == 1:
        # (cosh(k(T - |s-t|)) + cosh(k(s+t-T))) / (2 k tau^2 sinh(kT)),
        # rewritten with exponents <= 0
        h = abs(s - t)
        em = np.exp(-2 * k * T)
        num = (
            np.exp(-k * h)
            + np.exp(-k * (2 * T - h))
            + np.exp(-k * (s + t))
            + np.exp(-k * (2 * T - s - t))
        )
        return num / (2 * k * tau * tau * (1.0 - em))
    # alpha = 2: value covariance of the derivative-free process on [0, T]
    # with zero endpoint derivatives.
    c = 1.0 / (4 * k**3 * tau * tau)
    h = s - t
    v = s + t
    em2 = np.exp(-2 * k * T)
    term1 = c * (1 + k * abs(h)) * np.exp(-k * abs(h))
    # (r(h) + r(-h) + e^{2kT} r(v) + r(-v)) / (e^{2kT} - 1) with the signed
    # kernel r(x) = c (1 + kx) e^{-kx}; the growing exponentials are folded
    # into the e^{-2kT} damping before evaluation.
    num = c * (
        (1 + k * h) * np.exp(-k * (h + 2 * T))
        + (1 - k * h) * np.exp(k * (h - 2 * T))
        + (1 - k * v) * np.exp(k * (v - 2 * T))
        + (1 + k * v) * np.exp(-k * v)
    ) / (1.0 - em2)
    # T cosh(ks) cosh(kt) / (2 k^2 tau^2 sinh^2(kT)), stabilized:
    # cosh(ks)cosh(kt)/sinh^2(kT) = (e^{-k(2T-s-t)} + e^{-k(2T+s-t)} +
    #   e^{-k(2T-s+t)} + e^{-k(2T+s+t)}) / (1 - e^{-2kT})^2
    cc = (
        np.exp(-k * (2 * T - s - t))
        + np.exp(-k * (2 * T + s - t))
        + np.exp(-k * (2 * T - s + t))
        + np.exp(-k * (2 * T + s + t))
    ) / (1.0 - em2) ** 2
    term3 = T * cc / (2 * k * k * tau * tau)
    return term1 + num + term3


def closed_form_circle(params: ModelParams, T, s, t):
    """Field covariance on a circle of perimeter T, arguments modulo T."""
    k, tau = params.kappa, params.tau
    d = abs(s - t) % T
    d = min(d, T - d)
    emT = np.exp(-k * T)
    if params.alpha == 1:
        # cosh(k(d - T/2)) / (2 k tau^2 sinh(kT/2))
        num = np.exp(-k * d) + np.exp(-k * (T - d))
        return num / (2 * k * tau * tau * (1.0 - emT))
    # alpha = 2, with v = k(d - T/2):
    # [ (1 + (kT/2) coth(kT/2)) cosh(v) - v sinh(v) ] / (4 k^3 tau^2 sinh(kT/2))
    v = k * (d - T / 2.0)
    emh = np.exp(-k * T / 2.0)
    # cosh(v)/sinh(kT/2) and sinh(v)/sinh(kT/2) with exponents <= 0:
    ep = np.exp(v - k * T / 2.0)   # = e^{-k(T-d)}
    em = np.exp(-v - k * T / 2.0)  # = e^{-k d}
    cosh_over = (ep + em) / (1.0 - emT)
    sinh_over = (ep - em) / (1.0 - emT)
    coth_half = (1.0 + emT) / (1.0 - emT)
    A = 1.0 + (k * T / 2.0) * coth_half
    return (A * cosh_over - v * sinh_over) / (4 * k**3 * tau * tau)
