"""Superoperators on operators over L2(S, mu) and the limits built from them.

Operators are plain ``(s, s)`` arrays acting by ``(L f)(x) = sum L[x, x'] f(x')``;
inner products are weighted by ``mu``.  ``calP`` is linear, ``calQ``
quadratic, and both are realised by dividing the pushed-forward pair
measure by ``mu(y)`` row-wise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .kernels import PairKernel, apply_T2, number_form, two_point_kernel
from .model import RtpModel
from .spectral import SpectralData


def inner(mu, f, g) -> float:
    return np.sum(mu * f * g)


def form(mu, f, L, g=None):
    """``(f, L g)`` in L2(mu)."""
    g = f if g is None else g
    return np.sum(mu * f * (L @ g))


def P1(mu) -> np.ndarray:
    """Projection onto constants: ``P1 f = (sum mu f) 1``."""
    mu = np.asarray(mu, dtype=float)
    return np.tile(mu, (len(mu), 1))


def P1perp(mu) -> np.ndarray:
    return np.eye(len(mu)) - P1(mu)


def calP(model: RtpModel, L, kernel: PairKernel | None = None) -> np.ndarray:
    """Operator ``M`` with ``mu x M = (mu x L) P2``."""
    kernel = kernel or two_point_kernel(model)
    s = model.s
    L = np.asarray(L)
    row = (model.mu[:, None] * L).reshape(s * s) @ kernel.P2
    return row.reshape(s, s) / model.mu[:, None]


def calQ(model: RtpModel, L) -> np.ndarray:
    """Operator ``M`` with ``mu x M = T2(mu x L, mu x L)``."""
    lam = model.mu[:, None] * np.asarray(L)
    return apply_T2(model, lam, lam) / model.mu[:, None]


def build_Q(model: RtpModel, spectral: SpectralData) -> np.ndarray:
    """Jump-rate matrix ``Q[x, x'] = kappa(x, x') / mu(x)`` with zero row sums."""
    if spectral.rho <= 0 or spectral.kappa_star is None:
        raise ValueError("Q needs rho > 0 and a Perron vector kappa")
    Q = spectral.kappa_star / model.mu[:, None]
    return Q


def dirichlet_form(kappa_star, f, g=None) -> float:
    """``(1/2) sum_{x != x'} (f(x') - f(x)) (g(x') - g(x)) kappa(x, x')``."""
    f = np.asarray(f, dtype=float)
    g = f if g is None else np.asarray(g, dtype=float)
    K = np.array(kappa_star, dtype=float)
    np.fill_diagonal(K, 0.0)
    return 0.5 * float(np.sum(np.subtract.outer(f, f) * np.subtract.outer(g, g) * K))


def check_PQ(model: RtpModel, spectral: SpectralData, Q, kernel=None) -> float:
    return float(np.abs(calP(model, Q, kernel) - spectral.rho * Q).max())


def q_hat(model: RtpModel, spectral: SpectralData, Q, kernel=None) -> np.ndarray:
    r2 = (2 * spectral.rho) ** -2
    return 2 * r2 * (calQ(model, Q) + calP(model, Q @ Q, kernel)) - Q @ Q


def _bilinear(model: RtpModel, L0, L1) -> np.ndarray:
    mu = model.mu[:, None]
    return apply_T2(model, mu * np.asarray(L0), mu * np.asarray(L1)) / mu


def _pgf_deviation(model: RtpModel, n: int, w) -> np.ndarray:
    """``D_n`` with ``calQ^n(I - w P1perp) = I - D_n``.

    Since ``calQ(I) = I`` exactly, iterating the deviation keeps its relative
    precision; iterating the full operator loses about ``2^n`` ulps when
    ``w`` is small.  ``D`` kills constants on both sides in exact arithmetic;
    re-projecting each step stops rounding from seeding the identity
    direction, which grows like ``2^n``.
    """
    I = np.eye(model.s)
    Pp = P1perp(model.mu)
    D = w * Pp
    for _ in range(n):
        D = _bilinear(model, D, I) + _bilinear(model, I, D) - calQ(model, D)
        D = Pp @ D @ Pp
    return D


def pgf_operator(model: RtpModel, n: int, z) -> np.ndarray:
    """``calQ^n (P1 + z P1perp)``; ``z`` may be complex."""
    return np.eye(model.s) - _pgf_deviation(model, n, 1 - z)


def _pgf_from_deviation(model: RtpModel, f, n: int, w):
    f = np.asarray(f, dtype=float)
    val = inner(model.mu, f, f) - form(model.mu, f, _pgf_deviation(model, n, w))
    return float(val.real) if np.isrealobj(val) else val


def pgf_spectral_measure(model: RtpModel, f, n: int, z):
    """Generating function ``G_n(z) = sum_k z^k mu_f^(n)(k)`` of the number-operator
    spectral measure of the root observable ``f``."""
    return _pgf_from_deviation(model, f, n, 1 - z)


MAX_RECOVER_LEVEL = 6


def recover_masses(model: RtpModel, f, n: int) -> np.ndarray:
    """Masses ``mu_f^(n)(0..2^n)`` from ``G_n`` on the ``2^n + 1`` roots of unity.

    Exact inversion by a discrete Fourier transform; limited to small ``n``.
    """
    if n > MAX_RECOVER_LEVEL:
        raise ValueError(f"mass recovery is limited to n <= {MAX_RECOVER_LEVEL}")
    N = 2**n + 1
    omega = np.exp(2j * np.pi * np.arange(N) / N)
    vals = np.array([pgf_spectral_measure(model, f, n, w) for w in omega])
    return np.fft.fft(vals).real / N


def spectral_moments(model: RtpModel, f, n: int, h: float = 1e-6) -> tuple[float, float]:
    """Total mass ``G_n(1)`` and mean ``G_n'(1)`` (backward difference)."""
    g1 = pgf_spectral_measure(model, f, n, 1.0)
    return g1, (g1 - pgf_spectral_measure(model, f, n, 1.0 - h)) / h


@dataclass
class LaplaceLimit:
    t: float
    values: list[float]
    increments: list[float]
    estimate: float


def _require_supercritical(spectral: SpectralData, primitive: bool = True):
    if 2 * spectral.rho <= 1:
        raise ValueError("this limit is only asserted for 2 rho > 1")
    if primitive and not spectral.primitive:
        raise ValueError("this limit needs a primitive P(-)")


def laplace_limit(model: RtpModel, spectral: SpectralData, f, t: float,
                  n_max: int = 20) -> LaplaceLimit:
    """``v_n = G_n(exp(-(2 rho)^-n t))`` for ``n = 0..n_max``.

    The last value estimates ``(f, exp(t Q_inf) f)``, the Laplace transform
    of the rescaled spectral measure limit at ``t``.
    """
    _require_supercritical(spectral)
    if t <= 0:
        raise ValueError("t must be positive")
    two_rho = 2 * spectral.rho
    vals = [_pgf_from_deviation(model, f, n, -np.expm1(-t * two_rho**-n))
            for n in range(n_max + 1)]
    incs = [abs(b - a) for a, b in zip(vals, vals[1:])]
    return LaplaceLimit(t, vals, incs, vals[-1])


@dataclass
class SeriesValue:
    value: float
    tail_bound: float
    terms: list[float] = field(default_factory=list)


def q_infinity_norm(model: RtpModel, spectral: SpectralData, Q, f, r_max: int = 60,
                    kernel=None) -> SeriesValue:
    """Squared norm of ``Q_inf f`` for a root observable ``f``.

    Sums ``2 (2 rho)^(-2r-2) 2^r (f, calP^r(calQ Q) f)`` for ``r <= r_max``.
    The tail estimate uses ``|(f, calP^r(calQ Q) f)| <= C rho^r`` with ``C``
    taken from the computed terms, so it is a heuristic bound.
    """
    _require_supercritical(spectral, primitive=False)
    kernel = kernel or two_point_kernel(model)
    rho = spectral.rho
    f = np.asarray(f, dtype=float)
    L = calQ(model, Q)
    terms, C = [], 0.0
    for r in range(r_max + 1):
        a = form(model.mu, f, L)
        C = max(C, abs(a) / rho**r)
        terms.append(2 * (2 * rho) ** (-2 * r - 2) * 2**r * a)
        L = calP(model, L, kernel)
    q = 1 / (2 * rho)
    tail = 2 * C * (2 * rho) ** -2 * q ** (r_max + 1) / (1 - q)
    return SeriesValue(float(sum(terms)), float(tail), terms)


def qn_square_form(model: RtpModel, spectral: SpectralData, Q, f, n: int,
                   kernel=None) -> float:
    """``(f, Q_n^2 f)`` for a root observable, expanded level by level.

    Equals ``(2rho)^-2n 2^n (f, calP^n(Q^2) f)`` plus the first ``n`` terms of
    the series in :func:`q_infinity_norm`.
    """
    kernel = kernel or two_point_kernel(model)
    rho = spectral.rho
    f = np.asarray(f, dtype=float)
    L = np.asarray(Q) @ Q
    for _ in range(n):
        L = calP(model, L, kernel)
    total = (2 * rho) ** (-2 * n) * 2**n * form(model.mu, f, L)
    L = calQ(model, Q)
    for r in range(n):
        total += 2 * (2 * rho) ** (-2 * r - 2) * 2**r * form(model.mu, f, L)
        L = calP(model, L, kernel)
    return float(total)


@dataclass
class Con2Trace:
    values: list[float]
    target: float
    deviations: list[float]


def con2_check(model: RtpModel, spectral: SpectralData, Q, f, g=None, n_max: int = 30,
               kernel=None) -> Con2Trace:
    """Rescaled polarised number forms ``(2 rho)^-n (f, A_n g)`` against ``-(f, Q g)``."""
    _require_supercritical(spectral)
    kernel = kernel or two_point_kernel(model)
    f = np.asarray(f, dtype=float)
    g = f if g is None else np.asarray(g, dtype=float)
    target = -float(form(model.mu, f, Q, g))
    vals = [number_form(model, f, n, g, kernel) / (2 * spectral.rho) ** n
            for n in range(n_max + 1)]
    return Con2Trace(vals, target, [abs(v - target) for v in vals])


def write_pgf_csv(path, rows, header=("n", "z", "value"), comment: str | None = None):
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
