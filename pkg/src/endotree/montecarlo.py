"""Stochastic checks on trees too deep for exhaustive enumeration.

Every trial batch owns a counter-based ``Philox`` stream keyed by
``(seed, stream id)``, so results do not depend on thread scheduling.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from . import _backend
from ._pycore import _draw_tree, _update_path
from .model import RtpModel, find_invariant, validate
from .spectral import SpectralData

BATCHES = 32


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=[self.seed, self.stream]))

    def spawn(self, k: int) -> "RngStream":
        """Child stream; children of distinct parents never collide for seeds < 2**32."""
        return RngStream(self.seed, (self.stream << 32) + k + 1)


def _generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return RngStream(int(rng)).generator()


def default_threads() -> int:
    return max(1, int(os.environ.get("ENDOTREE_THREADS", "1")))


def _cdf(p) -> np.ndarray:
    return np.cumsum(np.asarray(p, dtype=float))


@dataclass
class TreeConfig:
    """Depth-``n`` tree: states in heap order (root first) and fixed innovations."""

    n: int
    states: list[int]
    innovations: list[int]
    recomputations: int = 0

    @property
    def root(self) -> int:
        return self.states[0]

    @property
    def leaves(self) -> list[int]:
        return self.states[2**self.n - 1:]

    def set_leaf(self, k: int, x: int, phi) -> int:
        leaf = 2**self.n - 1 + k
        self.states[leaf] = int(x)
        touched = _update_path(phi.tolist(), self.states, self.innovations, leaf)
        self.recomputations += touched
        return touched

    def consistent(self, phi) -> bool:
        for v in range(2**self.n - 1):
            a, b = self.states[2 * v + 1], self.states[2 * v + 2]
            if self.states[v] != phi[a, b, self.innovations[v]]:
                return False
        return True


def sample_config(model: RtpModel, n: int, rng) -> TreeConfig:
    """Leaves i.i.d. ``mu``, innovations i.i.d. ``nu``, internal states by recursion."""
    gen = _generator(rng)
    states = [0] * (2 ** (n + 1) - 1)
    eps = [0] * (2**n - 1)
    _draw_tree(model.phi.tolist(), n, list(_cdf(model.mu)), list(_cdf(model.nu)), gen,
               states, eps)
    return TreeConfig(n, states, eps)


def sample_roots(model: RtpModel, n: int, trials: int, rng, backend=None) -> np.ndarray:
    core = _backend.get(backend)
    return np.asarray(core.sample_roots(model.phi, n, _cdf(model.mu), _cdf(model.nu),
                                        trials, _generator(rng)))


def _batched(fn, seed: int, trials: int, batches: int, threads: int | None):
    sizes = [len(b) for b in np.array_split(np.arange(trials), batches)]
    jobs = [(RngStream(seed, b), size) for b, size in enumerate(sizes) if size]
    threads = threads or default_threads()
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(lambda job: fn(job[0].generator(), job[1]), jobs))
    return [fn(stream.generator(), size) for stream, size in jobs]


@dataclass
class Estimate:
    value: float
    se: float
    trials: int
    seed: int


def coupling_estimate(model: RtpModel, n: int, trials: int, seed: int = 0,
                      threads: int | None = None, backend=None) -> Estimate:
    """Probability that two roots differ with shared innovations and independent leaves."""
    if trials < 100:
        raise ValueError("coupling_estimate needs at least 100 trials")
    core = _backend.get(backend)
    mc, nc = _cdf(model.mu), _cdf(model.nu)
    counts = _batched(lambda g, k: core.coupling_trials(model.phi, n, mc, nc, k, g),
                      seed, trials, BATCHES, threads)
    p = sum(counts) / trials
    return Estimate(p, float(np.sqrt(p * (1 - p) / trials)), trials, seed)


def qn_rates(spectral: SpectralData, Q, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-state leaf jump rates and jump CDFs for the generator ``(2 rho)^-n Q``."""
    Q = np.asarray(Q, dtype=float)
    off = Q - np.diag(np.diag(Q))
    if (off < 0).any():
        raise ValueError("Q has a negative off-diagonal rate; refusing to simulate")
    if spectral.rho <= 0:
        raise ValueError("simulation of Q_n needs rho > 0")
    out = off.sum(axis=1)
    rates = (2 * spectral.rho) ** -n * out
    cdf = np.cumsum(off, axis=1) / np.where(out > 0, out, 1.0)[:, None]
    return rates, cdf


def refresh_rates(model: RtpModel) -> tuple[np.ndarray, np.ndarray]:
    """Unit-rate resampling of each leaf from ``mu``."""
    s = model.s
    return np.ones(s), np.tile(_cdf(model.mu), (s, 1))


@dataclass
class Trajectory:
    times: list[float]
    roots: list[int]
    events: int
    recomputations: int
    final: TreeConfig
    seed_info: str = ""


def _run(model, config: TreeConfig, rates, cdf, t_end, max_events, rng, backend):
    core = _backend.get(backend)
    states = list(config.states)
    times, roots, events, touched = core.trajectory(
        model.phi, config.n, rates, cdf, states, config.innovations, t_end, max_events,
        _generator(rng))
    final = TreeConfig(config.n, list(states), list(config.innovations),
                       config.recomputations + touched)
    return Trajectory(times, roots, events, touched, final)


def gillespie_qn(model: RtpModel, spectral: SpectralData, Q, n: int, t_end: float, rng,
                 config: TreeConfig | None = None, max_events: int = 10**6,
                 backend=None) -> Trajectory:
    """Exact event-driven run where each leaf moves under ``(2 rho)^-n Q``."""
    rates, cdf = qn_rates(spectral, Q, n)
    gen = _generator(rng)
    config = config or sample_config(model, n, gen)
    return _run(model, config, rates, cdf, t_end, max_events, gen, backend)


def refresh_dynamics(model: RtpModel, n: int, t_end: float, rng,
                     config: TreeConfig | None = None, max_events: int = 10**6,
                     backend=None) -> Trajectory:
    """Each leaf is resampled from ``mu`` at rate 1; innovations stay fixed."""
    rates, cdf = refresh_rates(model)
    gen = _generator(rng)
    config = config or sample_config(model, n, gen)
    return _run(model, config, rates, cdf, t_end, max_events, gen, backend)


@dataclass
class Autocovariance:
    lags: list[float]
    values: list[float]
    se: list[float]
    trials: int
    events: int
    recomputations: int
    seed: int
    batch_means: np.ndarray = field(repr=False, default=None)


def autocovariance(model: RtpModel, n: int, rates, cdf, f, lags, trials: int, seed: int = 0,
                   batches: int = BATCHES, threads: int | None = None,
                   backend=None) -> Autocovariance:
    """``E[f(root_0) f(root_t)]`` from stationary starts; batch-means standard errors."""
    core = _backend.get(backend)
    order = np.argsort(lags)
    lags_sorted = np.asarray(lags, dtype=float)[order]
    fvals = np.asarray(f, dtype=float)
    mc, nc = _cdf(model.mu), _cdf(model.nu)
    results = _batched(
        lambda g, k: core.autocov_trials(model.phi, n, rates, cdf, mc, nc, fvals,
                                         lags_sorted, k, g),
        seed, trials, batches, threads)
    means = np.array([np.mean(r[0], axis=0) for r in results])
    sizes = np.array([len(r[0]) for r in results])
    est = (means * sizes[:, None]).sum(axis=0) / sizes.sum()
    se = means.std(axis=0, ddof=1) / np.sqrt(len(means))
    inv = np.empty_like(order)
    inv[order] = np.arange(len(order))
    return Autocovariance(
        [float(x) for x in np.asarray(lags, dtype=float)],
        est[inv].tolist(), se[inv].tolist(), int(sizes.sum()),
        sum(r[1] for r in results), sum(r[2] for r in results), seed, means[:, inv])


def qn_autocovariance(model, spectral, Q, f, n, lags, trials, seed=0, **kw) -> Autocovariance:
    rates, cdf = qn_rates(spectral, Q, n)
    return autocovariance(model, n, rates, cdf, f, lags, trials, seed, **kw)


def refresh_autocovariance(model, f, n, lags, trials, seed=0, **kw) -> Autocovariance:
    rates, cdf = refresh_rates(model)
    return autocovariance(model, n, rates, cdf, f, lags, trials, seed, **kw)


def qn_semigroup_exact(model: RtpModel, spectral: SpectralData, Q, f, n: int, t: float) -> float:
    """``(f, exp(t Q_n) f)`` for a root observable, via the quadratic superoperator."""
    from .superop import calQ, form

    L = expm(t * (2 * spectral.rho) ** -n * np.asarray(Q, dtype=float))
    for _ in range(n):
        L = calQ(model, L)
    return float(form(model.mu, np.asarray(f, dtype=float), L))


def random_model(s: int, e: int, rng, symmetric: bool = True, uniform_nu: bool = False,
                 max_retries: int = 100) -> RtpModel:
    """Random model with a solved invariant ``mu``; zero-mass states are trimmed."""
    gen = _generator(rng)
    states = tuple(f"s{i}" for i in range(s))
    innovations = tuple(f"e{i}" for i in range(e))
    for _ in range(max_retries):
        phi = gen.integers(0, s, size=(s, s, e))
        if symmetric:
            upper = np.triu_indices(s, 1)
            phi[upper[1], upper[0]] = phi[upper[0], upper[1]]
        nu = np.full(e, 1.0 / e) if uniform_nu else gen.dirichlet(np.ones(e))
        try:
            mu, _ = find_invariant(phi, nu, max_iter=20_000, tol=1e-14)
        except RuntimeError:
            continue
        mu[mu < 1e-9] = 0.0
        mu /= mu.sum()
        report = validate(RtpModel(states, innovations, mu, nu, phi))
        if report.ok:
            # polish mu on the trimmed support
            m = report.model
            try:
                mu, _ = find_invariant(m.phi, m.nu, max_iter=2_000, tol=1e-15, start=m.mu)
            except RuntimeError:
                return m
            return RtpModel(m.states, m.innovations, mu, m.nu, m.phi)
    raise RuntimeError(f"no valid random model after {max_retries} attempts")


def search_critical_symmetric(rng, budget: int, band: float = 1e-6, m_max: int = 3,
                              inject=(), max_states: int = 4, max_innovations: int = 4):
    """Scan random symmetric models for critical cases where the Gram test stalls.

    Returns ``(model, verdict)`` pairs for human inspection.  Half of the
    draws use uniform ``nu``, where criticality is structurally possible.
    """
    from .endogeny import classify

    gen = _generator(rng)
    pool = list(inject)
    for k in range(budget):
        s = int(gen.integers(2, max_states + 1))
        e = int(gen.integers(1, max_innovations + 1))
        try:
            pool.append(random_model(s, e, gen, symmetric=True, uniform_nu=bool(k % 2)))
        except RuntimeError:
            continue
    found = []
    for model in pool:
        if not model.is_symmetric():
            continue
        verdict = classify(model, m_max=m_max, tol_crit=band)
        ev = verdict.critical_evidence
        if ev is None or not ev.nondegen2:
            continue
        if not ev.nondegen1.resolved and ev.nondegen1.epsilon_min < 1e-6:
            found.append((model, verdict))
    return found
