"""Pure-Python simulation kernels.

Reference implementation of the compiled ``_core`` module.  Both consume
uniforms one at a time from the generator in the same order, so a given
seed produces identical output on either backend.

Draw order per tree: leaves (lexicographic), innovations (breadth-first);
per event: holding time, leaf choice, new state.
"""

from math import log


def _pick(cdf, u):
    k = 0
    last = len(cdf) - 1
    while k < last and u >= cdf[k]:
        k += 1
    return k


def _fill(phi, n, states, eps):
    for v in range(2**n - 2, -1, -1):
        states[v] = phi[states[2 * v + 1]][states[2 * v + 2]][eps[v]]


def _draw_tree(phi, n, mu_cdf, nu_cdf, rng, states, eps):
    first = 2**n - 1
    for k in range(2**n):
        states[first + k] = _pick(mu_cdf, rng.random())
    for v in range(first):
        eps[v] = _pick(nu_cdf, rng.random())
    _fill(phi, n, states, eps)


def sample_roots(phi, n, mu_cdf, nu_cdf, trials, rng):
    phi = phi.tolist()
    mu_cdf, nu_cdf = list(mu_cdf), list(nu_cdf)
    states = [0] * (2 ** (n + 1) - 1)
    eps = [0] * (2**n - 1)
    roots = []
    for _ in range(trials):
        _draw_tree(phi, n, mu_cdf, nu_cdf, rng, states, eps)
        roots.append(states[0])
    return roots


def coupling_trials(phi, n, mu_cdf, nu_cdf, trials, rng):
    """Count trials whose two roots differ (shared innovations, independent leaves)."""
    phi = phi.tolist()
    mu_cdf, nu_cdf = list(mu_cdf), list(nu_cdf)
    first = 2**n - 1
    a = [0] * (2 ** (n + 1) - 1)
    b = [0] * (2 ** (n + 1) - 1)
    eps = [0] * first
    differ = 0
    for _ in range(trials):
        for v in range(first):
            eps[v] = _pick(nu_cdf, rng.random())
        for k in range(2**n):
            a[first + k] = _pick(mu_cdf, rng.random())
        for k in range(2**n):
            b[first + k] = _pick(mu_cdf, rng.random())
        _fill(phi, n, a, eps)
        _fill(phi, n, b, eps)
        differ += a[0] != b[0]
    return differ


def _update_path(phi, states, eps, leaf):
    v = leaf
    touched = 0
    while v > 0:
        v = (v - 1) // 2
        states[v] = phi[states[2 * v + 1]][states[2 * v + 2]][eps[v]]
        touched += 1
    return touched


def _step(phi, n, rates, jump_cdf, states, eps, rng, total):
    """One event: choose a leaf by rate, move it, recompute its path."""
    first = 2**n - 1
    target = rng.random() * total
    acc = 0.0
    leaf = first
    for k in range(2**n):
        acc += rates[states[first + k]]
        leaf = first + k
        if target < acc:
            break
    states[leaf] = _pick(jump_cdf[states[leaf]], rng.random())
    return _update_path(phi, states, eps, leaf)


def _total_rate(rates, states, first, nl):
    return sum(rates[states[first + k]] for k in range(nl))


def autocov_trials(phi, n, rates, jump_cdf, mu_cdf, nu_cdf, fvals, lags, trials, rng):
    """Stationary-start runs; returns (f(root_0) f(root_lag) per trial, events, recomputes)."""
    phi = phi.tolist()
    rates, fvals, lags = list(rates), list(fvals), list(lags)
    jump_cdf = [list(r) for r in jump_cdf]
    mu_cdf, nu_cdf = list(mu_cdf), list(nu_cdf)
    first, nl = 2**n - 1, 2**n
    states = [0] * (2 ** (n + 1) - 1)
    eps = [0] * first
    out = [[0.0] * len(lags) for _ in range(trials)]
    events = touched = 0
    for i in range(trials):
        _draw_tree(phi, n, mu_cdf, nu_cdf, rng, states, eps)
        f0 = fvals[states[0]]
        row = out[i]
        t, j = 0.0, 0
        while j < len(lags):
            total = _total_rate(rates, states, first, nl)
            if total <= 0.0:
                t_next = float("inf")
            else:
                t_next = t - log(1.0 - rng.random()) / total
            while j < len(lags) and lags[j] < t_next:
                row[j] = f0 * fvals[states[0]]
                j += 1
            if j == len(lags):
                break
            touched += _step(phi, n, rates, jump_cdf, states, eps, rng, total)
            events += 1
            t = t_next
    return out, events, touched


def trajectory(phi, n, rates, jump_cdf, states, eps, t_end, max_events, rng):
    """Single run from a given configuration; returns (times, roots, events, recomputes).

    ``states`` is modified in place to the final configuration.
    """
    phi = phi.tolist()
    rates = list(rates)
    jump_cdf = [list(r) for r in jump_cdf]
    first, nl = 2**n - 1, 2**n
    times, roots = [0.0], [states[0]]
    t = 0.0
    events = touched = 0
    while events < max_events:
        total = _total_rate(rates, states, first, nl)
        if total <= 0.0:
            break
        t -= log(1.0 - rng.random()) / total
        if t >= t_end:
            break
        touched += _step(phi, n, rates, jump_cdf, states, eps, rng, total)
        events += 1
        times.append(t)
        roots.append(states[0])
    return times, roots, events, touched
