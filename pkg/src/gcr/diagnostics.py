"""Chain summaries: moments, quantiles and an autocorrelation-based effective sample size."""

import numpy as np

from .posthoc import summarize_draws


def autocorrelation(x):
    x = np.asarray(x, dtype=float) - np.mean(x)
    n = x.size
    f = np.fft.rfft(x, 2 * n)
    acov = np.fft.irfft(f * np.conj(f))[:n] / n
    return acov / acov[0] if acov[0] > 0 else np.zeros(n)


def effective_sample_size(chains):
    """ESS summed over chains, each from Geyer's initial positive sequence.

    ``chains`` is a 1-D draw vector or a list of them. A constant chain
    has as many effective draws as actual draws.
    """
    if isinstance(chains, np.ndarray) and chains.ndim == 1:
        chains = [chains]
    total = 0.0
    for x in chains:
        x = np.asarray(x, dtype=float)
        n = x.size
        if n < 4 or np.ptp(x) == 0:
            total += n
            continue
        rho = autocorrelation(x)
        pairs = rho[:n - n % 2].reshape(-1, 2).sum(axis=1)
        stop = np.flatnonzero(pairs <= 0)
        pairs = pairs[:stop[0]] if stop.size else pairs
        # monotone envelope keeps the estimate stable in the tail
        pairs = np.minimum.accumulate(pairs)
        tau = -1.0 + 2.0 * pairs.sum()
        total += n / max(tau, 1.0 / n)
    return float(total)


def summarize_parameter(values, chain=None):
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("empty chain")
    out = summarize_draws(values)
    if chain is None:
        out["ess"] = effective_sample_size(values)
    else:
        chain = np.asarray(chain)
        out["ess"] = effective_sample_size([values[chain == c] for c in np.unique(chain)])
    return out
