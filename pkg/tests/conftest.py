"""Shared test oracles: small-instance exhaustive enumerations.

These deliberately avoid the library's own algorithms.  Assignments are
enumerated as base-|C| counters (or bitmasks for binary), so results are
exact and independent of the code paths under test.
"""

import itertools

import numpy as np


def enumerate_consistent(weight_units, tally_units, num_choices):
    """All choice vectors whose per-choice sums match the tally exactly."""
    n = len(weight_units)
    out = []
    for assignment in itertools.product(range(num_choices), repeat=n):
        sums = [0] * num_choices
        for w, c in zip(weight_units, assignment):
            sums[c] += w
        if sums == list(tally_units):
            out.append(assignment)
    return out


def consensus_votes(weight_units, tally_units, num_choices):
    """Voters on whom every tally-consistent assignment agrees."""
    consistent = enumerate_consistent(weight_units, tally_units, num_choices)
    if not consistent:
        return {}
    agreed = {}
    for i in range(len(weight_units)):
        values = {a[i] for a in consistent}
        if len(values) == 1:
            agreed[i] = values.pop()
    return agreed


def _profile_bits(n):
    masks = np.arange(2**n, dtype=np.int64)
    return ((masks[:, None] >> np.arange(n)) & 1).astype(np.float64)


def exact_pivotality(weights, yes_probs):
    """Pr[sum of others' yes-weights lands in [W/2 - w_i, W/2)], exactly."""
    w = np.asarray(weights, dtype=np.float64)
    p = np.asarray(yes_probs, dtype=np.float64)
    n = len(w)
    half = w.sum() / 2.0
    delta = np.empty(n)
    for i in range(n):
        others = np.delete(np.arange(n), i)
        bits = _profile_bits(n - 1)
        probs = np.prod(np.where(bits == 1, p[others], 1 - p[others]), axis=1)
        totals = bits @ w[others]
        window = (totals >= half - w[i]) & (totals < half)
        delta[i] = probs[window].sum()
    return delta


def exact_success(weights, yes_probs):
    """Pr[total yes-weight > W/2], exactly."""
    w = np.asarray(weights, dtype=np.float64)
    p = np.asarray(yes_probs, dtype=np.float64)
    bits = _profile_bits(len(w))
    probs = np.prod(np.where(bits == 1, p, 1 - p), axis=1)
    return float(probs[bits @ w > w.sum() / 2.0].sum())


def random_binary_instance(rng, n, unit_lo=1, unit_hi=10**6):
    """Distinct integer weights and a random choice vector."""
    units = set()
    while len(units) < n:
        units.add(int(rng.integers(unit_lo, unit_hi)))
    units = sorted(units)
    rng.shuffle(units)
    choices = rng.integers(0, 2, size=n).tolist()
    tally = [0, 0]
    for u, c in zip(units, choices):
        tally[c] += u
    return list(units), choices, tally
