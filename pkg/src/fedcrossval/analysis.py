"""Evasion-probability analysis and penalty-curve tabulation.

How likely is it that a poisoned sub-model lands only in colluding hands?
With K clients per round of which M = K*p are malicious, u updates per
sub-model and e evaluators drawn from the K-u non-members, the double
hypergeometric sum

  sum_{i} P(sub-model has i malicious members) *
          P(exactly t of the e evaluators are malicious | i)

is evaluated in log-gamma arithmetic.  Two readings of the member event
are supported because the literature quotes figures under both:

* members="any": marginalize over i = 1..u (a poisoned sub-model means
  at least one malicious member);
* members=j (an int): the sub-model contains exactly j malicious updates.

``conditional=True`` divides by the probability of the member event,
turning the joint probability into a conditional one.  A literal
Monte Carlo simulation of the same process serves as an independent
cross-check of the formula.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .defense import penalty
from .errors import InputError

_NEG_INF = float("-inf")


@dataclass(frozen=True)
class EvasionParams:
    clients: int          # K selected per round
    malicious_fraction: float  # p, with K*p a whole number of clients
    group_size: int       # u updates per sub-model
    evaluators: int       # e evaluators per sub-model
    malicious_evaluators: int  # t

    def __post_init__(self):
        k, p, u, e, t = (self.clients, self.malicious_fraction, self.group_size,
                         self.evaluators, self.malicious_evaluators)
        if k < 1:
            raise InputError("need at least one client")
        if not 0 <= p < 1:
            raise InputError("malicious fraction must lie in [0, 1)")
        m = k * p
        if abs(m - round(m)) > 1e-9:
            raise InputError(f"K*p = {m} is not a whole number of clients")
        if not 1 <= u <= k:
            raise InputError("group size u must lie in [1, K]")
        if not 1 <= e <= k - u:
            raise InputError("evaluator count e must lie in [1, K - u]")
        if not 0 <= t <= e:
            raise InputError("t must lie in [0, e]")

    @property
    def malicious(self) -> int:
        return int(round(self.clients * self.malicious_fraction))


def _log_binom(n: int, k: int) -> float:
    if k < 0 or n < 0 or k > n:
        return _NEG_INF
    return float(gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1))


def _member_range(params: EvasionParams, members) -> list[int]:
    if members == "any":
        return list(range(1, params.group_size + 1))
    if isinstance(members, (int, np.integer)) and members >= 1:
        return [int(members)]
    raise InputError('members must be "any" or a positive int')


def p_evade_exact(params: EvasionParams, members="any",
                  conditional: bool = False) -> float:
    """Probability that a poisoned sub-model gets exactly t malicious evaluators.

    Default is the joint probability of the member event and the evaluator
    draw; see the module docstring for the members/conditional readings.
    Out-of-range binomial terms contribute zero.
    """
    k, m, u, e, t = (params.clients, params.malicious, params.group_size,
                     params.evaluators, params.malicious_evaluators)
    log_denom_members = _log_binom(k, u)
    log_denom_eval = _log_binom(k - u, e)
    joint = 0.0
    event = 0.0
    for i in _member_range(params, members):
        log_mem = _log_binom(k - m, u - i) + _log_binom(m, i) - log_denom_members
        if log_mem == _NEG_INF:
            continue
        p_mem = float(np.exp(log_mem))
        event += p_mem
        log_ev = _log_binom(m - i, t) + _log_binom(k - m - u + i, e - t) - log_denom_eval
        if log_ev == _NEG_INF:
            continue
        joint += p_mem * float(np.exp(log_ev))
    if conditional:
        return joint / event if event > 0 else 0.0
    return joint


def p_evade_montecarlo(params: EvasionParams, trials: int,
                       rng: np.random.Generator, members="any",
                       conditional: bool = False,
                       chunk: int = 250_000) -> tuple[float, float]:
    """Simulate the delegation draw literally; returns (estimate, standard error).

    Each trial permutes the K client labels with a partial Fisher-Yates
    pass: the first u positions are the sub-model's members, the next e
    are its evaluators.  A hit is a trial whose member count matches the
    requested member event and whose evaluator draw contains exactly t
    malicious clients.
    """
    if trials < 1:
        raise InputError("trials must be >= 1")
    k, m, u, e, t = (params.clients, params.malicious, params.group_size,
                     params.evaluators, params.malicious_evaluators)
    rng_members = _member_range(params, members)
    want_exact = None if members == "any" else rng_members[0]

    base = np.zeros(k, dtype=np.int8)
    base[:m] = 1
    hits = 0
    event_count = 0
    remaining = trials
    while remaining > 0:
        n = min(chunk, remaining)
        remaining -= n
        mat = np.tile(base, (n, 1))
        rows = np.arange(n)
        for j in range(u + e):
            swap = rng.integers(j, k, size=n)
            tmp = mat[rows, j].copy()
            mat[rows, j] = mat[rows, swap]
            mat[rows, swap] = tmp
        member_mal = mat[:, :u].sum(axis=1)
        eval_mal = mat[:, u:u + e].sum(axis=1)
        if want_exact is None:
            in_event = member_mal >= 1
        else:
            in_event = member_mal == want_exact
        event_count += int(in_event.sum())
        hits += int((in_event & (eval_mal == t)).sum())

    denom = event_count if conditional else trials
    if denom == 0:
        return 0.0, 0.0
    est = hits / denom
    stderr = float(np.sqrt(est * (1.0 - est) / denom))
    return est, stderr


def penalty_curve(e: int, v: float, r_max: int) -> list[tuple[int, float]]:
    """Tabulate the penalizing coefficient for r = 0..r_max reports."""
    if r_max < 0:
        raise InputError("r_max must be >= 0")
    return [(r, penalty(r, e, v)) for r in range(r_max + 1)]
