"""Counterfactual allocation probabilities and policy-averaged predictions.

Probabilities of treatment vectors under an allocation strategy are kept in
the log domain; they are exponentiated only inside final ratios.
"""
import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .conf import get_setting
from .data import GroupRecord, Policy
from .exceptions import EnumerationLimitError

MARGINAL = 'marginal'

ENUMERATION_CHUNK = 4096


@dataclass(frozen=True)
class PolicyWeight:
    log_value: float

    @property
    def value(self) -> float:
        return math.exp(self.log_value)


def _alpha(alpha) -> float:
    return alpha.alpha if isinstance(alpha, Policy) else float(alpha)


def log_pi_rows(vectors: np.ndarray, alpha) -> np.ndarray:
    """log pi(v; alpha) for every row of ``vectors``."""
    alpha = _alpha(alpha)
    vectors = np.asarray(vectors, dtype=float)
    treated = vectors.sum(axis=-1)
    return treated * math.log(alpha) + (vectors.shape[-1] - treated) * math.log1p(-alpha)


def log_pi_minus_rows(vectors: np.ndarray, alpha) -> np.ndarray:
    """log pi(v_(-j); alpha) for every row and every position j, same shape as ``vectors``."""
    alpha = _alpha(alpha)
    vectors = np.asarray(vectors, dtype=float)
    own = np.where(vectors == 1, math.log(alpha), math.log1p(-alpha))
    return log_pi_rows(vectors, alpha)[..., None] - own


def pi_full(a, alpha: Policy) -> PolicyWeight:
    return PolicyWeight(float(log_pi_rows(np.asarray(a, dtype=float).reshape(1, -1), alpha)[0]))


def pi_minus(a, j: int, alpha: Policy) -> PolicyWeight:
    a = np.asarray(a, dtype=float)
    if not 0 <= j < len(a):
        raise IndexError(f'Position {j} out of range for a vector of length {len(a)}')
    return pi_full(np.delete(a, j), alpha)


def derive_seed(master: int, *keys) -> int:
    """A 64-bit seed determined only by ``master`` and ``keys`` (ints or strings)."""
    entropy = [int(master)]
    for key in keys:
        if isinstance(key, str):
            key = int.from_bytes(hashlib.blake2b(key.encode(), digest_size=8).digest(), 'little')
        entropy.append(int(key))
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])


def _own(a):
    return None if a is None or a == MARGINAL else int(a)


def _enumerate(n: int):
    """All 2**n binary vectors, in chunks."""
    bits = np.arange(n)
    for start in range(0, 2 ** n, ENUMERATION_CHUNK):
        codes = np.arange(start, min(start + ENUMERATION_CHUNK, 2 ** n))
        yield ((codes[:, None] >> bits) & 1).astype(float)


def policy_averages_exact(model, group: GroupRecord, a, alpha, limit: int | None = None) -> np.ndarray:
    """sum over counterfactual vectors of m_ij * pi, for every j of the group.

    With own treatment fixed at ``a`` the sum runs over the N_i - 1 neighbor
    positions; with ``a`` marginal it runs over the full vector.
    """
    own = _own(a)
    alpha = _alpha(alpha)
    if model.is_affine:
        return model.expected_predictions(group, alpha, own)

    limit = get_setting('EXACT_ENUM_LIMIT') if limit is None else limit
    n = group.size
    positions = n if own is None else n - 1
    if positions > limit:
        raise EnumerationLimitError(
            f'Group {group.group_id!r} needs 2^{positions} terms (limit 2^{limit}); '
            'use the Monte Carlo engine'
        )
    # Enumerating full vectors with position j overridden by a counts every
    # neighbor vector twice, with weights pi(a_(-j)) * alpha and pi(a_(-j)) * (1 - alpha).
    total = np.zeros(n)
    for vectors in _enumerate(n):
        weights = np.exp(log_pi_rows(vectors, alpha))
        total += weights @ model.predict_draws(group, vectors, own)
    return total


def policy_average_exact(model, group: GroupRecord, j: int, a, alpha, limit: int | None = None) -> float:
    if not 0 <= j < group.size:
        raise IndexError(f'Position {j} out of range for group {group.group_id!r}')
    return float(policy_averages_exact(model, group, a, alpha, limit)[j])


def _mc_evaluations(model, group: GroupRecord, j, a, alpha, mc_draws: int, seed: int) -> np.ndarray:
    if mc_draws < 1:
        raise ValueError('mc_draws must be at least 1')
    rng = np.random.default_rng(seed)
    draws = (rng.random((mc_draws, group.size)) < _alpha(alpha)).astype(float)
    predictions = model.predict_draws(group, draws, _own(a))
    if j == MARGINAL:
        return predictions.mean(axis=1)
    return predictions[:, j]


def policy_average_mc(model, group: GroupRecord, j, a, alpha, mc_draws: int | None = None,
                      seed: int | None = None) -> float:
    """Monte Carlo version of the policy average.

    ``j=MARGINAL`` averages over the group's members; ``a=MARGINAL`` draws the
    index individual's treatment as well.
    """
    mc_draws = get_setting('MC_DRAWS') if mc_draws is None else mc_draws
    seed = get_setting('SEED') if seed is None else seed
    return float(_mc_evaluations(model, group, j, a, alpha, mc_draws, seed).mean())


def policy_average_mc_se(model, group: GroupRecord, j, a, alpha, mc_draws: int,
                         seed: int) -> tuple[float, float]:
    values = _mc_evaluations(model, group, j, a, alpha, mc_draws, seed)
    se = float(values.std(ddof=1) / math.sqrt(mc_draws)) if mc_draws > 1 else math.inf
    return float(values.mean()), se


def policy_averages_mc(model, group: GroupRecord, a, alpha, mc_draws: int, seed: int) -> np.ndarray:
    """Per-member MC averages from one shared set of draws, shape (N,)."""
    rng = np.random.default_rng(seed)
    draws = (rng.random((mc_draws, group.size)) < _alpha(alpha)).astype(float)
    return model.predict_draws(group, draws, _own(a)).mean(axis=0)
