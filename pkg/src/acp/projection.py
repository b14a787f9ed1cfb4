"""Projection of action probabilities into the co-occurrence prior space.

An action probability vector A is mapped through the co-occurrence matrix
and its complement: each output entry mixes, over all conditioning
actions, the evidence from that action being present (weight A(i), via C)
and absent (weight 1 - A(i), via C').  Averaging over the N conditioning
actions keeps the result a probability up to the optional asymmetric
weights, after which entries are clamped back to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cooc import CoocBank, CoocPair
from .errors import ContractError
from .model import ActionProbs

_WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class ProjectionWeights:
    """Relative weights for present versus absent co-occurrence evidence.

    The weights must sum to 2, with the present-evidence weight alpha at
    least the absent-evidence weight beta.  Equal weights (1, 1) recover
    the unweighted projection.
    """

    alpha: float = 1.5
    beta: float = 0.5

    def validate(self) -> None:
        if self.alpha < 0 or self.beta < 0:
            raise ContractError(
                f"projection weights must be nonnegative, got "
                f"({self.alpha}, {self.beta})",
                module="projection",
            )
        if abs(self.alpha + self.beta - 2.0) > _WEIGHT_TOL:
            raise ContractError(
                f"projection weights must sum to 2, got {self.alpha + self.beta}",
                module="projection",
            )
        if self.alpha < self.beta:
            raise ContractError(
                f"present-evidence weight {self.alpha} must not be below "
                f"absent-evidence weight {self.beta}",
                module="projection",
            )


def _as_rows(a: np.ndarray, n: int) -> tuple[np.ndarray, bool]:
    a = np.asarray(a, dtype=np.float64)
    single = a.ndim == 1
    rows = a[None, :] if single else a
    if rows.ndim != 2 or rows.shape[1] != n:
        raise ContractError(
            f"probability vector has shape {a.shape}, expected length {n}",
            module="projection",
        )
    return rows, single


def project_weighted(
    a: np.ndarray, pair: CoocPair, weights: ProjectionWeights
) -> np.ndarray:
    """Weighted projection through a co-occurrence matrix pair.

    Computes (alpha * A C + beta * (1 - A) C') / N and clamps each entry
    to [0, 1].  Accepts a single vector or a batch of row vectors.
    """
    weights.validate()
    rows, single = _as_rows(a, pair.n)
    mixed = weights.alpha * (rows @ pair.c) + weights.beta * ((1.0 - rows) @ pair.c_comp)
    out = np.clip(mixed / pair.n, 0.0, 1.0)
    return out[0] if single else out


def project(a: np.ndarray, pair: CoocPair) -> np.ndarray:
    """Unweighted projection: (A C + (1 - A) C') / N, clamped to [0, 1]."""
    return project_weighted(a, pair, ProjectionWeights(alpha=1.0, beta=1.0))


def postprocess(
    probs: ActionProbs,
    obj: int | None,
    bank: CoocBank,
    weights: ProjectionWeights = ProjectionWeights(),
) -> ActionProbs:
    """Project final action probabilities at inference time.

    Uses the object's matrices when the bank has them, the global pair
    otherwise.  Anchor and group auxiliaries pass through untouched.
    """
    pair = bank.pair_for(obj)
    return ActionProbs(
        a=project_weighted(probs.a, pair, weights),
        anchor=probs.anchor,
        group_cond=probs.group_cond,
    )
