"""Logic-based loss functions over formulas and integrity-constraint sets.

Two losses are provided: the probabilistic semantic loss (negative log of
the weighted model count) and the fuzzy DL2 loss (recursive over the
negation normal form).  Both expose exact analytic gradients with respect
to the per-term activations.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence, Union

from .errors import ContractError, SaturatedLossError, ValidationError
from .logic import (And, Formula, IntegrityConstraint, Not, Or,
                    PredictionVector, Var, wmc, wmc_gradient,
                    wmc_ic_conjunction)


class LossKind(enum.Enum):
    SL = "sl"
    DL2 = "dl2"


@dataclass(frozen=True)
class LossWeights:
    """Relative importance of the supervised and logic loss components."""
    beta1: float = 1.0
    beta2: float = 1.0

    def __post_init__(self):
        if self.beta1 < 0 or self.beta2 < 0:
            raise ValidationError("loss weights must be nonnegative")
        if self.beta1 == 0 and self.beta2 == 0:
            raise ValidationError("loss weights cannot both be zero")


def to_nnf(f: Formula) -> Formula:
    """Push negations down to the variables (De Morgan, double negation)."""
    if isinstance(f, Var):
        return f
    if isinstance(f, And):
        return And(tuple(to_nnf(c) for c in f.children))
    if isinstance(f, Or):
        return Or(tuple(to_nnf(c) for c in f.children))
    child = f.child
    if isinstance(child, Var):
        return f
    if isinstance(child, Not):
        return to_nnf(child.child)
    if isinstance(child, And):
        return Or(tuple(to_nnf(Not(c)) for c in child.children))
    return And(tuple(to_nnf(Not(c)) for c in child.children))


def semantic_loss(f: Formula, w: PredictionVector, slot: int = 0) -> float:
    """-ln P(f | w); +inf when the formula has probability zero."""
    p = wmc(f, w, slot)
    if p <= 0.0:
        return math.inf
    return -math.log(p)


def _dl2_value(node: Formula, w: PredictionVector, slot: int) -> float:
    if isinstance(node, Var):
        return 1.0 - w.activation(slot, node.term)
    if isinstance(node, Not):
        return w.activation(slot, node.child.term)
    if isinstance(node, And):
        # fsum makes the n-ary sum independent of child order, so set-level
        # additivity holds exactly
        return math.fsum(_dl2_value(c, w, slot) for c in node.children)
    acc = _dl2_value(node.children[0], w, slot)
    for c in node.children[1:]:
        acc *= _dl2_value(c, w, slot)
    return acc


def dl2_loss(f: Formula, w: PredictionVector, slot: int = 0) -> float:
    """Fuzzy violation degree: rewrite to NNF, then map variables to
    1 - w / w, conjunction to sum, disjunction to product."""
    return _dl2_value(to_nnf(f), w, slot)


def _dl2_value_grad(node: Formula, w: PredictionVector, slot: int):
    if isinstance(node, Var):
        return 1.0 - w.activation(slot, node.term), {node.term: -1.0}
    if isinstance(node, Not):
        return w.activation(slot, node.child.term), {node.child.term: 1.0}
    if isinstance(node, And):
        parts = [_dl2_value_grad(c, w, slot) for c in node.children]
        grad = {}
        for _, g in parts:
            for t, x in g.items():
                grad[t] = grad.get(t, 0.0) + x
        return math.fsum(v for v, _ in parts), grad
    value, grad = _dl2_value_grad(node.children[0], w, slot)
    for c in node.children[1:]:
        cv, cg = _dl2_value_grad(c, w, slot)
        merged = {t: x * cv for t, x in grad.items()}
        for t, x in cg.items():
            merged[t] = merged.get(t, 0.0) + x * value
        value, grad = value * cv, merged
    return value, grad


def ic_likelihood(ic: IntegrityConstraint, w: PredictionVector,
                  slot: int = 0) -> float:
    """w(p) * w(s) * w(o) of the forbidden triple: both the DL2 loss of the
    IC and the probability of violating it."""
    return w.fact_likelihood(slot, ic.fact)


def loss_of_ic_set(kind: LossKind, ics: Sequence[IntegrityConstraint],
                   w: PredictionVector, slot: int = 0) -> float:
    """Loss of the conjunction of the ICs, computed without expanding it."""
    ics = list(ics)
    if not ics:
        raise ContractError("loss_of_ic_set requires at least one IC")
    if kind is LossKind.SL:
        p = wmc_ic_conjunction(ics, w, slot)
        if p <= 0.0:
            return math.inf
        return -math.log(p)
    # DL2 is linearly separable: the conjunction's loss is the sum of the
    # per-IC violation likelihoods
    return math.fsum(ic_likelihood(ic, w, slot) for ic in ics)


def loss_gradient(kind: LossKind,
                  target: Union[Formula, Sequence[IntegrityConstraint]],
                  w: PredictionVector, slot: int = 0,
                  clip_eps: float | None = None) -> dict:
    """Exact gradient of the loss w.r.t. each occurring activation.

    Terms absent from the mapping have zero gradient.  For SL at
    probability zero, raises SaturatedLossError unless ``clip_eps`` is
    given, in which case the probability is floored at that value
    (keeping gradients finite while preserving direction).
    """
    is_ic_set = not isinstance(target, (Var, Not, And, Or))
    if kind is LossKind.DL2:
        if is_ic_set:
            grad = {}
            for ic in target:
                s, p, o = ic.terms()
                ws = w.activation(slot, s)
                wp = w.activation(slot, p)
                wo = w.activation(slot, o)
                grad[s] = grad.get(s, 0.0) + wp * wo
                grad[p] = grad.get(p, 0.0) + ws * wo
                grad[o] = grad.get(o, 0.0) + wp * ws
            return grad
        _, grad = _dl2_value_grad(to_nnf(target), w, slot)
        return grad
    if is_ic_set:
        p, grad_p = wmc_ic_conjunction(list(target), w, slot,
                                       _want_gradient=True)
    else:
        p = wmc(target, w, slot)
        grad_p = wmc_gradient(target, w, slot)
    if p <= 0.0:
        if clip_eps is None:
            raise SaturatedLossError(
                "semantic loss gradient at probability zero")
        p = clip_eps
    elif clip_eps is not None:
        p = max(p, clip_eps)
    return {t: -g / p for t, g in grad_p.items()}


def combined_loss(ln_value: float, ls_value: float,
                  weights: LossWeights) -> float:
    """The training objective beta1 * supervised + beta2 * logic loss."""
    return weights.beta1 * ln_value + weights.beta2 * ls_value
