"""Selection of maximally violated integrity constraints.

The selector walks predicted triples in descending likelihood order,
expanding the product space lazily, and keeps the first ``rho`` whose
negation appears in the theory.  The exhaustive variant scores every
candidate subset and is the oracle the greedy strategy is checked
against.  Also provides the per-sample training step and the
inference-time projection onto the theory.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import CapacityError, ContractError, ValidationError
from .losses import (LossKind, LossWeights, loss_gradient, loss_of_ic_set)
from .logic import Fact, IntegrityConstraint, PredictionVector
from .theory import TheoryStore

LOG_CLIP_EPS = 1e-12

STRATEGIES = ("greedy", "random", "exhaustive")


@dataclass(frozen=True)
class SelectionConfig:
    rho: int = 3
    loss_kind: LossKind = LossKind.SL
    tie_break: str = "lex"
    strategy: str = "greedy"
    per_slot_budget: bool = False

    def __post_init__(self):
        if self.rho < 1:
            raise ValidationError("rho must be at least 1")
        if self.tie_break != "lex":
            raise ValidationError(f"unknown tie-break {self.tie_break!r}")
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown strategy {self.strategy!r}")


@dataclass(frozen=True)
class ScoredFact:
    fact: Fact
    likelihood: float
    slot: int = 0


def _sorted_axis(values: np.ndarray):
    """Term ids and activations sorted by (-activation, id)."""
    values = np.asarray(values, dtype=np.float64)
    order = np.lexsort((np.arange(values.size), -values))
    return order.astype(np.int64), values[order]


def _slot_axes(w: PredictionVector, slot: int):
    s, p, o = w.slots[slot]
    return _sorted_axis(s), _sorted_axis(p), _sorted_axis(o)


def _slot_stream(w: PredictionVector, slot: int):
    (si, sv), (pi, pv), (oi, ov) = _slot_axes(w, slot)
    for s, p, o, prod in _kernels.product_stream(si, sv, pi, pv, oi, ov):
        yield ScoredFact(Fact(s, p, o), prod, slot)


def scored_fact_stream(w: PredictionVector, slot: int | None = None):
    """All predicted triples in nonincreasing likelihood order.

    ``slot=None`` merges every slot into one stream (ties: likelihood,
    then slot index, then (s, p, o) ids).
    """
    if slot is not None:
        yield from _slot_stream(w, slot)
        return
    if w.n_slots == 1:
        yield from _slot_stream(w, 0)
        return
    streams = [_slot_stream(w, i) for i in range(w.n_slots)]
    heads = []
    for i, stream in enumerate(streams):
        first = next(stream, None)
        if first is not None:
            heads.append((-first.likelihood, i, first))
    heapq.heapify(heads)
    while heads:
        _, i, sf = heapq.heappop(heads)
        yield sf
        nxt = next(streams[i], None)
        if nxt is not None:
            heapq.heappush(heads, (-nxt.likelihood, i, nxt))


def _scan_budget_total(w: PredictionVector, slot: int | None) -> int:
    def slot_total(i):
        s, p, o = w.slots[i]
        return s.size * p.size * o.size
    if slot is not None:
        return slot_total(slot)
    return sum(slot_total(i) for i in range(w.n_slots))


def topk_facts(w: PredictionVector, slot: int | None, k: int) -> list:
    """The k most likely triples, ties by ascending (s, p, o) ids.

    Expands a heap frontier over the per-domain sorted activations, so the
    full cross product is never materialized.
    """
    total = _scan_budget_total(w, slot)
    if not 1 <= k <= total:
        raise ContractError(f"k={k} out of range 1..{total}")
    if slot is not None or w.n_slots == 1:
        use_slot = slot if slot is not None else 0
        (si, sv), (pi, pv), (oi, ov) = _slot_axes(w, use_slot)
        rows, _ = _kernels.scan_select(si, sv, pi, pv, oi, ov, None, False,
                                       _kernels.SCAN_ALL, k, 0, 0)
        return [ScoredFact(Fact(s, p, o), prod, use_slot)
                for s, p, o, prod in rows]
    return list(itertools.islice(scored_fact_stream(w, None), k))


def _kernel_scan(w, slot, store, mode, budget):
    (si, sv), (pi, pv), (oi, ov) = _slot_axes(w, slot)
    keys, negate = store.membership_view()
    vocab = store.vocab
    return _kernels.scan_select(si, sv, pi, pv, oi, ov, keys, negate, mode,
                                budget, vocab.n_predicates, vocab.n_objects)


def greedy_select(w: PredictionVector, store: TheoryStore,
                  cfg: SelectionConfig, slot: int | None = None,
                  _counter: list | None = None) -> list:
    """First ``rho`` triples (descending likelihood) whose negation is in
    the theory; may return fewer once the product space is exhausted.

    ``slot=None`` applies the budget across all slots merged; the returned
    ICs are in collection order.  Multi-slot selections are tagged with
    their slot via ``greedy_select_with_slots``.
    """
    return [ic for ic, _ in
            greedy_select_with_slots(w, store, cfg, slot, _counter)]


def greedy_select_with_slots(w, store, cfg, slot=None, _counter=None):
    if slot is not None or w.n_slots == 1:
        use_slot = slot if slot is not None else 0
        rows, n_scanned = _kernel_scan(w, use_slot, store,
                                       _kernels.SCAN_MEMBER, cfg.rho)
        if _counter is not None:
            _counter.append(n_scanned)
        return [(IntegrityConstraint(Fact(s, p, o)), use_slot)
                for s, p, o, _ in rows]
    selected = []
    n_scanned = 0
    for sf in scored_fact_stream(w, None):
        n_scanned += 1
        if store.contains_ic(sf.fact):
            selected.append((IntegrityConstraint(sf.fact), sf.slot))
            if len(selected) >= cfg.rho:
                break
    if _counter is not None:
        _counter.append(n_scanned)
    return selected


def random_select(store: TheoryStore, rho: int, rng: np.random.Generator,
                  max_attempts: int = 10000) -> list:
    """Uniformly sampled ICs from the theory (the unguided baseline)."""
    vocab = store.vocab
    picked = {}
    for _ in range(max_attempts):
        if len(picked) >= min(rho, store.ic_count()):
            break
        key = int(rng.integers(vocab.n_facts))
        if key in picked:
            continue
        fact = _unpack(vocab, key)
        if store.contains_ic(fact):
            picked[key] = IntegrityConstraint(fact)
    return list(picked.values())


def _unpack(vocab, key):
    o = key % vocab.n_objects
    rest = key // vocab.n_objects
    return Fact(rest // vocab.n_predicates, rest % vocab.n_predicates, o)


def exhaustive_select(w: PredictionVector, slot: int,
                      ics: Sequence[IntegrityConstraint], rho: int,
                      kind: LossKind) -> list:
    """Subset of at most ``rho`` ICs maximizing the set loss, by full
    enumeration (the selection oracle; capped at 16 candidate ICs).

    Ties go to the subset whose sorted packed-key tuple is smallest.
    """
    ics = list(ics)
    if len(ics) > 16:
        raise CapacityError("exhaustive selection is capped at 16 ICs")
    if not ics:
        return []
    if len(ics) >= rho:
        sizes = [rho]
    else:
        sizes = list(range(1, len(ics) + 1))
    best = None
    for size in sizes:
        for combo in itertools.combinations(ics, size):
            value = loss_of_ic_set(kind, combo, w, slot)
            key = tuple(sorted(_ic_order_key(ic) for ic in combo))
            if best is None or value > best[0] or (value == best[0]
                                                   and key < best[1]):
                best = (value, key, combo)
    return sorted(best[2], key=_ic_order_key)


def _ic_order_key(ic: IntegrityConstraint) -> tuple:
    f = ic.fact
    return (f.s, f.p, f.o)


def itr_project(w: PredictionVector, store: TheoryStore,
                slot: int | None = None) -> Fact | None:
    """Most likely triple that violates no IC; None when the whole product
    space is forbidden."""
    if slot is not None or w.n_slots == 1:
        use_slot = slot if slot is not None else 0
        rows, _ = _kernel_scan(w, use_slot, store, _kernels.SCAN_NONMEMBER, 1)
        return Fact(*rows[0][:3]) if rows else None
    for sf in scored_fact_stream(w, None):
        if not store.contains_ic(sf.fact):
            return sf.fact
    return None


@dataclass
class StepDiagnostics:
    ln: float
    ls: float
    selected: list = field(default_factory=list)  # (slot, IC) pairs
    grad_norm: float = 0.0


def select_for_sample(w, store, cfg, rng=None):
    """(slot, IC) pairs chosen for one sample under the configured
    strategy and budget."""
    if cfg.strategy == "random":
        if rng is None:
            raise ContractError("random selection needs a generator")
        slots = range(w.n_slots) if cfg.per_slot_budget else [None]
        pairs = []
        for s in slots:
            for ic in random_select(store, cfg.rho, rng):
                chosen = s if s is not None else (
                    int(rng.integers(w.n_slots)) if w.n_slots > 1 else 0)
                pairs.append((chosen, ic))
        return pairs
    if cfg.strategy == "exhaustive":
        candidates = list(store.iter_ics())
        pairs = []
        for s in range(w.n_slots):
            for ic in exhaustive_select(w, s, candidates, cfg.rho,
                                        cfg.loss_kind):
                pairs.append((s, ic))
        return pairs
    if cfg.per_slot_budget:
        pairs = []
        for s in range(w.n_slots):
            for ic, slot in greedy_select_with_slots(w, store, cfg, s):
                pairs.append((slot, ic))
        return pairs
    return [(slot, ic)
            for ic, slot in greedy_select_with_slots(w, store, cfg, None)]


def logic_loss_and_gradient(selected_pairs, w, kind):
    """Total logic loss and per-(slot, term) gradient for the selected ICs.

    ICs are grouped by slot; slots have disjoint variables, so the
    conjunction's loss is the exact sum of per-slot set losses.  The
    semantic loss is clipped at -ln(eps) when saturated.
    """
    by_slot = {}
    for slot, ic in selected_pairs:
        by_slot.setdefault(slot, []).append(ic)
    total = 0.0
    grads = {}
    for slot, ics in sorted(by_slot.items()):
        value = loss_of_ic_set(kind, ics, w, slot)
        if math.isinf(value):
            value = -math.log(LOG_CLIP_EPS)
        total += value
        grad = loss_gradient(kind, ics, w, slot, clip_eps=LOG_CLIP_EPS)
        for term, g in grad.items():
            grads[(slot, term)] = grads.get((slot, term), 0.0) + g
    return total, grads


def ngp_step(sample, store: TheoryStore, model, cfg: SelectionConfig,
             weights: LossWeights, lr: float,
             rng: np.random.Generator | None = None) -> StepDiagnostics:
    """One training update: forward, select violated ICs, combine the
    supervised and logic losses, backpropagate, apply SGD.

    When the sample carries no ground-truth facts the supervised term is
    omitted entirely (weak supervision); when ``beta2`` is zero or nothing
    is selected, the update is exactly the plain supervised step.
    """
    w = model.forward(sample.features)
    ground = sample.ground_facts()
    ln = 0.0
    grad_w = {}
    if ground and weights.beta1 != 0.0:
        ln = model.supervised_loss(sample, w)
        for key, g in model.supervised_gradient(sample, w).items():
            grad_w[key] = grad_w.get(key, 0.0) + weights.beta1 * g
    ls = 0.0
    selected = []
    if weights.beta2 != 0.0:
        selected = select_for_sample(w, store, cfg, rng)
        if selected:
            ls, ls_grad = logic_loss_and_gradient(selected, w, cfg.loss_kind)
            for key, g in ls_grad.items():
                grad_w[key] = grad_w.get(key, 0.0) + weights.beta2 * g
    grad_norm = model.backward_and_update(grad_w, lr)
    return StepDiagnostics(ln=ln, ls=ls, selected=selected,
                           grad_norm=grad_norm)
