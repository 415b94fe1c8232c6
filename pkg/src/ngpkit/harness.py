"""Synthetic relation-prediction harness.

Generates desk-scale datasets from a hidden set of permitted facts,
trains a small softmax model with hand-derived gradients (optionally
regularized by the constraint-selection step), and scores predictions
with mean recall and zero-shot recall at k.
"""

from __future__ import annotations

import io
import json
import math
import zipfile
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ContractError, ParseError, ValidationError
from .logic import (DOMAINS, Fact, PredictionVector, Vocabulary, pack_fact)
from .losses import LossKind, LossWeights
from .ngp import (SelectionConfig, StepDiagnostics, logic_loss_and_gradient,
                  ngp_step, select_for_sample, topk_facts)
from .theory import TheoryStore, build_complement_of_facts

LOG_EPS = 1e-12  # floor inside every logarithm

REGULARIZERS = ("none", "ngp-sl", "ngp-dl2")


@dataclass(frozen=True)
class WorldSpec:
    """Everything that determines a synthetic dataset.

    The default world makes the relation the ambiguous part of each scene:
    every (subject, object) pair has one permitted predicate (the hidden
    rule), and scene features carry both the true predicate's cue and an
    equally strong cue for a forbidden decoy predicate, so the fact
    complement is exactly the knowledge that resolves the ambiguity.
    """
    n_subjects: int = 10
    n_predicates: int = 10
    n_objects: int = 10
    feature_dim: int = 32
    n_slots: int = 1
    n_permitted: int = 100
    noise: float = 0.4
    predicate_signal: float = 0.6   # strength of the true predicate cue
    object_signal: float = 1.0      # strength of the object embedding
    decoy_signal: float = 0.6       # strength of the misleading cue
    train_samples: int = 2000
    val_samples: int = 300
    test_samples: int = 400
    retention: float = 1.0
    zero_shot_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if min(self.n_subjects, self.n_predicates, self.n_objects) < 1:
            raise ValidationError("domains must be non-empty")
        if self.n_permitted < 1:
            raise ValidationError("the permitted fact set must be non-empty")
        if self.n_permitted > (self.n_subjects * self.n_predicates
                               * self.n_objects):
            raise ValidationError("more permitted facts than triples")
        if not 0.0 <= self.retention <= 1.0:
            raise ValidationError("retention must lie in [0, 1]")
        if not 0.0 <= self.zero_shot_fraction <= 1.0:
            raise ValidationError("zero_shot_fraction must lie in [0, 1]")
        if self.n_slots < 1:
            raise ValidationError("at least one slot per sample")

    @property
    def total_feature_dim(self):
        return self.feature_dim * self.n_slots


@dataclass
class SceneSample:
    sample_id: int
    split: str
    features: np.ndarray  # concatenated per-slot blocks
    slots: tuple  # Fact or None per relation slot
    entities: tuple = None  # (subject id, object id) or None per slot;
    #                          box-style labels that survive fact blanking

    def __post_init__(self):
        if self.entities is None:
            self.entities = tuple(
                (f.s, f.o) if f is not None else None for f in self.slots)

    def ground_facts(self):
        return [(i, f) for i, f in enumerate(self.slots) if f is not None]

    def ground_entities(self):
        return [(i, e) for i, e in enumerate(self.entities) if e is not None]

    def fact_set(self):
        return frozenset(f for f in self.slots if f is not None)


@dataclass
class Dataset:
    world: WorldSpec
    vocab: Vocabulary
    samples: list
    permitted: list  # permitted facts (the hidden rules)
    zero_shot_pool: frozenset  # permitted facts reserved for val/test

    def split(self, name):
        return [s for s in self.samples if s.split == name]

    def train_fact_set(self):
        """Facts visible in training ground truth (after retention)."""
        out = set()
        for s in self.split("train"):
            out.update(s.fact_set())
        return frozenset(out)


def _synthetic_vocab(world: WorldSpec) -> Vocabulary:
    return Vocabulary([f"s{i}" for i in range(world.n_subjects)],
                      [f"p{i}" for i in range(world.n_predicates)],
                      [f"o{i}" for i in range(world.n_objects)])


def generate_dataset(world: WorldSpec) -> Dataset:
    """Deterministic dataset for the given spec.

    Each sample concatenates one feature block per slot: the subject and
    object embeddings at full strength, the true predicate's embedding at
    ``predicate_signal``, a forbidden decoy predicate's embedding at
    ``decoy_signal``, and Gaussian noise.  A fraction of the permitted
    facts is reserved for val/test only (the zero-shot pool), and
    ``retention`` < 1 blanks the relation labels of that share of training
    samples while keeping the samples and their entity labels.
    """
    rng = np.random.default_rng([world.seed, 0xD5])
    vocab = _synthetic_vocab(world)

    # hidden rule set: pick distinct (subject, object) pairs and give each
    # one permitted predicate, so the fact complement pins the relation of
    # every covered pair (spilling over to second predicates only once all
    # pairs are used)
    n_pairs = vocab.n_subjects * vocab.n_objects
    pair_keys = []
    while len(pair_keys) < world.n_permitted:
        take = min(world.n_permitted - len(pair_keys), n_pairs)
        pair_keys.extend(int(k) for k in
                         rng.choice(n_pairs, size=take, replace=False))
    permitted = []
    seen = set()
    for pk in pair_keys:
        s, o = pk // vocab.n_objects, pk % vocab.n_objects
        fact = Fact(s, int(rng.integers(vocab.n_predicates)), o)
        while fact in seen:
            fact = Fact(s, int(rng.integers(vocab.n_predicates)), o)
        seen.add(fact)
        permitted.append(fact)
    permitted.sort(key=lambda f: pack_fact(vocab, f))
    perm = rng.permutation(world.n_permitted)
    n_pool = int(round(world.zero_shot_fraction * world.n_permitted))
    if n_pool >= world.n_permitted:
        n_pool = world.n_permitted - 1  # keep at least one trainable fact
    pool = [permitted[i] for i in perm[:n_pool]]
    train_visible = [permitted[i] for i in perm[n_pool:]]

    embed = [[rng.normal(0.0, 1.0, (vocab.size(d), world.feature_dim))
              for d in DOMAINS] for _ in range(world.n_slots)]

    def draw_slots(pool_of_facts):
        idx = rng.integers(len(pool_of_facts), size=world.n_slots)
        return tuple(pool_of_facts[int(i)] for i in idx)

    # decide up front which training samples lose their labels; their
    # scenes may show any permitted fact (the labels stay hidden, so such
    # facts remain zero-shot), while labeled scenes avoid the reserved pool
    n_blank = int(math.ceil((1.0 - world.retention) * world.train_samples))
    blanked = set(int(j)
                  for j in rng.permutation(world.train_samples)[:n_blank])

    samples = []
    sample_id = 0
    for i in range(world.train_samples):
        facts = draw_slots(permitted if i in blanked else train_visible)
        samples.append(SceneSample(sample_id, "train", None, facts))
        sample_id += 1
    for split, count in (("val", world.val_samples),
                         ("test", world.test_samples)):
        for _ in range(count):
            samples.append(SceneSample(sample_id, split, None,
                                       draw_slots(permitted)))
            sample_id += 1

    # guarantee the zero-shot pool shows up in the test ground truth
    test_samples = [s for s in samples if s.split == "test"]
    if pool and test_samples:
        pool_set = set(pool)
        if not any(set(s.slots) & pool_set for s in test_samples):
            first = test_samples[0]
            first.slots = (pool[0],) + first.slots[1:]
            first.entities = tuple((f.s, f.o) for f in first.slots)

    # each (s, o) pair carries a fixed misleading predicate cue: a
    # forbidden relation its scenes suggest (scene ambiguity the theory
    # can resolve)
    permitted_by_pair = {}
    for f in permitted:
        permitted_by_pair.setdefault((f.s, f.o), set()).add(f.p)

    def decoy_of(fact):
        legal = permitted_by_pair.get((fact.s, fact.o), set())
        if len(legal) >= vocab.n_predicates:
            return None
        p = (fact.p + 1 + (3 * fact.s + 7 * fact.o)) % vocab.n_predicates
        while p in legal:
            p = (p + 1) % vocab.n_predicates
        return p

    # features encode the true facts, hidden or not; one block per slot
    for s in samples:
        blocks = []
        for slot, fact in enumerate(s.slots):
            es, ep, eo = embed[slot]
            block = (es[fact.s] + world.predicate_signal * ep[fact.p]
                     + world.object_signal * eo[fact.o])
            if world.decoy_signal > 0.0:
                decoy = decoy_of(fact)
                if decoy is not None:
                    block = block + world.decoy_signal * ep[decoy]
            blocks.append(block)
        vec = np.concatenate(blocks)
        vec += world.noise * rng.normal(0.0, 1.0, vec.size)
        s.features = vec

    # blank the relation labels (never the features, the scenes, or the
    # box-style entity labels)
    for i in blanked:
        samples[i].slots = (None,) * world.n_slots

    return Dataset(world=world, vocab=vocab, samples=samples,
                   permitted=permitted, zero_shot_pool=frozenset(pool))


# --- model -------------------------------------------------------------------

class HarnessModel:
    """Per-slot affine maps into softmax distributions over each domain.

    Parameters start at zero (uniform predictions).  The model caches its
    last forward pass so the update step can chain gradients through the
    softmax Jacobian and the affine maps.
    """

    def __init__(self, vocab: Vocabulary, feature_dim: int, n_slots: int = 1):
        self.vocab = vocab
        self.feature_dim = feature_dim
        self.n_slots = n_slots
        self.weights = [[np.zeros((vocab.size(d), feature_dim))
                         for d in DOMAINS] for _ in range(n_slots)]
        self.biases = [[np.zeros(vocab.size(d)) for d in DOMAINS]
                       for _ in range(n_slots)]
        self._cache = None

    def forward(self, features: np.ndarray) -> PredictionVector:
        features = np.asarray(features, dtype=np.float64)
        if features.shape != (self.feature_dim,):
            raise ValidationError(
                f"expected features of dimension {self.feature_dim}, "
                f"got {features.shape}")
        slots = []
        for r in range(self.n_slots):
            dists = []
            for a in range(3):
                logits = self.weights[r][a] @ features + self.biases[r][a]
                logits = logits - logits.max()
                exp = np.exp(logits)
                dists.append(exp / exp.sum())
            slots.append(tuple(dists))
        pv = PredictionVector(slots)
        self._cache = (features, pv)
        return pv

    def supervised_loss(self, sample, w: PredictionVector) -> float:
        return supervised_loss(sample.ground_facts(), w)

    def supervised_gradient(self, sample, w: PredictionVector) -> dict:
        return supervised_gradient(sample.ground_facts(), w)

    def parameter_gradients(self, grad_w: dict):
        """Chain activation-space gradients to parameter space.

        grad_w maps (slot, (domain, id)) to d(loss)/d(activation).  The
        softmax Jacobian is diag(w) - w w^T, so the logit gradient is
        w * (g - <g, w>).
        """
        if self._cache is None:
            raise ContractError("parameter_gradients needs a forward pass")
        features, pv = self._cache
        gw = [[np.zeros_like(self.weights[r][a]) for a in range(3)]
              for r in range(self.n_slots)]
        gb = [[np.zeros_like(self.biases[r][a]) for a in range(3)]
              for r in range(self.n_slots)]
        axis = {d: a for a, d in enumerate(DOMAINS)}
        by_dist = {}
        for (slot, term), g in grad_w.items():
            domain, i = term
            arr = by_dist.setdefault((slot, axis[domain]),
                                     np.zeros(self.vocab.size(domain)))
            arr[i] += g
        for (r, a), g in sorted(by_dist.items()):
            w = pv.slots[r][a]
            glogit = w * (g - float(g @ w))
            gb[r][a] += glogit
            gw[r][a] += np.outer(glogit, features)
        return gw, gb

    def backward_and_update(self, grad_w: dict, lr: float) -> float:
        """One SGD step from activation-space gradients; returns the L2
        norm of the parameter gradient."""
        if not all(math.isfinite(g) for g in grad_w.values()):
            raise ValidationError("non-finite gradient in update")
        gw, gb = self.parameter_gradients(grad_w)
        sq = 0.0
        for r in range(self.n_slots):
            for a in range(3):
                sq += float((gw[r][a] ** 2).sum() + (gb[r][a] ** 2).sum())
                if not (np.isfinite(gw[r][a]).all()
                        and np.isfinite(gb[r][a]).all()):
                    raise ValidationError("non-finite gradient in update")
                self.weights[r][a] -= lr * gw[r][a]
                self.biases[r][a] -= lr * gb[r][a]
        return math.sqrt(sq)

    # flat parameter access for finite-difference checks
    def parameter_vector(self) -> np.ndarray:
        parts = []
        for r in range(self.n_slots):
            for a in range(3):
                parts.append(self.weights[r][a].ravel())
                parts.append(self.biases[r][a].ravel())
        return np.concatenate(parts)

    def set_parameter_vector(self, vec: np.ndarray) -> None:
        pos = 0
        for r in range(self.n_slots):
            for a in range(3):
                n = self.weights[r][a].size
                self.weights[r][a] = vec[pos:pos + n].reshape(
                    self.weights[r][a].shape).copy()
                pos += n
                n = self.biases[r][a].size
                self.biases[r][a] = vec[pos:pos + n].copy()
                pos += n
        self._cache = None


def supervised_loss(ground_facts, w: PredictionVector) -> float:
    """Cross entropy of the true terms, summed over slots with ground
    truth; empty ground truth contributes zero."""
    total = 0.0
    for slot, fact in ground_facts:
        s, p, o = w.slots[slot]
        total -= math.log(max(float(s[fact.s]), LOG_EPS))
        total -= math.log(max(float(p[fact.p]), LOG_EPS))
        total -= math.log(max(float(o[fact.o]), LOG_EPS))
    return total


def supervised_gradient(ground_facts, w: PredictionVector) -> dict:
    grad = {}
    for slot, fact in ground_facts:
        for term in fact.terms():
            a = max(w.activation(slot, term), LOG_EPS)
            key = (slot, term)
            grad[key] = grad.get(key, 0.0) - 1.0 / a
    return grad


def entity_loss(ground_entities, w: PredictionVector) -> float:
    """Cross entropy of the subject/object labels alone (the box-style
    supervision that survives relation blanking)."""
    total = 0.0
    for slot, (s_id, o_id) in ground_entities:
        s, _, o = w.slots[slot]
        total -= math.log(max(float(s[s_id]), LOG_EPS))
        total -= math.log(max(float(o[o_id]), LOG_EPS))
    return total


def entity_gradient(ground_entities, w: PredictionVector) -> dict:
    grad = {}
    for slot, (s_id, o_id) in ground_entities:
        for term in (("s", s_id), ("o", o_id)):
            a = max(w.activation(slot, term), LOG_EPS)
            key = (slot, term)
            grad[key] = grad.get(key, 0.0) - 1.0 / a
    return grad


# --- metrics -----------------------------------------------------------------

def _fact_of(entry):
    return entry.fact if hasattr(entry, "fact") else entry


def predicate_recalls(predictions: Sequence, ground_truth: Sequence,
                      k: int) -> dict:
    """Per-predicate recall of ground-truth facts within each sample's
    top-k ranked predictions."""
    if k < 1:
        raise ContractError("k must be at least 1")
    hit = {}
    total = {}
    for ranked, facts in zip(predictions, ground_truth):
        top = {_fact_of(e) for e in ranked[:k]}
        for fact in facts:
            total[fact.p] = total.get(fact.p, 0) + 1
            if fact in top:
                hit[fact.p] = hit.get(fact.p, 0) + 1
    return {p: hit.get(p, 0) / n for p, n in total.items()}


def mean_recall_at_k(predictions: Sequence, ground_truth: Sequence,
                     k: int) -> float:
    """Unweighted mean of per-predicate recalls over the predicates with
    at least one ground-truth instance (others are skipped)."""
    recalls = predicate_recalls(predictions, ground_truth, k)
    if not recalls:
        return 0.0
    return sum(recalls.values()) / len(recalls)


def zero_shot_recall_at_k(predictions: Sequence, ground_truth: Sequence,
                          train_fact_set, k: int):
    """recall@k over ground-truth facts never seen in training.

    Returns (value, empty_pool_flag); the flag is set when no ground-truth
    fact qualifies.
    """
    if k < 1:
        raise ContractError("k must be at least 1")
    hit = 0
    total = 0
    for ranked, facts in zip(predictions, ground_truth):
        top = {_fact_of(e) for e in ranked[:k]}
        for fact in facts:
            if fact in train_fact_set:
                continue
            total += 1
            if fact in top:
                hit += 1
    if total == 0:
        return 0.0, True
    return hit / total, False


def rank_predictions(model: HarnessModel, samples: Sequence,
                     depth: int) -> list:
    """Top-``depth`` ranked facts per sample, all slots merged."""
    out = []
    for sample in samples:
        w = model.forward(sample.features)
        total = sum(s[0].size * s[1].size * s[2].size for s in w.slots)
        out.append(topk_facts(w, None, min(depth, total)))
    return out


def evaluate(model: HarnessModel, dataset: Dataset, split: str,
             ks: Sequence[int], train_fact_set=None) -> dict:
    """mR@k and zsR@k for the given split at each requested k."""
    samples = dataset.split(split)
    if train_fact_set is None:
        train_fact_set = dataset.train_fact_set()
    predictions = rank_predictions(model, samples, max(ks))
    truths = [list(s.fact_set()) for s in samples]
    result = {}
    for k in ks:
        result[f"mr_at_{k}"] = mean_recall_at_k(predictions, truths, k)
        zs, empty = zero_shot_recall_at_k(predictions, truths,
                                          train_fact_set, k)
        result[f"zsr_at_{k}"] = zs
        result["zs_pool_empty"] = empty
    # predicates without ground truth in this split are skipped by the
    # mean, not counted as zero
    result["mr_predicates_scored"] = len(
        predicate_recalls(predictions, truths, max(ks)))
    return result


# --- training ----------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    world: WorldSpec = field(default_factory=WorldSpec)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    regularizer: str = "none"
    weighting: str = "auto"  # auto: balance the logic gradient against a
    #                          running norm of the supervised gradient;
    #                          fixed: apply loss_weights as given
    balance: float = 0.5     # auto mode: logic/supervised gradient ratio
    lr: float = 0.05
    epochs: int = 6
    seed: int = 0
    eval_ks: tuple = (20,)

    def __post_init__(self):
        if self.regularizer not in REGULARIZERS:
            raise ValidationError(f"unknown regularizer {self.regularizer!r}")
        if self.weighting not in ("auto", "fixed"):
            raise ValidationError(f"unknown weighting {self.weighting!r}")
        if self.lr <= 0 or self.epochs < 1 or self.balance <= 0:
            raise ValidationError(
                "lr and balance must be positive, epochs >= 1")


@dataclass
class TrainResult:
    model: HarnessModel
    rows: list  # per-epoch log dicts
    dataset: Dataset
    store: TheoryStore | None
    config: TrainConfig


def _effective_setup(config: TrainConfig):
    if config.regularizer == "none":
        weights = LossWeights(beta1=config.loss_weights.beta1, beta2=0.0)
        selection = config.selection
    else:
        kind = LossKind.SL if config.regularizer == "ngp-sl" else LossKind.DL2
        weights = config.loss_weights
        selection = replace(config.selection, loss_kind=kind)
    return weights, selection


def train(config: TrainConfig, dataset: Dataset | None = None,
          store: TheoryStore | None = None) -> TrainResult:
    """Shuffled per-sample SGD.

    The regularized runs train on every sample: blank-fact samples
    contribute the logic loss plus the surviving entity supervision,
    labelled samples the full objective.  The unregularized baseline skips
    blank samples outright.  The theory defaults to the complement of the
    world's permitted facts.  Deterministic under the config seed.
    """
    if dataset is None:
        dataset = generate_dataset(config.world)
    weights, selection = _effective_setup(config)
    regularized = weights.beta2 != 0.0
    if store is None and regularized:
        store = build_complement_of_facts(dataset.vocab, dataset.permitted)
    model = HarnessModel(dataset.vocab, config.world.total_feature_dim,
                         config.world.n_slots)
    rng = np.random.default_rng([config.seed, 0x7A])
    train_samples = dataset.split("train")
    train_fact_set = dataset.train_fact_set()
    state = _AutoWeightState()
    rows = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(train_samples))
        ln_sum = ls_sum = 0.0
        n_steps = 0
        for j in order:
            sample = train_samples[int(j)]
            if not regularized and not sample.ground_facts():
                continue
            diag = _train_step(sample, store, model, selection, weights,
                               config, rng, regularized, state)
            ln_sum += diag.ln
            ls_sum += diag.ls
            n_steps += 1
        row = {"epoch": epoch,
               "steps": n_steps,
               "ln_mean": ln_sum / max(n_steps, 1),
               "ls_mean": ls_sum / max(n_steps, 1)}
        val = evaluate(model, dataset, "val", config.eval_ks, train_fact_set)
        for k in config.eval_ks:
            row[f"val_mr_at_{k}"] = val[f"mr_at_{k}"]
            row[f"val_zsr_at_{k}"] = val[f"zsr_at_{k}"]
        rows.append(row)
    return TrainResult(model=model, rows=rows, dataset=dataset, store=store,
                       config=config)


class _AutoWeightState:
    """Running norm of the supervised parameter gradient."""

    def __init__(self):
        self.ema = None

    def update(self, norm):
        self.ema = norm if self.ema is None else 0.9 * self.ema + 0.1 * norm


def _norm_of(gw, gb):
    sq = 0.0
    for row_w, row_b in zip(gw, gb):
        for a in range(3):
            sq += float((row_w[a] ** 2).sum() + (row_b[a] ** 2).sum())
    return math.sqrt(sq)


# the auto-balanced logic gradient is never amplified past this factor,
# so a near-compliant model is not kept orbiting by tiny violations
_AUTO_SCALE_CAP = 25.0


def _train_step(sample, store, model, selection, weights, config, rng,
                regularized, state) -> StepDiagnostics:
    if not regularized:
        # plain supervised step, bit-identical to the unregularized loop
        w = model.forward(sample.features)
        ln = model.supervised_loss(sample, w)
        grad = {}
        for key, g in model.supervised_gradient(sample, w).items():
            grad[key] = weights.beta1 * g
        norm = model.backward_and_update(grad, config.lr)
        return StepDiagnostics(ln=ln, ls=0.0, grad_norm=norm)
    if config.weighting == "fixed" and sample.ground_facts():
        return ngp_step(sample, store, model, selection, weights, config.lr,
                        rng)
    # for blanked samples the relation supervision is gone but the
    # box-style entity labels remain, so the subject/object heads keep a
    # direct anchor while the logic loss shapes the predicate head
    w = model.forward(sample.features)
    ground = sample.ground_facts()
    ln = 0.0
    sup = None
    if weights.beta1 != 0.0:
        if ground:
            ln = model.supervised_loss(sample, w)
            grad_sup = model.supervised_gradient(sample, w)
        else:
            ln = entity_loss(sample.ground_entities(), w)
            grad_sup = entity_gradient(sample.ground_entities(), w)
        if grad_sup:
            sup = model.parameter_gradients(grad_sup)
            if ground:
                state.update(_norm_of(*sup))
    selected = select_for_sample(w, store, selection, rng)
    ls = 0.0
    logic = None
    scale = 0.0
    if selected and weights.beta2 != 0.0:
        ls, lgrad = logic_loss_and_gradient(selected, w, selection.loss_kind)
        logic = model.parameter_gradients(lgrad)
        if config.weighting == "fixed":
            scale = weights.beta2
        else:
            logic_norm = _norm_of(*logic)
            if logic_norm > 0.0:
                target = config.balance * (state.ema if state.ema is not None
                                           else logic_norm)
                scale = min(target / logic_norm, _AUTO_SCALE_CAP)
    gw = [[np.zeros_like(model.weights[r][a]) for a in range(3)]
          for r in range(model.n_slots)]
    gb = [[np.zeros_like(model.biases[r][a]) for a in range(3)]
          for r in range(model.n_slots)]
    for part, factor in ((sup, weights.beta1), (logic, scale)):
        if part is None or factor == 0.0:
            continue
        pw, pb = part
        for r in range(model.n_slots):
            for a in range(3):
                gw[r][a] += factor * pw[r][a]
                gb[r][a] += factor * pb[r][a]
    norm = _norm_of(gw, gb)
    for r in range(model.n_slots):
        for a in range(3):
            model.weights[r][a] -= config.lr * gw[r][a]
            model.biases[r][a] -= config.lr * gb[r][a]
    return StepDiagnostics(ln=ln, ls=ls, selected=selected, grad_norm=norm)


# --- reduction sweep ---------------------------------------------------------

@dataclass(frozen=True)
class SweepConfig:
    base: TrainConfig = field(default_factory=TrainConfig)
    retentions: tuple = (1.0, 0.9, 0.8, 0.7, 0.6, 0.5)
    seeds: tuple = (0, 1, 2, 3, 4)
    regularizers: tuple = ("none", "ngp-sl")
    eval_ks: tuple = (100,)
    eval_split: str = "test"


def sweep_cell(sweep: SweepConfig, retention: float, seed: int,
               regularizer: str) -> dict:
    """Train and score one (retention, seed, regularizer) combination."""
    world = replace(sweep.base.world, retention=retention, seed=seed)
    config = replace(sweep.base, world=world, seed=seed,
                     regularizer=regularizer, eval_ks=sweep.eval_ks)
    result = train(config)
    metrics = evaluate(result.model, result.dataset, sweep.eval_split,
                       sweep.eval_ks)
    row = {"retention": retention, "seed": seed, "regularizer": regularizer}
    for k in sweep.eval_ks:
        row[f"mr_at_{k}"] = metrics[f"mr_at_{k}"]
        row[f"zsr_at_{k}"] = metrics[f"zsr_at_{k}"]
    return row


def run_reduction_sweep(sweep: SweepConfig, jobs: int = 1) -> list:
    """All sweep cells, ordered by (retention desc, seed, regularizer)."""
    cells = [(r, s, reg) for r in sweep.retentions for s in sweep.seeds
             for reg in sweep.regularizers]
    if jobs > 1:
        import concurrent.futures
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_sweep_cell_star,
                               [(sweep, r, s, reg) for r, s, reg in cells]))
    else:
        rows = [sweep_cell(sweep, r, s, reg) for r, s, reg in cells]
    rows.sort(key=lambda row: (-row["retention"], row["seed"],
                               row["regularizer"]))
    return rows


def _sweep_cell_star(args):
    return sweep_cell(*args)


# --- serialization -----------------------------------------------------------

def save_dataset(dataset: Dataset, path) -> None:
    """TSV: sample_id, split, comma-joined features, one s,p,o (or "-")
    column per slot."""
    vocab = dataset.vocab
    with open(path, "w", encoding="utf-8") as fh:
        for s in dataset.samples:
            feats = ",".join(repr(float(x)) for x in s.features)
            cols = [str(s.sample_id), s.split, feats]
            for fact in s.slots:
                if fact is None:
                    cols.append("-")
                else:
                    cols.append(f"{vocab.name_of('s', fact.s)},"
                                f"{vocab.name_of('p', fact.p)},"
                                f"{vocab.name_of('o', fact.o)}")
            fh.write("\t".join(cols) + "\n")


def load_samples(path, vocab: Vocabulary) -> list:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) < 4:
                raise ParseError("expected at least 4 fields", line=lineno)
            try:
                sample_id = int(parts[0])
                features = np.asarray([float(x) for x in parts[2].split(",")])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            slots = []
            for col in parts[3:]:
                if col == "-":
                    slots.append(None)
                else:
                    names = col.split(",")
                    if len(names) != 3:
                        raise ParseError(f"bad slot column {col!r}",
                                         line=lineno)
                    slots.append(vocab.fact(*names))
            samples.append(SceneSample(sample_id, parts[1], features,
                                       tuple(slots)))
    return samples


def save_model(model: HarnessModel, path) -> None:
    """Write parameters plus vocabulary metadata as a deterministic npz
    (fixed zip timestamps so identical models are byte-identical)."""
    meta = {"feature_dim": model.feature_dim,
            "n_slots": model.n_slots,
            "subjects": list(model.vocab.subjects),
            "predicates": list(model.vocab.predicates),
            "objects": list(model.vocab.objects)}
    entries = [("meta.json", json.dumps(meta, sort_keys=True).encode())]
    for r in range(model.n_slots):
        for a, d in enumerate(DOMAINS):
            for kind, arrs in (("W", model.weights), ("b", model.biases)):
                buf = io.BytesIO()
                np.lib.format.write_array(buf, arrs[r][a])
                entries.append((f"{kind}_{r}_{d}.npy", buf.getvalue()))
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, data in entries:
            info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, data)


def load_model(path) -> HarnessModel:
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        vocab = Vocabulary(meta["subjects"], meta["predicates"],
                           meta["objects"])
        model = HarnessModel(vocab, meta["feature_dim"], meta["n_slots"])
        for r in range(model.n_slots):
            for a, d in enumerate(DOMAINS):
                model.weights[r][a] = np.lib.format.read_array(
                    io.BytesIO(zf.read(f"W_{r}_{d}.npy")))
                model.biases[r][a] = np.lib.format.read_array(
                    io.BytesIO(zf.read(f"b_{r}_{d}.npy")))
    return model


# --- config files ------------------------------------------------------------

def parse_config_file(path) -> dict:
    """key=value lines; ``#`` comments and blank lines are skipped."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError("expected key=value", line=lineno)
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


_WORLD_FIELDS = {f: t for f, t in (
    ("n_subjects", int), ("n_predicates", int), ("n_objects", int),
    ("feature_dim", int), ("n_slots", int), ("n_permitted", int),
    ("noise", float), ("predicate_signal", float), ("object_signal", float),
    ("decoy_signal", float), ("train_samples", int),
    ("val_samples", int), ("test_samples", int), ("retention", float),
    ("zero_shot_fraction", float), ("seed", int))}

_TRAIN_FIELDS = {"lr": float, "epochs": int, "seed": int,
                 "regularizer": str, "weighting": str, "balance": float}

_SELECTION_FIELDS = {"rho": int, "tie_break": str, "strategy": str,
                     "per_slot_budget": lambda v: v.lower() == "true"}

_LOSS_FIELDS = {"beta1": float, "beta2": float}


def build_train_config(mapping: dict) -> TrainConfig:
    """TrainConfig from flat dotted keys (world.*, selection.*, loss.*,
    train.*)."""
    world_kw, train_kw, sel_kw, loss_kw = {}, {}, {}, {}
    eval_ks = None
    for key, value in mapping.items():
        if "." not in key:
            raise ValidationError(f"config key {key!r} must be dotted")
        prefix, name = key.split(".", 1)
        if prefix == "world" and name in _WORLD_FIELDS:
            world_kw[name] = _WORLD_FIELDS[name](value)
        elif prefix == "selection" and name in _SELECTION_FIELDS:
            sel_kw[name] = _SELECTION_FIELDS[name](value)
        elif prefix == "loss" and name in _LOSS_FIELDS:
            loss_kw[name] = _LOSS_FIELDS[name](value)
        elif prefix == "train" and name in _TRAIN_FIELDS:
            train_kw[name] = _TRAIN_FIELDS[name](value)
        elif prefix == "train" and name == "eval_ks":
            eval_ks = tuple(int(x) for x in value.split(","))
        else:
            raise ValidationError(f"unknown config key {key!r}")
    config = TrainConfig(world=WorldSpec(**world_kw),
                         selection=SelectionConfig(**sel_kw),
                         loss_weights=LossWeights(**loss_kw),
                         **train_kw)
    if eval_ks is not None:
        config = replace(config, eval_ks=eval_ks)
    return config
