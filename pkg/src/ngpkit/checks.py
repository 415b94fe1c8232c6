"""Verification suites: oracle comparisons and gradient checks.

Each suite pits an implementation against an independent reference (full
truth-table enumeration, central finite differences, exhaustive subset
search) on randomized instances and reports failures.  The ``check`` CLI
command runs these; the acceptance tests call them directly.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .harness import HarnessModel, WorldSpec, generate_dataset
from .logic import (And, Fact, IntegrityConstraint, Not, Or,
                    PredictionVector, Var, Vocabulary, eval_boolean,
                    formula_of_ic, variables, wmc, wmc_ic_conjunction)
from .losses import (LossKind, LossWeights, dl2_loss, loss_gradient,
                     loss_of_ic_set, semantic_loss)
from .ngp import (SelectionConfig, exhaustive_select, greedy_select,
                  logic_loss_and_gradient, select_for_sample)
from .theory import build_explicit


@dataclass
class CheckResult:
    name: str
    cases: int
    failures: int
    elapsed: float
    detail: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.failures == 0


def brute_wmc(f, w: PredictionVector, slot: int = 0) -> float:
    """Reference weighted model count: full truth-table enumeration with
    per-assignment Boolean evaluation."""
    vars_ = variables(f)
    total = 0.0
    for bits in itertools.product((False, True), repeat=len(vars_)):
        assignment = dict(zip(vars_, bits))
        if not eval_boolean(f, assignment):
            continue
        weight = 1.0
        for t, b in zip(vars_, bits):
            a = w.activation(slot, t)
            weight *= a if b else 1.0 - a
        total += weight
    return total


def rel_err(a: float, b: float) -> float:
    """|a - b| relative to the larger magnitude, floored at 1 so that
    near-zero values are compared absolutely."""
    return abs(a - b) / max(abs(a), abs(b), 1.0)


def random_prediction(rng, vocab: Vocabulary, n_slots: int = 1,
                      low: float = 0.05, high: float = 0.95):
    """Activations bounded away from 0/1 so finite differences stay legal."""
    slots = []
    for _ in range(n_slots):
        slots.append(tuple(rng.uniform(low, high, vocab.size(d))
                           for d in "spo"))
    return PredictionVector(slots)


def random_fact(rng, vocab: Vocabulary) -> Fact:
    return Fact(int(rng.integers(vocab.n_subjects)),
                int(rng.integers(vocab.n_predicates)),
                int(rng.integers(vocab.n_objects)))


def random_ics(rng, vocab: Vocabulary, count: int) -> list:
    keys = rng.choice(vocab.n_facts, size=count, replace=False)
    out = []
    for key in keys:
        o = int(key) % vocab.n_objects
        rest = int(key) // vocab.n_objects
        out.append(IntegrityConstraint(
            Fact(rest // vocab.n_predicates, rest % vocab.n_predicates, o)))
    return out


def random_formula(rng, vocab: Vocabulary, max_vars: int = 8,
                   depth: int = 3):
    """Random formula over at most ``max_vars`` distinct terms."""
    pool = []
    for domain, size in (("s", vocab.n_subjects), ("p", vocab.n_predicates),
                         ("o", vocab.n_objects)):
        pool.extend((domain, i) for i in range(size))
    pool = [pool[int(i)] for i in rng.permutation(len(pool))][:max_vars]

    def build(d):
        if d == 0 or rng.random() < 0.3:
            return Var(pool[int(rng.integers(len(pool)))])
        choice = rng.random()
        if choice < 0.25:
            return Not(build(d - 1))
        arity = int(rng.integers(2, 4))
        children = tuple(build(d - 1) for _ in range(arity))
        return And(children) if choice < 0.65 else Or(children)

    f = build(depth)
    while isinstance(f, Var):  # keep instances non-trivial
        f = build(depth)
    return f


def _perturbed(w: PredictionVector, slot: int, term, delta: float):
    arrays = [list(map(np.array, s)) for s in w.slots]
    axis = {"s": 0, "p": 1, "o": 2}[term[0]]
    arrays[slot][axis][term[1]] += delta
    return PredictionVector([tuple(s) for s in arrays])


def fd_gradient(loss_fn, w: PredictionVector, slot: int, terms,
                h: float = 1e-6) -> dict:
    """Central finite differences of a loss over the given activations."""
    out = {}
    for t in terms:
        up = loss_fn(_perturbed(w, slot, t, h))
        down = loss_fn(_perturbed(w, slot, t, -h))
        out[t] = (up - down) / (2.0 * h)
    return out


# --- suites ------------------------------------------------------------------

def suite_wmc_oracle(cases: int = 1000, seed: int = 0,
                     tol: float = 1e-12) -> CheckResult:
    """IC-conjunction probabilities against enumeration over the expanded
    formula: <= 8 ICs over <= 12 distinct variables."""
    rng = np.random.default_rng([seed, 0x11])
    vocab = Vocabulary([f"s{i}" for i in range(4)],
                       [f"p{i}" for i in range(4)],
                       [f"o{i}" for i in range(4)])
    start = time.perf_counter()
    failures = 0
    max_err = 0.0
    for _ in range(cases):
        n_ics = int(rng.integers(1, 9))
        ics = random_ics(rng, vocab, n_ics)
        while len({t for ic in ics for t in ic.terms()}) > 12:
            ics = random_ics(rng, vocab, n_ics)
        w = random_prediction(rng, vocab, low=0.0, high=1.0)
        fast = wmc_ic_conjunction(ics, w, 0)
        expanded = (formula_of_ic(ics[0]) if len(ics) == 1
                    else And(tuple(formula_of_ic(ic) for ic in ics)))
        exact = wmc(expanded, w, 0)
        err = abs(fast - exact)
        max_err = max(max_err, err)
        if err > tol:
            failures += 1
    return CheckResult("wmc-oracle", cases, failures,
                       time.perf_counter() - start,
                       {"max_abs_err": max_err, "tolerance": tol})


def suite_loss_gradients(cases: int = 500, seed: int = 0,
                         tol: float = 1e-5) -> CheckResult:
    """SL and DL2 gradients (formulas and IC sets) against central finite
    differences, with the formula probability bounded away from zero."""
    rng = np.random.default_rng([seed, 0x22])
    vocab = Vocabulary([f"s{i}" for i in range(4)],
                       [f"p{i}" for i in range(4)],
                       [f"o{i}" for i in range(4)])
    start = time.perf_counter()
    failures = 0
    max_err = 0.0
    for case in range(cases):
        w = random_prediction(rng, vocab)
        use_ics = case % 2 == 0
        if use_ics:
            ics = random_ics(rng, vocab, int(rng.integers(1, 5)))
            target = ics
            sl_value = wmc_ic_conjunction(ics, w, 0)
        else:
            target = random_formula(rng, vocab, max_vars=8)
            sl_value = wmc(target, w, 0)
        kind = LossKind.SL if case % 4 < 2 else LossKind.DL2
        if kind is LossKind.SL and sl_value < 1e-3:
            kind = LossKind.DL2  # keep SL away from saturation
        if use_ics:
            def loss_fn(pw, k=kind, t=target):
                return loss_of_ic_set(k, t, pw, 0)
            terms = sorted({t for ic in target for t in ic.terms()})
        else:
            def loss_fn(pw, k=kind, t=target):
                return (semantic_loss(t, pw, 0) if k is LossKind.SL
                        else dl2_loss(t, pw, 0))
            terms = variables(target)
        analytic = loss_gradient(kind, target, w, 0)
        fd = fd_gradient(loss_fn, w, 0, terms)
        err = max((rel_err(analytic.get(t, 0.0), fd[t]) for t in terms),
                  default=0.0)
        max_err = max(max_err, err)
        if err > tol:
            failures += 1
    return CheckResult("loss-gradients", cases, failures,
                       time.perf_counter() - start,
                       {"max_rel_err": max_err, "tolerance": tol})


def suite_end_to_end_gradients(cases: int = 20, seed: int = 0,
                               tol: float = 1e-4) -> CheckResult:
    """Composite objective gradient w.r.t. every model parameter against
    central finite differences, on small random configurations."""
    rng = np.random.default_rng([seed, 0x33])
    start = time.perf_counter()
    failures = 0
    max_err = 0.0
    for case in range(cases):
        world = WorldSpec(n_subjects=5, n_predicates=5, n_objects=5,
                          feature_dim=8, n_permitted=20, train_samples=3,
                          val_samples=1, test_samples=1,
                          seed=int(rng.integers(1 << 30)))
        dataset = generate_dataset(world)
        store = build_explicit(
            dataset.vocab, [ic.fact for ic in
                            random_ics(rng, dataset.vocab, 30)])
        model = HarnessModel(dataset.vocab, world.feature_dim)
        model.set_parameter_vector(
            rng.normal(0.0, 0.3, model.parameter_vector().size))
        sample = dataset.split("train")[0]
        kind = LossKind.SL if case % 2 == 0 else LossKind.DL2
        cfg = SelectionConfig(rho=3, loss_kind=kind)
        weights = LossWeights(1.0, 1.0)

        w0 = model.forward(sample.features)
        selected = select_for_sample(w0, store, cfg)

        def objective(vec, m=model, s=sample, sel=selected, wt=weights,
                      k=kind):
            saved = m.parameter_vector()
            m.set_parameter_vector(vec)
            pw = m.forward(s.features)
            ln = m.supervised_loss(s, pw)
            ls = logic_loss_and_gradient(sel, pw, k)[0] if sel else 0.0
            m.set_parameter_vector(saved)
            return wt.beta1 * ln + wt.beta2 * ls

        grad_w = {}
        for key, g in model.supervised_gradient(sample, w0).items():
            grad_w[key] = grad_w.get(key, 0.0) + weights.beta1 * g
        if selected:
            _, ls_grad = logic_loss_and_gradient(selected, w0, kind)
            for key, g in ls_grad.items():
                grad_w[key] = grad_w.get(key, 0.0) + weights.beta2 * g
        gw, gb = model.parameter_gradients(grad_w)
        analytic = np.concatenate(
            [np.concatenate([gw[r][a].ravel(), gb[r][a].ravel()])
             for r in range(model.n_slots) for a in range(3)])

        theta = model.parameter_vector()
        h = 1e-5
        idx = rng.choice(theta.size, size=min(40, theta.size), replace=False)
        worst = 0.0
        for i in idx:
            up = theta.copy()
            up[i] += h
            down = theta.copy()
            down[i] -= h
            fd = (objective(up) - objective(down)) / (2 * h)
            worst = max(worst, float(rel_err(float(analytic[i]), fd)))
        max_err = max(max_err, worst)
        if worst > tol:
            failures += 1
    return CheckResult("end-to-end-gradients", cases, failures,
                       time.perf_counter() - start,
                       {"max_rel_err": max_err, "tolerance": tol})


def suite_proposition1(cases: int = 500, seed: int = 0,
                       tol: float = 1e-12) -> CheckResult:
    """Greedy selection against the exhaustive subset maximum.

    The fuzzy loss of the greedy set must equal the exhaustive maximum
    exactly; the semantic loss must match within tolerance whenever the
    greedy set is pairwise variable-disjoint (the tracked rate).
    """
    rng = np.random.default_rng([seed, 0x44])
    vocab = Vocabulary([f"s{i}" for i in range(6)],
                       [f"p{i}" for i in range(6)],
                       [f"o{i}" for i in range(6)])
    start = time.perf_counter()
    failures = 0
    disjoint_cases = 0
    for _ in range(cases):
        ics = random_ics(rng, vocab, int(rng.integers(1, 13)))
        store = build_explicit(vocab, [ic.fact for ic in ics])
        w = random_prediction(rng, vocab)
        rho = int(rng.integers(1, 4))

        cfg = SelectionConfig(rho=rho, loss_kind=LossKind.DL2)
        greedy = greedy_select(w, store, cfg, slot=0)
        best = exhaustive_select(w, 0, ics, rho, LossKind.DL2)
        g_loss = loss_of_ic_set(LossKind.DL2, greedy, w, 0)
        b_loss = loss_of_ic_set(LossKind.DL2, best, w, 0)
        if g_loss != b_loss:
            failures += 1
            continue

        terms = [t for ic in greedy for t in ic.terms()]
        if len(terms) == len(set(terms)):
            disjoint_cases += 1
            best_sl = exhaustive_select(w, 0, ics, rho, LossKind.SL)
            g_sl = loss_of_ic_set(LossKind.SL, greedy, w, 0)
            b_sl = loss_of_ic_set(LossKind.SL, best_sl, w, 0)
            if abs(g_sl - b_sl) > tol:
                failures += 1
    return CheckResult("proposition1", cases, failures,
                       time.perf_counter() - start,
                       {"disjoint_case_rate": disjoint_cases / cases,
                        "tolerance": tol})


SUITE_NAMES = ("wmc-oracle", "gradients", "proposition1")


def run_suite(name: str, cases: int | None = None, seed: int = 0) -> list:
    """Run one named suite (or 'all'); returns CheckResult list."""
    def args(default_cases):
        return {"cases": cases if cases is not None else default_cases,
                "seed": seed}
    if name == "wmc-oracle":
        return [suite_wmc_oracle(**args(1000))]
    if name == "gradients":
        return [suite_loss_gradients(**args(500)),
                suite_end_to_end_gradients(
                    cases=cases if cases is not None else 20, seed=seed)]
    if name == "proposition1":
        return [suite_proposition1(**args(500))]
    if name == "all":
        out = []
        for sub in ("wmc-oracle", "gradients", "proposition1"):
            out.extend(run_suite(sub, cases, seed))
        return out
    raise ValueError(f"unknown suite {name!r}")
