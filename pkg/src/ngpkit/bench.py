"""Benchmark of the hot kernels, comparing the compiled and pure-Python
backends on the same inputs: theory membership throughput, greedy
selection latency, and exact model-counting throughput."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .checks import random_ics, random_prediction
from .logic import And, PredictionVector, Vocabulary, formula_of_ic, unpack_fact, wmc
from .ngp import SelectionConfig, greedy_select
from .theory import build_complement_of_facts


@dataclass
class BenchReport:
    lines: list = field(default_factory=list)
    targets: dict = field(default_factory=dict)


def _vg_shaped_vocab():
    return Vocabulary([f"s{i}" for i in range(150)],
                      [f"p{i}" for i in range(50)],
                      [f"o{i}" for i in range(150)])


def _small_vocab():
    return Vocabulary([f"s{i}" for i in range(20)],
                      [f"p{i}" for i in range(10)],
                      [f"o{i}" for i in range(20)])


class swapped_backend:
    """Temporarily route the kernel entry points to a specific backend."""

    def __init__(self, module):
        self.module = module
        self.saved = None

    def __enter__(self):
        self.saved = (_kernels.wmc, _kernels.wmc_gradient,
                      _kernels.scan_select, _kernels.active)
        _kernels.wmc = self.module.wmc
        _kernels.wmc_gradient = self.module.wmc_gradient
        _kernels.scan_select = self.module.scan_select
        _kernels.active = self.module
        return self

    def __exit__(self, *exc):
        (_kernels.wmc, _kernels.wmc_gradient, _kernels.scan_select,
         _kernels.active) = self.saved
        return False


def _greedy_worker(args):
    """One process's slice of the greedy benchmark; returns (n, seconds)."""
    backend_name, scale, seed, worker, n_samples = args
    import time as _time

    rng = np.random.default_rng([seed, 0xBE, worker])
    vocab = _vg_shaped_vocab() if scale == "vg" else _small_vocab()
    n_positive = 100000 if scale == "vg" else 1000
    keys = rng.choice(vocab.n_facts, size=n_positive, replace=False)
    store = build_complement_of_facts(
        vocab, [unpack_fact(vocab, int(k)) for k in keys])
    acts = []
    for _ in range(n_samples):
        logits = [rng.normal(0.0, 1.0, vocab.size(d)) for d in "spo"]
        acts.append(tuple(np.exp(l - l.max()) / np.exp(l - l.max()).sum()
                          for l in logits))
    cfg = SelectionConfig(rho=3)
    from . import _kernels
    module = _kernels.available_backends()[backend_name]
    with swapped_backend(module):
        t0 = _time.perf_counter()
        for triple in acts:
            greedy_select(PredictionVector([triple]), store, cfg, slot=0)
        return n_samples, _time.perf_counter() - t0


def run_bench(samples: int = 10000, queries: int = 200000, seed: int = 0,
              scale: str = "vg", jobs: int = 1) -> BenchReport:
    report = BenchReport()
    rng = np.random.default_rng([seed, 0xBE])
    vocab = _vg_shaped_vocab() if scale == "vg" else _small_vocab()
    n_positive = 100000 if scale == "vg" else 1000

    t0 = time.perf_counter()
    keys = rng.choice(vocab.n_facts, size=n_positive, replace=False)
    positives = [unpack_fact(vocab, int(k)) for k in keys]
    store = build_complement_of_facts(vocab, positives)
    build_s = time.perf_counter() - t0
    report.lines.append(
        f"theory: {store.ic_count()} ICs (complement of {n_positive} "
        f"positives over {vocab.n_facts} triples), built in {build_s:.2f}s")

    # membership throughput (plain hash lookups, backend-independent)
    probe = [unpack_fact(vocab, int(k))
             for k in rng.integers(vocab.n_facts, size=queries)]
    t0 = time.perf_counter()
    hits = 0
    for fact in probe:
        if store.contains_ic(fact):
            hits += 1
    dt = time.perf_counter() - t0
    qps = queries / dt
    report.lines.append(f"membership: {qps:,.0f} queries/s "
                        f"({hits}/{queries} hits)")
    report.targets["membership >= 1e5 queries/s"] = qps >= 1e5

    # greedy selection latency per backend
    per_backend_ms = {}
    if jobs > 1:
        import concurrent.futures
        for name in sorted(_kernels.available_backends()):
            share = max(samples // jobs, 1)
            work = [(name, scale, seed, worker, share)
                    for worker in range(jobs)]
            with concurrent.futures.ProcessPoolExecutor(jobs) as ex:
                results = list(ex.map(_greedy_worker, work))
            n_total = sum(n for n, _ in results)
            busy = sum(dt for _, dt in results)
            ms = 1000.0 * busy / n_total
            per_backend_ms[name] = ms
            report.lines.append(
                f"greedy rho=3 [{name}]: {ms:.3f} ms/sample over {n_total} "
                f"samples across {jobs} processes")
    else:
        acts = []
        for _ in range(samples):
            logits = [rng.normal(0.0, 1.0, vocab.size(d)) for d in "spo"]
            acts.append(tuple(np.exp(l - l.max()) / np.exp(l - l.max()).sum()
                              for l in logits))
        cfg = SelectionConfig(rho=3)
        for name, module in sorted(_kernels.available_backends().items()):
            with swapped_backend(module):
                t0 = time.perf_counter()
                n_selected = 0
                for triple in acts:
                    w = PredictionVector([triple])
                    n_selected += len(greedy_select(w, store, cfg, slot=0))
                dt = time.perf_counter() - t0
            ms = 1000.0 * dt / samples
            per_backend_ms[name] = ms
            report.lines.append(
                f"greedy rho=3 [{name}]: {ms:.3f} ms/sample over {samples} "
                f"samples ({n_selected} ICs selected)")
    best = min(per_backend_ms.values())
    report.targets["greedy < 1 ms/sample"] = best < 1.0

    # exact counting throughput per backend (<= 12 distinct variables)
    small = Vocabulary([f"s{i}" for i in range(4)],
                       [f"p{i}" for i in range(4)],
                       [f"o{i}" for i in range(4)])
    instances = []
    for _ in range(200):
        instances.append((random_ics(rng, small, 6),
                          random_prediction(rng, small)))
    for name, module in sorted(_kernels.available_backends().items()):
        with swapped_backend(module):
            t0 = time.perf_counter()
            for ics, w in instances:
                f = And(tuple(formula_of_ic(ic) for ic in ics))
                wmc(f, w, 0)
            dt = time.perf_counter() - t0
        report.lines.append(
            f"wmc enumeration [{name}]: {len(instances) / dt:,.1f} "
            f"formulas/s")
    return report
