"""Construction, storage, and serialization of negative-IC theories.

A theory is a large set of forbidden (subject, predicate, object) triples.
Two representations share one membership interface: an explicit set of
forbidden triples, or the complement of a positive fact set (membership is
then a negated lookup, so a ~1M-IC complement theory costs only the
positives it was built from).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import ContractError, ParseError, ValidationError
from .logic import (Fact, IntegrityConstraint, Vocabulary, pack_fact,
                    unpack_fact, validate_fact)

EXPLICIT_NEGATIVE = "explicit-negative"
COMPLEMENT = "complement"

# kappa: a term pair joins the complementation pass only when it has at
# most this many supporting facts in the restricted knowledge graph
DEFAULT_KAPPA = 9


@dataclass
class BuildReport:
    """Counts from restricting a knowledge graph to the vocabulary."""
    input_triples: int = 0
    kept_triples: int = 0
    dropped_triples: int = 0


class TheoryStore:
    """Queryable set of negative ICs over a vocabulary.

    ``keys`` holds packed triples: the forbidden facts themselves for the
    explicit representation, or the positive facts whose complement is
    forbidden for the complement representation.  Immutable after build.
    """

    def __init__(self, vocab: Vocabulary, representation: str,
                 keys: Iterable[int]):
        if representation not in (EXPLICIT_NEGATIVE, COMPLEMENT):
            raise ValidationError(f"unknown representation {representation!r}")
        self.vocab = vocab
        self.representation = representation
        self.keys = frozenset(keys)
        self.build_report: BuildReport | None = None

    def contains_ic(self, fact: Fact) -> bool:
        key = pack_fact(self.vocab, fact)
        if self.representation == EXPLICIT_NEGATIVE:
            return key in self.keys
        return key not in self.keys

    def ic_count(self) -> int:
        if self.representation == EXPLICIT_NEGATIVE:
            return len(self.keys)
        return self.vocab.n_facts - len(self.keys)

    def iter_ics(self):
        """All ICs in ascending packed-key order (materializes the
        complement; meant for small stores and serialization)."""
        if self.representation == EXPLICIT_NEGATIVE:
            for key in sorted(self.keys):
                yield IntegrityConstraint(unpack_fact(self.vocab, key))
        else:
            for key in range(self.vocab.n_facts):
                if key not in self.keys:
                    yield IntegrityConstraint(unpack_fact(self.vocab, key))

    def membership_view(self):
        """(packed key set, negate flag) for the scan kernels."""
        return self.keys, self.representation == COMPLEMENT

    def __repr__(self):
        return (f"TheoryStore({self.representation}, "
                f"{self.ic_count()} ICs over {self.vocab!r})")


def contains_ic(store: TheoryStore, fact: Fact) -> bool:
    return store.contains_ic(fact)


def build_explicit(vocab: Vocabulary,
                   forbidden: Iterable[Fact]) -> TheoryStore:
    keys = set()
    for fact in forbidden:
        validate_fact(vocab, fact)
        keys.add(pack_fact(vocab, fact))
    return TheoryStore(vocab, EXPLICIT_NEGATIVE, keys)


def build_complement_of_facts(vocab: Vocabulary,
                              positive: Iterable[Fact]) -> TheoryStore:
    """Theory forbidding every triple not in the positive fact set.

    The cross product is never materialized; membership is answered by a
    negated positive lookup.
    """
    keys = set()
    for fact in positive:
        validate_fact(vocab, fact)
        keys.add(pack_fact(vocab, fact))
    return TheoryStore(vocab, COMPLEMENT, keys)


def restrict_triples(kg: Sequence[tuple], vocab: Vocabulary):
    """Keep only name triples whose terms all exist in the vocabulary."""
    report = BuildReport(input_triples=len(kg))
    kept = []
    for s, p, o in kg:
        if vocab.has("s", s) and vocab.has("p", p) and vocab.has("o", o):
            kept.append(vocab.fact(s, p, o))
        else:
            report.dropped_triples += 1
    report.kept_triples = len(kept)
    return kept, report


def build_from_kg_complement(kg: Sequence[tuple], vocab: Vocabulary,
                             kappa: int = DEFAULT_KAPPA) -> TheoryStore:
    """Complement the sparse regions of a knowledge graph.

    A (subject, object), (subject, predicate), or (predicate, object) pair
    enters the pass when at most ``kappa`` facts in the restricted graph
    support it; the pass then forbids every completion of the pair that is
    absent from the graph.  Triples outside the vocabulary are dropped and
    counted in the build report.
    """
    if kappa < 0:
        raise ContractError("kappa must be nonnegative")
    facts, report = restrict_triples(kg, vocab)
    known = {pack_fact(vocab, f) for f in facts}

    count_so = {}
    count_sp = {}
    count_po = {}
    for key in known:
        f = unpack_fact(vocab, key)
        count_so[(f.s, f.o)] = count_so.get((f.s, f.o), 0) + 1
        count_sp[(f.s, f.p)] = count_sp.get((f.s, f.p), 0) + 1
        count_po[(f.p, f.o)] = count_po.get((f.p, f.o), 0) + 1

    keys = set()
    np_, no = vocab.n_predicates, vocab.n_objects
    for s in range(vocab.n_subjects):
        for o in range(no):
            if count_so.get((s, o), 0) <= kappa:
                base = s * np_
                for p in range(np_):
                    key = (base + p) * no + o
                    if key not in known:
                        keys.add(key)
    for s in range(vocab.n_subjects):
        for p in range(np_):
            if count_sp.get((s, p), 0) <= kappa:
                base = (s * np_ + p) * no
                for o in range(no):
                    key = base + o
                    if key not in known:
                        keys.add(key)
    for p in range(np_):
        for o in range(no):
            if count_po.get((p, o), 0) <= kappa:
                for s in range(vocab.n_subjects):
                    key = (s * np_ + p) * no + o
                    if key not in known:
                        keys.add(key)

    store = TheoryStore(vocab, EXPLICIT_NEGATIVE, keys)
    store.build_report = report
    return store


@dataclass
class TheoryStats:
    ic_count: int
    representation: str
    per_predicate: dict = field(default_factory=dict)


def theory_stats(store: TheoryStore) -> TheoryStats:
    """Exact counts; the complement representation is counted without
    materializing its entries."""
    vocab = store.vocab
    per_predicate = {}
    if store.representation == EXPLICIT_NEGATIVE:
        counts = [0] * vocab.n_predicates
        for key in store.keys:
            counts[unpack_fact(vocab, key).p] += 1
        for p, c in enumerate(counts):
            per_predicate[vocab.name_of("p", p)] = c
    else:
        full = vocab.n_subjects * vocab.n_objects
        positives = [0] * vocab.n_predicates
        for key in store.keys:
            positives[unpack_fact(vocab, key).p] += 1
        for p in range(vocab.n_predicates):
            per_predicate[vocab.name_of("p", p)] = full - positives[p]
    return TheoryStats(ic_count=store.ic_count(),
                       representation=store.representation,
                       per_predicate=per_predicate)


# --- serialization ----------------------------------------------------------

def read_kg_triples(path) -> list:
    """Read a TSV of subject<TAB>predicate<TAB>object name triples.

    Blank lines and ``#`` comments are skipped.
    """
    triples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(
                    f"expected 3 tab-separated fields, got {len(parts)}",
                    line=lineno)
            triples.append(tuple(parts))
    return triples


def save_theory(store: TheoryStore, path) -> None:
    """Write the store as name triples under a format header.

    Explicit stores list their forbidden facts; complement stores list the
    positive facts they negate.  A vocab-sizes comment lets ``stats`` read
    complement files standalone; loaders ignore comment lines.
    """
    vocab = store.vocab
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"format={store.representation}\n")
        fh.write(f"# vocab-sizes: {vocab.n_subjects} {vocab.n_predicates} "
                 f"{vocab.n_objects}\n")
        for key in sorted(store.keys):
            f = unpack_fact(vocab, key)
            fh.write(f"{vocab.name_of('s', f.s)}\t{vocab.name_of('p', f.p)}\t"
                     f"{vocab.name_of('o', f.o)}\n")


def load_theory(path, vocab: Vocabulary) -> TheoryStore:
    representation, rows, _ = _read_theory_file(path)
    keys = set()
    for lineno, (s, p, o) in rows:
        try:
            fact = vocab.fact(s, p, o)
        except ValidationError as exc:
            raise ParseError(str(exc), line=lineno) from None
        keys.add(pack_fact(vocab, fact))
    return TheoryStore(vocab, representation, keys)


def _read_theory_file(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if not header.startswith("format="):
            raise ParseError("missing format= header", line=1)
        representation = header[len("format="):]
        if representation not in (EXPLICIT_NEGATIVE, COMPLEMENT):
            raise ParseError(f"unknown format {representation!r}", line=1)
        rows = []
        sizes = None
        for lineno, raw in enumerate(fh, start=2):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if line.lstrip().startswith("#"):
                stripped = line.lstrip()[1:].strip()
                if stripped.startswith("vocab-sizes:"):
                    parts = stripped[len("vocab-sizes:"):].split()
                    if len(parts) == 3 and all(x.isdigit() for x in parts):
                        sizes = tuple(int(x) for x in parts)
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(
                    f"expected 3 tab-separated fields, got {len(parts)}",
                    line=lineno)
            rows.append((lineno, tuple(parts)))
    return representation, rows, sizes


def theory_file_stats(path, vocab: Vocabulary | None = None) -> TheoryStats:
    """Stats straight from a theory file.

    Complement files need vocabulary sizes for exact counts; these come
    from the given vocabulary or from the file's vocab-sizes comment.
    """
    representation, rows, sizes = _read_theory_file(path)
    if vocab is not None:
        store = load_theory(path, vocab)
        return theory_stats(store)
    per_predicate = {}
    for _, (s, p, o) in rows:
        per_predicate[p] = per_predicate.get(p, 0) + 1
    if representation == EXPLICIT_NEGATIVE:
        return TheoryStats(ic_count=len(rows), representation=representation,
                           per_predicate=per_predicate)
    if sizes is None:
        raise ValidationError(
            "complement theory stats need a vocabulary (pass --vocab or "
            "keep the vocab-sizes comment)")
    ns, np_, no = sizes
    # rows are the positive facts; the per-pair complement is exact
    full = ns * no
    per_pred_out = {}
    for p, c in per_predicate.items():
        per_pred_out[p] = full - c
    return TheoryStats(ic_count=ns * np_ * no - len(rows),
                       representation=representation,
                       per_predicate=per_pred_out)
