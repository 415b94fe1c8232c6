"""Propositional formulas over subject/predicate/object terms.

Provides the vocabulary and formula types plus three semantics for
evaluating a formula against per-term activations: classical Boolean,
Lukasiewicz fuzzy, and probabilistic via exact weighted model counting
(each term an independent Bernoulli with its activation as success
probability).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from . import _kernels
from .errors import (CapacityError, ContractError, MissingAssignmentError,
                     ParseError, ValidationError)

# domain tags for term references (domain, id)
SUBJECT = "s"
PREDICATE = "p"
OBJECT = "o"
DOMAINS = (SUBJECT, PREDICATE, OBJECT)
_DOMAIN_AXIS = {SUBJECT: 0, PREDICATE: 1, OBJECT: 2}

# exact WMC enumerates all 2^n assignments; refuse beyond this
WMC_VARIABLE_CAP = 20

# inclusion-exclusion over IC subsets is exponential in the largest
# variable-sharing component; refuse conjunctions beyond this
IC_CONJUNCTION_CAP = 24


class Vocabulary:
    """The three term domains with stable, dense integer ids.

    Names must be unique within a domain; the same name may appear in more
    than one domain (e.g. "person" as both subject and object), so the
    reverse index is kept per domain.
    """

    def __init__(self, subjects: Sequence[str], predicates: Sequence[str],
                 objects: Sequence[str]):
        self.subjects = tuple(subjects)
        self.predicates = tuple(predicates)
        self.objects = tuple(objects)
        self._ids = {}
        for domain, names in ((SUBJECT, self.subjects),
                              (PREDICATE, self.predicates),
                              (OBJECT, self.objects)):
            index = {}
            for i, name in enumerate(names):
                if name in index:
                    raise ValidationError(
                        f"duplicate name {name!r} in domain {domain!r}")
                index[name] = i
            self._ids[domain] = index

    @property
    def n_subjects(self):
        return len(self.subjects)

    @property
    def n_predicates(self):
        return len(self.predicates)

    @property
    def n_objects(self):
        return len(self.objects)

    @property
    def n_facts(self):
        return self.n_subjects * self.n_predicates * self.n_objects

    def names(self, domain: str) -> tuple:
        return {SUBJECT: self.subjects, PREDICATE: self.predicates,
                OBJECT: self.objects}[domain]

    def size(self, domain: str) -> int:
        return len(self.names(domain))

    def id_of(self, domain: str, name: str) -> int:
        try:
            return self._ids[domain][name]
        except KeyError:
            raise ValidationError(f"unknown {domain!r} term {name!r}") from None

    def name_of(self, domain: str, term_id: int) -> str:
        names = self.names(domain)
        if not 0 <= term_id < len(names):
            raise ValidationError(f"{domain!r} id {term_id} out of range")
        return names[term_id]

    def has(self, domain: str, name: str) -> bool:
        return name in self._ids[domain]

    def fact(self, subject: str, predicate: str, object_: str) -> "Fact":
        return Fact(self.id_of(SUBJECT, subject),
                    self.id_of(PREDICATE, predicate),
                    self.id_of(OBJECT, object_))

    def __eq__(self, other):
        return (isinstance(other, Vocabulary)
                and self.subjects == other.subjects
                and self.predicates == other.predicates
                and self.objects == other.objects)

    def __repr__(self):
        return (f"Vocabulary({self.n_subjects} subjects, "
                f"{self.n_predicates} predicates, {self.n_objects} objects)")


def save_vocabulary(vocab: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("[subjects]\n")
        fh.writelines(f"{n}\n" for n in vocab.subjects)
        fh.write("[predicates]\n")
        fh.writelines(f"{n}\n" for n in vocab.predicates)
        fh.write("[objects]\n")
        fh.writelines(f"{n}\n" for n in vocab.objects)


def load_vocabulary(path) -> Vocabulary:
    """Read the three-section vocabulary file; ids follow file order."""
    sections = {"subjects": [], "predicates": [], "objects": []}
    current = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                name = line[1:-1]
                if name not in sections:
                    raise ParseError(f"unknown section {line!r}", line=lineno)
                current = sections[name]
            elif current is None:
                raise ParseError("term before any section header", line=lineno)
            else:
                current.append(line)
    return Vocabulary(sections["subjects"], sections["predicates"],
                      sections["objects"])


@dataclass(frozen=True)
class Fact:
    """A ground predicate(subject, object) triple by term ids."""
    s: int
    p: int
    o: int

    def terms(self):
        return ((SUBJECT, self.s), (PREDICATE, self.p), (OBJECT, self.o))


def validate_fact(vocab: Vocabulary, fact: Fact) -> None:
    if not (0 <= fact.s < vocab.n_subjects
            and 0 <= fact.p < vocab.n_predicates
            and 0 <= fact.o < vocab.n_objects):
        raise ValidationError(f"fact {fact} out of range for {vocab}")


def pack_fact(vocab: Vocabulary, fact: Fact) -> int:
    """Injective integer key over the vocabulary's cross product."""
    return (fact.s * vocab.n_predicates + fact.p) * vocab.n_objects + fact.o


def unpack_fact(vocab: Vocabulary, key: int) -> Fact:
    o = key % vocab.n_objects
    rest = key // vocab.n_objects
    return Fact(rest // vocab.n_predicates, rest % vocab.n_predicates, o)


# --- formulas ---------------------------------------------------------------

@dataclass(frozen=True)
class Var:
    term: tuple  # (domain, id)


@dataclass(frozen=True)
class Not:
    child: "Formula"


@dataclass(frozen=True)
class And:
    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 2:
            raise ContractError("And requires at least two children")


@dataclass(frozen=True)
class Or:
    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 2:
            raise ContractError("Or requires at least two children")


Formula = Union[Var, Not, And, Or]


def variables(f: Formula) -> list:
    """Distinct term refs of f in first-occurrence (depth-first) order."""
    out = []
    seen = set()

    def walk(node):
        if isinstance(node, Var):
            if node.term not in seen:
                seen.add(node.term)
                out.append(node.term)
        elif isinstance(node, Not):
            walk(node.child)
        else:
            for child in node.children:
                walk(child)

    walk(f)
    return out


def format_formula(f: Formula, vocab: Vocabulary | None = None) -> str:
    """Prefix-notation debug form, e.g. ``(not (and s:horse p:drinks o:eye))``."""
    if isinstance(f, Var):
        domain, i = f.term
        name = vocab.name_of(domain, i) if vocab is not None else str(i)
        return f"{domain}:{name}"
    if isinstance(f, Not):
        return f"(not {format_formula(f.child, vocab)})"
    op = "and" if isinstance(f, And) else "or"
    inner = " ".join(format_formula(c, vocab) for c in f.children)
    return f"({op} {inner})"


@dataclass(frozen=True)
class IntegrityConstraint:
    """A forbidden triple: semantically not(p and s and o)."""
    fact: Fact

    def formula(self) -> Formula:
        return formula_of_ic(self)

    def terms(self):
        return self.fact.terms()


def formula_of_ic(ic: IntegrityConstraint) -> Formula:
    f = ic.fact
    return Not(And((Var((SUBJECT, f.s)), Var((PREDICATE, f.p)),
                    Var((OBJECT, f.o)))))


# --- activations ------------------------------------------------------------

class PredictionVector:
    """Per-term activations in [0, 1], one triple of arrays per relation slot.

    Slot arrays are indexed by term id for the subject, predicate, and
    object domains respectively.  Harness-produced vectors are softmax
    distributions per domain; hand-built vectors only need to stay in
    [0, 1].
    """

    def __init__(self, slots):
        converted = []
        for triple in slots:
            if len(triple) != 3:
                raise ValidationError("each slot needs (s, p, o) activations")
            arrays = tuple(np.asarray(a, dtype=np.float64) for a in triple)
            for a in arrays:
                if a.ndim != 1:
                    raise ValidationError("activations must be 1-d")
                if a.size and (a.min() < 0.0 or a.max() > 1.0):
                    raise ValidationError("activations must lie in [0, 1]")
                a.setflags(write=False)
            converted.append(arrays)
        if not converted:
            raise ValidationError("at least one slot is required")
        self.slots = tuple(converted)

    @property
    def n_slots(self):
        return len(self.slots)

    def domain_activations(self, slot: int, domain: str) -> np.ndarray:
        return self.slots[slot][_DOMAIN_AXIS[domain]]

    def activation(self, slot: int, term: tuple) -> float:
        domain, i = term
        arr = self.slots[slot][_DOMAIN_AXIS[domain]]
        if not 0 <= i < arr.size:
            raise MissingAssignmentError(
                f"term {term} is not covered at slot {slot}")
        return float(arr[i])

    def fact_likelihood(self, slot: int, fact: Fact) -> float:
        """w(p) * w(s) * w(o) for the triple (left-to-right)."""
        s, p, o = self.slots[slot]
        if not (fact.s < s.size and fact.p < p.size and fact.o < o.size):
            raise MissingAssignmentError(f"fact {fact} not covered")
        return (float(p[fact.p]) * float(s[fact.s])) * float(o[fact.o])


def uniform_prediction(vocab: Vocabulary, n_slots: int = 1) -> PredictionVector:
    slot = (np.full(vocab.n_subjects, 1.0 / vocab.n_subjects),
            np.full(vocab.n_predicates, 1.0 / vocab.n_predicates),
            np.full(vocab.n_objects, 1.0 / vocab.n_objects))
    return PredictionVector([slot] * n_slots)


# --- classical semantics ----------------------------------------------------

def eval_boolean(f: Formula, assignment: Mapping) -> bool:
    """Standard Boolean evaluation; assignment maps term refs to bools."""
    if isinstance(f, Var):
        try:
            return bool(assignment[f.term])
        except KeyError:
            raise MissingAssignmentError(
                f"no assignment for term {f.term}") from None
    if isinstance(f, Not):
        return not eval_boolean(f.child, assignment)
    if isinstance(f, And):
        return all(eval_boolean(c, assignment) for c in f.children)
    return any(eval_boolean(c, assignment) for c in f.children)


# --- fuzzy semantics --------------------------------------------------------

def eval_fuzzy(f: Formula, w: PredictionVector, slot: int = 0) -> float:
    """Lukasiewicz evaluation: not -> 1-x, and -> max(0, x+y-1),
    or -> min(1, x+y); n-ary nodes fold left over child order."""
    if isinstance(f, Var):
        return w.activation(slot, f.term)
    if isinstance(f, Not):
        return 1.0 - eval_fuzzy(f.child, w, slot)
    values = [eval_fuzzy(c, w, slot) for c in f.children]
    acc = values[0]
    if isinstance(f, And):
        for v in values[1:]:
            acc = max(0.0, acc + v - 1.0)
    else:
        for v in values[1:]:
            acc = min(1.0, acc + v)
    return acc


# --- probabilistic semantics (weighted model counting) ----------------------

def compile_formula(f: Formula):
    """Postfix program over the formula's variables for the kernels.

    Returns (program int32 array, ordered variable list).
    """
    vars_ = variables(f)
    index = {t: i for i, t in enumerate(vars_)}
    ops = []

    def emit(node):
        if isinstance(node, Var):
            ops.extend((_kernels.OP_LOAD, index[node.term]))
        elif isinstance(node, Not):
            emit(node.child)
            ops.extend((_kernels.OP_NOT, 0))
        else:
            code = _kernels.OP_AND if isinstance(node, And) else _kernels.OP_OR
            emit(node.children[0])
            for child in node.children[1:]:
                emit(child)
                ops.extend((code, 0))

    emit(f)
    return np.asarray(ops, dtype=np.int32), vars_


def _formula_weights(vars_, w, slot):
    return np.asarray([w.activation(slot, t) for t in vars_], dtype=np.float64)


def wmc(f: Formula, w: PredictionVector, slot: int = 0) -> float:
    """Exact probability of f under independent per-term Bernoullis."""
    program, vars_ = compile_formula(f)
    if len(vars_) > WMC_VARIABLE_CAP:
        raise CapacityError(
            f"{len(vars_)} variables exceed the exact-enumeration cap of "
            f"{WMC_VARIABLE_CAP}; use wmc_ic_conjunction or reduce scope")
    return float(_kernels.wmc(program, len(vars_), _formula_weights(vars_, w, slot)))


def wmc_gradient(f: Formula, w: PredictionVector, slot: int = 0) -> dict:
    """d(wmc)/d(activation) for every variable occurring in f.

    Terms not in the mapping have zero gradient.
    """
    program, vars_ = compile_formula(f)
    if len(vars_) > WMC_VARIABLE_CAP:
        raise CapacityError(
            f"{len(vars_)} variables exceed the exact-enumeration cap of "
            f"{WMC_VARIABLE_CAP}")
    grad = _kernels.wmc_gradient(program, len(vars_),
                                 _formula_weights(vars_, w, slot))
    return {t: float(g) for t, g in zip(vars_, grad)}


def _ic_components(ics: Sequence[IntegrityConstraint]):
    """Group ICs into connected components by shared variables."""
    parent = list(range(len(ics)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    by_var = {}
    for i, ic in enumerate(ics):
        for term in ic.terms():
            j = by_var.setdefault(term, i)
            ra, rb = find(i), find(j)
            if ra != rb:
                parent[ra] = rb
    groups = {}
    for i in range(len(ics)):
        groups.setdefault(find(i), []).append(i)
    return list(groups.values())


def _component_violation(ics, indices, w, slot, want_gradient):
    """P(any IC in the component is violated) by inclusion-exclusion.

    Returns (probability, gradient dict or None).  Enumerates subsets
    depth-first, carrying the product over the subset's distinct variables.
    """
    term_w = {}
    for i in indices:
        for t in ics[i].terms():
            term_w.setdefault(t, w.activation(slot, t))

    total = 0.0
    grad = {t: 0.0 for t in term_w} if want_gradient else None
    counts = {}
    active = []  # distinct vars of the current subset, in add order

    def leaf(size, prod):
        nonlocal total
        sign = 1.0 if size % 2 == 1 else -1.0
        total += sign * prod
        if grad is not None:
            m = len(active)
            left = [1.0] * (m + 1)
            for k in range(m):
                left[k + 1] = left[k] * term_w[active[k]]
            right = 1.0
            for k in range(m - 1, -1, -1):
                grad[active[k]] += sign * left[k] * right
                right *= term_w[active[k]]

    def recurse(pos, size, prod):
        if pos == len(indices):
            if size > 0:
                leaf(size, prod)
            return
        # exclude ics[indices[pos]]
        recurse(pos + 1, size, prod)
        # include it
        added = []
        new_prod = prod
        for t in ics[indices[pos]].terms():
            if counts.get(t, 0) == 0:
                active.append(t)
                added.append(t)
                new_prod *= term_w[t]
            counts[t] = counts.get(t, 0) + 1
        recurse(pos + 1, size + 1, new_prod)
        for t in ics[indices[pos]].terms():
            counts[t] -= 1
        for _ in added:
            active.pop()

    recurse(0, 0, 1.0)
    return total, grad


def wmc_ic_conjunction(ics: Sequence[IntegrityConstraint],
                       w: PredictionVector, slot: int = 0,
                       _want_gradient: bool = False):
    """P(every IC in the list holds) without expanding the conjunction.

    Factorizes over variable-sharing components (independent Bernoullis)
    and runs inclusion-exclusion within each; pairwise-disjoint ICs reduce
    to the product of per-IC probabilities.
    """
    ics = list(ics)
    if not ics:
        raise ContractError("wmc_ic_conjunction requires at least one IC")
    if len(ics) > IC_CONJUNCTION_CAP:
        raise CapacityError(
            f"{len(ics)} ICs exceed the conjunction cap of {IC_CONJUNCTION_CAP}")
    comp_values = []
    comp_grads = []
    for indices in _ic_components(ics):
        union_p, union_g = _component_violation(ics, indices, w, slot,
                                                _want_gradient)
        comp_values.append(1.0 - union_p)
        if _want_gradient:
            comp_grads.append({t: -g for t, g in union_g.items()})
    prob = 1.0
    for v in comp_values:
        prob *= v
    if not _want_gradient:
        return prob
    # gradient of the product over components: scale each component's
    # gradient by the product of the other components' values
    m = len(comp_values)
    left = [1.0] * (m + 1)
    for k in range(m):
        left[k + 1] = left[k] * comp_values[k]
    grad = {}
    right = 1.0
    for k in range(m - 1, -1, -1):
        scale = left[k] * right
        for t, g in comp_grads[k].items():
            grad[t] = grad.get(t, 0.0) + scale * g
        right *= comp_values[k]
    return prob, grad


def crisp_prediction(vocab: Vocabulary, truths: Iterable,
                     n_slots: int = 1) -> PredictionVector:
    """0/1 activations with the given term refs set to 1 (helper for tests
    and crisp-restriction checks)."""
    arrays = [np.zeros(vocab.n_subjects), np.zeros(vocab.n_predicates),
              np.zeros(vocab.n_objects)]
    for domain, i in truths:
        arrays[_DOMAIN_AXIS[domain]][i] = 1.0
    slot = tuple(arrays)
    return PredictionVector([slot] * n_slots)
