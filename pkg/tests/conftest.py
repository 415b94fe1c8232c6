import numpy as np
import pytest

from ngpkit.logic import PredictionVector, Vocabulary
from ngpkit.theory import build_explicit


@pytest.fixture
def running_example():
    """The horse/drinks/eye triple with both crisp and 0.5 activations."""
    vocab = Vocabulary(["horse"], ["drinks"], ["eye"])
    half = PredictionVector([(np.array([0.5]), np.array([0.5]),
                              np.array([0.5]))])
    ones = PredictionVector([(np.array([1.0]), np.array([1.0]),
                              np.array([1.0]))])
    return vocab, half, ones


@pytest.fixture
def scene_example():
    """Seven forbidden triples and six scored facts, one slot per fact.

    Each slot hosts one of the six likeliest predictions: the host terms
    sit at activation 1 (the predicate carries the likelihood) and every
    other term at 0.001, so the merged stream ranks exactly the six hosted
    facts first.
    """
    vocab = Vocabulary(
        ["horse", "person", "tail", "hat"],
        ["drinks", "wearing", "of", "eats", "made_of", "looking_at"],
        ["eye", "person", "jacket", "horse", "tail", "hat"],
    )
    forbidden = [vocab.fact(*t) for t in [
        ("horse", "drinks", "eye"),
        ("horse", "wearing", "person"),
        ("tail", "of", "person"),
        ("person", "eats", "jacket"),
        ("tail", "made_of", "horse"),
        ("person", "made_of", "jacket"),
        ("hat", "of", "horse"),
    ]]
    store = build_explicit(vocab, forbidden)
    ranked = [
        ("tail", "of", "horse", 0.34),
        ("horse", "wearing", "person", 0.27),
        ("person", "looking_at", "tail", 0.26),
        ("person", "made_of", "jacket", 0.24),
        ("person", "wearing", "hat", 0.19),
        ("tail", "made_of", "horse", 0.19),
    ]
    slots = []
    for s, p, o, likelihood in ranked:
        sa = np.full(vocab.n_subjects, 0.001)
        pa = np.full(vocab.n_predicates, 0.001)
        oa = np.full(vocab.n_objects, 0.001)
        sa[vocab.id_of("s", s)] = 1.0
        pa[vocab.id_of("p", p)] = likelihood
        oa[vocab.id_of("o", o)] = 1.0
        slots.append((sa, pa, oa))
    w = PredictionVector(slots)
    return vocab, store, w, ranked
