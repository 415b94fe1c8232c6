"""Pure-Python/numpy backend for the hot kernels.

Mirrors the compiled backend in ``_ckern.pyx``: exact weighted model
counting by assignment enumeration, its gradient, and the lazy
product-ordered scan over the subject/predicate/object cross product.
"""

import heapq

import numpy as np

BACKEND_NAME = "python"

# postfix program opcodes (shared with the compiled backend)
OP_LOAD = 0
OP_NOT = 1
OP_AND = 2
OP_OR = 3

# scan collection modes
SCAN_ALL = 0
SCAN_MEMBER = 1
SCAN_NONMEMBER = 2

_CHUNK = 1 << 16


def _assignment_bits(base, count, n_vars):
    rows = np.arange(base, base + count, dtype=np.int64)
    return ((rows[:, None] >> np.arange(n_vars, dtype=np.int64)) & 1).astype(bool)


def _eval_program(program, bits):
    """Evaluate the postfix program on a batch of assignments."""
    stack = []
    for k in range(0, len(program), 2):
        op = program[k]
        arg = program[k + 1]
        if op == OP_LOAD:
            stack.append(bits[:, arg])
        elif op == OP_NOT:
            stack[-1] = ~stack[-1]
        elif op == OP_AND:
            b = stack.pop()
            stack[-1] = stack[-1] & b
        elif op == OP_OR:
            b = stack.pop()
            stack[-1] = stack[-1] | b
        else:
            raise ValueError(f"bad opcode {op}")
    if len(stack) != 1:
        raise ValueError("malformed program")
    return stack[0]


def wmc(program, n_vars, weights):
    """Sum of product weights over all satisfying assignments."""
    program = np.asarray(program, dtype=np.int32)
    weights = np.asarray(weights, dtype=np.float64)
    total = 0.0
    n_rows = 1 << n_vars
    for base in range(0, n_rows, _CHUNK):
        count = min(_CHUNK, n_rows - base)
        bits = _assignment_bits(base, count, n_vars)
        mask = _eval_program(program, bits)
        if not mask.any():
            continue
        factors = np.where(bits[mask], weights, 1.0 - weights)
        total += float(factors.prod(axis=1).sum())
    return total


def wmc_gradient(program, n_vars, weights):
    """d(wmc)/d(weights): per-variable products over the other factors."""
    program = np.asarray(program, dtype=np.int32)
    weights = np.asarray(weights, dtype=np.float64)
    grad = np.zeros(n_vars, dtype=np.float64)
    n_rows = 1 << n_vars
    for base in range(0, n_rows, _CHUNK):
        count = min(_CHUNK, n_rows - base)
        bits = _assignment_bits(base, count, n_vars)
        mask = _eval_program(program, bits)
        if not mask.any():
            continue
        b = bits[mask]
        factors = np.where(b, weights, 1.0 - weights)
        left = np.ones_like(factors)
        if n_vars > 1:
            left[:, 1:] = np.cumprod(factors[:, :-1], axis=1)
        right = np.ones_like(factors)
        if n_vars > 1:
            right[:, :-1] = np.cumprod(factors[:, ::-1], axis=1)[:, ::-1][:, 1:]
        sign = np.where(b, 1.0, -1.0)
        grad += (left * right * sign).sum(axis=0)
    return grad


def product_stream(s_ids, s_vals, p_ids, p_vals, o_ids, o_vals):
    """Yield (s_id, p_id, o_id, product) over the full cross product in
    nonincreasing product order, ties broken by ascending (s, p, o) ids.

    The inputs are each domain's term ids and activations sorted by
    (-activation, id).  The frontier is expanded lazily through a heap, so
    taking the first k items touches O(k) entries, never the full product.
    Once the largest remaining product is exactly zero the heap degenerates
    (every remaining product ties at 0), so the tail is enumerated directly
    in id order.
    """
    ns, np_, no = len(s_ids), len(p_ids), len(o_ids)
    if ns == 0 or np_ == 0 or no == 0:
        return
    seen = set()
    emitted = set()

    def entry(i, j, l):
        prod = (float(s_vals[i]) * float(p_vals[j])) * float(o_vals[l])
        return (-prod, int(s_ids[i]), int(p_ids[j]), int(o_ids[l]), i, j, l)

    heap = [entry(0, 0, 0)]
    seen.add((0, 0, 0))
    while heap:
        negprod, s, p, o, i, j, l = heapq.heappop(heap)
        if negprod == 0.0:
            # zero tail: every remaining product is 0; emit by ascending id
            for sid in range(ns):
                for pid in range(np_):
                    for oid in range(no):
                        if (sid, pid, oid) not in emitted:
                            yield sid, pid, oid, 0.0
            return
        emitted.add((s, p, o))
        yield s, p, o, -negprod
        if i + 1 < ns and (i + 1, j, l) not in seen:
            seen.add((i + 1, j, l))
            heapq.heappush(heap, entry(i + 1, j, l))
        if j + 1 < np_ and (i, j + 1, l) not in seen:
            seen.add((i, j + 1, l))
            heapq.heappush(heap, entry(i, j + 1, l))
        if l + 1 < no and (i, j, l + 1) not in seen:
            seen.add((i, j, l + 1))
            heapq.heappush(heap, entry(i, j, l + 1))


def scan_select(s_ids, s_vals, p_ids, p_vals, o_ids, o_vals,
                keys, negate, mode, budget, n_predicates, n_objects):
    """Walk the product-ordered stream collecting up to ``budget`` facts.

    mode SCAN_ALL collects every fact; SCAN_MEMBER collects facts whose
    packed key is in the store (complement stores flip the test via
    ``negate``); SCAN_NONMEMBER collects the facts that are not.
    Returns (collected, n_scanned).
    """
    collected = []
    n_scanned = 0
    for s, p, o, prod in product_stream(s_ids, s_vals, p_ids, p_vals,
                                        o_ids, o_vals):
        n_scanned += 1
        if mode == SCAN_ALL:
            take = True
        else:
            member = ((s * n_predicates + p) * n_objects + o) in keys
            if negate:
                member = not member
            take = member if mode == SCAN_MEMBER else not member
        if take:
            collected.append((s, p, o, prod))
            if len(collected) >= budget:
                break
    return collected, n_scanned
