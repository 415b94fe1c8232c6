# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled backend for the hot kernels.

Same contract as ``_pykern``: exact weighted model counting over all
assignments, its gradient, and the lazy product-ordered scan of the
subject/predicate/object cross product.
"""

from libc.stdlib cimport free, malloc, realloc

import numpy as np

BACKEND_NAME = "cython"

OP_LOAD = 0
OP_NOT = 1
OP_AND = 2
OP_OR = 3

SCAN_ALL = 0
SCAN_MEMBER = 1
SCAN_NONMEMBER = 2


def wmc(program, n_vars, weights):
    cdef const int[::1] prog = np.ascontiguousarray(program, dtype=np.int32)
    cdef const double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef int n = n_vars
    cdef Py_ssize_t plen = prog.shape[0]
    cdef unsigned long long total = 1ULL << n
    cdef unsigned long long m
    cdef Py_ssize_t k
    cdef int op, arg, sp, i
    cdef double acc = 0.0
    cdef double weight
    cdef unsigned char* stack = <unsigned char*> malloc(plen // 2 + 2)
    if stack == NULL:
        raise MemoryError()
    try:
        for m in range(total):
            sp = 0
            for k in range(0, plen, 2):
                op = prog[k]
                arg = prog[k + 1]
                if op == OP_LOAD:
                    stack[sp] = (m >> arg) & 1
                    sp += 1
                elif op == OP_NOT:
                    stack[sp - 1] = 1 - stack[sp - 1]
                elif op == OP_AND:
                    sp -= 1
                    stack[sp - 1] = stack[sp - 1] & stack[sp]
                else:
                    sp -= 1
                    stack[sp - 1] = stack[sp - 1] | stack[sp]
            if stack[0]:
                weight = 1.0
                for i in range(n):
                    if (m >> i) & 1:
                        weight *= w[i]
                    else:
                        weight *= 1.0 - w[i]
                acc += weight
    finally:
        free(stack)
    return acc


def wmc_gradient(program, n_vars, weights):
    cdef const int[::1] prog = np.ascontiguousarray(program, dtype=np.int32)
    cdef const double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef int n = n_vars
    cdef Py_ssize_t plen = prog.shape[0]
    cdef unsigned long long total = 1ULL << n
    cdef unsigned long long m
    cdef Py_ssize_t k
    cdef int op, arg, sp, i
    grad = np.zeros(n, dtype=np.float64)
    cdef double[::1] g = grad
    cdef double suffix, others, f
    cdef unsigned char* stack = <unsigned char*> malloc(plen // 2 + 2)
    cdef double* prefix = <double*> malloc((n + 1) * sizeof(double))
    if stack == NULL or prefix == NULL:
        free(stack)
        free(prefix)
        raise MemoryError()
    try:
        for m in range(total):
            sp = 0
            for k in range(0, plen, 2):
                op = prog[k]
                arg = prog[k + 1]
                if op == OP_LOAD:
                    stack[sp] = (m >> arg) & 1
                    sp += 1
                elif op == OP_NOT:
                    stack[sp - 1] = 1 - stack[sp - 1]
                elif op == OP_AND:
                    sp -= 1
                    stack[sp - 1] = stack[sp - 1] & stack[sp]
                else:
                    sp -= 1
                    stack[sp - 1] = stack[sp - 1] | stack[sp]
            if not stack[0]:
                continue
            prefix[0] = 1.0
            for i in range(n):
                f = w[i] if (m >> i) & 1 else 1.0 - w[i]
                prefix[i + 1] = prefix[i] * f
            suffix = 1.0
            for i in range(n - 1, -1, -1):
                others = prefix[i] * suffix
                if (m >> i) & 1:
                    g[i] += others
                    suffix *= w[i]
                else:
                    g[i] -= others
                    suffix *= 1.0 - w[i]
    finally:
        free(stack)
        free(prefix)
    return grad


cdef struct Heap:
    double* prod
    long long* tie    # packed (s, p, o) ids; ascending = lexicographic
    long long* idx    # packed (i, j, l) positions in the sorted axes
    Py_ssize_t size
    Py_ssize_t cap


cdef int _heap_init(Heap* h) except -1:
    h.cap = 64
    h.size = 0
    h.prod = <double*> malloc(h.cap * sizeof(double))
    h.tie = <long long*> malloc(h.cap * sizeof(long long))
    h.idx = <long long*> malloc(h.cap * sizeof(long long))
    if h.prod == NULL or h.tie == NULL or h.idx == NULL:
        raise MemoryError()
    return 0


cdef void _heap_free(Heap* h):
    free(h.prod)
    free(h.tie)
    free(h.idx)


cdef inline bint _before(Heap* h, Py_ssize_t a, Py_ssize_t b):
    if h.prod[a] != h.prod[b]:
        return h.prod[a] > h.prod[b]
    return h.tie[a] < h.tie[b]


cdef inline void _swap(Heap* h, Py_ssize_t a, Py_ssize_t b):
    cdef double dp = h.prod[a]
    cdef long long dt = h.tie[a]
    cdef long long di = h.idx[a]
    h.prod[a] = h.prod[b]
    h.tie[a] = h.tie[b]
    h.idx[a] = h.idx[b]
    h.prod[b] = dp
    h.tie[b] = dt
    h.idx[b] = di


cdef int _heap_push(Heap* h, double prod, long long tie,
                    long long idx) except -1:
    cdef Py_ssize_t pos, parent
    if h.size == h.cap:
        h.cap *= 2
        h.prod = <double*> realloc(h.prod, h.cap * sizeof(double))
        h.tie = <long long*> realloc(h.tie, h.cap * sizeof(long long))
        h.idx = <long long*> realloc(h.idx, h.cap * sizeof(long long))
        if h.prod == NULL or h.tie == NULL or h.idx == NULL:
            raise MemoryError()
    pos = h.size
    h.prod[pos] = prod
    h.tie[pos] = tie
    h.idx[pos] = idx
    h.size += 1
    while pos > 0:
        parent = (pos - 1) >> 1
        if _before(h, pos, parent):
            _swap(h, pos, parent)
            pos = parent
        else:
            break
    return 0


cdef void _heap_pop(Heap* h):
    cdef Py_ssize_t pos = 0
    cdef Py_ssize_t child
    h.size -= 1
    if h.size == 0:
        return
    _swap(h, 0, h.size)
    while True:
        child = 2 * pos + 1
        if child >= h.size:
            break
        if child + 1 < h.size and _before(h, child + 1, child):
            child += 1
        if _before(h, child, pos):
            _swap(h, pos, child)
            pos = child
        else:
            break


def scan_select(s_ids, s_vals, p_ids, p_vals, o_ids, o_vals,
                keys, negate, mode, budget, n_predicates, n_objects):
    """Walk the product-ordered stream collecting up to ``budget`` facts
    (see the pure-Python backend for the mode semantics)."""
    cdef const long long[::1] si = np.ascontiguousarray(s_ids, dtype=np.int64)
    cdef const long long[::1] pi = np.ascontiguousarray(p_ids, dtype=np.int64)
    cdef const long long[::1] oi = np.ascontiguousarray(o_ids, dtype=np.int64)
    cdef const double[::1] sv = np.ascontiguousarray(s_vals, dtype=np.float64)
    cdef const double[::1] pv = np.ascontiguousarray(p_vals, dtype=np.float64)
    cdef const double[::1] ov = np.ascontiguousarray(o_vals, dtype=np.float64)
    cdef long long ns = si.shape[0]
    cdef long long np_ = pi.shape[0]
    cdef long long no = oi.shape[0]
    collected = []
    cdef long long n_scanned = 0
    if ns == 0 or np_ == 0 or no == 0 or budget <= 0:
        return collected, n_scanned

    cdef int cmode = mode
    cdef bint cnegate = negate
    cdef long long member_np = n_predicates
    cdef long long member_no = n_objects
    cdef Heap heap
    cdef long long i, j, l, s, p, o, tie, idx, sid, pid, oid
    cdef double prod
    cdef bint member, take, zero_tail = False
    visited = set()
    emitted = set()

    _heap_init(&heap)
    try:
        prod = (sv[0] * pv[0]) * ov[0]
        tie = (si[0] * np_ + pi[0]) * no + oi[0]
        _heap_push(&heap, prod, tie, 0)
        visited.add(0)
        while heap.size > 0:
            prod = heap.prod[0]
            tie = heap.tie[0]
            idx = heap.idx[0]
            _heap_pop(&heap)
            if prod == 0.0:
                zero_tail = True
                break
            l = idx % no
            j = (idx // no) % np_
            i = idx // (no * np_)
            o = tie % no
            p = (tie // no) % np_
            s = tie // (no * np_)
            n_scanned += 1
            emitted.add(tie)
            if cmode == SCAN_ALL:
                take = True
            else:
                member = ((s * member_np + p) * member_no + o) in keys
                if cnegate:
                    member = not member
                take = member if cmode == SCAN_MEMBER else not member
            if take:
                collected.append((s, p, o, prod))
                if len(collected) >= budget:
                    return collected, n_scanned
            if i + 1 < ns:
                idx = ((i + 1) * np_ + j) * no + l
                if idx not in visited:
                    visited.add(idx)
                    _heap_push(&heap, (sv[i + 1] * pv[j]) * ov[l],
                               (si[i + 1] * np_ + pi[j]) * no + oi[l], idx)
            if j + 1 < np_:
                idx = (i * np_ + (j + 1)) * no + l
                if idx not in visited:
                    visited.add(idx)
                    _heap_push(&heap, (sv[i] * pv[j + 1]) * ov[l],
                               (si[i] * np_ + pi[j + 1]) * no + oi[l], idx)
            if l + 1 < no:
                idx = (i * np_ + j) * no + (l + 1)
                if idx not in visited:
                    visited.add(idx)
                    _heap_push(&heap, (sv[i] * pv[j]) * ov[l + 1],
                               (si[i] * np_ + pi[j]) * no + oi[l + 1], idx)
    finally:
        _heap_free(&heap)

    if not zero_tail:
        return collected, n_scanned
    # zero tail: every remaining product is 0; emit by ascending id
    for sid in range(ns):
        for pid in range(np_):
            for oid in range(no):
                tie = (sid * np_ + pid) * no + oid
                if tie in emitted:
                    continue
                n_scanned += 1
                if cmode == SCAN_ALL:
                    take = True
                else:
                    member = ((sid * member_np + pid) * member_no
                              + oid) in keys
                    if cnegate:
                        member = not member
                    take = member if cmode == SCAN_MEMBER else not member
                if take:
                    collected.append((sid, pid, oid, 0.0))
                    if len(collected) >= budget:
                        return collected, n_scanned
    return collected, n_scanned
