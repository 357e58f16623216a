# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled stop-ordering search; mirrors _vrp_py.solve_stop_order bit for bit."""

from libc.string cimport memcpy

DEF MAX_STOPS = 32


cdef struct SearchCtx:
    int n
    long long capacity
    long long kind[MAX_STOPS]
    long long ready[MAX_STOPS]
    long long deadline[MAX_STOPS]
    long long has_cost[MAX_STOPS]
    long long ideal[MAX_STOPS]
    int partner[MAX_STOPS]
    long long tt[(MAX_STOPS + 1) * (MAX_STOPS + 1)]
    long long best_cost
    bint found
    int best_order[MAX_STOPS]
    int order[MAX_STOPS]


cdef void _search(
    SearchCtx* ctx,
    int depth,
    int cur,
    long long time_now,
    long long occ,
    long long cost,
    unsigned int placed,
) noexcept nogil:
    cdef int n = ctx.n
    cdef int stride = n + 1
    cdef int s, t2, ps
    cdef long long arrive, service, c2, a2, occ2
    cdef bint feasible_rest
    if depth == n:
        ctx.best_cost = cost
        memcpy(ctx.best_order, ctx.order, n * sizeof(int))
        ctx.found = True
        return
    for s in range(n):
        if placed & (1u << s):
            continue
        if ctx.kind[s] == 1:
            ps = ctx.partner[s]
            if ps >= 0 and not (placed >> ps) & 1u:
                continue
            occ2 = occ - 1
        else:
            occ2 = occ + 1
            if occ2 > ctx.capacity:
                continue
        arrive = time_now + ctx.tt[cur * stride + s + 1]
        service = arrive if arrive >= ctx.ready[s] else ctx.ready[s]
        if service > ctx.deadline[s]:
            continue
        c2 = cost
        if ctx.has_cost[s]:
            c2 += service - ctx.ideal[s]
        if ctx.found and c2 >= ctx.best_cost:
            continue
        feasible_rest = True
        for t2 in range(n):
            if t2 == s or (placed >> t2) & 1u:
                continue
            a2 = service + ctx.tt[(s + 1) * stride + t2 + 1]
            if a2 < ctx.ready[t2]:
                a2 = ctx.ready[t2]
            if a2 > ctx.deadline[t2]:
                feasible_rest = False
                break
        if not feasible_rest:
            continue
        ctx.order[depth] = s
        _search(ctx, depth + 1, s + 1, service, occ2, c2, placed | (1u << s))


def solve_stop_order(
    int n,
    kind,
    ready,
    deadline,
    has_cost,
    ideal,
    partner,
    tt,
    long long start_time,
    long long onboard0,
    long long capacity,
):
    if n == 0:
        return True, 0, []
    if n > MAX_STOPS:
        raise ValueError(f"too many stops: {n} > {MAX_STOPS}")
    cdef SearchCtx ctx
    cdef int i, j
    cdef int stride = n + 1
    ctx.n = n
    ctx.capacity = capacity
    ctx.found = False
    ctx.best_cost = 0
    for i in range(n):
        ctx.kind[i] = kind[i]
        ctx.ready[i] = ready[i]
        ctx.deadline[i] = deadline[i]
        ctx.has_cost[i] = has_cost[i]
        ctx.ideal[i] = ideal[i]
        ctx.partner[i] = partner[i]
    for i in range(stride):
        row = tt[i]
        for j in range(stride):
            ctx.tt[i * stride + j] = row[j]
    with nogil:
        _search(&ctx, 0, 0, start_time, onboard0, 0, 0)
    if not ctx.found:
        return False, 0, []
    return True, ctx.best_cost, [ctx.best_order[i] for i in range(n)]
