"""Pure-Python stop-ordering search (fallback kernel).

Exhaustive depth-first search over all admissible stop orderings for one
vehicle: pickups precede their dropoffs, running occupancy stays within
capacity, every stop is served by its deadline. Returns the minimum-delay
ordering; ties resolve to the first ordering in index order, so stops must be
passed pre-sorted by the caller's tie-break key.

The compiled kernel in _vrp_c.pyx implements the identical search and must
return bit-identical results.
"""

INF_TIME = 1 << 40


def solve_stop_order(
    n,
    kind,        # 0 = pickup, 1 = dropoff
    ready,       # earliest service time (0 where unconstrained)
    deadline,
    has_cost,    # 1 where (service - ideal) counts toward the objective
    ideal,
    partner,     # dropoffs: index of the pickup that must precede, -1 if none
    tt,          # (n+1) x (n+1) travel times; row/col 0 is the start position
    start_time,
    onboard0,
    capacity,
):
    if n == 0:
        return True, 0, []
    best_cost = -1
    best_order = None
    order = [0] * n

    def search(depth, cur, time_now, occ, cost, placed):
        nonlocal best_cost, best_order
        if depth == n:
            best_cost = cost
            best_order = order.copy()
            return
        row = tt[cur]
        for s in range(n):
            bit = 1 << s
            if placed & bit:
                continue
            if kind[s] == 1:
                ps = partner[s]
                if ps >= 0 and not (placed >> ps) & 1:
                    continue
                occ2 = occ - 1
            else:
                occ2 = occ + 1
                if occ2 > capacity:
                    continue
            arrive = time_now + row[s + 1]
            service = arrive if arrive >= ready[s] else ready[s]
            if service > deadline[s]:
                continue
            c2 = cost + (service - ideal[s] if has_cost[s] else 0)
            if 0 <= best_cost <= c2:
                continue
            # every remaining stop must still be directly reachable in time
            row_s = tt[s + 1]
            feasible_rest = True
            for t2 in range(n):
                if t2 == s or (placed >> t2) & 1:
                    continue
                a2 = service + row_s[t2 + 1]
                if a2 < ready[t2]:
                    a2 = ready[t2]
                if a2 > deadline[t2]:
                    feasible_rest = False
                    break
            if not feasible_rest:
                continue
            order[depth] = s
            search(depth + 1, s + 1, service, occ2, c2, placed | bit)

    search(0, 0, start_time, onboard0, 0, 0)
    if best_order is None:
        return False, 0, []
    return True, best_cost, best_order
