"""Pure-Python A* kernel. Used when the compiled extension is unavailable.

Must stay step-for-step identical to ``_astar_ext.pyx``: same heap key
``(f, node)``, same strict-improvement relaxation, same neighbor order.
"""

import heapq
import math


def astar(sources, target, entry, blocked, L, R, C, base, wrong_way, via):
    """Cheapest path from any node in ``sources`` to ``target`` on the flat grid.

    Returns ``(path, cost)`` with ``path`` running source -> target, or
    ``([], inf)`` when the target cannot be reached.
    """
    n = L * R * C
    RC = R * C
    tl, trc = divmod(target, RC)
    tr, tc = divmod(trc, C)
    planar_h = base
    via_step = base + via
    via_h = via_step
    g = [math.inf] * n
    parent = [-1] * n
    closed = bytearray(n)
    heap = []
    for s in sources:
        s = int(s)
        if g[s] == 0.0:
            continue
        g[s] = 0.0
        sl, src = divmod(s, RC)
        sr, sc = divmod(src, C)
        h = planar_h * (abs(sr - tr) + abs(sc - tc)) + via_h * abs(sl - tl)
        heapq.heappush(heap, (h, s))

    while heap:
        _, u = heapq.heappop(heap)
        if closed[u]:
            continue
        closed[u] = 1
        if u == target:
            path = [u]
            while parent[path[-1]] != -1:
                path.append(parent[path[-1]])
            path.reverse()
            return path, g[u]
        gu = g[u]
        ul, urc = divmod(u, RC)
        ur, uc = divmod(urc, C)
        horizontal = ul % 2 == 0
        for k in range(6):
            vl, vr, vc = ul, ur, uc
            if k == 0:
                if ur == 0:
                    continue
                vr = ur - 1
            elif k == 1:
                if ur == R - 1:
                    continue
                vr = ur + 1
            elif k == 2:
                if uc == 0:
                    continue
                vc = uc - 1
            elif k == 3:
                if uc == C - 1:
                    continue
                vc = uc + 1
            elif k == 4:
                if ul == 0:
                    continue
                vl = ul - 1
            else:
                if ul == L - 1:
                    continue
                vl = ul + 1
            v = vl * RC + vr * C + vc
            if blocked[v] or closed[v]:
                continue
            if k >= 4:
                step = via_step
            elif (k < 2) == horizontal:
                step = base * wrong_way
            else:
                step = base
            ng = gu + (step + entry[v])
            if ng < g[v]:
                g[v] = ng
                parent[v] = u
                h = planar_h * (abs(vr - tr) + abs(vc - tc)) + via_h * abs(vl - tl)
                heapq.heappush(heap, (ng + h, v))
    return [], math.inf
