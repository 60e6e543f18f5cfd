# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
# distutils: language = c++
"""Compiled A* kernel. Mirrors ``_astar_py.astar`` exactly (keys, order, ties)."""

from libc.math cimport INFINITY
from libc.stdlib cimport labs
from libcpp.queue cimport priority_queue
from libcpp.utility cimport pair
from libcpp.vector cimport vector


def astar(sources, long target, const double[::1] entry, const unsigned char[::1] blocked,
          long L, long R, long C, double base, double wrong_way, double via):
    cdef long n = L * R * C
    cdef long RC = R * C
    cdef long tl = target // RC
    cdef long tr = (target % RC) // C
    cdef long tc = target % C
    cdef double planar_h = base
    cdef double via_step = base + via
    cdef double via_h = via_step
    cdef vector[double] g = vector[double](n, INFINITY)
    cdef vector[long] parent = vector[long](n, -1)
    cdef vector[char] closed = vector[char](n, 0)
    # max-heap on (-f, -node) pops the smallest (f, node), like heapq
    cdef priority_queue[pair[double, long]] heap
    cdef long s, sl, sr, sc, u, ul, ur, uc, v, vl, vr, vc, k
    cdef double h, gu, ng, step
    cdef bint horizontal

    for obj in sources:
        s = obj
        if g[s] == 0.0:
            continue
        g[s] = 0.0
        sl = s // RC
        sr = (s % RC) // C
        sc = s % C
        h = planar_h * (labs(sr - tr) + labs(sc - tc)) + via_h * labs(sl - tl)
        heap.push(pair[double, long](-h, -s))

    while not heap.empty():
        u = -heap.top().second
        heap.pop()
        if closed[u]:
            continue
        closed[u] = 1
        if u == target:
            path = [u]
            v = u
            while parent[v] != -1:
                v = parent[v]
                path.append(v)
            path.reverse()
            return path, g[u]
        gu = g[u]
        ul = u // RC
        ur = (u % RC) // C
        uc = u % C
        horizontal = ul % 2 == 0
        for k in range(6):
            vl = ul
            vr = ur
            vc = uc
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
                h = planar_h * (labs(vr - tr) + labs(vc - tc)) + via_h * labs(vl - tl)
                heap.push(pair[double, long](-(ng + h), -v))
    return [], INFINITY
