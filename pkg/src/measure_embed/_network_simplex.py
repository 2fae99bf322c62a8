"""Exact network simplex kernel for the dense transportation problem.

Minimizes sum_ij C[i,j] f[i,j] over couplings with prescribed row sums a and
column sums b. The kernel keeps a spanning-tree basis, prices arcs with duals
recomputed from scratch each pivot, and picks entering arcs by block search
with a wrap-around cursor. Degenerate stalls switch it to Bland's rule, which
rules out cycling. Pivot ties are broken by the lowest flat arc id i*n2+j, so
the solve is deterministic for a given input.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


@njit(cache=True, nogil=True)
def _solve_kernel(C, a, b, max_pivots):  # pragma: no cover - compiled
    n1 = C.shape[0]
    n2 = C.shape[1]
    n = n1 + n2
    nb = n - 1
    total = n1 * n2

    basis_i = np.empty(nb, dtype=np.int64)
    basis_j = np.empty(nb, dtype=np.int64)
    basis_f = np.empty(nb, dtype=np.float64)

    # Northwest-corner start: each step records one arc then advances one
    # index, which yields exactly n1+n2-1 arcs forming a spanning tree.
    ra = a.copy()
    rb = b.copy()
    i = 0
    j = 0
    for t in range(nb):
        basis_i[t] = i
        basis_j[t] = j
        f = ra[i] if ra[i] < rb[j] else rb[j]
        basis_f[t] = f
        ra[i] -= f
        rb[j] -= f
        if ra[i] <= rb[j] and i < n1 - 1:
            i += 1
        elif j < n2 - 1:
            j += 1
        else:
            i += 1

    parent = np.empty(n, dtype=np.int64)
    parent_arc = np.empty(n, dtype=np.int64)
    depth = np.empty(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    pu = np.empty(n1, dtype=np.float64)
    pv = np.empty(n2, dtype=np.float64)

    deg = np.empty(n, dtype=np.int64)
    offs = np.empty(n + 1, dtype=np.int64)
    adj_node = np.empty(2 * nb, dtype=np.int64)
    adj_arc = np.empty(2 * nb, dtype=np.int64)

    cyc_arc = np.empty(n, dtype=np.int64)
    cyc_sign = np.empty(n, dtype=np.int64)

    cscale = 0.0
    for p in range(n1):
        for q in range(n2):
            c = abs(C[p, q])
            if c > cscale:
                cscale = c
    enter_tol = 1e-11 * (cscale if cscale > 1.0 else 1.0)

    block = int(np.sqrt(total)) + 1
    if block < 8:
        block = 8
    if block > total:
        block = total
    cursor = 0
    degen_streak = 0
    bland = False
    pivots = 0
    status = 0

    while True:
        # rebuild CSR adjacency over the basic arcs
        for u in range(n):
            deg[u] = 0
        for t in range(nb):
            deg[basis_i[t]] += 1
            deg[n1 + basis_j[t]] += 1
        offs[0] = 0
        for u in range(n):
            offs[u + 1] = offs[u] + deg[u]
            deg[u] = 0
        for t in range(nb):
            u = basis_i[t]
            v = n1 + basis_j[t]
            adj_node[offs[u] + deg[u]] = v
            adj_arc[offs[u] + deg[u]] = t
            deg[u] += 1
            adj_node[offs[v] + deg[v]] = u
            adj_arc[offs[v] + deg[v]] = t
            deg[v] += 1

        # BFS from node 0 to root the tree
        for u in range(n):
            parent[u] = -2
        parent[0] = -1
        parent_arc[0] = -1
        depth[0] = 0
        queue[0] = 0
        visited = 1
        head = 0
        while head < visited:
            u = queue[head]
            head += 1
            for idx in range(offs[u], offs[u + 1]):
                v = adj_node[idx]
                if parent[v] == -2:
                    parent[v] = u
                    parent_arc[v] = adj_arc[idx]
                    depth[v] = depth[u] + 1
                    queue[visited] = v
                    visited += 1

        # duals: pu[i] + pv[j] = C[i,j] on basic arcs, anchored at pu[0] = 0
        pu[0] = 0.0
        for k in range(1, visited):
            u = queue[k]
            t = parent_arc[u]
            ii = basis_i[t]
            jj = basis_j[t]
            if u < n1:
                pu[u] = C[ii, jj] - pv[jj]
            else:
                pv[u - n1] = C[ii, jj] - pu[ii]

        # entering arc
        enter = -1
        if bland:
            for e in range(total):
                rc = C[e // n2, e % n2] - pu[e // n2] - pv[e % n2]
                if rc < -enter_tol:
                    enter = e
                    break
        else:
            best_rc = -enter_tol
            scanned = 0
            while scanned < total:
                end = cursor + block
                if end > total:
                    end = total
                for e in range(cursor, end):
                    ei = e // n2
                    ej = e % n2
                    rc = C[ei, ej] - pu[ei] - pv[ej]
                    if rc < best_rc:
                        best_rc = rc
                        enter = e
                scanned += end - cursor
                cursor = end
                if cursor >= total:
                    cursor = 0
                if enter >= 0:
                    break
        if enter < 0:
            break  # no improving arc: optimal

        ei = enter // n2
        ej = enter % n2
        u = ei
        v = n1 + ej

        # lowest common ancestor of the entering arc's endpoints
        uu = u
        vv = v
        while depth[uu] > depth[vv]:
            uu = parent[uu]
        while depth[vv] > depth[uu]:
            vv = parent[vv]
        while uu != vv:
            uu = parent[uu]
            vv = parent[vv]
        lca = uu

        # stepping-stone cycle: arcs up from each endpoint alternate -,+,...
        ncyc = 0
        node = u
        sign = -1
        while node != lca:
            cyc_arc[ncyc] = parent_arc[node]
            cyc_sign[ncyc] = sign
            ncyc += 1
            sign = -sign
            node = parent[node]
        node = v
        sign = -1
        while node != lca:
            cyc_arc[ncyc] = parent_arc[node]
            cyc_sign[ncyc] = sign
            ncyc += 1
            sign = -sign
            node = parent[node]

        theta = np.inf
        leave_slot = -1
        leave_id = -1
        for t in range(ncyc):
            if cyc_sign[t] < 0:
                slot = cyc_arc[t]
                f = basis_f[slot]
                aid = basis_i[slot] * n2 + basis_j[slot]
                if f < theta or (f == theta and aid < leave_id):
                    theta = f
                    leave_slot = slot
                    leave_id = aid

        for t in range(ncyc):
            slot = cyc_arc[t]
            if cyc_sign[t] < 0:
                basis_f[slot] -= theta
                if basis_f[slot] < 0.0:
                    basis_f[slot] = 0.0
            else:
                basis_f[slot] += theta

        basis_i[leave_slot] = ei
        basis_j[leave_slot] = ej
        basis_f[leave_slot] = theta

        if theta <= 0.0:
            degen_streak += 1
            if degen_streak > 64 + 4 * n:
                bland = True
        else:
            degen_streak = 0

        pivots += 1
        if pivots >= max_pivots:
            status = 1
            break

    return basis_i, basis_j, basis_f, status


def solve_transport(C, a, b, max_pivots=None):
    """Solve the dense transportation problem to optimality.

    Returns (rows, cols, flows) for the n1+n2-1 basic arcs of the optimal
    spanning-tree solution; flows on degenerate arcs are zero.
    """
    C = np.ascontiguousarray(C, dtype=np.float64)
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    n1, n2 = C.shape
    if a.shape[0] != n1 or b.shape[0] != n2:
        raise ValueError("marginal lengths do not match the cost matrix")
    if max_pivots is None:
        max_pivots = 200 * (n1 + n2) + 1000
    bi, bj, bf, status = _solve_kernel(C, a, b, max_pivots)
    if status != 0:
        raise RuntimeError("transport solver hit its pivot limit")
    return bi, bj, bf
