"""Linear resistive network solver used to extract effective crossbar operators.

A network is a list of two-terminal conductances between named nodes plus a
set of *fixed* nodes whose potential is imposed (sources and grounds).
Zero-resistance links merge nodes before assembly, so ideal wiring is handled
exactly rather than through huge conductances.
"""
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import NumericError


class _UnionFind:
    def __init__(self, n):
        self.parent = np.arange(n)

    def find(self, a):
        p = self.parent
        root = a
        while p[root] != root:
            root = p[root]
        while p[a] != root:
            p[a], a = root, p[a]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


class ResistiveNetwork:
    """Nodes are integers ``0..n_nodes-1``.

    ``a``, ``b``, ``g`` are arrays of branch endpoints and conductances; a
    conductance of ``inf`` is a short. ``fixed`` lists node ids with imposed
    potentials (their values are supplied per solve).
    """

    def __init__(self, n_nodes, a, b, g, fixed, label="network"):
        self.n_nodes = int(n_nodes)
        a, b, g = np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64), np.asarray(g, dtype=np.float64)
        self.label = label
        self.fixed = np.asarray(fixed, dtype=np.int64)

        shorts = np.isinf(g)
        if shorts.any():
            uf = _UnionFind(self.n_nodes)
            for u, v in zip(a[shorts], b[shorts]):
                uf.union(u, v)
            roots = np.array([uf.find(i) for i in range(self.n_nodes)])
        else:
            roots = np.arange(self.n_nodes)
        # fixed nodes must stay separate groups so each keeps its own potential
        fixed_roots = roots[self.fixed]
        if len(np.unique(fixed_roots)) != len(fixed_roots):
            raise NumericError(f"{label}: two fixed nodes are shorted together")
        self.group = roots

        keep = ~shorts & (g > 0)
        ga, gb, gg = roots[a[keep]], roots[b[keep]], g[keep]
        internal = ga != gb
        self.branch_a, self.branch_b, self.branch_g = ga[internal], gb[internal], gg[internal]

        is_fixed = np.zeros(self.n_nodes, dtype=bool)
        is_fixed[fixed_roots] = True
        uniq = np.unique(roots)
        free = uniq[~is_fixed[uniq]]
        self.free_index = -np.ones(self.n_nodes, dtype=np.int64)
        self.free_index[free] = np.arange(len(free))
        self.fixed_index = -np.ones(self.n_nodes, dtype=np.int64)
        self.fixed_index[fixed_roots] = np.arange(len(fixed_roots))
        self.n_free = len(free)
        self._assemble()

    def _assemble(self):
        fa, fb = self.free_index[self.branch_a], self.free_index[self.branch_b]
        g = self.branch_g
        n, m = self.n_free, len(self.fixed)
        # free-free block of the nodal conductance matrix
        both = (fa >= 0) & (fb >= 0)
        rows = np.concatenate([fa[both], fb[both], fa[fa >= 0], fb[fb >= 0]])
        cols = np.concatenate([fb[both], fa[both], fa[fa >= 0], fb[fb >= 0]])
        vals = np.concatenate([-g[both], -g[both], g[fa >= 0], g[fb >= 0]])
        self.A = sp.csc_matrix((vals, (rows, cols)), shape=(n, n))
        # coupling from fixed potentials into free-node equations
        xa, xb = self.fixed_index[self.branch_a], self.fixed_index[self.branch_b]
        s1 = (fa >= 0) & (xb >= 0)
        s2 = (fb >= 0) & (xa >= 0)
        rows = np.concatenate([fa[s1], fb[s2]])
        cols = np.concatenate([xb[s1], xa[s2]])
        vals = np.concatenate([g[s1], g[s2]])
        self.B = sp.csr_matrix((vals, (rows, cols)), shape=(n, m))
        self._lu = None

    def _factor(self):
        if self._lu is None and self.n_free:
            try:
                self._lu = spla.splu(self.A)
            except RuntimeError as e:
                raise NumericError(f"{self.label}: singular nodal system ({e})") from None
        return self._lu

    def solve(self, fixed_potentials):
        """Node potentials for one or more columns of fixed-node potentials.

        ``fixed_potentials`` has shape (len(fixed),) or (len(fixed), k). Returns
        potentials for every original node, shape (n_nodes,) or (n_nodes, k).
        """
        vf = np.asarray(fixed_potentials, dtype=np.float64)
        single = vf.ndim == 1
        if single:
            vf = vf[:, None]
        lu = self._factor()
        if self.n_free:
            vfree = lu.solve(np.asarray(self.B @ vf))
            if not np.all(np.isfinite(vfree)):
                raise NumericError(f"{self.label}: singular nodal system")
        else:
            vfree = np.zeros((0, vf.shape[1]))
        v = np.empty((self.n_nodes, vf.shape[1]))
        grp = self.group
        fi = self.free_index[grp]
        xi = self.fixed_index[grp]
        v[fi >= 0] = vfree[fi[fi >= 0]]
        v[xi >= 0] = vf[xi[xi >= 0]]
        return v[:, 0] if single else v

    def current_into(self, node, potentials):
        """Net current flowing into the group containing ``node`` from the rest of the network."""
        root = self.group[node]
        va, vb = potentials[self.branch_a], potentials[self.branch_b]
        g = self.branch_g if potentials.ndim == 1 else self.branch_g[:, None]
        into_a = (self.branch_a == root)
        into_b = (self.branch_b == root)
        return (g[into_a] * (vb[into_a] - va[into_a])).sum(axis=0) + \
            (g[into_b] * (va[into_b] - vb[into_b])).sum(axis=0)
