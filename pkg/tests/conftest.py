import itertools
from functools import reduce

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=30)
settings.load_profile("default")


class LadderOracle:
    """Truncated-boson Kronecker construction restricted to fixed N.

    Independent of the package: states are enumerated with itertools and
    operators built from single-mode matrices.
    """

    def __init__(self, n_atoms, n_sites):
        self.N, self.M = n_atoms, n_sites
        d = n_atoms + 1
        a = np.diag(np.sqrt(np.arange(1, d)), 1)
        eye = np.eye(d)
        self.b = [reduce(np.kron, [a if s == m else eye for s in range(n_sites)]) for m in range(n_sites)]
        full = list(itertools.product(range(d), repeat=n_sites))
        self.keep = [i for i, occ in enumerate(full) if sum(occ) == n_atoms]
        self.states = [full[i] for i in self.keep]

    def restrict(self, op, basis):
        sub = op[np.ix_(self.keep, self.keep)]
        # reorder into the package's basis order
        perm = [self.states.index(tuple(int(x) for x in s)) for s in basis.states]
        return sub[np.ix_(perm, perm)]

    def one_body(self, h):
        out = 0
        for m in range(self.M):
            for n in range(self.M):
                if h[m, n] != 0:
                    out = out + h[m, n] * self.b[m].conj().T @ self.b[n]
        return out


@pytest.fixture
def oracle():
    return LadderOracle
