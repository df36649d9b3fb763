"""Sampling primitives for the event loop: keyed uniform streams, alias tables,
and a Fenwick tree over per-urn rates."""

import numpy as np
from scipy import stats

_MASK64 = (1 << 64) - 1

# Philox counter high words separating the independent uses of one key.
STREAM_INIT = 1
STREAM_DYNAMICS = 2


def philox(seed, replica, purpose):
    """Counter-based generator keyed by (seed, replica), offset by ``purpose``.

    The uniform draws of a given (seed, replica, purpose) triple are a fixed
    function of their position in the stream.
    """
    key = np.array([int(seed) & _MASK64, int(replica) & _MASK64], dtype=np.uint64)
    counter = np.array([0, 0, 0, int(purpose)], dtype=np.uint64)
    return np.random.Philox(key=key, counter=counter)


class UniformStream:
    """Buffered U[0, 1) doubles from a Philox stream."""

    def __init__(self, seed, replica=0, purpose=STREAM_DYNAMICS, block=4096):
        self._gen = np.random.Generator(philox(seed, replica, purpose))
        self._block = block
        self._buf = []
        self._pos = 0

    def refill(self):
        self._buf = self._gen.random(self._block).tolist()
        self._pos = 0

    def __call__(self):
        if self._pos >= len(self._buf):
            self.refill()
        x = self._buf[self._pos]
        self._pos += 1
        return x


def poisson_counts(means, seed, replica=0):
    """Independent Poisson(means[i]) draws; draw i depends only on (seed, replica, i).

    Each count is the Poisson quantile of the i-th uniform of the init stream.
    """
    means = np.asarray(means, dtype=float)
    u = np.random.Generator(philox(seed, replica, STREAM_INIT)).random(len(means))
    out = np.zeros(len(means), dtype=np.int64)
    pos = means > 0
    if pos.any():
        out[pos] = np.maximum(stats.poisson.ppf(u[pos], means[pos]), 0).astype(np.int64)
    return out


class AliasTable:
    """Walker/Vose alias table; ``sample(u)`` maps one uniform to an outcome."""

    __slots__ = ("n", "prob", "alias", "outcomes", "weights")

    def __init__(self, weights, outcomes=None):
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or len(w) == 0:
            raise ValueError("alias table needs a nonempty 1-d weight vector")
        if (w < 0).any() or not np.isfinite(w).all():
            raise ValueError("alias weights must be finite and nonnegative")
        total = w.sum()
        if total <= 0:
            raise ValueError("alias weights sum to zero")
        n = len(w)
        scaled = (w * (n / total)).tolist()
        prob = [1.0] * n
        alias = list(range(n))
        small = [i for i, x in enumerate(scaled) if x < 1.0]
        large = [i for i, x in enumerate(scaled) if x >= 1.0]
        while small and large:
            s = small.pop()
            g = large.pop()
            prob[s] = scaled[s]
            alias[s] = g
            scaled[g] = (scaled[g] + scaled[s]) - 1.0
            if scaled[g] < 1.0:
                small.append(g)
            else:
                large.append(g)
        # leftovers are 1 up to rounding
        self.n = n
        self.prob = prob
        self.alias = alias
        self.weights = w
        self.outcomes = list(range(n)) if outcomes is None else list(outcomes)
        if len(self.outcomes) != n:
            raise ValueError("outcomes and weights differ in length")

    def sample(self, u):
        x = u * self.n
        i = int(x)
        if i >= self.n:
            i = self.n - 1
        if x - i < self.prob[i]:
            return self.outcomes[i]
        return self.outcomes[self.alias[i]]

    def probabilities(self):
        """Outcome probabilities implied by the table (for checks)."""
        p = np.zeros(self.n)
        for i in range(self.n):
            p[i] += self.prob[i]
            p[self.alias[i]] += 1.0 - self.prob[i]
        return p / self.n


class FenwickTree:
    """Binary indexed tree of nonnegative weights with weighted index search."""

    def __init__(self, weights):
        self.n = len(weights)
        self.rebuild(weights)

    def rebuild(self, weights):
        n = self.n
        tree = [0.0] * (n + 1)
        for i, w in enumerate(weights):
            tree[i + 1] = float(w)
        for i in range(1, n + 1):
            j = i + (i & -i)
            if j <= n:
                tree[j] += tree[i]
        self.tree = tree
        self.total = self.prefix(n)
        self._top = 1 << (n.bit_length() - 1) if n else 0

    def add(self, i, delta):
        tree = self.tree
        n = self.n
        i += 1
        while i <= n:
            tree[i] += delta
            i += i & -i
        self.total += delta

    def prefix(self, i):
        """Sum of weights[0:i]."""
        s = 0.0
        tree = self.tree
        while i > 0:
            s += tree[i]
            i -= i & -i
        return s

    def find(self, target):
        """Smallest index i with prefix(i + 1) > target (n if none)."""
        tree = self.tree
        n = self.n
        pos = 0
        step = self._top
        while step:
            nxt = pos + step
            if nxt <= n and tree[nxt] <= target:
                pos = nxt
                target -= tree[nxt]
            step >>= 1
        return pos
