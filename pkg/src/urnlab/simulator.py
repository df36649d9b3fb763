"""Exact event-driven simulation of the N-urn branching process.

Urn ``i`` (0-based here) sits at torus position (i + 1)/N. A particle in
urn i dies and leaves k offspring in urn j != i at rate lambda_k(i, j)/N, or
leaves k offspring in urn i at rate psi_k(i). All per-urn quantities are
tabulated once in :class:`RateTables` and shared read-only between
trajectories.
"""

import math

import numpy as np

from .errors import ConfigError, ExplosionError, InvariantError, RateIndexError
from .model import discretize
from .sampling import AliasTable, FenwickTree, UniformStream, poisson_counts

CROSS = "cross"
IN_PLACE = "in-place"

REBUILD_EVERY = 10_000


def _unique_tables(weights):
    """Alias tables for the rows of ``weights`` (shape (n, K)), shared between
    rows with identical normalized weights. Returns (tables, row -> table index);
    rows of zero total get index -1."""
    totals = weights.sum(axis=1)
    live = totals > 0
    index = np.full(len(weights), -1, dtype=np.int64)
    tables = []
    if live.any():
        normalized = weights[live] / totals[live, None]
        uniq, inverse = np.unique(normalized, axis=0, return_inverse=True)
        tables = [AliasTable(row) for row in uniq]
        index[live] = inverse.reshape(-1)
    return tables, index


class RateTables:
    """Per-urn rates and samplers for one model at its urn count N."""

    def __init__(self, spec):
        N = spec.n_urns
        kernel = discretize(spec, N) if N >= 2 else None
        self.n_urns = N
        self.k_max = spec.k_max
        if kernel is None:
            pts = np.array([1.0])
            lam = np.stack([np.broadcast_to(ex(pts, pts), (1,)) for ex in spec.lam])[:, :, None]
            psi = np.stack([np.broadcast_to(ex(pts), (1,)) for ex in spec.psi])
            phi = np.broadcast_to(spec.phi(pts), (1,)).astype(float)
        else:
            lam, psi, phi = kernel.lambda_table, kernel.psi_table, kernel.phi_table
        lam = np.array(lam, dtype=float)
        idx = np.arange(N)
        lam[:, idx, idx] = 0.0
        self.lambda_table = lam  # (K + 1, N, N), diagonal removed
        self.psi_table = np.array(psi, dtype=float)
        self.phi_table = np.array(phi, dtype=float)
        if (lam < 0).any() or (self.psi_table < 0).any() or (self.phi_table < 0).any():
            raise ConfigError("negative rate or initial mean on the urn grid")

        pair_rate = lam.sum(axis=0)  # sum_k lambda_k(i, j), j != i
        self.pair_rate = pair_rate
        self.cross_rate = pair_rate.sum(axis=1) / N
        self.inplace_rate = self.psi_table.sum(axis=0)
        self.per_particle_rate = self.cross_rate + self.inplace_rate

        self.dest_sampler = []
        for i in range(N):
            if self.cross_rate[i] > 0:
                others = [j for j in range(N) if j != i]
                self.dest_sampler.append(AliasTable(pair_rate[i, others], outcomes=others))
            else:
                self.dest_sampler.append(None)

        K1 = self.k_max + 1
        per_pair = lam.transpose(1, 2, 0).reshape(N * N, K1)
        self.offspring_tables, pair_index = _unique_tables(per_pair)
        self.offspring_index = pair_index.reshape(N, N).tolist()
        self.inplace_tables, inplace_index = _unique_tables(self.psi_table.T)
        self.inplace_index = inplace_index.tolist()

        # plain-list copies for the event loop
        self._rate = self.per_particle_rate.tolist()
        self._cross = self.cross_rate.tolist()

    def offspring_sampler(self, i, j):
        t = self.offspring_index[i][j]
        return None if t < 0 else self.offspring_tables[t]

    def inplace_offspring_sampler(self, i):
        t = self.inplace_index[i]
        return None if t < 0 else self.inplace_tables[t]

    def event_rates(self, counts):
        """Every (source, dest, k, kind) transition with its total rate from ``counts``.

        A literal transcription of the generator, used as an oracle in tests.
        """
        N = self.n_urns
        out = {}
        for i in range(N):
            x = counts[i]
            if x == 0:
                continue
            for k in range(self.k_max + 1):
                for j in range(N):
                    if j != i and self.lambda_table[k, i, j] > 0:
                        out[(i, j, k, CROSS)] = x * self.lambda_table[k, i, j] / N
                if self.psi_table[k, i] > 0:
                    out[(i, i, k, IN_PLACE)] = x * self.psi_table[k, i]
        return out


class EventRecord:
    __slots__ = ("time", "source", "dest", "offspring", "kind")

    def __init__(self, time, source, dest, offspring, kind):
        self.time = time
        self.source = source
        self.dest = dest
        self.offspring = offspring
        self.kind = kind

    def as_tuple(self):
        return (self.time, self.source, self.dest, self.offspring, self.kind)

    def __repr__(self):
        return ("EventRecord(time={:.6g}, source={}, dest={}, offspring={}, kind={!r})"
                .format(*self.as_tuple()))


class UrnState:
    """Occupation numbers, clock and the Fenwick index of w(i) = counts(i) R(i)."""

    def __init__(self, counts, tables, clock=0.0):
        self.counts = [int(c) for c in counts]
        if any(c < 0 for c in self.counts):
            raise InvariantError("negative initial count")
        self.clock = float(clock)
        self.total_particles = sum(self.counts)
        self.tables = tables
        self._updates = 0
        self.rate_index = FenwickTree(self.weights())

    def weights(self):
        rate = self.tables._rate
        return [c * r for c, r in zip(self.counts, rate)]

    def rebuild_index(self):
        self.rate_index.rebuild(self.weights())
        self._updates = 0

    @property
    def total_rate(self):
        return self.rate_index.total

    def copy(self):
        return UrnState(self.counts, self.tables, self.clock)


def init_state(spec, seed, tables=None, replica=0):
    """Independent Poisson(phi(i/N)) counts keyed by (seed, replica, i)."""
    if tables is None:
        tables = RateTables(spec)
    counts = poisson_counts(tables.phi_table, seed, replica)
    return UrnState(counts, tables)


def _select_source(state, u):
    index = state.rate_index
    i = index.find(u * index.total)
    if i >= state.tables.n_urns or state.counts[i] == 0:
        return None
    return i


def next_event(state, tables, rng):
    """Draw the next event from ``state`` without applying it.

    Returns None when the total rate is zero (extinct or frozen).
    ``rng`` is a zero-argument callable returning U[0, 1) doubles.
    """
    W = state.rate_index.total
    if state.total_particles == 0 or W <= 0:
        return None
    dt = -math.log1p(-rng()) / W
    u = rng()
    i = _select_source(state, u)
    if i is None:
        state.rebuild_index()
        W = state.rate_index.total
        i = _select_source(state, u)
        if i is None:
            raise RateIndexError("rate index inconsistent after rebuild")
    if rng() * tables._rate[i] < tables._cross[i]:
        j = tables.dest_sampler[i].sample(rng())
        k = tables.offspring_tables[tables.offspring_index[i][j]].sample(rng())
        return EventRecord(state.clock + dt, i, j, k, CROSS)
    k = tables.inplace_tables[tables.inplace_index[i]].sample(rng())
    return EventRecord(state.clock + dt, i, i, k, IN_PLACE)


def apply_event(state, event):
    """Apply ``event`` in place: counts(source) -= 1, counts(dest) += k."""
    counts = state.counts
    i, j, k = event.source, event.dest, event.offspring
    if counts[i] < 1:
        raise InvariantError(f"event removes a particle from empty urn {i}")
    rate = state.tables._rate
    index = state.rate_index
    state.clock = event.time
    if i == j:
        delta = k - 1
        if delta:
            counts[i] += delta
            index.add(i, delta * rate[i])
    else:
        counts[i] -= 1
        index.add(i, -rate[i])
        if k:
            counts[j] += k
            index.add(j, k * rate[j])
        delta = k - 1
    state.total_particles += delta
    state._updates += 1
    if state._updates >= REBUILD_EVERY:
        state.rebuild_index()
    return state


class TrajectoryObservables:
    """Values of mu^N(f) (and V^N(f) when means are supplied) at the record times,
    plus first hitting times of mu^N(f) >= r."""

    def __init__(self, record_times, names, targets):
        self.record_times = np.asarray(record_times, dtype=float)
        self.mu = {name: np.full(len(record_times), np.nan) for name in names}
        self.v = {}
        self.hitting = {tuple(t): None for t in targets}
        self.snapshots = []
        self.n_events = 0
        self.extinct = False
        self.final_time = 0.0
        self.final_counts = None


def run_trajectory(spec, f_list=None, targets=(), seed=0, particle_cap=None, *,
                   tables=None, replica=0, record_times=None, means=None,
                   horizon=None, max_events=None, stop_when_hit=False,
                   event_log=None, keep_snapshots=False):
    """Simulate one trajectory up to ``horizon`` (default ``spec.horizon``).

    ``f_list`` maps observable names to univariate callables or expressions;
    ``targets`` is a sequence of (name, r). ``means``, if given, is an array of
    E X_t(i) at each record time and enables V^N(f). With ``stop_when_hit``
    the run ends once every target is hit. ``event_log`` (a list) receives
    every EventRecord.
    """
    if tables is None:
        tables = RateTables(spec)
    N = tables.n_urns
    horizon = spec.horizon if horizon is None else float(horizon)
    if not math.isfinite(horizon) and max_events is None:
        raise ConfigError("an infinite horizon needs max_events")
    if record_times is None:
        record_times = [horizon] if math.isfinite(horizon) else []
    record_times = sorted(float(t) for t in record_times)
    f_list = dict(f_list or {})
    pts = np.arange(1, N + 1) / N
    fvals = {}
    for name, f in f_list.items():
        fvals[name] = np.broadcast_to(np.asarray(f(pts), dtype=float), (N,)).copy()
    targets = [(str(name), float(r)) for name, r in targets]
    for name, _ in targets:
        if name not in fvals:
            raise ConfigError(f"target references unknown test function {name!r}")
    if particle_cap is None:
        particle_cap = int(math.ceil(100 * N * max(float(tables.phi_table.max()), 0.0)))
    if means is not None:
        means = np.asarray(means, dtype=float)
        if means.shape != (len(record_times), N):
            raise ConfigError("means must have shape (len(record_times), N)")

    obs = TrajectoryObservables(record_times, fvals, targets)
    state = init_state(spec, seed, tables, replica)
    rng = UniformStream(seed, replica)

    # unnormalized sums S_f = sum_i X(i) f(i/N); exact integers when f is integer valued
    flists = {name: vals.tolist() for name, vals in fvals.items()}
    sums = {name: float(np.dot(state.counts, vals)) for name, vals in fvals.items()}
    pending = [(name, r * N, (name, r)) for name, r in targets]

    def check_hits(t):
        nonlocal pending
        still = []
        for name, level, key in pending:
            if sums[name] >= level:
                obs.hitting[key] = t
            else:
                still.append((name, level, key))
        pending = still

    rec = 0
    counts_arr = None

    def record(upto):
        nonlocal rec, counts_arr
        while rec < len(record_times) and record_times[rec] < upto:
            counts_arr = np.asarray(state.counts, dtype=float)
            for name, vals in fvals.items():
                obs.mu[name][rec] = counts_arr @ vals / N
                if means is not None:
                    obs.v.setdefault(name, np.full(len(record_times), np.nan))
                    obs.v[name][rec] = (counts_arr - means[rec]) @ vals / math.sqrt(N)
            if keep_snapshots:
                obs.snapshots.append(list(state.counts))
            rec += 1

    check_hits(0.0)
    n_events = 0
    finished = True  # False when stopped before the horizon was reached
    while True:
        if (stop_when_hit and not pending) or (
                max_events is not None and n_events >= max_events):
            finished = False
            break
        event = next_event(state, tables, rng)
        if event is None:
            obs.extinct = state.total_particles == 0
            break
        if event.time > horizon:
            break
        record(event.time)
        i, j, k = event.source, event.dest, event.offspring
        apply_event(state, event)
        n_events += 1
        if event_log is not None:
            event_log.append(event)
        if i != j or k != 1:
            for name, vals in flists.items():
                if i == j:
                    sums[name] += (k - 1) * vals[i]
                else:
                    sums[name] += k * vals[j] - vals[i]
            if pending:
                check_hits(event.time)
            if state.total_particles > particle_cap:
                raise ExplosionError(event.time, state.total_particles, particle_cap,
                                     replica)
    # after an early stop, record times past the clock stay NaN
    record(math.inf if finished else math.nextafter(state.clock, math.inf))
    obs.n_events = n_events
    obs.final_time = state.clock
    obs.final_counts = list(state.counts)
    return obs
