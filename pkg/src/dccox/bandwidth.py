"""K-fold bandwidth selection by integrated squared prediction error.

Dyads are partitioned by the block-permutation scheme: rows are grouped into
blocks of K consecutive rows, each block's columns are randomly permuted, and
fold membership cycles through K0 = n // K consecutive permuted slots with a
per-row shift. Each fold's refit excludes the held-out dyads from every
estimating sum; the held-out dyads then score the refit by
sum over dyads of the time integral of (N_ij(t) - Lambda_hat_ij(t))^2.
"""

from dataclasses import dataclass

import numpy as np

from ._parallel import parallel_map
from .errors import ConfigError, DivergenceError
from .estimator import SolverConfig, fit_curve
from .smoother import GridTables
from .types import CovariateSet, EventStream, KernelSpec, TimeGrid

_BALANCE_TRIES = 200

DEFAULT_H1 = tuple(np.round(np.arange(1, 11) * 0.05, 2))
DEFAULT_H2 = tuple(np.round(np.arange(0.002, 0.0301, 0.004), 3)) + (0.04, 0.08)


@dataclass(frozen=True)
class DyadPartition:
    """Fold assignment for every ordered dyad; -1 marks the diagonal."""

    n: int
    K: int
    fold: np.ndarray
    permutations: tuple
    seed: int

    def fold_of(self, i, j):
        """Fold of dyad (i, j), 1-based node ids."""
        return int(self.fold[(i - 1) * self.n + (j - 1)])

    def test_dyads(self, k):
        """Flat 0-based dyad ids held out in fold k (0-based fold)."""
        return np.flatnonzero(self.fold == k)

    def train_mask(self, k):
        """Boolean (n*n,) mask of dyads retained when fold k is held out."""
        return (self.fold >= 0) & (self.fold != k)

    def sizes(self):
        return np.bincount(self.fold[self.fold >= 0], minlength=self.K)


@dataclass(frozen=True)
class CvReport:
    pairs: tuple
    pe: np.ndarray
    per_fold: np.ndarray
    flagged: np.ndarray
    best: tuple
    best_index: int
    K: int
    seed: int

    def surface(self):
        """Rows (h1, h2, total PE) for writing out."""
        return [(h1, h2, float(v)) for (h1, h2), v in zip(self.pairs, self.pe)]


def _balanced_permutation(rng, n, K, K0, l0s, diag_cols):
    """Column permutation placing each row's diagonal column so that every
    fold receives exactly one of the block's diagonal cells.

    Returns None when no fold assignment fits the slot-segment capacities.
    """
    for _ in range(_BALANCE_TRIES):
        f0 = rng.permutation(K)
        segs = (f0 + l0s) % K
        counts = np.bincount(segs, minlength=K)
        if counts.max() <= K0:
            break
    else:
        return None
    slots = np.full(n, -1, dtype=np.int64)
    taken = np.zeros(n, dtype=bool)
    for seg, col in zip(segs, diag_cols):
        free = np.flatnonzero(~taken[seg * K0:(seg + 1) * K0]) + seg * K0
        q = int(rng.choice(free))
        slots[q] = col
        taken[q] = True
    rest = np.setdiff1d(np.arange(n), diag_cols)
    rng.shuffle(rest)
    slots[~taken] = rest
    return slots


def make_partition(n, K, seed=0) -> DyadPartition:
    """Block-permuted K-fold partition of the ordered off-diagonal dyads.

    When K divides n every fold has exactly n(n-1)/K dyads: the per-block
    permutation is drawn so that the K diagonal cells land in K distinct
    folds; when no such permutation exists (K = n with n even) a final pass
    moves the fewest possible dyads between folds to equalize the sizes.
    Rows left over when K does not divide n join the last block, and dyads
    the cyclic rule never covers are appended round-robin.
    """
    if K < 2:
        raise ConfigError("cross-validation needs K >= 2")
    if K > n:
        raise ConfigError(f"K={K} exceeds the number of nodes {n}")
    rng = np.random.default_rng(seed)
    K0 = n // K
    covered = K * K0
    n_blocks = K0
    fold = np.full(n * n, -1, dtype=np.int64)
    perms = []
    leftovers = []
    for s in range(n_blocks):
        lo = s * K
        hi = (s + 1) * K if s < n_blocks - 1 else n
        rows = np.arange(lo, hi)
        l0s = rows % K
        pi = None
        if len(rows) == K:
            pi = _balanced_permutation(rng, n, K, K0, l0s, rows)
        if pi is None:
            pi = rng.permutation(n)
        perms.append(pi)
        q = np.arange(covered)
        seg = q // K0
        for i, l0 in zip(rows, l0s):
            cols = pi[:covered]
            f = (seg - l0) % K
            keep = cols != i
            fold[i * n + cols[keep]] = f[keep]
            extra = pi[covered:]
            leftovers.extend(i * n + c for c in extra if c != i)
    for pos, d in enumerate(leftovers):
        fold[d] = pos % K
    if n % K == 0:
        target = n * (n - 1) // K
        sizes = np.bincount(fold[fold >= 0], minlength=K)
        under = [f for f in range(K) if sizes[f] < target]
        for f in np.flatnonzero(sizes > target):
            excess = int(sizes[f] - target)
            for d in np.flatnonzero(fold == f)[::-1][:excess]:
                g = under[0]
                fold[d] = g
                sizes[g] += 1
                if sizes[g] == target:
                    under.pop(0)
    return DyadPartition(n, K, fold, tuple(perms), seed)


def _nearest_converged_curves(fit):
    """Stacked (alpha, beta, gamma) with failed points replaced by the nearest
    converged neighbor; returns the curves and the count of replaced points."""
    conv = np.array([d.converged for d in fit.diagnostics])
    idx = np.flatnonzero(conv)
    if idx.size == 0:
        raise DivergenceError("no grid point converged in the fold refit")
    pts = fit.grid.points
    use = idx[np.argmin(np.abs(pts[:, None] - pts[idx][None, :]), axis=1)]
    return fit.alpha[use], fit.beta[use], fit.gamma[use], int((~conv).sum())


def _pe_from_curves(es, zs, grid, alpha, beta, gamma, held):
    """Trapezoid integral of (N - Lambda)^2 over [0, tau] on the held dyads.

    Parameter curves are linear between grid points and constant beyond the
    ends; the cumulative intensity uses the same trapezoid grid.
    """
    n = es.n
    pts = grid.points
    ts = np.concatenate([[0.0], pts, [es.tau]])
    keep = np.ones(len(ts), dtype=bool)
    keep[1:] = np.diff(ts) > 0
    ts = ts[keep]
    ext = np.vstack([alpha[0], alpha, alpha[-1]])[keep]
    extb = np.vstack([beta[0], beta, beta[-1]])[keep]
    extg = np.vstack([gamma[0], gamma, gamma[-1]])[keep]
    si = held // n
    rj = held % n
    T, H = len(ts), len(held)
    zv = zs.values_at(np.tile(held, T), np.repeat(ts, H)).reshape(T, H, -1)
    with np.errstate(over="ignore", invalid="ignore"):
        logl = ext[:, si] + extb[:, rj]
        if zs.p:
            logl = logl + np.einsum("thq,tq->th", zv, extg)
        lam = np.exp(logl)
    lam = np.nan_to_num(lam, nan=0.0, posinf=np.inf)
    dt = np.diff(ts)[:, None]
    lam_cum = np.concatenate([np.zeros((1, H)),
                              np.cumsum(0.5 * (lam[:-1] + lam[1:]) * dt, axis=0)])
    counts = np.zeros((T, H))
    ev_sel = np.isin(es.dyad0, held)
    ev_d = es.dyad0[ev_sel]
    ev_t = es.time[ev_sel]
    order = np.argsort(ev_d, kind="stable")
    ev_d, ev_t = ev_d[order], ev_t[order]
    starts = np.searchsorted(ev_d, held, side="left")
    ends = np.searchsorted(ev_d, held, side="right")
    for h in range(H):
        counts[:, h] = np.searchsorted(ev_t[starts[h]:ends[h]], ts, side="right")
    sq = (counts - lam_cum) ** 2
    return float(np.sum(0.5 * (sq[:-1] + sq[1:]) * dt))


def prediction_error(es: EventStream, zs: CovariateSet, k: KernelSpec,
                     part: DyadPartition, fold, grid: TimeGrid = None,
                     cfg: SolverConfig = None, tables: GridTables = None,
                     threads=None):
    """Held-out integrated squared prediction error for one fold (0-based)."""
    pe, _ = _fold_error(es, zs, k, part, fold, grid, cfg, tables, threads)
    return pe


def _fold_error(es, zs, k, part, fold, grid, cfg, tables, threads):
    grid = grid if grid is not None else TimeGrid.default(es.tau)
    fit = fit_curve(es, zs, k, grid, cfg=cfg, dyad_mask=part.train_mask(fold),
                    threads=threads, tables=tables)
    alpha, beta, gamma, flagged = _nearest_converged_curves(fit)
    pe = _pe_from_curves(es, zs, grid, alpha, beta, gamma, part.test_dyads(fold))
    return pe, flagged


def select_bandwidth(es: EventStream, zs: CovariateSet, family="gaussian",
                     h1_grid=None, h2_grid=None, K=5, seed=0,
                     grid: TimeGrid = None, cfg: SolverConfig = None,
                     threads=None) -> CvReport:
    """Grid search over (h1, h2) minimizing the summed fold prediction errors.

    Ties break toward the smaller pair in (h1, h2) lexicographic order. The
    partition is drawn once from the seed and shared by every pair.
    """
    h1s = tuple(h1_grid) if h1_grid is not None else DEFAULT_H1
    h2s = tuple(h2_grid) if h2_grid is not None else DEFAULT_H2
    if not h1s or not h2s:
        raise ConfigError("bandwidth grids must be nonempty")
    grid = grid if grid is not None else TimeGrid.default(es.tau)
    part = make_partition(es.n, K, seed)
    pairs = tuple((float(h1), float(h2)) for h1 in sorted(h1s) for h2 in sorted(h2s))

    def one(pair):
        h1, h2 = pair
        ks = KernelSpec(family, h1, h2)
        tab = GridTables(es, zs, ks, grid)
        out = [_fold_error(es, zs, ks, part, f, grid, cfg, tab, 1)
               for f in range(K)]
        return [pe for pe, _ in out], [fl for _, fl in out]

    results = parallel_map(one, list(pairs), threads=threads)
    per_fold = np.array([r[0] for r in results])
    flagged = np.array([r[1] for r in results], dtype=np.int64)
    pe = per_fold.sum(axis=1)
    best_index = int(np.argmin(pe))
    return CvReport(pairs, pe, per_fold, flagged, pairs[best_index],
                    best_index, K, seed)
