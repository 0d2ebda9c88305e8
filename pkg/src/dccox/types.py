"""Core domain types: event streams, covariate paths, kernels, parameter snapshots.

All public interfaces use 1-based node ids; array attributes keep whatever the
caller supplied after validation. Types are immutable after construction and
safe to share across threads.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import GridMismatchError

_SQRT2PI = math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# kernels

@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus the bandwidth pair (h1 for degree terms, h2 for homophily).

    mu0 is the squared-kernel mass, integral of K(u)^2 du: 1/(2*sqrt(pi)) for the
    gaussian family and 3/5 for epanechnikov.
    """

    family: str = "gaussian"
    h1: float = 0.1
    h2: float = 0.02
    mu0: float = field(init=False)

    def __post_init__(self):
        if self.family not in ("gaussian", "epanechnikov"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not (self.h1 > 0 and self.h2 > 0):
            raise ValueError("bandwidths must be positive")
        mu0 = 1.0 / (2.0 * math.sqrt(math.pi)) if self.family == "gaussian" else 0.6
        object.__setattr__(self, "mu0", mu0)

    def bandwidth(self, which):
        if which == "h1":
            return self.h1
        if which == "h2":
            return self.h2
        raise ValueError(f"which must be 'h1' or 'h2', got {which!r}")

    def support_halfwidth(self, which):
        """Effective one-sided support in time units (10h gaussian, h epanechnikov)."""
        h = self.bandwidth(which)
        return 10.0 * h if self.family == "gaussian" else h

    def base_weight(self, u):
        """K(u) on the standardized scale."""
        u = np.asarray(u, dtype=float)
        if self.family == "gaussian":
            return np.exp(-0.5 * u * u) / _SQRT2PI
        out = 0.75 * (1.0 - u * u)
        return np.where(np.abs(u) <= 1.0, out, 0.0)

    def base_cdf(self, u):
        """Integral of K from -inf to u on the standardized scale."""
        u = np.asarray(u, dtype=float)
        if self.family == "gaussian":
            return ndtr(u)
        uc = np.clip(u, -1.0, 1.0)
        return 0.5 + 0.75 * (uc - uc ** 3 / 3.0)


def kernel_weight(k: KernelSpec, which, u):
    """Scaled kernel K_h(u) = K(u/h)/h for the selected bandwidth."""
    h = k.bandwidth(which)
    return k.base_weight(np.asarray(u, dtype=float) / h) / h


def kernel_cdf_increment(k: KernelSpec, which, t, a, b):
    """Exact integral of K_h(s - t) ds over [a, b] via the kernel CDF."""
    h = k.bandwidth(which)
    lo = (np.asarray(a, dtype=float) - t) / h
    hi = (np.asarray(b, dtype=float) - t) / h
    return k.base_cdf(hi) - k.base_cdf(lo)


# ---------------------------------------------------------------------------
# events

class EventStream:
    """Timestamped directed interactions on n nodes over (0, tau].

    Events are stored canonically sorted by (time, sender, receiver). Senders and
    receivers are 1-based node ids; self-loops are rejected.
    """

    __slots__ = ("n", "tau", "sender", "receiver", "time", "_dyad0")

    def __init__(self, n, tau, sender, receiver, time):
        n = int(n)
        tau = float(tau)
        sender = np.asarray(sender, dtype=np.int64)
        receiver = np.asarray(receiver, dtype=np.int64)
        time = np.asarray(time, dtype=float)
        if not (sender.shape == receiver.shape == time.shape and sender.ndim == 1):
            raise ValueError("sender, receiver, time must be 1-d arrays of equal length")
        if n < 2:
            raise ValueError("need at least two nodes")
        if tau <= 0:
            raise ValueError("tau must be positive")
        if sender.size:
            if sender.min() < 1 or sender.max() > n or receiver.min() < 1 or receiver.max() > n:
                raise ValueError("node ids must lie in [1..n]")
            if np.any(sender == receiver):
                raise ValueError("self-loop events are not allowed")
            if time.min() <= 0 or time.max() > tau:
                raise ValueError("event times must lie in (0, tau]")
        order = np.lexsort((receiver, sender, time))
        self.n = n
        self.tau = tau
        self.sender = sender[order]
        self.receiver = receiver[order]
        self.time = time[order]
        self._dyad0 = (self.sender - 1) * n + (self.receiver - 1)

    def __len__(self):
        return self.time.size

    @property
    def dyad0(self):
        """Flat 0-based dyad index (i-1)*n + (j-1) per event."""
        return self._dyad0

    def counts_matrix(self):
        """Total event counts per ordered dyad, shape (n, n)."""
        c = np.bincount(self._dyad0, minlength=self.n * self.n)
        return c.reshape(self.n, self.n)

    def window(self, lo, hi):
        """Index slice of events with lo <= time <= hi."""
        a = np.searchsorted(self.time, lo, side="left")
        b = np.searchsorted(self.time, hi, side="right")
        return slice(a, b)

    def concat(self, other):
        if other.n != self.n or other.tau != self.tau:
            raise ValueError("streams must share n and tau")
        return EventStream(
            self.n, self.tau,
            np.concatenate([self.sender, other.sender]),
            np.concatenate([self.receiver, other.receiver]),
            np.concatenate([self.time, other.time]),
        )


# ---------------------------------------------------------------------------
# covariates

class CovariateSet:
    """Piecewise-constant p-dimensional covariate paths per ordered dyad.

    Every off-diagonal dyad is covered from time 0 onward (right-continuous
    steps); the last piece of each dyad extends to +inf. Static covariates are
    the single-piece special case.
    """

    __slots__ = ("n", "p", "piece_dyad", "piece_lo", "piece_hi", "piece_z",
                 "_offsets", "_dyad_ids", "_single", "_maxbp")

    def __init__(self, n, p, piece_dyad, piece_lo, piece_z):
        self.n = int(n)
        self.p = int(p)
        piece_dyad = np.asarray(piece_dyad, dtype=np.int64)
        piece_lo = np.asarray(piece_lo, dtype=float)
        piece_z = np.asarray(piece_z, dtype=float).reshape(len(piece_dyad), self.p)
        order = np.lexsort((piece_lo, piece_dyad))
        self.piece_dyad = piece_dyad[order]
        self.piece_lo = piece_lo[order]
        self.piece_z = piece_z[order]
        self._validate()
        # piece_hi: next breakpoint within the dyad, +inf for the last piece
        hi = np.full(len(self.piece_lo), np.inf)
        same = self.piece_dyad[:-1] == self.piece_dyad[1:]
        hi[:-1][same] = self.piece_lo[1:][same]
        self.piece_hi = hi
        ids, starts = np.unique(self.piece_dyad, return_index=True)
        self._dyad_ids = ids
        self._offsets = np.append(starts, len(self.piece_dyad))
        self._single = len(ids) == len(self.piece_dyad)
        self._maxbp = float(self.piece_lo.max(initial=0.0))

    def _validate(self):
        n = self.n
        offdiag = n * (n - 1)
        d = self.piece_dyad
        if d.size == 0 and offdiag > 0:
            raise ValueError("covariate set covers no dyads")
        rows, cols = d // n, d % n
        if d.min() < 0 or d.max() >= n * n or np.any(rows == cols):
            raise ValueError("piece dyad ids out of range or on the diagonal")
        firsts = np.ones(len(d), dtype=bool)
        firsts[1:] = d[1:] != d[:-1]
        if np.any(self.piece_lo[firsts] != 0.0):
            raise ValueError("each dyad's first breakpoint must be 0")
        same = ~firsts
        if np.any(self.piece_lo[1:][same[1:]] <= self.piece_lo[:-1][same[1:]]):
            raise ValueError("breakpoints must increase strictly within a dyad")
        if firsts.sum() != offdiag:
            raise ValueError("every off-diagonal dyad needs a covariate path")

    # -- constructors -------------------------------------------------------

    @classmethod
    def empty(cls, n):
        """Zero-dimensional covariates (p = 0)."""
        return cls.constant(n, np.zeros((n, n, 0)))

    @classmethod
    def constant(cls, n, values):
        """Static covariates; values has shape (n, n, p) or (p,) shared by all dyads."""
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = np.broadcast_to(values, (n, n, values.size))
        p = values.shape[2]
        mask = ~np.eye(n, dtype=bool)
        dyads = np.flatnonzero(mask.ravel())
        z = values.reshape(n * n, p)[dyads]
        return cls(n, p, dyads, np.zeros(len(dyads)), z)

    @classmethod
    def from_paths(cls, n, p, default, exceptions=None):
        """Build from a default path plus per-dyad exceptions.

        default and each exception value are lists of (breakpoint, vector) with the
        first breakpoint at 0; dyads are 1-based (i, j) pairs.
        """
        exceptions = exceptions or {}
        exc = {}
        for (i, j), path in exceptions.items():
            if not (1 <= i <= n and 1 <= j <= n) or i == j:
                raise ValueError(f"bad dyad ({i}, {j})")
            exc[(i - 1) * n + (j - 1)] = path
        dyads, los, zs = [], [], []
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                d = i * n + j
                for (t0, vec) in exc.get(d, default):
                    vec = np.asarray(vec, dtype=float).reshape(p)
                    dyads.append(d)
                    los.append(float(t0))
                    zs.append(vec)
        return cls(n, p, dyads, los, np.asarray(zs, dtype=float).reshape(len(dyads), p))

    # -- evaluation ---------------------------------------------------------

    def _piece_index(self, dyad0, t):
        """Row into the piece arrays for each (dyad, time) pair; right continuous."""
        dyad0 = np.asarray(dyad0, dtype=np.int64)
        t = np.asarray(t, dtype=float)
        big = 2.0 * max(self._maxbp, float(np.max(t, initial=0.0)), 1.0) + 1.0
        key = self.piece_dyad * big + self.piece_lo
        idx = np.searchsorted(key, dyad0 * big + t, side="right") - 1
        return idx

    def value_at(self, i, j, t):
        """Covariate vector of dyad (i, j) at time t (1-based ids)."""
        d = (int(i) - 1) * self.n + (int(j) - 1)
        idx = self._piece_index(np.array([d]), np.array([float(t)]))[0]
        if idx < 0 or self.piece_dyad[idx] != d:
            raise ValueError(f"dyad ({i}, {j}) has no piece at t={t}")
        return self.piece_z[idx].copy()

    def values_at(self, dyad0, t):
        """Covariate vectors for many (dyad, time) pairs at once; shape (m, p)."""
        idx = self._piece_index(dyad0, t)
        return self.piece_z[idx]

    def static_matrix(self):
        """(n, n, p) snapshot at t=0; exact for single-piece sets."""
        out = np.zeros((self.n, self.n, self.p))
        firsts = np.ones(len(self.piece_dyad), dtype=bool)
        firsts[1:] = self.piece_dyad[1:] != self.piece_dyad[:-1]
        rows = self.piece_dyad[firsts] // self.n
        cols = self.piece_dyad[firsts] % self.n
        out[rows, cols] = self.piece_z[firsts]
        return out


# ---------------------------------------------------------------------------
# grids and parameters

@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing evaluation times inside (0, tau)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size == 0:
            raise ValueError("grid needs at least one point")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must increase strictly")
        object.__setattr__(self, "points", pts)

    @classmethod
    def default(cls, tau, m=100):
        """t_i = i*tau/m for i = 1..m-1."""
        i = np.arange(1, m)
        return cls(i * (float(tau) / m))

    def __len__(self):
        return self.points.size

    def subrange(self, a, b):
        keep = (self.points >= a) & (self.points <= b)
        return TimeGrid(self.points[keep])

    def index_of(self, times, tol=1e-9):
        """Indices of the given times in the grid; error when a time is absent."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        idx = np.searchsorted(self.points, times)
        idx = np.clip(idx, 0, len(self.points) - 1)
        left = np.clip(idx - 1, 0, len(self.points) - 1)
        use_left = np.abs(self.points[left] - times) < np.abs(self.points[idx] - times)
        idx = np.where(use_left, left, idx)
        if np.any(np.abs(self.points[idx] - times) > tol):
            bad = times[np.abs(self.points[idx] - times) > tol][0]
            raise GridMismatchError(f"time {bad} is not a fit grid point")
        return idx


@dataclass(frozen=True)
class ParamSnapshot:
    """Parameter values at one time: alpha (n), beta (n, last pinned to 0), gamma (p).

    Inactive nodes (no smoothed event mass at t) carry -inf in the corresponding
    entry and False in the activity flag.
    """

    t: float
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    active_out: np.ndarray
    active_in: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float)
        b = np.asarray(self.beta, dtype=float)
        g = np.asarray(self.gamma, dtype=float).reshape(-1)
        ao = np.asarray(self.active_out, dtype=bool)
        ai = np.asarray(self.active_in, dtype=bool)
        if a.shape != b.shape or a.shape != ao.shape or a.shape != ai.shape:
            raise ValueError("alpha/beta/activity shapes disagree")
        if b[-1] != 0.0:
            raise ValueError("beta of the reference node must be pinned to 0")
        if np.any(~np.isfinite(a[ao])) or np.any(~np.isfinite(b[ai])):
            raise ValueError("active coordinates must be finite")
        for name, arr in (("alpha", a), ("beta", b), ("gamma", g),
                          ("active_out", ao), ("active_in", ai)):
            object.__setattr__(self, name, arr)

    @property
    def n(self):
        return self.alpha.size

    @property
    def p(self):
        return self.gamma.size

    def eta(self):
        """(2n-1)-vector (alpha_1..alpha_n, beta_1..beta_{n-1})."""
        return np.concatenate([self.alpha, self.beta[:-1]])

    @classmethod
    def zeros(cls, n, p, t):
        return cls(t, np.zeros(n), np.zeros(n), np.zeros(p),
                   np.ones(n, dtype=bool), np.ones(n, dtype=bool))

    def shifted(self, offset):
        """New snapshot with every finite coordinate shifted by a constant.

        The pinned beta entry stays 0; used for initialization-robustness checks.
        """
        a = np.where(np.isfinite(self.alpha), self.alpha + offset, self.alpha)
        b = np.where(np.isfinite(self.beta), self.beta + offset, self.beta)
        b[-1] = 0.0
        return ParamSnapshot(self.t, a, b, self.gamma + offset,
                             self.active_out, self.active_in)


@dataclass
class FitResult:
    """Parameter curves on a grid plus (after enrichment) inference columns."""

    grid: TimeGrid
    snapshots: list
    diagnostics: list
    n: int
    p: int
    tau: float
    level: float = None
    se_eta: np.ndarray = None          # (T, 2n-1) sigma_ii^{1/2}
    se_gamma: np.ndarray = None        # (T, p) psi_jj^{1/2}
    gamma_bias: np.ndarray = None      # (T, p) H_Q^{-1} b
    eta_ci_low: np.ndarray = None
    eta_ci_high: np.ndarray = None
    gamma_ci_low: np.ndarray = None
    gamma_ci_high: np.ndarray = None

    def __len__(self):
        return len(self.snapshots)

    @property
    def alpha(self):
        return np.stack([s.alpha for s in self.snapshots])

    @property
    def beta(self):
        return np.stack([s.beta for s in self.snapshots])

    @property
    def gamma(self):
        return np.stack([s.gamma for s in self.snapshots])

    @property
    def converged(self):
        return np.array([d.converged for d in self.diagnostics], dtype=bool)

    def snapshot_at(self, t, tol=1e-9):
        return self.snapshots[int(self.grid.index_of(t, tol=tol)[0])]

    def curve(self, kind, index=None):
        """Estimated curve over the grid: kind in {alpha, beta, gamma}, 1-based index."""
        if kind == "alpha":
            return self.alpha[:, index - 1]
        if kind == "beta":
            return self.beta[:, index - 1]
        if kind == "gamma":
            return self.gamma[:, index - 1]
        raise ValueError(f"unknown curve kind {kind!r}")
