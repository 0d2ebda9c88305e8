"""Kernel smoothing of counting processes and exposure integrals.

Single-time operations (smooth_events, exposure) are thin wrappers over
GridTables, the shared bulk fast path that precomputes per-event kernel
weights and per-piece kernel CDF increments for a whole evaluation grid.
"""

from dataclasses import dataclass

import numpy as np

from .types import CovariateSet, EventStream, KernelSpec, TimeGrid

_EXP_GUARD = 700.0


@dataclass(frozen=True)
class SmoothedCounts:
    """Kernel-smoothed event counts at one time.

    matrix[i-1, j-1] = sum over events on dyad (i, j) of K_h(t_e - t).
    """

    t: float
    matrix: np.ndarray
    out_sum: np.ndarray
    in_sum: np.ndarray


@dataclass(frozen=True)
class ExposureIntegrals:
    """Covariate-weighted exposure integrals at one time.

    values[i-1, j-1] (moment 0) is the integral over [0, tau] of
    K_h(s - t) exp(Z_ij(s)' gamma) ds; moments 1 and 2 carry the extra
    Z and Z Z' factors with trailing axes (p,) and (p, p).
    """

    t: float
    moment: int
    values: np.ndarray


class GridTables:
    """Precomputed kernel tables for a fixed event stream, covariates, and grid.

    Shapes: T grid points, m events, D = n*n flat dyads, P covariate pieces.
    All heavy per-iteration work in the solver and inference reduces to
    elementwise products and reduceat sums over these tables.
    """

    def __init__(self, es: EventStream, zs: CovariateSet, k: KernelSpec, grid: TimeGrid):
        if zs.n != es.n:
            raise ValueError("event stream and covariates disagree on n")
        self.es = es
        self.zs = zs
        self.k = k
        self.grid = grid
        self.n = es.n
        self.p = zs.p
        self.D = es.n * es.n
        t = grid.points[:, None]
        te = es.time[None, :]
        h1, h2 = k.h1, k.h2
        self.Wev1 = k.base_weight((te - t) / h1) / h1   # (T, m)
        self.Wev2 = k.base_weight((te - t) / h2) / h2
        self.Ze = zs.values_at(es.dyad0, es.time)       # (m, p)
        self.W1 = self._dyad_table(self.Wev1)           # (T, D)
        self.W2 = self._dyad_table(self.Wev2)
        lo = np.maximum(zs.piece_lo, 0.0)
        hi = np.minimum(zs.piece_hi, es.tau)
        self.dC1 = k.base_cdf((hi[None, :] - t) / h1) - k.base_cdf((lo[None, :] - t) / h1)
        self.dC2 = k.base_cdf((hi[None, :] - t) / h2) - k.base_cdf((lo[None, :] - t) / h2)
        self._starts = zs._offsets[:-1]
        self._covered = zs._dyad_ids

    def _dyad_table(self, wev):
        out = np.empty((len(self.grid), self.D))
        for r in range(len(self.grid)):
            out[r] = np.bincount(self.es.dyad0, weights=wev[r], minlength=self.D)
        return out

    def event_dC(self, which):
        return self.dC1 if which == "h1" else self.dC2

    def smoothed(self, which):
        """(T, D) smoothed counts table for the chosen bandwidth."""
        return self.W1 if which == "h1" else self.W2

    def exposure_all(self, which, gammas, moment=0, rows=None):
        """Exposure integrals for grid points (all, or the selected rows).

        gammas has shape (U, p) with U the number of rows; returns (U, D),
        (U, D, p) or (U, D, p, p) according to moment. Diagonal dyads are zero.
        """
        dC = self.event_dC(which)
        if rows is not None:
            dC = dC[rows]
        U = dC.shape[0]
        gammas = np.asarray(gammas, dtype=float).reshape(U, self.p)
        zpc = self.zs.piece_z
        expo = np.clip(zpc @ gammas.T, None, _EXP_GUARD)   # (P, U)
        base = np.exp(expo) * dC.T                          # (P, U)
        if moment == 0:
            return self._reduce(base)
        if moment == 1:
            out = np.empty((U, self.D, self.p))
            for q in range(self.p):
                out[:, :, q] = self._reduce(zpc[:, q:q + 1] * base)
            return out
        if moment == 2:
            out = np.empty((U, self.D, self.p, self.p))
            for q in range(self.p):
                for r in range(q, self.p):
                    val = self._reduce(zpc[:, q:q + 1] * zpc[:, r:r + 1] * base)
                    out[:, :, q, r] = val
                    out[:, :, r, q] = val
            return out
        raise ValueError("moment must be 0, 1 or 2")

    def _reduce(self, per_piece):
        """Sum a (P, U) per-piece table into a full (U, D) per-dyad table."""
        if per_piece.shape[0] == 0:
            return np.zeros((per_piece.shape[1], self.D))
        sums = np.add.reduceat(per_piece, self._starts, axis=0)   # (D_cov, T)
        full = np.zeros((self.D, per_piece.shape[1]))
        full[self._covered] = sums
        return full.T

    def event_covariate_sum(self, which, weights_extra=None):
        """(T, p) sums over events of K_h(t_e - t) Z_e, optionally times extra weights."""
        wev = self.Wev1 if which == "h1" else self.Wev2
        if weights_extra is not None:
            wev = wev * weights_extra[None, :]
        return wev @ self.Ze

    def node_event_sums(self, which, values, by):
        """Aggregate per-event values into per-node sums, shape (T, n, ...).

        values has shape (m,) or (m, p); by is 'sender' or 'receiver'; which is
        'h1'/'h2' for plain kernel weights or 'h1sq'/'h2sq' for squared ones.
        """
        wev = self.Wev1 if which.startswith("h1") else self.Wev2
        if which.endswith("sq"):
            wev = wev ** 2
        idx = (self.es.sender if by == "sender" else self.es.receiver) - 1
        vals = np.asarray(values, dtype=float)
        if vals.ndim == 1:
            out = np.empty((len(self.grid), self.n))
            for r in range(len(self.grid)):
                out[r] = np.bincount(idx, weights=wev[r] * vals, minlength=self.n)
            return out
        out = np.empty((len(self.grid), self.n, vals.shape[1]))
        for q in range(vals.shape[1]):
            for r in range(len(self.grid)):
                out[r, :, q] = np.bincount(idx, weights=wev[r] * vals[:, q], minlength=self.n)
        return out


def smooth_events(es: EventStream, zs: CovariateSet, k: KernelSpec, which, t) -> SmoothedCounts:
    """Kernel-smoothed counts w_ij(t) for every ordered dyad at a single time."""
    tab = GridTables(es, zs, k, TimeGrid(np.array([float(t)])))
    mat = tab.smoothed(which)[0].reshape(es.n, es.n)
    return SmoothedCounts(float(t), mat, mat.sum(axis=1), mat.sum(axis=0))


def exposure(zs: CovariateSet, k: KernelSpec, which, t, gamma, tau, moment=0) -> ExposureIntegrals:
    """Exposure integrals E_ij at a single time for a given homophily value."""
    es = EventStream(zs.n, float(tau), [], [], [])
    tab = GridTables(es, zs, k, TimeGrid(np.array([float(t)])))
    gamma = np.asarray(gamma, dtype=float).reshape(1, zs.p)
    vals = tab.exposure_all(which, gamma, moment=moment)[0]
    shape = (zs.n, zs.n) + vals.shape[1:]
    return ExposureIntegrals(float(t), moment, vals.reshape(shape))
