"""Arjas-style goodness-of-fit series.

For each node and direction the observed cumulative interaction count is
paired with the model-fitted cumulative intensity; a slope near one of the
fitted-versus-observed line through the origin indicates a good fit.
"""

from dataclasses import dataclass

import numpy as np

from .types import CovariateSet, EventStream, FitResult, TimeGrid


@dataclass(frozen=True)
class ArjasSeries:
    node: int
    direction: str
    t: np.ndarray
    observed: np.ndarray
    fitted: np.ndarray
    slope: float
    flag: bool

    @property
    def active(self):
        return bool(self.observed[-1] > 0)

    def points(self):
        return list(zip(self.observed.tolist(), self.fitted.tolist()))


def _fill_invalid(curves, valid):
    """Interpolate coordinates over times where they are invalid.

    curves is (T, C); valid is a (T, C) mask. Columns with no valid time are
    left untouched. Returns the filled curves and a per-column flag.
    """
    T, C = curves.shape
    out = curves.copy()
    flagged = np.zeros(C, dtype=bool)
    x = np.arange(T, dtype=float)
    for c in range(C):
        v = valid[:, c]
        if v.all():
            continue
        flagged[c] = True
        if not v.any():
            continue
        out[~v, c] = np.interp(x[~v], x[v], curves[v, c])
    return out, flagged


def arjas_data(fit: FitResult, es: EventStream, zs: CovariateSet,
               grid: TimeGrid = None):
    """Observed and fitted cumulative counts per node and direction.

    Fitted values accumulate exp(alpha_i + beta_j + Z_ij' gamma) by trapezoid
    from time 0 with parameters linear between grid points. Grid points where
    a coordinate is inactive or unconverged take interpolated neighbor values
    and flag the affected series.
    """
    grid = grid if grid is not None else fit.grid
    idx = fit.grid.index_of(grid.points)
    n, p = fit.n, fit.p
    T = len(grid)
    snaps = [fit.snapshots[int(i)] for i in idx]
    conv = np.array([fit.diagnostics[int(i)].converged for i in idx])
    alpha = np.stack([s.alpha for s in snaps])
    beta = np.stack([s.beta for s in snaps])
    gamma = np.stack([s.gamma for s in snaps])
    act_out = np.stack([s.active_out for s in snaps]) & conv[:, None]
    act_in = np.stack([s.active_in for s in snaps]) & conv[:, None]
    alpha, flag_a = _fill_invalid(alpha, act_out & np.isfinite(alpha))
    beta, flag_b = _fill_invalid(beta, act_in & np.isfinite(beta))
    if p:
        gamma, _ = _fill_invalid(gamma, np.repeat(conv[:, None], p, axis=1)
                                 & np.isfinite(gamma))

    # per-time dyad rates
    if p:
        dy = np.flatnonzero(~np.eye(n, dtype=bool).ravel())
        zv = zs.values_at(np.tile(dy, T), np.repeat(grid.points, len(dy)))
        zg = np.einsum("tdq,tq->td", zv.reshape(T, len(dy), p), gamma)
        zterm = np.zeros((T, n * n))
        zterm[:, dy] = zg
        zterm = zterm.reshape(T, n, n)
    else:
        zterm = np.zeros((T, n, n))
    with np.errstate(over="ignore", invalid="ignore"):
        lam = np.exp(alpha[:, :, None] + beta[:, None, :] + zterm)
    lam = np.nan_to_num(lam, nan=0.0, posinf=np.inf)
    lam[:, np.arange(n), np.arange(n)] = 0.0
    rate_out = lam.sum(axis=2)                               # (T, n)
    rate_in = lam.sum(axis=1)

    ts = grid.points
    dt0 = ts[0]
    dts = np.diff(ts)[:, None]

    def cumulative(rate):
        inc0 = rate[0] * dt0
        incs = 0.5 * (rate[:-1] + rate[1:]) * dts
        return np.cumsum(np.vstack([inc0[None, :], incs]), axis=0)

    fit_out = cumulative(rate_out)
    fit_in = cumulative(rate_in)

    obs_out = np.zeros((T, n))
    obs_in = np.zeros((T, n))
    for node in range(n):
        t_out = es.time[es.sender == node + 1]
        t_in = es.time[es.receiver == node + 1]
        obs_out[:, node] = np.searchsorted(t_out, ts, side="right")
        obs_in[:, node] = np.searchsorted(t_in, ts, side="right")

    def slope(obs, fitted):
        denom = float(np.sum(obs * obs))
        if denom <= 0:
            return float("nan")
        return float(np.sum(fitted * obs) / denom)

    series = []
    for node in range(n):
        series.append(ArjasSeries(node + 1, "out", ts, obs_out[:, node],
                                  fit_out[:, node], slope(obs_out[:, node], fit_out[:, node]),
                                  bool(flag_a[node])))
    for node in range(n):
        series.append(ArjasSeries(node + 1, "in", ts, obs_in[:, node],
                                  fit_in[:, node], slope(obs_in[:, node], fit_in[:, node]),
                                  bool(flag_b[node])))
    return series
