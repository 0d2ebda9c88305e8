"""Variance estimation and confidence intervals.

The (2n-1)-dimensional degree-parameter precision proxy has the closed form
S = diag(1/v_ii) + c * sigma sigma' with sigma = +1 on sender coordinates and
-1 on free receiver coordinates (0 for inactive ones), so every sandwich
diagonal and contrast below is computed from per-node vectors without ever
materializing a dense matrix.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import DegenerateVarianceError, SingularMatrixError
from .smoother import GridTables
from .types import CovariateSet, EventStream, FitResult, KernelSpec, ParamSnapshot, TimeGrid

_COND_LIMIT = 1e12


@dataclass(frozen=True)
class StructuredS:
    """Structured inverse-variance proxy at one time.

    v_pair[i-1, j-1] holds the dyad entry v_{i,(n+j)}; its column n sums to
    v_2n2n. Entries of S follow s_mm' = delta/v_mm + c on same-block pairs and
    -c across blocks, with c = 1/v_2n2n, restricted to active coordinates.
    """

    t: float
    v_diag: np.ndarray
    v_2n2n: float
    v_pair: np.ndarray
    active: np.ndarray

    @property
    def c(self):
        return 1.0 / self.v_2n2n

    @property
    def n(self):
        return self.v_pair.shape[0]

    def sigma(self):
        """Block-sign vector with inactive coordinates zeroed."""
        n = self.n
        s = np.concatenate([np.ones(n), -np.ones(n - 1)])
        return np.where(self.active, s, 0.0)

    def entry(self, m1, m2):
        """Closed-form S entry for 0-based coordinates (tests, small n)."""
        if not (self.active[m1] and self.active[m2]):
            return 0.0
        sig = self.sigma()
        val = self.c * sig[m1] * sig[m2]
        if m1 == m2:
            val += 1.0 / self.v_diag[m1]
        return val

    def matvec(self, vec):
        """S @ vec over active coordinates."""
        sig = self.sigma()
        d = np.where(self.active, 1.0 / np.where(self.active, self.v_diag, 1.0), 0.0)
        return d * vec + self.c * sig * (sig @ vec)


@dataclass(frozen=True)
class OmegaHat:
    """Martingale-variance estimate at one time.

    pair[i-1, j-1] is the dyad entry (h1/n) * sum of squared kernel weights on
    events of dyad (i, j); diag stacks its row sums then column sums (first
    n-1 columns).
    """

    t: float
    diag: np.ndarray
    pair: np.ndarray


@dataclass(frozen=True)
class EtaConfidence:
    t: float
    sigma_diag: np.ndarray
    se: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    active: np.ndarray
    level: float


@dataclass(frozen=True)
class GammaInference:
    t: float
    H_Q_hat: np.ndarray
    b_hat: np.ndarray
    Sigma_hat: np.ndarray
    Psi_hat: np.ndarray
    bias: np.ndarray
    se: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    V_gamma_eta: np.ndarray


def z_quantile(level):
    """Two-sided standard-normal quantile for a confidence level in (0, 1)."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    return float(ndtri(0.5 + level / 2.0))


class InferenceTables:
    """Vectorized per-grid-point inference quantities for a fitted curve.

    All arrays are stacked over the grid: shapes (T, ...) with coordinate
    blocks ordered as (alpha_1..alpha_n, beta_1..beta_{n-1}).
    """

    def __init__(self, es: EventStream, zs: CovariateSet, k: KernelSpec,
                 grid: TimeGrid, snapshots, tables: GridTables = None):
        self.es, self.zs, self.k = es, zs, k
        self.grid = grid
        self.snapshots = snapshots
        self.n = es.n
        self.p = zs.p
        self.N = es.n * (es.n - 1)
        tab = tables if tables is not None else GridTables(es, zs, k, grid)
        self.tab = tab
        n, T = self.n, len(grid)
        alpha = np.stack([s.alpha for s in snapshots])
        beta = np.stack([s.beta for s in snapshots])
        self.gamma = np.stack([s.gamma for s in snapshots])
        self.act_out = np.stack([s.active_out for s in snapshots])
        self.act_in = np.stack([s.active_in for s in snapshots])
        with np.errstate(invalid="ignore", over="ignore"):
            eab = np.exp(alpha)[:, :, None] * np.exp(beta)[:, None, :]
        self.eab = np.nan_to_num(eab, nan=0.0)
        e1 = tab.exposure_all("h1", self.gamma).reshape(T, n, n)
        self.v_pair = self.eab * e1 / (n - 1)               # dyad entries
        self.v_row = self.v_pair.sum(axis=2)                # v_ii, senders
        self.v_col = self.v_pair.sum(axis=1)                # v_(n+j)(n+j)
        self.v_2n2n = self.v_pair[:, :, n - 1].sum(axis=1)
        kev1sq = tab.Wev1 ** 2
        self.q = np.empty((T, n * n))
        for r in range(T):
            self.q[r] = np.bincount(es.dyad0, weights=kev1sq[r], minlength=n * n)
        self.q *= k.h1 / n
        self.qm = self.q.reshape(T, n, n)
        self.omega_row = self.qm.sum(axis=2)
        self.omega_col = self.qm.sum(axis=1)
        # block-sign vectors restricted to active coordinates
        self.sig_out = np.where(self.act_out, 1.0, 0.0)
        self.sig_in = np.where(self.act_in[:, :-1], -1.0, 0.0)

    # -- degree-parameter variance ------------------------------------------

    def sigma_diag(self):
        """(T, 2n-1) diagonal of S Omega S via the rank-one structure."""
        T, n = len(self.grid), self.n
        c = 1.0 / self.v_2n2n                                # (T,)
        sig_full = np.concatenate([self.sig_out, self.sig_in], axis=1)
        # omega_bar = Omega @ sigma, blockwise
        ob_row = sig_full[:, :n] * self.omega_row + \
            np.einsum("tij,tj->ti", self.qm[:, :, :n - 1], self.sig_in)
        ob_col = self.sig_in * self.omega_col[:, :n - 1] + \
            np.einsum("tij,ti->tj", self.qm, self.sig_out)[:, :n - 1]
        sig_pad = np.concatenate([self.sig_in, np.zeros((T, 1))], axis=1)
        kq = np.einsum("tij,tij->t", self.qm,
                       (self.sig_out[:, :, None] + sig_pad[:, None, :]) ** 2)
        with np.errstate(divide="ignore", invalid="ignore"):
            d_row = self.omega_row / self.v_row ** 2 + \
                2.0 * c[:, None] * sig_full[:, :n] * ob_row / self.v_row + \
                (c ** 2 * kq)[:, None]
            d_col = self.omega_col[:, :n - 1] / self.v_col[:, :n - 1] ** 2 + \
                2.0 * c[:, None] * self.sig_in * ob_col / self.v_col[:, :n - 1] + \
                (c ** 2 * kq)[:, None]
        out = np.concatenate([d_row, d_col], axis=1)
        active = np.concatenate([self.act_out, self.act_in[:, :-1]], axis=1)
        return np.where(active, out, np.nan), active

    def pair_contrast_var(self, which):
        """(T, n) per-coordinate pieces of the contrast variance zeta.

        For a pair (i, j) within one block, e' S Omega S e with e = e_i - e_j
        reduces to omega_ii/v_ii^2 + omega_jj/v_jj^2 (the rank-one terms cancel
        and same-block Omega off-diagonals vanish), so zeta_ij is the sum of the
        two returned entries.
        """
        with np.errstate(divide="ignore", invalid="ignore"):
            if which == "alpha":
                piece = self.omega_row / self.v_row ** 2
                act = self.act_out
            else:
                v = np.concatenate([self.v_col[:, :self.n - 1],
                                    np.full((len(self.grid), 1), np.nan)], axis=1)
                om = np.concatenate([self.omega_col[:, :self.n - 1],
                                     np.full((len(self.grid), 1), np.nan)], axis=1)
                piece = om / v ** 2
                act = np.concatenate(
                    [self.act_in[:, :-1], np.zeros((len(self.grid), 1), bool)], axis=1)
        return np.where(act, piece, np.nan), act

    # -- homophily inference --------------------------------------------------

    def u_vectors(self):
        """Event-weighted covariate sums per coordinate: (T, n, p) row and column."""
        if not hasattr(self, "_u_row"):
            self._u_row = self.tab.node_event_sums("h1", self.tab.Ze, by="sender")
            self._u_col = self.tab.node_event_sums("h1", self.tab.Ze, by="receiver")
        return self._u_row, self._u_col

    def u_sigma(self):
        """(T, p) signed coordinate total sum_m sigma_m u_m."""
        u_row, u_col = self.u_vectors()
        return np.einsum("ti,tiq->tq", self.sig_out, u_row) + \
            np.einsum("tj,tjq->tq", self.sig_in, u_col[:, :self.n - 1])

    def h_q(self):
        """(T, p, p) curvature matrices H_Q."""
        n, N = self.n, self.N
        u_row, u_col = self.u_vectors()
        hq1 = np.einsum("tm,mq,mr->tqr", self.tab.Wev2, self.tab.Ze, self.tab.Ze) / N
        usig = self.u_sigma()
        c = 1.0 / self.v_2n2n
        with np.errstate(divide="ignore", invalid="ignore"):
            wr = np.where(self.act_out, 1.0 / self.v_row, 0.0)
            wc = np.where(self.act_in[:, :-1], 1.0 / self.v_col[:, :n - 1], 0.0)
        vsv = np.einsum("ti,tiq,tir->tqr", wr, u_row, u_row)
        vsv += np.einsum("tj,tjq,tjr->tqr", wc, u_col[:, :n - 1], u_col[:, :n - 1])
        vsv += c[:, None, None] * np.einsum("tq,tr->tqr", usig, usig)
        return hq1 - vsv / N ** 2

    def b_hat(self, inactive_eps=1e-10):
        """(T, p) bias numerators; near-empty node terms are omitted."""
        n, N = self.n, self.N
        kev1sq_z_row = self.tab.node_event_sums("h1sq", self.tab.Ze, by="sender")
        kev1sq_z_col = self.tab.node_event_sums("h1sq", self.tab.Ze, by="receiver")
        b_out = self.tab.W1.reshape(-1, n, n).sum(axis=2)
        b_in = self.tab.W1.reshape(-1, n, n).sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            r_out = np.where((b_out >= inactive_eps)[..., None],
                             kev1sq_z_row / b_out[..., None], 0.0)
            r_in = np.where((b_in >= inactive_eps)[..., None],
                            kev1sq_z_col / b_in[..., None], 0.0)
        return self.k.h1 / (2.0 * N) * (r_out.sum(axis=1) + r_in.sum(axis=1))

    def event_centering(self):
        """(m, p) centering vector V S iota for each event at its nearest grid time."""
        n, N = self.n, self.N
        u_row, u_col = self.u_vectors()
        usig = self.u_sigma()
        c = 1.0 / self.v_2n2n
        g = np.searchsorted(self.grid.points, self.es.time)
        g = np.clip(g, 0, len(self.grid) - 1)
        left = np.clip(g - 1, 0, len(self.grid) - 1)
        use_left = np.abs(self.grid.points[left] - self.es.time) < \
            np.abs(self.grid.points[g] - self.es.time)
        g = np.where(use_left, left, g)
        si = self.es.sender - 1
        rj = self.es.receiver - 1
        with np.errstate(divide="ignore", invalid="ignore"):
            wr = np.where(self.act_out, 1.0 / self.v_row, 0.0)
            wc_full = np.concatenate([
                np.where(self.act_in[:, :-1], 1.0 / self.v_col[:, :n - 1], 0.0),
                np.zeros((len(self.grid), 1))], axis=1)
        sig_in_pad = np.concatenate([self.sig_in, np.zeros((len(self.grid), 1))], axis=1)
        cen = u_row[g, si] * wr[g, si][:, None]
        cen += u_col[g, rj] * wc_full[g, rj][:, None]
        coef = c[g] * (self.sig_out[g, si] + sig_in_pad[g, rj])
        cen += coef[:, None] * usig[g]
        return cen / N, g

    def sigma_hat(self):
        """(T, p, p) meat matrices from centered covariate outer products."""
        cen, _ = self.event_centering()
        zc = self.tab.Ze - cen
        kev2sq = self.tab.Wev2 ** 2
        return self.k.h2 / self.N * np.einsum("tm,mq,mr->tqr", kev2sq, zc, zc)


def compute_S(es: EventStream, zs: CovariateSet, k: KernelSpec,
              snap: ParamSnapshot) -> StructuredS:
    """Structured variance proxy at the snapshot's time and parameters."""
    it = InferenceTables(es, zs, k, TimeGrid(np.array([snap.t])), [snap])
    v2 = float(it.v_2n2n[0])
    if not v2 > 0:
        raise DegenerateVarianceError(
            f"reference-column variance total is {v2}; no active dyads at t={snap.t}")
    v_diag = np.concatenate([it.v_row[0], it.v_col[0, :es.n - 1]])
    active = np.concatenate([snap.active_out, snap.active_in[:-1]])
    return StructuredS(snap.t, v_diag, v2, it.v_pair[0], active)


def compute_omega(es: EventStream, k: KernelSpec, t) -> OmegaHat:
    """Squared-kernel event-sum variance estimate at time t."""
    n = es.n
    w = k.base_weight((es.time - float(t)) / k.h1) / k.h1
    q = np.bincount(es.dyad0, weights=w ** 2, minlength=n * n) * (k.h1 / n)
    qm = q.reshape(n, n)
    diag = np.concatenate([qm.sum(axis=1), qm.sum(axis=0)[:n - 1]])
    return OmegaHat(float(t), diag, qm)


def eta_confidence(es: EventStream, zs: CovariateSet, k: KernelSpec,
                   snap: ParamSnapshot, level=0.95) -> EtaConfidence:
    """Pointwise CIs for the degree parameters (alpha_1..alpha_n, beta_1..beta_{n-1})."""
    it = InferenceTables(es, zs, k, TimeGrid(np.array([snap.t])), [snap])
    sd, active = it.sigma_diag()
    z = z_quantile(level)
    half = z * np.sqrt(sd[0]) / np.sqrt(es.n * k.h1)
    eta = snap.eta()
    return EtaConfidence(snap.t, sd[0], np.sqrt(sd[0]), eta - half, eta + half,
                         active[0], level)


def gamma_inference(es: EventStream, zs: CovariateSet, k: KernelSpec,
                    snap: ParamSnapshot, S: StructuredS = None, level=0.95,
                    context: InferenceTables = None) -> GammaInference:
    """Bias-corrected homophily inference at one time.

    context, when given, supplies the fitted-curve tables whose grid snapshots
    drive the per-event centering; otherwise the single snapshot is used for
    every event.
    """
    if zs.p < 1:
        raise ValueError("homophily inference requires p >= 1")
    it = context if context is not None else \
        InferenceTables(es, zs, k, TimeGrid(np.array([snap.t])), [snap])
    ti = it.grid.index_of(snap.t)[0] if context is not None else 0
    hq = it.h_q()[ti]
    cond = np.linalg.cond(hq)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise SingularMatrixError(
            f"H_Q is numerically singular at t={snap.t} (cond={cond:.3g})")
    b = it.b_hat()[ti]
    bias = np.linalg.solve(hq, b)
    sig = it.sigma_hat()[ti]
    hq_inv = np.linalg.inv(hq)
    psi = hq_inv @ sig @ hq_inv
    se = np.sqrt(np.diag(psi))
    z = z_quantile(level)
    half = z * se / np.sqrt(it.N * k.h2)
    center = snap.gamma - bias
    u_row, u_col = it.u_vectors()
    v_ge = np.concatenate([u_row[ti], u_col[ti, :es.n - 1]], axis=0).T / it.N
    return GammaInference(snap.t, hq, b, sig, psi, bias, se,
                          center - half, center + half, v_ge)


def enrich_fit(fit: FitResult, es: EventStream, zs: CovariateSet, k: KernelSpec,
               level=0.95) -> FitResult:
    """Fill the fit's standard-error, bias, and CI columns in place."""
    it = InferenceTables(es, zs, k, fit.grid, fit.snapshots)
    T, n, p = len(fit.grid), es.n, zs.p
    z = z_quantile(level)
    sd, active = it.sigma_diag()
    bad = ~np.array([d.converged for d in fit.diagnostics])
    sd = np.where(bad[:, None], np.nan, sd)
    eta = np.concatenate([fit.alpha, fit.beta[:, :n - 1]], axis=1)
    half = z * np.sqrt(sd) / np.sqrt(n * k.h1)
    fit.level = level
    fit.se_eta = np.sqrt(sd)
    fit.eta_ci_low = eta - half
    fit.eta_ci_high = eta + half
    if p:
        hq = it.h_q()
        b = it.b_hat()
        sig = it.sigma_hat()
        conds = np.linalg.cond(hq)
        ok = np.isfinite(conds) & (conds <= _COND_LIMIT) & ~bad
        bias = np.full((T, p), np.nan)
        psi_d = np.full((T, p), np.nan)
        idx = np.flatnonzero(ok)
        if idx.size:
            bias[idx] = np.linalg.solve(hq[idx], b[idx][..., None])[..., 0]
            hq_inv = np.linalg.inv(hq[idx])
            psi = hq_inv @ sig[idx] @ hq_inv
            psi_d[idx] = np.diagonal(psi, axis1=1, axis2=2)
        se = np.sqrt(psi_d)
        halfg = z * se / np.sqrt(it.N * k.h2)
        center = fit.gamma - bias
        fit.se_gamma = se
        fit.gamma_bias = bias
        fit.gamma_ci_low = center - halfg
        fit.gamma_ci_high = center + halfg
    else:
        fit.se_gamma = np.zeros((T, 0))
        fit.gamma_bias = np.zeros((T, 0))
        fit.gamma_ci_low = np.zeros((T, 0))
        fit.gamma_ci_high = np.zeros((T, 0))
    return fit
