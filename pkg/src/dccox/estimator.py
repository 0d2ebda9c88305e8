"""Local estimating-equation solver.

At each evaluation time the degree parameters are updated by simultaneous
log-ratio steps and the homophily vector by an inner Newton solve, alternating
until the largest coordinate change drops below tol. fit_curve runs the same
engine over a whole grid, either warm-started point by point or batched.
"""

from dataclasses import dataclass, field

import numpy as np

from ._parallel import parallel_map, resolve_threads
from .errors import DivergenceError, SingularMatrixError
from .smoother import GridTables
from .types import CovariateSet, EventStream, FitResult, KernelSpec, ParamSnapshot, TimeGrid

_DIVERGE_LIMIT = 50.0
_NEWTON_MAX_INNER = 50
_COND_LIMIT = 1e12


@dataclass(frozen=True)
class SolverConfig:
    """Tuning knobs for the alternating solver.

    gamma_uses_updated switches the homophily step to the freshly updated degree
    values; gauss_seidel updates beta from the new alpha. Both default to the
    literal simultaneous scheme. level_anchor adds one scalar correction per
    sweep along the direction (alpha+d, beta-d) by solving the reference node's
    in-equation exactly; it vanishes at any root, so fixed points are unchanged,
    but without it that near-flat direction contracts at rate 1-1/n and the
    step-size stopping rule can fire far from the root (or the homophily
    coupling can pump the residual oscillation into divergence).
    no_heterogeneity pins all degree parameters to a single common intercept
    (pooled baseline fit).
    """

    tol: float = 1e-3
    max_iter: int = 500
    newton_inner_tol: float = 1e-10
    inactive_eps: float = 1e-10
    warm_start: bool = True
    gamma_uses_updated: bool = False
    gauss_seidel: bool = False
    level_anchor: bool = True
    no_heterogeneity: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class SolveDiagnostics:
    iterations: int
    final_residual_F: float
    final_residual_Q: float
    converged: bool
    inactive_out: list = field(default_factory=list)
    inactive_in: list = field(default_factory=list)
    diverged: bool = False

    @property
    def inactive_nodes(self):
        return sorted(set(self.inactive_out) | set(self.inactive_in))


class _Engine:
    """Vectorized solver over selected rows of a GridTables instance.

    dyad_mask, when given, is an (n, n) boolean array of retained dyads; smoothed
    counts and exposures on dropped dyads are zeroed so the estimating sums run
    over the retained set only.
    """

    def __init__(self, tables: GridTables, cfg: SolverConfig, dyad_mask=None):
        self.tab = tables
        self.cfg = cfg
        n = tables.n
        self.n = n
        self.p = tables.p
        retained = np.ones(tables.D)
        if dyad_mask is not None:
            retained = np.asarray(dyad_mask, dtype=float).reshape(tables.D)
        retained[np.arange(n) * n + np.arange(n)] = 0.0
        self.retained = retained
        self.W1 = tables.W1 * retained                      # (T, D)
        self.out_mass = self.W1.reshape(-1, n, n).sum(axis=2)
        self.in_mass = self.W1.reshape(-1, n, n).sum(axis=1)
        if self.p:
            ev_keep = retained[tables.es.dyad0]
            self.U2 = tables.event_covariate_sum("h2", weights_extra=ev_keep)  # (T, p)
        else:
            self.U2 = np.zeros((len(tables.grid), 0))

    def _exposure(self, which, gammas, rows, moment=0):
        vals = self.tab.exposure_all(which, gammas, moment=moment, rows=rows)
        vals = vals * self.retained.reshape((1, -1) + (1,) * moment)
        return vals.reshape((len(rows), self.n, self.n) + vals.shape[2:])

    def _newton_gamma(self, gamma, eab, rows):
        """Solve Q(gamma)=0 for each row with the degree factor eab held fixed.

        Returns (gamma, blown) where blown marks rows whose iterates ran away
        (huge parameters or non-finite curvature); a singular Jacobian at a sane
        iterate raises instead, signalling genuinely collinear covariates.
        """
        if self.p == 0:
            return gamma, np.zeros(len(rows), dtype=bool)
        n = self.n
        N = n * (n - 1)
        gamma = gamma.copy()
        blown = np.zeros(len(rows), dtype=bool)
        live = np.ones(len(rows), dtype=bool)
        dead = eab.reshape(len(rows), -1).sum(axis=1) <= 0.0
        live[dead] = False
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            for _ in range(_NEWTON_MAX_INNER):
                if not live.any():
                    break
                sub = np.flatnonzero(live)
                rsub = [rows[i] for i in sub]
                e1 = self._exposure("h2", gamma[sub], rsub, moment=1)
                q = (self.U2[rsub] - np.einsum("uij,uijq->uq", eab[sub], e1)) / N
                good = np.max(np.abs(q), axis=1) > self.cfg.newton_inner_tol
                if not good.any():
                    live[sub] = False
                    break
                act = sub[good]
                ract = [rows[i] for i in act]
                e2 = self._exposure("h2", gamma[act], ract, moment=2)
                jac = -np.einsum("uij,uijqr->uqr", eab[act], e2) / N
                conds = np.linalg.cond(jac)
                bad = ~np.isfinite(conds) | (conds > _COND_LIMIT)
                if bad.any():
                    sane = (np.max(np.abs(gamma[act]), axis=1) <= 10.0) & \
                        np.isfinite(jac).all(axis=(1, 2)) & \
                        (eab[act].reshape(len(act), -1).max(axis=1) < np.exp(2 * _DIVERGE_LIMIT))
                    if np.any(bad & sane):
                        raise SingularMatrixError(
                            "homophily Jacobian is numerically singular "
                            "(collinear covariates?)")
                    blown[act[bad]] = True
                    live[act[bad]] = False
                    keep = ~bad
                    act, ract, jac = act[keep], [r for r, kk in zip(ract, keep) if kk], jac[keep]
                    q = q[good][keep]
                else:
                    q = q[good]
                if len(act):
                    gamma[act] = gamma[act] - np.linalg.solve(jac, q[..., None])[..., 0]
                live[sub[~good]] = False
        return gamma, blown

    def run(self, rows, init_alpha=None, init_beta=None, init_gamma=None):
        """Solve at the given grid rows; returns dict of stacked results."""
        cfg = self.cfg
        n, p = self.n, self.p
        U = len(rows)
        eps = cfg.inactive_eps
        act_out = self.out_mass[rows] >= eps                # (U, n)
        act_in = self.in_mass[rows] >= eps
        if cfg.no_heterogeneity:
            act_out = np.broadcast_to(act_out.any(axis=1, keepdims=True), act_out.shape).copy()
            act_in = act_out.copy()
        out = self.out_mass[rows]
        inn = self.in_mass[rows]
        alpha = np.zeros((U, n)) if init_alpha is None else np.array(init_alpha, dtype=float)
        beta = np.zeros((U, n)) if init_beta is None else np.array(init_beta, dtype=float)
        gamma = np.zeros((U, p)) if init_gamma is None else np.array(init_gamma, dtype=float)
        alpha = np.where(act_out, alpha, -np.inf)
        free_in = act_in.copy()
        free_in[:, -1] = True
        beta = np.where(free_in, beta, -np.inf)
        beta[:, -1] = 0.0
        iterations = np.zeros(U, dtype=int)
        converged = np.zeros(U, dtype=bool)
        diverged = np.zeros(U, dtype=bool)
        live = np.ones(U, dtype=bool)
        with np.errstate(divide="ignore", invalid="ignore"):
            for it in range(1, cfg.max_iter + 1):
                sub = np.flatnonzero(live)
                if sub.size == 0:
                    break
                rsub = [rows[i] for i in sub]
                e1 = self._exposure("h1", gamma[sub], rsub)  # (u, n, n)
                ebeta = np.exp(beta[sub])
                den_a = (e1 * ebeta[:, None, :]).sum(axis=2)
                if cfg.no_heterogeneity:
                    tot_w = out[sub].sum(axis=1, keepdims=True)
                    tot_e = den_a.sum(axis=1, keepdims=True)
                    a_common = np.where(tot_e > 0, np.log(tot_w) - np.log(tot_e), -np.inf)
                    alpha_new = np.where(act_out[sub], a_common, -np.inf)
                    beta_new = np.zeros_like(beta[sub])
                else:
                    alpha_new = np.where(act_out[sub] & (den_a > 0),
                                         np.log(out[sub]) - np.log(den_a), -np.inf)
                    ealpha = np.exp(alpha_new if cfg.gauss_seidel else alpha[sub])
                    den_b = (e1 * ealpha[:, :, None]).sum(axis=1)
                    beta_new = np.where(act_in[sub] & (den_b > 0),
                                        np.log(inn[sub]) - np.log(den_b), -np.inf)
                    beta_new[:, -1] = 0.0
                    if cfg.level_anchor:
                        coln = (np.exp(alpha_new) * e1[:, :, -1]).sum(axis=1)
                        inn_n = inn[sub][:, -1]
                        ok = (inn_n >= eps) & (coln > 0)
                        safe_n = np.where(ok, inn_n, 1.0)
                        safe_c = np.where(ok, coln, 1.0)
                        dlv = np.where(ok, np.log(safe_n) - np.log(safe_c), 0.0)
                        alpha_new = alpha_new + dlv[:, None]
                        beta_new[:, :-1] = beta_new[:, :-1] - dlv[:, None]
                if p:
                    if cfg.gamma_uses_updated:
                        eab = np.exp(alpha_new)[:, :, None] * np.exp(beta_new)[:, None, :]
                    else:
                        eab = np.exp(alpha[sub])[:, :, None] * np.exp(beta[sub])[:, None, :]
                    gamma_new, blown = self._newton_gamma(gamma[sub], eab, rsub)
                else:
                    gamma_new, blown = gamma[sub], np.zeros(len(sub), dtype=bool)
                delta = np.zeros(len(sub))
                for old, new in ((alpha[sub], alpha_new), (beta[sub], beta_new),
                                 (gamma[sub], gamma_new)):
                    if old.shape[1] == 0:
                        continue
                    fin = np.isfinite(old) & np.isfinite(new)
                    d = np.where(fin, np.abs(new - old), 0.0)
                    delta = np.maximum(delta, d.max(axis=1))
                alpha[sub], beta[sub], gamma[sub] = alpha_new, beta_new, gamma_new
                iterations[sub] = it
                big = blown.copy()
                for arr in (alpha_new, beta_new, gamma_new):
                    if arr.shape[1]:
                        fin = np.isfinite(arr)
                        big |= (np.where(fin, np.abs(arr), 0.0) > _DIVERGE_LIMIT).any(axis=1)
                diverged[sub[big]] = True
                done = (delta <= cfg.tol) & ~big
                converged[sub[done]] = True
                live[sub[done | big]] = False
        resF, resQ = self._residual_norms(rows, alpha, beta, gamma)
        return {
            "alpha": alpha, "beta": beta, "gamma": gamma,
            "act_out": act_out, "act_in": act_in,
            "iterations": iterations, "converged": converged, "diverged": diverged,
            "resF": resF, "resQ": resQ,
        }

    def _residual_norms(self, rows, alpha, beta, gamma):
        F, Q = self._residuals(rows, alpha, beta, gamma)
        resF = np.max(np.abs(F), axis=1)
        resQ = np.max(np.abs(Q), axis=1) if self.p else np.zeros(len(rows))
        return resF, resQ

    def _residuals(self, rows, alpha, beta, gamma):
        """Stacked residuals: F is (U, 2n-1), Q is (U, p)."""
        n, p = self.n, self.p
        with np.errstate(invalid="ignore", over="ignore"):
            return self._residuals_inner(rows, alpha, beta, gamma)

    def _residuals_inner(self, rows, alpha, beta, gamma):
        n, p = self.n, self.p
        e1 = self._exposure("h1", gamma, rows)
        eab = np.exp(alpha)[:, :, None] * np.exp(beta)[:, None, :]
        eab = np.nan_to_num(eab, nan=0.0, posinf=np.inf)
        lam = eab * e1
        w = self.W1[rows].reshape(len(rows), n, n)
        diff = w - lam
        F = np.concatenate([diff.sum(axis=2), diff.sum(axis=1)[:, :-1]], axis=1) / (n - 1)
        if p:
            e2z = self._exposure("h2", gamma, rows, moment=1)
            Q = (self.U2[rows] - np.einsum("uij,uijq->uq", eab, e2z)) / (n * (n - 1))
        else:
            Q = np.zeros((len(rows), 0))
        return F, Q


def _snapshot(t, row, n, p):
    return ParamSnapshot(
        t=float(t),
        alpha=row["alpha"], beta=row["beta"], gamma=row["gamma"],
        active_out=row["act_out"], active_in=row["act_in"],
    )


def _diag(row, n):
    inact_out = [i + 1 for i in range(n) if not row["act_out"][i]]
    inact_in = [j + 1 for j in range(n) if not row["act_in"][j]]
    return SolveDiagnostics(
        iterations=int(row["iterations"]),
        final_residual_F=float(row["resF"]),
        final_residual_Q=float(row["resQ"]),
        converged=bool(row["converged"]),
        inactive_out=inact_out,
        inactive_in=inact_in,
        diverged=bool(row["diverged"]),
    )


def _row(result, i):
    return {key: val[i] for key, val in result.items()}


def residuals(es: EventStream, zs: CovariateSet, k: KernelSpec, snap: ParamSnapshot):
    """Estimating-equation values (F, Q) at the snapshot's parameters and time."""
    tab = GridTables(es, zs, k, TimeGrid(np.array([snap.t])))
    eng = _Engine(tab, SolverConfig())
    F, Q = eng._residuals([0], snap.alpha[None, :], snap.beta[None, :],
                          snap.gamma[None, :])
    return F[0], Q[0]


def update_alpha_beta(es: EventStream, zs: CovariateSet, k: KernelSpec,
                      snap: ParamSnapshot, cfg: SolverConfig = None) -> ParamSnapshot:
    """One simultaneous degree update holding the homophily value fixed."""
    cfg = cfg or SolverConfig()
    tab = GridTables(es, zs, k, TimeGrid(np.array([snap.t])))
    eng = _Engine(tab, cfg)
    n = es.n
    act_out = eng.out_mass[0] >= cfg.inactive_eps
    act_in = eng.in_mass[0] >= cfg.inactive_eps
    e1 = eng._exposure("h1", snap.gamma[None, :], [0])[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        den_a = (e1 * np.exp(snap.beta)[None, :]).sum(axis=1)
        alpha = np.where(act_out & (den_a > 0), np.log(eng.out_mass[0]) - np.log(den_a), -np.inf)
        den_b = (e1 * np.exp(snap.alpha)[:, None]).sum(axis=0)
        beta = np.where(act_in & (den_b > 0), np.log(eng.in_mass[0]) - np.log(den_b), -np.inf)
    beta[-1] = 0.0
    return ParamSnapshot(snap.t, alpha, beta, snap.gamma, act_out, act_in)


def update_gamma(es: EventStream, zs: CovariateSet, k: KernelSpec,
                 snap: ParamSnapshot, cfg: SolverConfig = None):
    """Newton solution of the homophily equation with degrees held at snap."""
    cfg = cfg or SolverConfig()
    if snap.p == 0:
        return np.zeros(0)
    tab = GridTables(es, zs, k, TimeGrid(np.array([snap.t])))
    eng = _Engine(tab, cfg)
    with np.errstate(invalid="ignore"):
        eab = np.exp(snap.alpha)[None, :, None] * np.exp(snap.beta)[None, None, :]
    eab = np.nan_to_num(eab, nan=0.0)
    gam, blown = eng._newton_gamma(snap.gamma[None, :].astype(float), eab, [0])
    if blown[0]:
        raise DivergenceError("homophily iterates ran away; instance ill posed at this time")
    return gam[0]


def solve_at(es: EventStream, zs: CovariateSet, k: KernelSpec, t,
             cfg: SolverConfig = None, init: ParamSnapshot = None):
    """Solve the local estimating equations at a single time.

    Raises DivergenceError when any coordinate passes magnitude 50; returns a
    non-converged snapshot (never raises) when max_iter is exhausted.
    """
    cfg = cfg or SolverConfig()
    tab = GridTables(es, zs, k, TimeGrid(np.array([float(t)])))
    eng = _Engine(tab, cfg)
    kw = {}
    if init is not None:
        kw = {"init_alpha": init.alpha[None, :], "init_beta": init.beta[None, :],
              "init_gamma": init.gamma[None, :]}
    res = eng.run([0], **kw)
    row = _row(res, 0)
    if row["diverged"]:
        raise DivergenceError(
            f"parameter magnitude exceeded {_DIVERGE_LIMIT} at t={t}; "
            "instance may be ill posed or the bandwidth too small")
    return _snapshot(t, row, es.n, zs.p), _diag(row, es.n)


def fit_curve(es: EventStream, zs: CovariateSet, k: KernelSpec, grid: TimeGrid,
              cfg: SolverConfig = None, inits=None, dyad_mask=None,
              threads=None, tables=None) -> FitResult:
    """Solve at every grid point and collect the parameter curves.

    inits may be a single ParamSnapshot-like (alpha, beta, gamma) triple applied
    everywhere or a list of per-point triples. dyad_mask restricts all
    estimating sums to the retained dyads (cross-validation refits). Divergent
    points are kept with their diagnostics marked rather than aborting the fit.
    tables, when given, must be GridTables built for the same inputs (lets
    repeated masked refits share the kernel tables).
    """
    cfg = cfg or SolverConfig()
    tab = tables if tables is not None else GridTables(es, zs, k, grid)
    eng = _Engine(tab, cfg, dyad_mask=dyad_mask)
    T = len(grid)
    n, p = es.n, zs.p

    def init_for(i):
        if inits is None:
            return None
        snap = inits if isinstance(inits, ParamSnapshot) else inits[i]
        return snap

    if cfg.warm_start:
        rows_out = []
        prev = None
        for i in range(T):
            snap0 = init_for(i)
            if snap0 is not None:
                kw = {"init_alpha": snap0.alpha[None, :], "init_beta": snap0.beta[None, :],
                      "init_gamma": snap0.gamma[None, :]}
            elif prev is not None:
                kw = {"init_alpha": np.where(np.isfinite(prev["alpha"]), prev["alpha"], 0.0)[None, :],
                      "init_beta": np.where(np.isfinite(prev["beta"]), prev["beta"], 0.0)[None, :],
                      "init_gamma": prev["gamma"][None, :]}
            else:
                kw = {}
            res = eng.run([i], **kw)
            row = _row(res, 0)
            if not row["diverged"]:
                prev = row
            rows_out.append(row)
    else:
        nw = resolve_threads(threads)
        chunks = np.array_split(np.arange(T), max(1, min(nw, T)))
        chunks = [c for c in chunks if c.size]

        def work(chunk):
            kw = {}
            if inits is not None:
                kw = {"init_alpha": np.stack([init_for(i).alpha for i in chunk]),
                      "init_beta": np.stack([init_for(i).beta for i in chunk]),
                      "init_gamma": np.stack([init_for(i).gamma for i in chunk])}
            return eng.run(list(chunk), **kw)

        parts = parallel_map(work, chunks, threads=threads)
        rows_out = []
        for part, chunk in zip(parts, chunks):
            rows_out.extend(_row(part, j) for j in range(len(chunk)))

    snapshots = [_snapshot(grid.points[i], rows_out[i], n, p) for i in range(T)]
    diagnostics = [_diag(rows_out[i], n) for i in range(T)]
    return FitResult(grid=grid, snapshots=snapshots, diagnostics=diagnostics,
                     n=n, p=p, tau=es.tau)
