"""Synthetic interaction streams from the intensity model via Poisson thinning.

Each ordered dyad is an inhomogeneous Poisson process with intensity
exp(alpha_i(t) + beta_j(t) + Z_ij(t)' gamma(t)). Candidates are drawn under a
per-dyad constant dominating rate (1.05 times the intensity's maximum over a
1000-point grid) and accepted by rejection, with one counter-based RNG
substream per dyad so the output is independent of evaluation order.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError, RateExplosionError
from .types import CovariateSet, EventStream, FitResult

_RATE_LIMIT = 1e6
_SUP_GRID = 1000


@dataclass(frozen=True)
class Scenario:
    """Generation recipe: per-node parameter curves plus a covariate law.

    alpha_fn(t, i) and beta_fn(t, j) take a time array and a 1-based node id;
    gamma_fn(t) returns shape (len(t), p). covariate_law is one of
    "iid_standard_normal_static", "indicator_block", "three_dim_normal", or an
    explicit CovariateSet. fit_p, when set, tells consumers to use only the
    first fit_p covariate columns at estimation time (misspecification
    studies). min_dominating_rate forces a common floor on the per-dyad
    dominating rates so runs of nested scenarios share candidate draws.
    """

    name: str
    n: int
    tau: float
    p: int
    alpha_fn: object
    beta_fn: object
    gamma_fn: object
    covariate_law: object = "iid_standard_normal_static"
    seed: int = 0
    fit_p: int = None
    min_dominating_rate: float = 0.0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need at least two nodes")
        if self.tau <= 0:
            raise ValueError("tau must be positive")


@dataclass(frozen=True)
class TruthCurves:
    """True parameter curves of a scenario, exposed in the identified form.

    The generator's starred curves need not satisfy beta_n = 0; the identified
    curves shift the common level into the senders (alpha_i + beta_n,
    beta_j - beta_n), which leaves every dyad intensity unchanged and is what
    the estimator targets.
    """

    n: int
    p: int
    tau: float
    alpha_fn: object
    beta_fn: object
    gamma_fn: object

    def alpha(self, t, i):
        t = np.asarray(t, dtype=float)
        return np.asarray(self.alpha_fn(t, i), dtype=float) + \
            np.asarray(self.beta_fn(t, self.n), dtype=float)

    def beta(self, t, j):
        t = np.asarray(t, dtype=float)
        return np.asarray(self.beta_fn(t, j), dtype=float) - \
            np.asarray(self.beta_fn(t, self.n), dtype=float)

    def gamma(self, t):
        t = np.asarray(t, dtype=float)
        return np.asarray(self.gamma_fn(t), dtype=float).reshape(len(t), self.p)

    def curve(self, kind, index, t):
        """Identified curve values; kind in {alpha, beta, gamma}, 1-based index."""
        t = np.asarray(t, dtype=float)
        if kind == "alpha":
            return self.alpha(t, index)
        if kind == "beta":
            return self.beta(t, index)
        if kind == "gamma":
            return self.gamma(t)[:, index - 1]
        raise ValueError(f"unknown curve kind {kind!r}")


def _covariates(sc: Scenario) -> CovariateSet:
    law = sc.covariate_law
    if isinstance(law, CovariateSet):
        return law
    n = sc.n
    if law == "indicator_block":
        vals = np.zeros((n, n, 1))
        rows = np.arange(1, n + 1)
        vals[(rows <= 4)[:, None] & (rows <= n / 3)[None, :], 0] = 1.0
        return CovariateSet.constant(n, vals)
    if law in ("iid_standard_normal_static", "three_dim_normal"):
        p = 3 if law == "three_dim_normal" else sc.p
        rng = np.random.default_rng([sc.seed, 0])
        return CovariateSet.constant(n, rng.standard_normal((n, n, p)))
    raise ValueError(f"unknown covariate law {law!r}")


def simulate(sc: Scenario):
    """Draw one realization; returns (EventStream, CovariateSet, TruthCurves)."""
    n, tau, p = sc.n, sc.tau, sc.p
    zs = _covariates(sc)
    if zs.p != p:
        raise ValueError(f"covariate law produced p={zs.p}, scenario says {p}")
    tg = np.linspace(0.0, tau, _SUP_GRID)
    A = np.stack([np.asarray(sc.alpha_fn(tg, i), dtype=float) for i in range(1, n + 1)])
    B = np.stack([np.asarray(sc.beta_fn(tg, j), dtype=float) for j in range(1, n + 1)])
    G = np.asarray(sc.gamma_fn(tg), dtype=float).reshape(len(tg), p)
    static = zs.static_matrix() if p else np.zeros((n, n, 0))
    time_varying = not zs._single
    senders, receivers, times = [], [], []
    for i in range(1, n + 1):
        if p:
            if time_varying:
                dy = (i - 1) * n + np.arange(n)
                zrow = zs.values_at(np.repeat(dy, len(tg)),
                                    np.tile(tg, n)).reshape(n, len(tg), p)
                zg_row = np.einsum("jtq,tq->jt", zrow, G)
            else:
                zg_row = static[i - 1] @ G.T                 # (n, len(tg))
        else:
            zg_row = np.zeros((n, len(tg)))
        for j in range(1, n + 1):
            if i == j:
                continue
            with np.errstate(over="ignore", invalid="ignore"):
                lam_grid = np.exp(A[i - 1] + B[j - 1] + zg_row[j - 1])
            lam_grid = np.nan_to_num(lam_grid, nan=0.0, posinf=np.inf)
            lam_bar = 1.05 * float(lam_grid.max())
            lam_bar = max(lam_bar, sc.min_dominating_rate)
            if not lam_bar > 0:
                continue
            if not lam_bar <= _RATE_LIMIT:
                raise RateExplosionError(
                    f"dominating rate {lam_bar:.3g} for dyad ({i},{j}) exceeds {_RATE_LIMIT:g}")
            rng = np.random.default_rng([sc.seed, i, j])
            m = rng.poisson(lam_bar * tau)
            cand = rng.uniform(0.0, tau, m)
            u = rng.uniform(0.0, 1.0, m)
            if m == 0:
                continue
            logl = np.asarray(sc.alpha_fn(cand, i), dtype=float) + \
                np.asarray(sc.beta_fn(cand, j), dtype=float)
            if p:
                zc = zs.values_at(np.full(m, (i - 1) * n + (j - 1)), cand)
                gc = np.asarray(sc.gamma_fn(cand), dtype=float).reshape(m, p)
                logl = logl + np.einsum("mq,mq->m", zc, gc)
            with np.errstate(over="ignore", invalid="ignore"):
                lam = np.exp(logl)
            acc = (u * lam_bar < lam) & (cand > 0)
            if acc.any():
                t_acc = cand[acc]
                senders.extend([i] * len(t_acc))
                receivers.extend([j] * len(t_acc))
                times.extend(t_acc.tolist())
    es = EventStream(n, tau,
                     np.asarray(senders, dtype=np.int64),
                     np.asarray(receivers, dtype=np.int64),
                     np.asarray(times, dtype=float))
    truth = TruthCurves(n, p, tau, sc.alpha_fn, sc.beta_fn, sc.gamma_fn)
    return es, zs, truth


def mise(truth: TruthCurves, fit: FitResult, kind, index=1):
    """Integrated squared error of one fitted curve against the truth.

    Trapezoid over [0, tau] with the fitted and true curves extended as
    constants beyond the evaluation grid, so a constant offset delta
    integrates to tau * delta^2 exactly. Non-finite fitted values (inactive
    or failed points) are skipped by linear interpolation from neighbors.
    """
    if fit.tau != truth.tau:
        raise GridMismatchError("fit and truth cover different horizons")
    pts = fit.grid.points
    est = np.asarray(fit.curve(kind, index), dtype=float)
    true = truth.curve(kind, index, pts)
    good = np.isfinite(est)
    if not good.any():
        return float("nan")
    if not good.all():
        est = np.interp(pts, pts[good], est[good])
    diff2 = (est - true) ** 2
    ts = np.concatenate([[0.0], pts, [truth.tau]])
    vals = np.concatenate([[diff2[0]], diff2, [diff2[-1]]])
    keep = np.ones(len(ts), dtype=bool)
    keep[1:] = np.diff(ts) > 0
    return float(np.trapezoid(vals[keep], ts[keep]))


# ---------------------------------------------------------------------------
# built-in designs

def _sine_linear(n, c0, which):
    base = -c0 * math.log(n)

    def f(t, i):
        t = np.asarray(t, dtype=float)
        if i < n / 2:
            wave = np.sin(2 * np.pi * t) if which == "alpha" else np.cos(2 * np.pi * t)
            return base + 2.5 + wave
        return base + 1.5 + t / 2.0

    return f


def scenario_sine_linear(n, c0=0.5, seed=0, tau=1.0) -> Scenario:
    """Half sine/cosine, half linear degree curves; two standard-normal covariates."""

    def gamma_fn(t):
        t = np.asarray(t, dtype=float)
        g = np.sin(2 * np.pi * t) / 3.0
        return np.stack([g, g], axis=1)

    return Scenario("sine-linear", n, tau, 2, _sine_linear(n, c0, "alpha"),
                    _sine_linear(n, c0, "beta"), gamma_fn,
                    "iid_standard_normal_static", seed)


def scenario_block_offset(n, b, seed=0, tau=1.0) -> Scenario:
    """Half the nodes share a scaled linear offset; indicator covariate."""

    def degree_fn(t, i):
        t = np.asarray(t, dtype=float)
        if i < n / 2:
            return b * (-0.5 * math.log(n) + 3.0 + t / 2.0) * np.ones_like(t)
        return np.zeros_like(t)

    def gamma_fn(t):
        t = np.asarray(t, dtype=float)
        return (np.sin(2 * np.pi * t) / 3.0)[:, None]

    return Scenario("block-offset", n, tau, 1, degree_fn, degree_fn, gamma_fn,
                    "indicator_block", seed)


def scenario_temporal(n, c1=0.0, c2=0.0, seed=0, tau=1.0) -> Scenario:
    """Common degree level with sine trend c1; homophily trend c2."""

    def alpha_fn(t, i):
        t = np.asarray(t, dtype=float)
        return -0.5 * math.log(n) + 2.5 + c1 * np.sin(2 * np.pi * t)

    def beta_fn(t, j):
        t = np.asarray(t, dtype=float)
        if j == n:
            return np.zeros_like(t)
        return -0.5 * math.log(n) + 2.5 + c1 * np.sin(2 * np.pi * t)

    def gamma_fn(t):
        t = np.asarray(t, dtype=float)
        return (c2 * np.sin(2 * np.pi * t) / 3.0)[:, None]

    return Scenario("temporal-trend", n, tau, 1, alpha_fn, beta_fn, gamma_fn,
                    "iid_standard_normal_static", seed)


def scenario_heterogeneity(n, c=0.0, seed=0, tau=1.0) -> Scenario:
    """Equal linear degree curves except node n's out-curve offset by c."""

    def alpha_fn(t, i):
        t = np.asarray(t, dtype=float)
        return t / 2.0 + (c if i == n else 0.0)

    def beta_fn(t, j):
        t = np.asarray(t, dtype=float)
        if j == n:
            return np.zeros_like(t)
        return t / 2.0

    def gamma_fn(t):
        t = np.asarray(t, dtype=float)
        return (np.sin(2 * np.pi * t) / 3.0)[:, None]

    return Scenario("degree-offset", n, tau, 1, alpha_fn, beta_fn, gamma_fn,
                    "iid_standard_normal_static", seed)


def scenario_diagnostic(case, n, seed=0, tau=1.0) -> Scenario:
    """Designs for the fit-diagnostic comparison; three normal covariates.

    Case "i": no degree heterogeneity. Case "ii": half the nodes strongly
    muted. Case "iii": piecewise-in-time first-half curves, and consumers fit
    only the first two covariates (fit_p=2).
    """
    case = str(case).lower()

    if case == "i":
        def degree_fn(t, i):
            return np.zeros_like(np.asarray(t, dtype=float))
        fit_p = None
    elif case == "ii":
        def degree_fn(t, i):
            t = np.asarray(t, dtype=float)
            if i < n / 2:
                return -(0.5 * math.log(n) + 3.0 + t / 2.0)
            return np.zeros_like(t)
        fit_p = None
    elif case == "iii":
        def degree_fn(t, i):
            t = np.asarray(t, dtype=float)
            if i <= n / 2:
                lvl = 0.5 * math.log(n) + 3.0 + t / 2.0
                return np.select(
                    [t <= 0.25, t <= 0.5, t <= 0.75], [-lvl, lvl, 0.2], 0.0)
            return np.zeros_like(t)
        fit_p = 2
    else:
        raise ValueError("case must be one of 'i', 'ii', 'iii'")

    def gamma_fn(t):
        t = np.asarray(t, dtype=float)
        g = np.sin(2 * np.pi * t) / 3.0
        return np.stack([g, g, g], axis=1)

    return Scenario(f"diagnostic-{case}", n, tau, 3, degree_fn, degree_fn,
                    gamma_fn, "three_dim_normal", seed, fit_p=fit_p)


def restrict_covariates(zs: CovariateSet, keep_p) -> CovariateSet:
    """First keep_p covariate columns as a new set (misspecified refits)."""
    if not 0 <= keep_p <= zs.p:
        raise ValueError("keep_p out of range")
    return CovariateSet(zs.n, keep_p, zs.piece_dyad, zs.piece_lo,
                        zs.piece_z[:, :keep_p])


BUILTIN_SCENARIOS = {
    "sine-linear": scenario_sine_linear,
    "block-offset": scenario_block_offset,
    "temporal-trend": scenario_temporal,
    "degree-offset": scenario_heterogeneity,
    "diagnostic-i": lambda n, seed=0, tau=1.0: scenario_diagnostic("i", n, seed, tau),
    "diagnostic-ii": lambda n, seed=0, tau=1.0: scenario_diagnostic("ii", n, seed, tau),
    "diagnostic-iii": lambda n, seed=0, tau=1.0: scenario_diagnostic("iii", n, seed, tau),
}
