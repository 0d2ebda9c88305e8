"""File ingestion and result persistence.

Events arrive as CSV (header sender,receiver,time) or JSON lines with keys
s, r, t. Node ids may be arbitrary strings; non-integer labels are mapped to
dense 1-based indices in sorted order and the mapping is emitted next to the
results. All numbers are serialized with 17 significant digits so every
emitted file re-ingests losslessly.
"""

import csv
import json

import numpy as np

from .errors import ParseError
from .types import CovariateSet, EventStream, TimeGrid


def _fmt(x):
    return format(float(x), ".17g")


def _open_lines(path):
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            return fh.read().splitlines()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc


def _parse_float(tok, line, col, what):
    try:
        return float(tok)
    except ValueError:
        raise ParseError(f"bad {what} {tok!r}", line=line, column=col) from None


def read_events(path, tau=None, n=None):
    """Parse an event file; returns (EventStream, label mapping or None).

    The mapping is present only when node ids are not all positive integers;
    it sends external labels to the dense 1-based internal ids.
    """
    lines = _open_lines(path)
    rows = []
    jsonl = None
    for ln, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text:
            continue
        if jsonl is None:
            jsonl = text.startswith("{")
            if not jsonl:
                header = [h.strip().lower() for h in text.split(",")]
                if header != ["sender", "receiver", "time"]:
                    raise ParseError(
                        "expected header sender,receiver,time", line=ln, column=1)
                continue
        if jsonl:
            try:
                rec = json.loads(text)
                s, r, t = rec["s"], rec["r"], rec["t"]
            except (json.JSONDecodeError, KeyError, TypeError):
                raise ParseError("bad JSON event record", line=ln, column=1) from None
            rows.append((ln, str(s), str(r), t))
        else:
            parts = [p.strip() for p in text.split(",")]
            if len(parts) != 3:
                raise ParseError(f"expected 3 fields, got {len(parts)}",
                                 line=ln, column=1)
            t = _parse_float(parts[2], ln, 3, "time")
            rows.append((ln, parts[0], parts[1], t))
    if not rows:
        raise ParseError(f"{path} contains no events", line=1, column=1)

    labels = sorted({r[1] for r in rows} | {r[2] for r in rows})
    numeric = all(lab.lstrip("+").isdigit() and int(lab) >= 1 for lab in labels)
    if numeric:
        mapping = None
        to_id = {lab: int(lab) for lab in labels}
        inferred_n = max(to_id.values())
    else:
        mapping = {lab: i + 1 for i, lab in enumerate(labels)}
        to_id = mapping
        inferred_n = len(labels)
    n = int(n) if n is not None else inferred_n
    if inferred_n > n:
        raise ParseError(f"node ids need n >= {inferred_n}, got n={n}")
    times = np.array([r[3] for r in rows], dtype=float)
    tau = float(tau) if tau is not None else float(times.max())
    sender = np.empty(len(rows), dtype=np.int64)
    receiver = np.empty(len(rows), dtype=np.int64)
    for idx, (ln, s, r, t) in enumerate(rows):
        si, ri = to_id[s], to_id[r]
        if si == ri:
            raise ParseError(f"self-loop {s!r} -> {r!r}", line=ln, column=1)
        if not 0.0 < t <= tau:
            raise ParseError(f"time {t!r} outside (0, {tau}]", line=ln, column=3)
        sender[idx], receiver[idx] = si, ri
    return EventStream(n, tau, sender, receiver, times), mapping


def ingest_events(path, tau=None, n=None) -> EventStream:
    """Parse an event file into a canonical stream (see read_events)."""
    return read_events(path, tau=tau, n=n)[0]


def emit_events(path, es: EventStream, mapping=None):
    """Write events as sender,receiver,time CSV; mapping restores labels."""
    rev = {v: k for k, v in mapping.items()} if mapping else None
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sender", "receiver", "time"])
        for s, r, t in zip(es.sender, es.receiver, es.time):
            s, r = (rev[int(s)], rev[int(r)]) if rev else (int(s), int(r))
            w.writerow([s, r, _fmt(t)])


def ingest_covariates(path, n, p=None, mapping=None) -> CovariateSet:
    """Parse piecewise covariate paths.

    Schema: sender,receiver,from_time,z1..zp. A pseudo-row with sender and
    receiver both 0 sets the global default path; explicit rows override it
    per dyad. Static covariates are single-piece paths (from_time 0).
    """
    lines = _open_lines(path)
    header = None
    default_path = []
    exceptions = {}
    for ln, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text:
            continue
        parts = [x.strip() for x in text.split(",")]
        if header is None:
            header = [h.lower() for h in parts]
            if header[:3] != ["sender", "receiver", "from_time"]:
                raise ParseError("expected header sender,receiver,from_time,z1..",
                                 line=ln, column=1)
            file_p = len(header) - 3
            if p is not None and file_p != p:
                raise ParseError(f"file has {file_p} covariate columns, expected {p}",
                                 line=ln, column=4)
            p = file_p
            if [h.lower() for h in header[3:]] != [f"z{i+1}" for i in range(p)]:
                raise ParseError("covariate columns must be named z1..zp",
                                 line=ln, column=4)
            continue
        if len(parts) != 3 + p:
            raise ParseError(f"expected {3 + p} fields, got {len(parts)}",
                             line=ln, column=1)
        t0 = _parse_float(parts[2], ln, 3, "from_time")
        vec = [_parse_float(parts[3 + q], ln, 4 + q, "covariate") for q in range(p)]
        s_tok, r_tok = parts[0], parts[1]
        if s_tok == "0":
            if r_tok != "0":
                raise ParseError("default rows use sender=0,receiver=0",
                                 line=ln, column=2)
            default_path.append((ln, t0, vec))
            continue
        if mapping is not None:
            try:
                si, ri = mapping[s_tok], mapping[r_tok]
            except KeyError as exc:
                raise ParseError(f"unknown node label {exc.args[0]!r}",
                                 line=ln, column=1) from None
        else:
            try:
                si, ri = int(s_tok), int(r_tok)
            except ValueError:
                raise ParseError("integer node ids required without a label map",
                                 line=ln, column=1) from None
        if not (1 <= si <= n and 1 <= ri <= n):
            raise ParseError(f"node id outside [1..{n}]", line=ln, column=1)
        if si == ri:
            raise ParseError("diagonal dyads carry no covariates", line=ln, column=1)
        exceptions.setdefault((si, ri), []).append((ln, t0, vec))
    if header is None:
        raise ParseError(f"{path} is empty", line=1, column=1)

    def clean(rows, what):
        rows = sorted(rows, key=lambda r: r[1])
        for a, b in zip(rows, rows[1:]):
            if b[1] <= a[1]:
                raise ParseError(f"overlapping pieces in {what}", line=b[0], column=3)
        if rows and rows[0][1] != 0.0:
            raise ParseError(f"first piece of {what} must start at 0",
                             line=rows[0][0], column=3)
        return [(t0, vec) for (_, t0, vec) in rows]

    default = clean(default_path, "the default path") if default_path else None
    exc = {k: clean(v, f"dyad {k}") for k, v in exceptions.items()}
    if default is None:
        missing = n * (n - 1) - len(exc)
        if missing:
            raise ParseError(
                f"{missing} dyads lack covariate paths and no default row is given")
        dyads, los, zvals = [], [], []
        for (i, j), path_ in exc.items():
            for t0, vec in path_:
                dyads.append((i - 1) * n + (j - 1))
                los.append(t0)
                zvals.append(vec)
        return CovariateSet(n, p, dyads, los, np.asarray(zvals, dtype=float))
    return CovariateSet.from_paths(n, p, default, exceptions=exc)


def emit_covariates(path, zs: CovariateSet, mapping=None):
    """Write every covariate piece explicitly (round-trips losslessly)."""
    rev = {v: k for k, v in mapping.items()} if mapping else None
    n = zs.n
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sender", "receiver", "from_time"] +
                   [f"z{q+1}" for q in range(zs.p)])
        for d, lo, z in zip(zs.piece_dyad, zs.piece_lo, zs.piece_z):
            i, j = int(d) // n + 1, int(d) % n + 1
            s, r = (rev[i], rev[j]) if rev else (i, j)
            w.writerow([s, r, _fmt(lo)] + [_fmt(v) for v in z])


def coordinate_names(n, p):
    return ([f"alpha_{i}" for i in range(1, n + 1)] +
            [f"beta_{j}" for j in range(1, n)] +
            [f"gamma_{q}" for q in range(1, p + 1)])


def emit_fit(path, fit, mapping=None):
    """Long-format parameter curves: one row per grid time and coordinate."""
    n, p = fit.n, fit.p
    names = coordinate_names(n, p)
    conv = [d.converged for d in fit.diagnostics]
    eta = np.concatenate([fit.alpha, fit.beta[:, :n - 1]], axis=1)
    has_se = fit.se_eta is not None
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "coordinate", "estimate", "se", "ci_low", "ci_high",
                    "bias_correction", "converged"])
        for r, t in enumerate(fit.grid.points):
            flag = "true" if conv[r] else "false"
            for m in range(2 * n - 1):
                se = _fmt(fit.se_eta[r, m]) if has_se else ""
                lo = _fmt(fit.eta_ci_low[r, m]) if has_se else ""
                hi = _fmt(fit.eta_ci_high[r, m]) if has_se else ""
                w.writerow([_fmt(t), names[m], _fmt(eta[r, m]), se, lo, hi, "", flag])
            for q in range(p):
                se = _fmt(fit.se_gamma[r, q]) if has_se else ""
                lo = _fmt(fit.gamma_ci_low[r, q]) if has_se else ""
                hi = _fmt(fit.gamma_ci_high[r, q]) if has_se else ""
                bc = _fmt(fit.gamma_bias[r, q]) if has_se else ""
                w.writerow([_fmt(t), names[2 * n - 1 + q], _fmt(fit.gamma[r, q]),
                            se, lo, hi, bc, flag])


def emit_fit_summary(path, fit, extra=None):
    diags = fit.diagnostics
    body = {
        "n": fit.n,
        "p": fit.p,
        "tau": fit.tau,
        "grid_points": len(fit.grid),
        "converged_points": int(sum(d.converged for d in diags)),
        "diverged_points": int(sum(d.diverged for d in diags)),
        "max_iterations": int(max(d.iterations for d in diags)),
        "max_residual_F": max(float(d.final_residual_F) for d in diags),
        "max_residual_Q": max(float(d.final_residual_Q) for d in diags),
    }
    if extra:
        body.update(extra)
    _write_json(path, body)


def emit_gof(path, series):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "direction", "t", "observed", "fitted"])
        for s in series:
            for t, o, f in zip(s.t, s.observed, s.fitted):
                w.writerow([s.node, s.direction, _fmt(t), _fmt(o), _fmt(f)])


def emit_gof_summary(path, series):
    body = {
        "series": [
            {"node": s.node, "direction": s.direction, "slope": float(s.slope),
             "active": s.active, "flag": s.flag}
            for s in series
        ]
    }
    _write_json(path, body)


def emit_cv(path, report):
    K = report.per_fold.shape[1]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["h1", "h2", "pe_total"] +
                   [f"pe_fold_{k+1}" for k in range(K)] +
                   [f"flagged_fold_{k+1}" for k in range(K)])
        for idx, (h1, h2) in enumerate(report.pairs):
            w.writerow([_fmt(h1), _fmt(h2), _fmt(report.pe[idx])] +
                       [_fmt(v) for v in report.per_fold[idx]] +
                       [int(v) for v in report.flagged[idx]])


def emit_cv_summary(path, report):
    _write_json(path, {
        "best_h1": report.best[0],
        "best_h2": report.best[1],
        "best_pe": float(report.pe[report.best_index]),
        "K": report.K,
        "seed": report.seed,
        "pairs_evaluated": len(report.pairs),
    })


def emit_test_report(path, report):
    _write_json(path, {
        "name": report.name,
        "statistic": report.statistic,
        "critical_value": report.critical_value,
        "p_value": report.p_value,
        "nu": report.nu,
        "n_boot": report.n_boot,
        "reject": report.reject,
        "seed": report.seed,
        "grid_times": [float(t) for t in report.grid_times],
        "coordinate_max": [float(v) for v in report.coordinate_max],
    })


def emit_truth(path, truth, grid: TimeGrid):
    """True identified curves evaluated on a grid, in fit CSV ordering."""
    pts = grid.points
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "coordinate", "value"])
        cols = [(f"alpha_{i}", truth.alpha(pts, i)) for i in range(1, truth.n + 1)]
        cols += [(f"beta_{j}", truth.beta(pts, j)) for j in range(1, truth.n)]
        g = truth.gamma(pts)
        cols += [(f"gamma_{q+1}", g[:, q]) for q in range(truth.p)]
        for r, t in enumerate(pts):
            for name, vals in cols:
                w.writerow([_fmt(t), name, _fmt(vals[r])])


def emit_node_map(path, mapping):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "internal_id"])
        for lab, idx in sorted(mapping.items(), key=lambda kv: kv[1]):
            w.writerow([lab, idx])


def _write_json(path, body):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(body, fh, indent=2, sort_keys=True)
        fh.write("\n")
