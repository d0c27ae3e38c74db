"""Command-line interface and experiment orchestration.

``qtbias <experiment> [--config FILE] [overrides]`` validates the config,
runs the experiment, writes the artifact bundle and exits with ``0`` (all
checks passed), ``1`` (some invariant check failed) or ``2`` (error; a JSON
error object is printed to stdout and written as ``error.json``).
"""

import argparse
import hashlib
import json
import logging
import os
import sys
import warnings

import numpy as np

from . import __version__
from .bias import BiasSchedule, tilted_schedule_for
from .collapse import fit_exponents, read_collapse_csv, rescale
from .collision import completeness_defect, kraus_pair
from .config import (EXPERIMENTS, apply_overrides, config_hash, config_to_dict, parse_config)
from .dynamics import collision_limit_error, integrate_lme, population_deviation, sse_ensemble
from .errors import ConfigError, QTBiasError
from .optimize import convergence_table, run_global, run_local, sweep_bias_strength
from .report import Bundle, Check, Table, emit_report, threshold_check, write_bundle
from .trajectory import exact_fi_enumerate, fm_histogram, sample_batch

log = logging.getLogger("qtbias")

KRAUS_TOL = 1e-12
TILTED_TOL = 1e-10
MASS_TOL = 1e-10
DUMP_LIMIT = 10_000
HIST_BINS = 40


# ---------------------------------------------------------------------------
# shared pieces


def _model_checks(params):
    defect = completeness_defect(kraus_pair(params))
    if params.kraus == "exact":
        checks = [threshold_check("kraus_completeness", defect, KRAUS_TOL)]
    else:
        checks = [Check("kraus_completeness", "INFO", float(defect),
                        "first-order pair is complete only to O((gamma*dt)^2)")]
    checks.append(Check("conventions", "INFO", None,
                        "basis (|e>, |g>); jump operator sigma_- = |g><e|; "
                        f"psi0 = ({params.psi0[0]!r}, {params.psi0[1]!r})"))
    return checks


def _tilted_check(params, sched):
    ts = tilted_schedule_for(params, sched)
    return threshold_check("tilted_completeness", float(np.max(ts.completeness_defects())),
                           TILTED_TOL)


def _schedule(cfg):
    bias, n = cfg.bias, cfg.model.n_collisions
    if bias.mode == "none":
        return BiasSchedule.unbiased(n)
    if bias.mode == "explicit":
        return BiasSchedule(bias.s, tuple(bias.b))
    raise ConfigError([("bias.mode", f"mode {bias.mode!r} is only valid for the "
                                     f"bias-{bias.mode} and sweep experiments")])


def _trajectory_table(batch):
    n = min(len(batch), DUMP_LIMIT)
    rows = [("".join(map(str, o)), lp, d, d * d)
            for o, lp, d in zip(batch.outcomes[:n].tolist(), batch.logp[:n].tolist(),
                                batch.dlogp[:n].tolist())]
    return Table(("bitstring", "logp", "dlogp", "f_m"), rows)


def _histogram_table(batch):
    h = fm_histogram(batch, bins=HIST_BINS)
    return Table(("bin_lo", "bin_hi", "prob"),
                 list(zip(h.edges[:-1].tolist(), h.edges[1:].tolist(), h.prob.tolist())))


def _convergence(rows):
    return Table(("ensemble", "n_traj", "mean", "stderr"),
                 [(r.ensemble, r.n_traj, r.mean, r.stderr) for r in rows])


def _fd_check(est, label="fd_consistency"):
    return Check(label, "INFO", est.fd_flagged,
                 f"trajectories whose derivative changes by more than the quadratic budget "
                 f"when the step is halved (of {est.n_traj})")


def _estimate_dict(est):
    d = est.to_dict()
    d["rel_error"] = est.rel_error
    return d


# ---------------------------------------------------------------------------
# experiments


def _run_fi(cfg, threads):
    params, est_cfg = cfg.model.params(), cfg.estimation
    sched = _schedule(cfg)
    checks = _model_checks(params) + [_tilted_check(params, sched)]
    batch = sample_batch(params, sched, est_cfg.n_traj, est_cfg.seed, delta=est_cfg.fd_step,
                         threads=threads)
    est = batch.estimate(est_cfg.n_batches)
    checks.append(_fd_check(est))
    results = {"fi": _estimate_dict(est), "s": sched.s, "b": list(sched.b)}
    if params.n_collisions <= est_cfg.cross_check_max_n:
        exact = exact_fi_enumerate(params, sched, est_cfg.fd_step, est_cfg.enumeration_cap, threads)
        results["fi_exact"] = exact.fi
        diff = abs(est.mean - exact.fi)
        checks.append(Check("enumeration_agreement", "PASS" if diff <= 3 * est.stderr else "FAIL",
                            diff, f"|MC - exact| vs 3*stderr = {3 * est.stderr!r}; "
                                  f"exact = {exact.fi!r}"))
    tables = {"trajectories": _trajectory_table(batch), "histogram": _histogram_table(batch),
              "convergence": _convergence(convergence_table(batch, "sampled", est_cfg.n_batches))}
    return results, tables, checks


def _report_parts(rep, params, threads):
    sched = BiasSchedule(rep.s, rep.b)
    checks = _model_checks(params) + [_tilted_check(params, sched),
                                      _fd_check(rep.fi_biased, "fd_consistency_biased"),
                                      _fd_check(rep.fi_unbiased, "fd_consistency_unbiased")]
    checks.extend(Check("warning", "INFO", None, w) for w in rep.warnings)
    results = rep.to_dict()
    results.pop("diagnostics")
    for key in ("fi_biased", "fi_unbiased"):
        results[key] = _estimate_dict(getattr(rep, key))
    results["enhancement"] = (rep.fi_biased.mean / rep.fi_unbiased.mean
                              if rep.fi_unbiased.mean > 0 else None)
    tables = {
        "pattern": Table(("n", "b", "m_max"),
                         [(i + 1, b, m) for i, (b, m) in enumerate(zip(rep.b, rep.m_max))]),
        "convergence": _convergence(rep.diagnostics),
        "trajectories": _trajectory_table(rep.batch_biased),
        "histogram": _histogram_table(rep.batch_biased),
        "histogram_unbiased": _histogram_table(rep.batch_unbiased),
    }
    return results, tables, checks


def _run_bias(cfg, threads, strategy):
    if cfg.bias.mode == "explicit":
        raise ConfigError([("bias.mode", f"bias-{strategy} chooses b itself; "
                                         "use the fi experiment for an explicit pattern")])
    params, e = cfg.model.params(), cfg.estimation
    if strategy == "global":
        rep = run_global(params, cfg.bias.s, e.n_traj, e.n_batches, e.seed, rel_tol=e.rel_tol,
                         max_traj=e.max_traj, delta=e.fd_step, threads=threads)
    else:
        rep = run_local(params, cfg.bias.s, e.n_traj, e.n_batches, e.seed, e.fd_step,
                        sensitivity_mode=cfg.bias.local_sensitivity_mode, threads=threads)
    return _report_parts(rep, params, threads)


def _run_sweep(cfg, threads):
    params, e = cfg.model.params(), cfg.estimation
    res = sweep_bias_strength(params, cfg.sweep.strategy, cfg.sweep.s_values, e.n_traj,
                              e.n_batches, e.seed, rel_tol=e.rel_tol, max_traj=e.max_traj,
                              delta=e.fd_step, threads=threads,
                              sensitivity_mode=cfg.bias.local_sensitivity_mode)
    checks = _model_checks(params)
    for p in res.points:
        if p.error is not None:
            checks.append(Check(f"sweep_point_s={p.s!r}", "FAIL", None, p.error["message"]))
        else:
            sched = BiasSchedule(p.s, p.report.b)
            d = float(np.max(tilted_schedule_for(params, sched).completeness_defects()))
            checks.append(threshold_check(f"tilted_completeness_s={p.s!r}", d, TILTED_TOL))
    results = {"strategy": res.strategy, "fi_unbiased": _estimate_dict(res.reference.estimate)}
    if res.successful():
        best = res.argmax()
        results.update(s_max=best.s, fi_max=best.report.fi_biased.mean,
                       fi_max_stderr=best.report.fi_biased.stderr,
                       interior_maximum=res.has_interior_maximum())
        checks.append(Check("interior_maximum", "INFO", res.has_interior_maximum(),
                            f"maximiser s = {best.s!r}"))
    tables = {"sweep": Table(("s", "fi_mean", "fi_stderr", "fi_unbiased_mean",
                              "fi_unbiased_stderr", "n_traj"), res.rows()),
              "patterns": Table(("s", "b", "m_max"),
                                [(p.s, " ".join(f"{b:+.0f}" for b in p.report.b),
                                  "".join(map(str, p.report.m_max)))
                                 for p in res.successful()])}
    return results, tables, checks


def _run_enumerate(cfg, threads):
    params, e = cfg.model.params(), cfg.estimation
    sched = _schedule(cfg)
    checks = _model_checks(params) + [_tilted_check(params, sched)]
    res = exact_fi_enumerate(params, sched, e.fd_step, e.enumeration_cap, threads)
    checks.append(threshold_check("probability_mass", abs(res.mass - 1.0), MASS_TOL,
                                  f"total mass {res.mass!r}"))
    rows = []
    for n in range(1, params.n_collisions + 1):
        sub = BiasSchedule(sched.s, sched.b[:n])
        r = res if n == params.n_collisions else exact_fi_enumerate(
            params.replace(n_collisions=n), sub, e.fd_step, e.enumeration_cap, threads)
        rows.append((n, r.fi, r.mass))
    results = {"fi": res.fi, "mass": res.mass, "n_collisions": res.n_collisions,
               "s": sched.s, "b": list(sched.b)}
    return results, {"fi_vs_n": Table(("n", "fi", "mass"), rows)}, checks


def _trace_rows(trace):
    coh = trace.coherence()
    return [(t, p, c.real, c.imag) for t, p, c in
            zip(trace.times.tolist(), trace.excited_population().tolist(), coh.tolist())]


def _run_limit_check(cfg, threads):
    params, d = cfg.model.params(), cfg.dynamics
    checks = _model_checks(params)
    errs = collision_limit_error(params, d.t_final, d.dt_list)
    rows = []
    for i, (dt, err) in enumerate(errs):
        ratio = errs[i][1] / errs[i - 1][1] if i and errs[i - 1][1] > 0 else None
        rows.append((dt, err, ratio))
        if ratio is not None and abs(dt / errs[i - 1][0] - 0.5) < 1e-12:
            ok = 0.4 <= ratio <= 0.6
            checks.append(Check(f"first_order_ratio_dt={dt!r}", "PASS" if ok else "FAIL", ratio,
                                "halving dt should halve the trace distance (range [0.4, 0.6])"))
    lme = integrate_lme(params, d.t_final, d.dt_int, record_every=d.record_every)
    results = {"t_final": d.t_final, "dt_int": d.dt_int,
               "errors": [e for _, e in errs], "dt_list": [dt for dt, _ in errs]}
    tables = {"limit": Table(("dt", "trace_distance", "ratio"), rows),
              "lme_trace": Table(("t", "pop_e", "coh_re", "coh_im"), _trace_rows(lme))}
    return results, tables, checks


def _run_sse(cfg, threads):
    params, d, e = cfg.model.params(), cfg.dynamics, cfg.estimation
    checks = _model_checks(params)
    ens = sse_ensemble(params, d.t_final, d.dt_int, d.n_traj, e.seed, d.record_every)
    lme = integrate_lme(params, d.t_final, d.dt_int, record_every=d.record_every)
    lme_pop = lme.excited_population()
    z, resolved = population_deviation(ens, lme_pop)
    checks.append(threshold_check("sse_vs_lme_population", float(np.max(z)), 4.0,
                                  f"max |SSE - LME| / stderr over times; {int((~resolved).sum())} "
                                  "early time(s) with too few clicks use the worst-case scale"))
    rows = [(t, p, c.real, c.imag, k) for t, p, c, k in
            zip(ens.times.tolist(), ens.pop_e.tolist(), ens.coherence.tolist(),
                ens.clicks.tolist())]
    comparison = [(t, p, s, q) for t, p, s, q in
                  zip(ens.times.tolist(), ens.pop_e.tolist(), ens.pop_e_stderr.tolist(),
                      lme_pop.tolist())]
    clicked = ens.first_click_times[np.isfinite(ens.first_click_times)]
    results = {"n_traj": d.n_traj, "t_final": d.t_final, "dt_int": d.dt_int,
               "total_clicks": int(ens.clicks[-1]), "clicked_fraction": clicked.size / d.n_traj,
               "mean_first_click": float(clicked.mean()) if clicked.size else None}
    tables = {"trace": Table(("t", "pop_e", "coh_re", "coh_im", "clicks"), rows),
              "population_vs_lme": Table(("t", "pop_e", "pop_e_stderr", "lme_pop_e"), comparison)}
    return results, tables, checks


def _run_collapse(cfg, threads):
    c = cfg.collapse
    if c.input is None:
        raise ConfigError([("collapse.input", "an input CSV with columns L,h,A is required")])
    ds = read_collapse_csv(c.input)
    with open(c.input, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()[:16]
    res = fit_exponents(ds, c.a_range, c.b_range, c.grid)
    rows = [(s.l, x, y) for s, (xs, ys) in zip(ds.sets, rescale(ds, res.a, res.b))
            for x, y in zip(xs.tolist(), ys.tolist())]
    results = dict(res.to_dict(), input_sha256=digest)
    checks = [Check("collapse_measure", "INFO", res.m_value,
                    f"{res.excluded_points} point(s) excluded by the denominator guard")]
    return results, {"rescaled": Table(("L", "x", "y"), rows)}, checks


RUNNERS = {
    "fi": _run_fi,
    "bias-global": lambda cfg, threads: _run_bias(cfg, threads, "global"),
    "bias-local": lambda cfg, threads: _run_bias(cfg, threads, "local"),
    "sweep": _run_sweep,
    "enumerate": _run_enumerate,
    "limit-check": _run_limit_check,
    "sse": _run_sse,
    "collapse": _run_collapse,
}


def run_experiment(cfg, threads=1):
    """Run the configured experiment and return its :class:`Bundle` (nothing is written)."""
    config = config_to_dict(cfg)
    config.pop("outputs")
    bundle = Bundle(cfg.experiment, config, config_hash(cfg), cfg.estimation.seed)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        results, tables, checks = RUNNERS[cfg.experiment](cfg, threads)
    checks.extend(Check("warning", "INFO", None, str(w.message)) for w in caught
                  if str(w.message) not in {c.detail for c in checks})
    bundle.results, bundle.tables, bundle.checks = results, tables, checks
    return bundle


# ---------------------------------------------------------------------------
# argument parsing


def parse_s(text):
    """``"a:step:b"`` (inclusive range), ``"x,y,z"`` or a single number."""
    if ":" in text:
        parts = [float(x) for x in text.split(":")]
        if len(parts) != 3 or parts[1] <= 0 or parts[2] < parts[0]:
            raise argparse.ArgumentTypeError(f"bad range {text!r}; expected start:step:stop")
        start, step, stop = parts
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + k * step, 12) for k in range(n)]
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad s value {text!r}") from None


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser():
    parser = argparse.ArgumentParser(prog="qtbias", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"qtbias {__version__}")
    sub = parser.add_subparsers(dest="experiment", required=True, metavar="EXPERIMENT")
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", metavar="PATH", help="JSON config document")
        p.add_argument("--seed", type=int, help="unsigned 64-bit seed")
        p.add_argument("--threads", type=_positive_int,
                       help="worker thread cap (default: $QTBIAS_THREADS or 1)")
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument("--format", choices=("csv", "json"), help="artifact format")
        p.add_argument("--omega", type=float)
        p.add_argument("--gamma", type=float)
        p.add_argument("--dt", type=float)
        p.add_argument("--n", type=int, dest="n_collisions", help="number of collisions")
        p.add_argument("--s", type=parse_s, help="bias strength (sweep: start:step:stop or list)")
        p.add_argument("--n-traj", type=int)
        p.add_argument("--n-batches", type=int)
        p.add_argument("--fd-step", type=float)
        p.add_argument("--log-level", default="WARNING",
                       choices=("DEBUG", "INFO", "WARNING", "ERROR"))
        if name == "sweep":
            p.add_argument("--strategy", choices=("global", "local"))
        if name in ("limit-check", "sse"):
            p.add_argument("--t-final", type=float)
            p.add_argument("--dt-int", type=float)
        if name == "collapse":
            p.add_argument("--input", metavar="CSV", help="data file with columns L,h,A")
    return parser


def _overrides(args):
    o = {
        "experiment": args.experiment,
        "estimation.seed": args.seed,
        "outputs.directory": args.out,
        "outputs.formats": [args.format] if args.format else None,
        "model.omega": args.omega,
        "model.gamma": args.gamma,
        "model.dt": args.dt,
        "model.n_collisions": args.n_collisions,
        "estimation.n_traj": args.n_traj,
        "estimation.n_batches": args.n_batches,
        "estimation.fd_step": args.fd_step,
        "sweep.strategy": getattr(args, "strategy", None),
        "dynamics.t_final": getattr(args, "t_final", None),
        "dynamics.dt_int": getattr(args, "dt_int", None),
        "collapse.input": getattr(args, "input", None),
    }
    if args.experiment == "sse":
        o["dynamics.n_traj"] = o.pop("estimation.n_traj")
    if args.s is not None:
        if args.experiment == "sweep":
            o["sweep.s_values"] = args.s
        elif len(args.s) != 1:
            raise ConfigError([("--s", "a single value is expected for this experiment")])
        else:
            o["bias.s"] = args.s[0]
    if args.experiment in ("bias-global", "bias-local"):
        o["bias.mode"] = args.experiment.split("-")[1]
    return o


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("QTBIAS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError([("QTBIAS_THREADS", f"not an integer: {env!r}")]) from None
    return 1


def _load(args):
    doc = "{}"
    if args.config:
        with open(args.config) as fh:
            doc = fh.read()
    return apply_overrides(parse_config(doc), _overrides(args))


def _error_payload(exc):
    if isinstance(exc, QTBiasError):
        return exc.to_dict()
    return {"error": type(exc).__name__, "message": str(exc)}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    out_dir = args.out
    try:
        cfg = _load(args)
        out_dir = cfg.outputs.directory
        bundle = run_experiment(cfg, _threads(args))
        names = write_bundle(bundle, out_dir, cfg.outputs.formats)
    except (QTBiasError, ValueError, OSError) as exc:
        payload = _error_payload(exc)
        text = json.dumps(payload, indent=2, sort_keys=True, default=str)
        print(text)
        if out_dir:
            try:
                os.makedirs(out_dir, exist_ok=True)
                with open(os.path.join(out_dir, "error.json"), "w") as fh:
                    fh.write(text + "\n")
            except OSError:
                pass
        return 2
    log.info("wrote %d files to %s", len(names), out_dir)
    sys.stdout.write(emit_report(bundle))
    return 1 if bundle.failed else 0


if __name__ == "__main__":
    sys.exit(main())
