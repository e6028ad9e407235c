"""Command-line driver.

Every subcommand writes CSV data plus a JSON sidecar holding the full
configuration, so a result file can be regenerated from its sidecar.  The
thread count only changes how trials are scheduled, never their values, and
is left out of the sidecar.
"""
from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from . import constants as C
from . import jl, spectra, tw
from . import sketch as sk
from .randgen import DomainError, SeedSpec

ASSERT_EXIT = 2


class Ctx:
    def __init__(self, seed, threads, constants, out, assert_, paper_scale):
        self.seed = seed
        self.threads = threads
        self.constants_path = constants
        self.out = Path(out)
        self.assert_ = assert_
        self.paper_scale = paper_scale

    def constants(self) -> C.AbsoluteConstants:
        if self.constants_path is None:
            return C.default_constants()
        try:
            return C.load_constants(self.constants_path)
        except FileNotFoundError:
            raise click.UsageError(f"--constants: file not found: {self.constants_path}")
        except (C.ConfigurationError, KeyError, json.JSONDecodeError) as exc:
            raise click.UsageError(f"--constants: invalid constants file {self.constants_path}: {exc}")

    def config(self, command: str, **params) -> dict:
        return {
            "command": command,
            "version": __version__,
            "seed": self.seed,
            "constants": self.constants_path,
            "paper_scale": self.paper_scale,
            "params": params,
        }

    def write(self, name: str, text: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        path.write_text(text)
        return path

    def write_sidecar(self, name: str, config: dict, results) -> Path:
        doc = {"config": config, "results": results}
        return self.write(name, json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if hasattr(obj, "value"):
        return obj.value
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _finish(ctx: Ctx, failures: list[str]):
    for f in failures:
        click.echo(f"ASSERT FAIL: {f}", err=True)
    if ctx.assert_ and failures:
        sys.exit(ASSERT_EXIT)


def _int_list(text: str) -> list[int]:
    try:
        return [int(float(v)) for v in text.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {text!r}")


def _params(ensemble, n, N, s, q) -> sk.EnsembleParams:
    try:
        if ensemble == "gaussian":
            return sk.EnsembleParams(ensemble, n, N)
        if ensemble == "general-q":
            return sk.EnsembleParams(ensemble, n, N, q=q)
        return sk.EnsembleParams(ensemble, n, N, s=s, q=q)
    except DomainError as exc:
        raise click.UsageError(str(exc))


ENSEMBLES = click.Choice([e.value for e in sk.Ensemble])


@click.group()
@click.version_option(__version__, prog_name="sparsejl")
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=0, show_default=True, help="Master seed.")
@click.option("--threads", type=click.IntRange(1), default=1, show_default=True, help="Worker threads.")
@click.option("--constants", type=click.Path(dir_okay=False), default=None,
              help="Calibrated constants JSON (defaults to the shipped file).")
@click.option("--out", type=click.Path(file_okay=False), default=".", show_default=True, help="Output directory.")
@click.option("--assert", "assert_", is_flag=True, help="Exit with status 2 when an acceptance threshold fails.")
@click.option("--paper-scale", is_flag=True, help="Use full-size trial counts and schedules.")
@click.pass_context
def main(ctx, seed, threads, constants, out, assert_, paper_scale):
    """Sparse JL sketches, extreme singular values and Tracy-Widom experiments."""
    ctx.obj = Ctx(seed, threads, constants, out, assert_, paper_scale)
    if constants is not None:
        ctx.obj.constants()


@main.command("sketch")
@click.option("--n", "n", type=int, required=True, help="Target dimension (rows).")
@click.option("--N", "N", type=int, required=True, help="Ambient dimension (columns).")
@click.option("--ensemble", type=ENSEMBLES, default="hashing-like", show_default=True)
@click.option("--s", "s", type=float, default=None, help="Expected (or exact) nonzeros per column.")
@click.option("--q", "q", type=float, default=None, help="Parameter of the general ensemble.")
@click.option("--file", "fname", default="sketch.sksp", show_default=True)
@click.pass_obj
def cmd_sketch(ctx: Ctx, n, N, ensemble, s, q, fname):
    """Build a sketch, save it, and compare column counts with their law."""
    params = _params(ensemble, n, N, s, q)
    h = sk.build(params, SeedSpec(ctx.seed))
    path = ctx.out / fname
    ctx.out.mkdir(parents=True, exist_ok=True)
    sk.save(h, path)
    counts = h.column_nnz().astype(float)
    es = params.expected_column_nnz
    if params.ensemble is sk.Ensemble.HASHING_LIKE or params.ensemble is sk.Ensemble.GENERAL_Q:
        var, p0 = es * (1 - es / n), (1 - es / n) ** n
    else:
        var, p0 = 0.0, 0.0
    summary = {
        "nnz": int(h.nnz),
        "expected_column_nnz": es,
        "mean_column_nnz": float(counts.mean()),
        "expected_variance": var,
        "sample_variance": float(counts.var(ddof=1)) if N > 1 else 0.0,
        "expected_zero_fraction": p0,
        "zero_fraction": float(np.mean(counts == 0)),
        "sha256": hashlib.sha256(path.read_bytes()).hexdigest(),
    }
    click.echo(f"wrote {path}")
    for k, v in summary.items():
        click.echo(f"  {k}: {v}")
    cfg = ctx.config("sketch", n=n, N=N, ensemble=ensemble, s=s, q=q, file=fname)
    ctx.write_sidecar(fname + ".json", cfg, summary)


@main.command("jl-verify")
@click.option("--n", "n", type=int, default=None, help="Target dimension; default from the JL dimension formula.")
@click.option("--N", "N", type=int, default=1000, show_default=True)
@click.option("--ensemble", type=ENSEMBLES, default="general-q", show_default=True)
@click.option("--s", "s", type=float, default=None)
@click.option("--q", "q", type=float, default=2.0, show_default=True)
@click.option("--epsilon", type=float, default=0.5, show_default=True)
@click.option("--delta", type=float, default=0.5, show_default=True)
@click.option("--trials", type=int, default=None, help="Default 1000 (10000 with --paper-scale).")
@click.option("--family", type=click.Choice([f.value for f in jl.VectorFamily if f.value != "user-supplied"]),
              default="gaussian-unit", show_default=True)
@click.option("--trial-csv", is_flag=True, help="Also write per-trial ratios.")
@click.pass_obj
def cmd_jl_verify(ctx: Ctx, n, N, ensemble, s, q, epsilon, delta, trials, family, trial_csv):
    """Monte Carlo failure rate of the JL inequality."""
    trials = trials or (10_000 if ctx.paper_scale else 1000)
    if n is None:
        # size the sketch from the JL dimension formula at --q
        try:
            n = C.jl_min_dimension(epsilon, delta, q, C.ledger_for(q, ctx.constants()))
        except DomainError as exc:
            raise click.UsageError(str(exc))
        n = min(n, N)
    q_used = q if ensemble == "general-q" else None
    params = _params(ensemble, n, N, s, q_used)
    rep = jl.verify_jlt(params, epsilon, trials, family, ctx.seed, keep_ratios=trial_csv, threads=ctx.threads)
    ctx.write("jl.csv", jl.reports_csv([rep]))
    if trial_csv:
        ctx.write("jl_trials.csv", rep.trials_csv())
    cfg = ctx.config("jl-verify", n=n, N=N, ensemble=ensemble, s=s, q=q_used, epsilon=epsilon, delta=delta,
                     trials=trials, family=family)
    ctx.write_sidecar("jl.json", cfg, rep.summary())
    click.echo(f"n={n} failures={rep.failures}/{rep.trials} rate={rep.failure_rate:.4f} "
               f"95% CI=[{rep.ci_low:.4f}, {rep.ci_high:.4f}]")
    fails = [] if rep.failure_rate <= delta else [f"failure rate {rep.failure_rate} > delta {delta}"]
    _finish(ctx, fails)


def _band_failures(point, refs, rel=0.05) -> list[str]:
    out = []
    for key, mean in (("sn_limit", point.sn_mean), ("s1_limit", point.s1_mean)):
        ref = refs[key]
        if abs(mean - ref) > rel * ref:
            out.append(f"mean {key[:2]} {mean:.4f} outside {ref} +- {rel:.0%} at N={point.N}, n={point.n}, s={point.s}")
    return out


@main.command("baiyin")
@click.option("--default-schedule/--no-default-schedule", default=True, show_default=True,
              help="Use the log-spaced schedule N=500..1e5, n=N/100, s=n/5.")
@click.option("--schedule", default=None, help="Explicit 'N:n:s;N:n:s;...' schedule.")
@click.option("--points", type=int, default=None, help="Subsample the default schedule (default 20, 100 with --paper-scale).")
@click.option("--trials", type=int, default=None, help="Trials per point (default 10, 100 with --paper-scale).")
@click.option("--q", "q", type=float, default=None, help="Fixed q (general ensemble) instead of s.")
@click.pass_obj
def cmd_baiyin(ctx: Ctx, default_schedule, schedule, points, trials, q):
    """Extreme singular values along a growing schedule."""
    trials = trials or (100 if ctx.paper_scale else 10)
    if schedule:
        try:
            sched = [tuple(float(v) for v in p.split(":")) for p in schedule.split(";") if p.strip()]
            sched = [(int(a), int(b), c) for a, b, c in sched]
        except ValueError:
            raise click.BadParameter("schedule entries must look like N:n:s")
        aspect = sched[-1][1] / sched[-1][0]
    elif default_schedule:
        points = points or (100 if ctx.paper_scale else 20)
        full = spectra.log_schedule()
        sched = full if points >= len(full) else spectra.subsample(full, points)
        aspect = 0.01
    else:
        raise click.UsageError("give --schedule or keep --default-schedule")
    try:
        rep = spectra.baiyin_experiment(sched, trials, ctx.seed, q=q, aspect=aspect, threads=ctx.threads)
    except DomainError as exc:
        raise click.UsageError(str(exc))
    ctx.write("baiyin.csv", rep.rows_csv())
    cfg = ctx.config("baiyin", schedule=[list(p) for p in sched], trials=trials, q=q)
    ctx.write_sidecar("baiyin.json", cfg, rep.summary())
    last = rep.points[-1]
    click.echo(f"{len(sched)} points x {trials} trials; last point N={last.N}: "
               f"mean s1={last.s1_mean:.4f}, mean sn={last.sn_mean:.4f} "
               f"(limits {rep.references['s1_limit']:.4f}, {rep.references['sn_limit']:.4f})")
    _finish(ctx, _band_failures(last, rep.references))


@main.command("sweep-s")
@click.option("--N", "N", type=int, default=10_000, show_default=True)
@click.option("--n", "n", type=int, default=100, show_default=True)
@click.option("--s-grid", default="1,2,5,10,20,50,100", show_default=True)
@click.option("--trials", type=int, default=None, help="Default 10 (100 with --paper-scale).")
@click.pass_obj
def cmd_sweep_s(ctx: Ctx, N, n, s_grid, trials):
    """Extreme singular values versus column sparsity s."""
    trials = trials or (100 if ctx.paper_scale else 10)
    grid = _float_list(s_grid)
    try:
        rep = spectra.sparsity_sweep(N, n, grid, trials, ctx.seed, threads=ctx.threads)
    except DomainError as exc:
        raise click.UsageError(str(exc))
    ctx.write("sweep.csv", rep.rows_csv())
    ctx.write_sidecar("sweep.json", ctx.config("sweep-s", N=N, n=n, s_grid=grid, trials=trials), rep.summary())
    for p in rep.points:
        flag = f"  [{'; '.join(p.flags)}]" if p.flags else ""
        click.echo(f"s={p.s:g}: mean s1={p.s1_mean:.4f} mean sn={p.sn_mean:.4f}{flag}")
    full = [p for p in rep.points if p.s == n]
    _finish(ctx, _band_failures(full[0], rep.references) if full else [])


@main.command("tw")
@click.option("--Ns", "Ns", default="2000,8000", show_default=True)
@click.option("--samples", type=int, default=None, help="Samples per N (default 2000, 10000 with --paper-scale).")
@click.option("--kind", type=click.Choice(["largest", "smallest", "both"]), default="both", show_default=True)
@click.option("--aspect", type=float, default=0.01, show_default=True)
@click.option("--s-ratio", type=float, default=0.2, show_default=True)
@click.option("--ks-max", type=float, default=0.10, show_default=True, help="KS threshold at the largest N.")
@click.pass_obj
def cmd_tw(ctx: Ctx, Ns, samples, kind, aspect, s_ratio, ks_max):
    """Rescaled extreme singular values against TW1."""
    samples = samples or (10_000 if ctx.paper_scale else 2000)
    Ns = _int_list(Ns)
    kinds = ["largest", "smallest"] if kind == "both" else [kind]
    try:
        rep = spectra.tw_experiment(Ns, aspect, s_ratio, samples, ctx.seed, kinds, threads=ctx.threads)
    except DomainError as exc:
        raise click.UsageError(str(exc))
    for N in Ns:
        sub = spectra.TwReport([r for r in rep.results if r.N == N], rep.meta)
        ctx.write(f"twcdf_N{N}.csv", sub.cdf_csv())
    cfg = ctx.config("tw", Ns=Ns, samples=samples, kind=kind, aspect=aspect, s_ratio=s_ratio)
    ctx.write_sidecar("tw.json", cfg, rep.summary())
    fails = []
    for k in kinds:
        ks = [rep.get(N, k).ks for N in Ns]
        click.echo(f"{k}: KS by N " + ", ".join(f"{N}:{v:.4f}" for N, v in zip(Ns, ks)))
        if len(ks) > 1 and not ks[-1] < ks[0]:
            fails.append(f"{k}: KS did not decrease from N={Ns[0]} to N={Ns[-1]}")
        if ks[-1] > ks_max:
            fails.append(f"{k}: KS {ks[-1]:.4f} > {ks_max} at N={Ns[-1]}")
    _finish(ctx, fails)


@main.command("tw-cdf")
@click.option("--x", "xs", type=float, multiple=True, required=True, help="Evaluation point(s).")
def cmd_tw_cdf(xs):
    """Print F1(x)."""
    for x in xs:
        click.echo(f"{x!r} {tw.tw1_cdf(x)!r}")


@main.command("calibrate")
@click.option("--jl-trials", type=int, default=2000, show_default=True)
@click.option("--singular-trials", type=int, default=200, show_default=True)
@click.option("--file", "fname", default="constants.json", show_default=True)
@click.pass_obj
def cmd_calibrate(ctx: Ctx, jl_trials, singular_trials, fname):
    """Calibrate the absolute constants and write them as JSON."""
    budget = C.Budget(jl_trials=jl_trials, singular_trials=singular_trials)
    res = C.calibrate(budget=budget, seed=ctx.seed)
    path = ctx.write(fname, res.to_json())
    click.echo(f"wrote {path}")
    for k, v in res.constants.to_dict().items():
        click.echo(f"  {k}: {v!r}")
    for w in res.warnings:
        click.echo(f"warning: {w}", err=True)


if __name__ == "__main__":
    main()
