"""Command-line entry point.

Exit codes: 0 ok, 2 bad config or usage, 3 numerical abort, 4 game
assumption failure, 5 gradient check failure.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click

from incentfed import config as cfg_mod, engine, game as game_mod, gradcheck, metrics
from incentfed.errors import ConfigError, GameAssumptionError, NumericalAbort

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_GAME = 4
EXIT_GRADCHECK = 5
NOT_REACHED = "not reached"

log = logging.getLogger("incentfed")


def _fail(message: str, code: int):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load(config_path):
    try:
        return cfg_mod.build(cfg_mod.load(config_path))
    except ConfigError as exc:
        _fail(str(exc), EXIT_CONFIG)


def _run_or_abort(fed, problems=None):
    try:
        return engine.run(fed, problems)
    except NumericalAbort as exc:
        _fail(f"numerical abort: {exc}", EXIT_NUMERICAL)


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Incentive-aware federated averaging simulator."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


@main.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--per-iter-trace", is_flag=True, help="Record consensus error and loss at every local iteration.")
@click.option("--no-figures", is_flag=True, help="Skip the PNG figures.")
def cmd_run(config_path, out_dir, per_iter_trace, no_figures):
    """Run IncentFedAvg and write trace.csv, trace.json and resolved_config.json."""
    res = _load(config_path)
    if per_iter_trace:
        res.fed.per_iter = True
    trace = _run_or_abort(res.fed)
    out = Path(out_dir)
    resolved = cfg_mod.resolved_document(res, trace)
    _write(out / "trace.csv", trace.csv_text())
    _write(out / "trace.json", engine.trace_json_text(trace, {"config": resolved}))
    _write(out / "resolved_config.json", json.dumps(resolved, indent=2))
    if res.figures and not no_figures:
        from incentfed import plotting

        plotting.plot_run(trace, out / "figures")
    for w in trace.warnings:
        click.echo(f"warning: {w}", err=True)
    click.echo(f"wrote {out / 'trace.csv'} ({len(trace.loss)} rows)")


@main.command("solve-ne")
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
def cmd_solve_ne(config_path):
    """Print the participation equilibrium and the game's monotonicity moduli as JSON."""
    res = _load(config_path)
    fed = res.fed
    est = game_mod.monotonicity_probe(fed.game, fed.probe_samples, fed.probe_seed)
    if not est.strongly_monotone:
        _fail(f"monotonicity probe failed: mu_hat={est.mu:g} <= 0", EXIT_GAME)
    try:
        n_star = game_mod.solve_ne(fed.game, fed.ne_tol, estimate=est)
    except GameAssumptionError as exc:
        _fail(str(exc), EXIT_GAME)
    doc = {
        "n_star": n_star.tolist(),
        "p_star": engine.weights(n_star).tolist(),
        "mu_hat": est.mu,
        "L_hat": est.lipschitz,
        "gamma_tilde_max": est.max_step,
        "delta_0": metrics.delta_0(fed.initial_profile(), n_star),
    }
    click.echo(json.dumps(doc, indent=2))


@main.command("check-grads")
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--points", default=50, show_default=True, help="Random points per family.")
def cmd_check_grads(config_path, points):
    """Finite-difference check of the payoff pseudo-gradient and the loss gradient."""
    res = _load(config_path)
    fed = res.fed
    results = [
        gradcheck.check_payoff(fed.game, points),
        gradcheck.check_losses(engine.build_problems(fed), points),
    ]
    ok = True
    for r in results:
        status = "ok" if r.passed else "FAIL"
        click.echo(f"{r.family:<10} worst relative error {r.worst:.3e} (threshold {r.threshold:.0e}) {status}")
        ok &= r.passed
    if not ok:
        sys.exit(EXIT_GRADCHECK)


def _parse_h_list(text, default):
    if text is None:
        return list(default)
    items = [s.strip() for s in text.split(",") if s.strip()]
    try:
        values = [int(s) for s in items]
    except ValueError:
        _fail(f"--h must be a comma-separated list of integers, got {text!r}", EXIT_CONFIG)
    if not values:
        _fail("--h list is empty", EXIT_CONFIG)
    if any(v < 1 for v in values):
        _fail("every H in --h must be at least 1", EXIT_CONFIG)
    return values


@main.command("sweep-h")
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--h", "h_text", default=None, help="Comma-separated local step counts (default 1,5,10,20).")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--workers", default=1, show_default=True, help="Runs executed concurrently.")
@click.option("--no-figures", is_flag=True)
def cmd_sweep_h(config_path, h_text, out_dir, workers, no_figures):
    """Rerun one configuration for several H and summarize rounds-to-target loss."""
    res = _load(config_path)
    h_list = _parse_h_list(h_text, res.h_list)
    problems = engine.build_problems(res.fed)
    configs = {H: dataclasses.replace(res.fed, H=H) for H in h_list}

    def job(H):
        return H, _run_or_abort(configs[H], problems)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            traces = dict(pool.map(job, h_list))
    else:
        traces = dict(job(H) for H in h_list)

    first = traces[h_list[0]]
    p_ref = first.p_star if first.p_star is not None else first.p[-1]
    f_star, f_star_source = metrics.reference_loss(problems, p_ref, [tr.loss for tr in traces.values()])
    initial = float(first.loss[0])
    target = metrics.target_loss(f_star, initial, res.target_fraction)

    out = Path(out_dir)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for idx, H in enumerate(h_list):
        text = traces[H].csv_text()
        _write(out / f"trace_H{H}.csv", text)
        rows = list(csv.reader(io.StringIO(text)))
        if idx == 0:
            writer.writerow(["H"] + rows[0])
        for row in rows[1:]:
            writer.writerow([H] + row)
    _write(out / "sweep.csv", buf.getvalue())

    summary = {
        "h_list": h_list,
        "f_star": f_star,
        "f_star_source": f_star_source,
        "initial_loss": initial,
        "target_fraction": res.target_fraction,
        "target_loss": target,
        "rounds_to_target": {},
    }
    for H in h_list:
        hit = metrics.rounds_to_target(traces[H].loss, target)
        summary["rounds_to_target"][str(H)] = NOT_REACHED if hit is None else hit
    _write(out / "summary.json", json.dumps(summary, indent=2))
    if res.figures and not no_figures:
        from incentfed import plotting

        plotting.plot_sweep(traces, out / "figures", target)
    for H in h_list:
        click.echo(f"H={H:<3} rounds to target: {summary['rounds_to_target'][str(H)]}")


if __name__ == "__main__":
    main()
