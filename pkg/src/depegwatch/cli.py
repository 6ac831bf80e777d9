"""Command-line pipeline: simulate -> metrics -> label -> detect -> tune ->
score -> report, plus manifest verification.

Exit codes: 0 ok, 1 usage error, 2 data validation failure, 3 numerical
failure.
"""

from __future__ import annotations

import dataclasses
import json
import os
import sys

import click

from . import bocd, evaluation, metrics, pipeline
from .core import (
    MetricSeries,
    NumericalError,
    PriceTable,
    TokenId,
    ValidationError,
    fit_stats,
    standardize,
)
from .simulator import run_scenario


@click.group()
@click.option("--out-dir", type=click.Path(), default=".",
              help="Directory for command outputs.")
@click.option("--seed", type=int, default=None,
              help="Override the scenario seed.")
@click.option("--period", type=int, default=3600,
              help="Aggregation period in seconds.")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Path to the command's JSON config file.")
@click.pass_context
def cli(ctx: click.Context, out_dir: str, seed: int | None, period: int,
        config_path: str | None) -> None:
    """Depeg detection pipeline for StableSwap pools."""
    ctx.obj = {"out_dir": out_dir, "seed": seed, "period": period,
               "config": config_path}


def _out_dir(ctx: click.Context, override: str | None) -> str:
    out = override or ctx.obj["out_dir"]
    os.makedirs(out, exist_ok=True)
    return out


def _registry_for(data_dir: str, registry_path: str | None):
    path = registry_path or os.path.join(data_dir, "registry.json")
    if not os.path.exists(path):
        raise ValidationError(f"pool registry not found at {path}")
    return pipeline.load_pool_registry(path)


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True),
              required=False, help="Scenario JSON (falls back to the global --config).")
@click.option("--out-dir", "out_override", type=click.Path(), default=None)
@click.pass_context
def simulate(ctx: click.Context, config_path: str | None,
             out_override: str | None) -> None:
    """Run a synthetic market scenario and write its CSV bundle."""
    config_path = config_path or ctx.obj["config"]
    if not config_path:
        raise click.UsageError("simulate requires --config scenario.json")
    out_dir = _out_dir(ctx, out_override)
    cfg = pipeline.load_scenario_config(config_path)
    if ctx.obj["seed"] is not None:
        cfg = dataclasses.replace(cfg, seed=ctx.obj["seed"])
    output = run_scenario(cfg)
    written = pipeline.write_scenario(out_dir, output)
    pipeline.write_manifest(out_dir, "simulate", [config_path], written,
                            {"seed": cfg.seed, "rng": cfg.rng})
    click.echo(f"scenario written to {out_dir} "
               f"({len(output.stream.trades)} trades"
               f"{', truncated' if output.truncated else ''})")


@cli.command("metrics")
@click.option("--data-dir", type=click.Path(exists=True), required=True)
@click.option("--registry", "registry_path", type=click.Path(), default=None)
@click.option("--out-dir", "out_override", type=click.Path(), default=None)
@click.option("--markout-horizon", type=int, default=300)
@click.pass_context
def metrics_cmd(ctx: click.Context, data_dir: str, registry_path: str | None,
                out_override: str | None, markout_horizon: int) -> None:
    """Compute every metric series for every pool in the data bundle."""
    out_dir = _out_dir(ctx, out_override)
    period = ctx.obj["period"]
    registry = _registry_for(data_dir, registry_path)
    streams, prices = pipeline.ingest(data_dir, registry, period)
    cfg = metrics.MetricConfig(window=period, markout_horizon=markout_horizon,
                               price_tolerance=period)
    inputs = [os.path.join(data_dir, n) for n in
              ("trades.csv", "liquidity.csv", "reserves.csv", "prices.csv")
              if os.path.exists(os.path.join(data_dir, n))]
    written = []
    for pool_id, stream in sorted(streams.items()):
        for name, token, series in pipeline.compute_pool_metrics(
                stream, prices, registry[pool_id], cfg, period):
            path = os.path.join(out_dir,
                                pipeline.metric_filename(pool_id, name, token))
            pipeline.write_metric_series(path, series)
            written.append(path)
    pipeline.write_manifest(out_dir, "metrics", inputs, written,
                            {"period": period,
                             "markout_horizon": markout_horizon})
    click.echo(f"wrote {len(written)} metric files to {out_dir}")


@cli.command()
@click.option("--data-dir", type=click.Path(exists=True), required=True)
@click.option("--registry", "registry_path", type=click.Path(), default=None)
@click.option("--pool-id", required=True)
@click.option("--threshold", type=float, default=0.05,
              help="Share-price deviation that defines a depeg.")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.pass_context
def label(ctx: click.Context, data_dir: str, registry_path: str | None,
          pool_id: str, threshold: float, out_path: str) -> None:
    """Label true depegs from LP share price vs virtual price."""
    period = ctx.obj["period"]
    registry = _registry_for(data_dir, registry_path)
    if pool_id not in registry:
        raise ValidationError(f"unknown pool_id {pool_id!r}")
    streams, prices = pipeline.ingest(data_dir, registry, period)
    sp, vp = pipeline.share_price_series(streams[pool_id], prices,
                                         registry[pool_id], period)
    cfg = evaluation.ScoringConfig(depeg_threshold=threshold)
    labels = evaluation.label_depegs(sp, vp, cfg)
    pipeline.write_csv(out_path, pipeline.LABELS_HEADER,
                       [(l.ts, l.deviation) for l in labels])
    click.echo(f"{len(labels)} depeg labels -> {out_path}")


def _load_params_doc(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _prepare_series(series: MetricSeries, transform: str,
                    stats: tuple[float, float] | None) -> MetricSeries:
    series = pipeline.transform_series(series, transform)
    if stats is not None:
        series = standardize(series, stats[0], stats[1])
    return series


@cli.command()
@click.option("--metric-file", type=click.Path(exists=True), required=True)
@click.option("--params", "params_path", type=click.Path(exists=True),
              default=None, help="Tuned parameter JSON from the tune command.")
@click.option("--transform",
              type=click.Choice(["none", "diff", "log_diff"]), default=None)
@click.option("--alpha", type=float, default=None)
@click.option("--beta", type=float, default=None)
@click.option("--kappa", type=float, default=None)
@click.option("--hazard", "hazard_lambda", type=float, default=100.0)
@click.option("--predictive-scale",
              type=click.Choice(list(bocd.PREDICTIVE_SCALES)), default=None)
@click.option("--state", "state_path", type=click.Path(), default=None,
              help="Detector state JSON for resuming.")
@click.option("--resume", is_flag=True, default=False)
@click.option("--save-state", "save_state_path", type=click.Path(), default=None)
@click.option("--out-dir", "out_override", type=click.Path(), default=None)
@click.pass_context
def detect(ctx: click.Context, metric_file: str, params_path: str | None,
           transform: str | None, alpha: float | None, beta: float | None,
           kappa: float | None, hazard_lambda: float,
           predictive_scale: str | None, state_path: str | None, resume: bool,
           save_state_path: str | None, out_override: str | None) -> None:
    """Detect changepoints on a metric file; resumable via saved state."""
    out_dir = _out_dir(ctx, out_override)
    doc = _load_params_doc(params_path) if params_path else {}

    transform = transform or doc.get("transform", "none")
    stats = None
    if "standardize" in doc:
        stats = (doc["standardize"]["mean"], doc["standardize"]["std"])

    state = None
    if resume:
        if not state_path or not os.path.exists(state_path):
            raise ValidationError(
                f"--resume requires an existing state file, got {state_path!r}")
        with open(state_path, encoding="utf-8") as fh:
            state, cfg = bocd.state_from_dict(json.load(fh))
    else:
        prior = bocd.NGParams(
            mu=doc.get("mu", 0.0),
            alpha=alpha if alpha is not None else doc.get("alpha", 1.0),
            beta=beta if beta is not None else doc.get("beta", 1.0),
            kappa=kappa if kappa is not None else doc.get("kappa", 1.0))
        cfg = bocd.DetectorConfig(
            hazard_lambda=doc.get("hazard_lambda", hazard_lambda),
            prior=prior,
            predictive_scale=(predictive_scale
                              or doc.get("predictive_scale", "paper")))

    series = pipeline.read_metric_series(metric_file)
    series = _prepare_series(series, transform, stats)
    changepoints, trace, final_state = bocd.detect_series(series, cfg, state)

    cp_path = os.path.join(out_dir, "changepoints.csv")
    pipeline.write_csv(cp_path, pipeline.CHANGEPOINTS_HEADER,
                       [(c.ts, c.step, c.map_run_length, c.probability)
                        for c in changepoints])
    rl_path = os.path.join(out_dir, "runlength.csv")
    pipeline.write_csv(rl_path, pipeline.CHANGEPOINTS_HEADER,
                       [(p.ts, p.step, p.run_length, p.probability)
                        for p in trace])
    written = [cp_path, rl_path]
    if save_state_path:
        with open(save_state_path, "w", encoding="utf-8") as fh:
            json.dump(bocd.state_to_dict(final_state, cfg), fh)
            fh.write("\n")
        written.append(save_state_path)
    pipeline.write_manifest(out_dir, "detect", [metric_file], written,
                            {"transform": transform,
                             "hazard_lambda": cfg.hazard_lambda,
                             "prior": dataclasses.asdict(cfg.prior),
                             "predictive_scale": cfg.predictive_scale})
    click.echo(f"{len(changepoints)} changepoints -> {cp_path}")


@cli.command()
@click.option("--metric-file", type=click.Path(exists=True), required=True)
@click.option("--labels", "labels_path", type=click.Path(exists=True),
              required=True)
@click.option("--metric", "metric_name", default=None,
              help="Metric name; selects the default transform.")
@click.option("--transform",
              type=click.Choice(["none", "diff", "log_diff"]), default=None)
@click.option("--margin", type=int, default=48 * 3600)
@click.option("--f-beta", type=float, default=1.0)
@click.option("--exponent-lo", type=int, default=-5)
@click.option("--exponent-hi", type=int, default=4)
@click.option("--hazard", "hazard_lambda", type=float, default=100.0)
@click.option("--predictive-scale",
              type=click.Choice(list(bocd.PREDICTIVE_SCALES)),
              default="paper")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.pass_context
def tune(ctx: click.Context, metric_file: str, labels_path: str,
         metric_name: str | None, transform: str | None, margin: int,
         f_beta: float, exponent_lo: int, exponent_hi: int,
         hazard_lambda: float, predictive_scale: str, out_path: str) -> None:
    """Grid-search detector hyperparameters against labelled depegs."""
    if transform is None:
        transform = pipeline.DEFAULT_TRANSFORMS.get(metric_name or "", "none")
    raw = pipeline.read_metric_series(metric_file, metric_name or "")
    transformed = pipeline.transform_series(raw, transform)
    if len(transformed) == 0:
        raise ValidationError("metric file has too few points to tune on")
    mean, std = fit_stats(transformed)
    if std <= 0:
        raise ValidationError("training series is constant; cannot standardize")
    train = standardize(transformed, mean, std)

    label_ts = [ts for ts, _ in pipeline.read_labels(labels_path)]
    scoring = evaluation.ScoringConfig(margin_m=margin, f_beta=f_beta)
    space = evaluation.GridSpace(exponent_range=(exponent_lo, exponent_hi))
    base = bocd.DetectorConfig(hazard_lambda=hazard_lambda,
                               predictive_scale=predictive_scale)
    prior, report = evaluation.tune(train, label_ts, space, scoring, base)

    doc = {
        "metric": metric_name or raw.metric_name,
        "transform": transform,
        "standardize": {"mean": mean, "std": std},
        "hazard_lambda": hazard_lambda,
        "predictive_scale": predictive_scale,
        "mu": prior.mu,
        "alpha": prior.alpha,
        "beta": prior.beta,
        "kappa": prior.kappa,
        "train_score": {"F": report.lf_score, "P": report.precision,
                        "R": report.weighted_recall},
    }
    if report.note:
        doc["note"] = report.note
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    click.echo(f"best prior alpha={prior.alpha} beta={prior.beta} "
               f"kappa={prior.kappa} lF={report.lf_score:.5f} -> {out_path}")


@cli.command()
@click.option("--labels", "labels_path", type=click.Path(exists=True),
              required=True)
@click.option("--changepoints", "cp_path", type=click.Path(exists=True),
              required=True)
@click.option("--pool", required=True)
@click.option("--metric", "metric_name", required=True)
@click.option("--params", "params_path", type=click.Path(exists=True),
              default=None)
@click.option("--margin", type=int, default=48 * 3600)
@click.option("--f-beta", type=float, default=1.0)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--append", is_flag=True, default=False)
def score(labels_path: str, cp_path: str, pool: str, metric_name: str,
          params_path: str | None, margin: int, f_beta: float, out_path: str,
          append: bool) -> None:
    """Score changepoints as leading indicators of labelled depegs."""
    label_ts = [ts for ts, _ in pipeline.read_labels(labels_path)]
    predictions = pipeline.read_changepoints(cp_path)
    scoring = evaluation.ScoringConfig(margin_m=margin, f_beta=f_beta)
    report = evaluation.lf_score(label_ts, predictions, scoring)
    doc = _load_params_doc(params_path) if params_path else {}
    row = (pool, metric_name, report.lf_score, report.precision,
           report.weighted_recall,
           pipeline.fmt(doc["alpha"]) if "alpha" in doc else "",
           pipeline.fmt(doc["beta"]) if "beta" in doc else "",
           pipeline.fmt(doc["kappa"]) if "kappa" in doc else "")
    pipeline.append_score_row(out_path, row, append=append)
    click.echo(f"F={report.lf_score:.5f} P={report.precision:.5f} "
               f"R={report.weighted_recall:.5f} -> {out_path}")


@cli.command()
@click.option("--scores", "score_paths", type=click.Path(exists=True),
              multiple=True, help="Score CSVs to merge into the results table.")
@click.option("--prices", "prices_path", type=click.Path(exists=True),
              default=None)
@click.option("--token", "token_symbol", default=None)
@click.option("--level", type=float, default=0.99)
@click.option("--changepoints", "cp_path", type=click.Path(exists=True),
              default=None)
@click.option("--margin", type=int, default=48 * 3600)
@click.option("--out-dir", "out_override", type=click.Path(), default=None)
@click.pass_context
def report(ctx: click.Context, score_paths: tuple[str, ...],
           prices_path: str | None, token_symbol: str | None, level: float,
           cp_path: str | None, margin: int,
           out_override: str | None) -> None:
    """Emit the pool-results table and the per-event lead-time report."""
    out_dir = _out_dir(ctx, out_override)
    written = []
    inputs = list(score_paths)

    if score_paths:
        rows = []
        for path in score_paths:
            rows.extend(pipeline.read_score_rows(path))
        rows.sort(key=lambda r: (r[0], r[1]))
        table_path = os.path.join(out_dir, "pool_results.csv")
        pipeline.write_csv(table_path, pipeline.SCORES_HEADER, rows)
        written.append(table_path)

    if prices_path and token_symbol and cp_path:
        inputs += [prices_path, cp_path]
        samples = pipeline.read_price_samples(prices_path, token_symbol)
        table = PriceTable(samples)
        series = table.series(TokenId(token_symbol), ctx.obj["period"])
        crossings = evaluation.price_threshold_crossings(series, level)
        predictions = sorted(pipeline.read_changepoints(cp_path))
        lead_rows = []
        for crossing in crossings:
            eligible = [x for x in predictions
                        if 0 <= crossing - x <= margin]
            if eligible:
                first = eligible[0]
                lead_rows.append((crossing, first, crossing - first))
            else:
                lead_rows.append((crossing, "", ""))
        lead_path = os.path.join(out_dir, "leadtime.csv")
        pipeline.write_csv(lead_path,
                           ["crossing_ts", "changepoint_ts", "lead_seconds"],
                           lead_rows)
        written.append(lead_path)

    if not written:
        raise click.UsageError(
            "report needs --scores and/or --prices/--token/--changepoints")
    pipeline.write_manifest(out_dir, "report", inputs, written,
                            {"level": level, "margin": margin})
    for path in written:
        click.echo(f"wrote {path}")


@cli.command()
@click.option("--manifest", "manifest_path", type=click.Path(exists=True),
              required=True)
def verify(manifest_path: str) -> None:
    """Re-check the output digests recorded in a manifest."""
    problems = pipeline.verify_manifest(manifest_path)
    if problems:
        for problem in problems:
            click.echo(f"FAIL: {problem}")
        raise ValidationError(f"{len(problems)} manifest mismatches")
    click.echo("manifest verified: all digests match")


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as err:
        return err.exit_code
    except click.UsageError as err:
        err.show()
        return 1
    except click.ClickException as err:
        err.show()
        return 1
    except ValidationError as err:
        click.echo(f"error: {err}", err=True)
        return 2
    except NumericalError as err:
        click.echo(f"numerical failure: {err}", err=True)
        return 3
    except OSError as err:
        click.echo(f"error: {err}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
