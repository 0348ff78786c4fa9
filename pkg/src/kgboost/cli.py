"""Command-line front end.

Exit codes: 0 success, 1 runtime or check failure, 2 usage error,
3 enumeration capacity refusal.  Every command writes ``manifest.json`` at
the root of its ``--out`` directory.
"""

from __future__ import annotations

import csv
import functools
import hashlib
import json
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import click
import numpy as np

from . import fixtures, synthetic
from .boosting import BETA_GRID, DEFAULT_DELTA, DEFAULT_SIGMA, BoostConfig, BoostedModel, train
from .data import bin_dataset, load_csv, load_features_csv, fit_quantizer, quantize
from .errors import CapacityError, KGBError
from .metrics import auc_roc, prr, rejection_curve, rmse
from .oracle import run_checks, verify_convergence
from .posterior import default_threads, ensemble, sample_posterior


@dataclass
class RunManifest:
    command: str
    config_hash: str
    master_seed: int
    inputs: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    def write(self, out: Path) -> None:
        (out / "manifest.json").write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def _hash(doc) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _guard(fn):
    """Map library errors onto the exit-code contract."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except CapacityError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(3)
        except (KGBError, ValueError, OSError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _model_options(fn):
    opts = [
        click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False)),
        click.option("--target", required=True, help="Target column name or index."),
        click.option("--iterations", type=click.IntRange(min=0), default=100, show_default=True),
        click.option("--lr", type=float, default=0.1, show_default=True, help="Learning rate."),
        click.option("--depth", type=click.IntRange(min=0), default=6, show_default=True),
        click.option("--bins", type=click.IntRange(min=1), default=64, show_default=True,
                     help="Thresholds per feature (n); features get n+1 bins."),
        click.option("--beta", type=click.FloatRange(min=0), default=0.1, show_default=True,
                     help=f"Random strength; tuning grid {BETA_GRID}."),
        click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True),
        click.option("--clip-R", "clip_r", type=float, default=None, help="Clip targets so sum(y^2)/2N <= R^2."),
        click.option("--out", required=True, type=click.Path(file_okay=False)),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


@click.group()
def main():
    """Randomized oblivious-tree boosting with Gaussian-process sampling."""


@main.command("train")
@_model_options
@click.option("--lambda", "l2", type=click.FloatRange(min=0), default=0.0, show_default=True,
              help="Shrinkage regularization; leaf-value regularization is fixed at 0.")
@click.option("--trace/--no-trace", default=False, help="Write per-iteration trace.csv.")
@_guard
def cmd_train(data_path, target, iterations, lr, depth, bins, beta, seed, clip_r, out, l2, trace):
    """Train a boosted model and write model.json."""
    t0 = time.perf_counter()
    target = int(target) if target.lstrip("-").isdigit() else target
    raw = load_csv(data_path, target, clip_r)
    cfg = BoostConfig(learning_rate=lr, l2=l2, iterations=iterations, depth=depth, bins=bins, beta=beta, seed=seed)
    data = bin_dataset(raw, bins)
    model = train(data, cfg, trace=trace)
    out = _outdir(out)
    model.save(out / "model.json")
    artifacts = {"model": "model.json"}
    if trace:
        model.trace.write_csv(out / "trace.csv")
        artifacts["trace"] = "trace.csv"
    RunManifest("train", cfg.digest(), seed, {"data": str(data_path)}, artifacts,
                time.perf_counter() - t0).write(out)


@main.command("predict")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@_guard
def cmd_predict(model_path, data_path, out):
    """Write predictions for the rows of a CSV (columns matched by name)."""
    model = BoostedModel.load(model_path)
    rows, _ = load_features_csv(data_path, model.quantizer.feature_names)
    pred = model.predict(rows)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["query_id", "prediction"])
        for i, p in enumerate(pred):
            w.writerow([i, repr(float(p))])


@main.command("sample")
@_model_options
@click.option("--members", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--prior-iterations", type=click.IntRange(min=1), default=100, show_default=True)
@click.option("--sigma", type=float, default=DEFAULT_SIGMA, show_default=True)
@click.option("--delta", type=float, default=DEFAULT_DELTA, show_default=True)
@click.option("--queries", type=click.Path(exists=True, dir_okay=False), default=None,
              help="CSV of query rows; defaults to the training rows.")
@click.option("--save-members/--no-save-members", default=False, help="Write one model JSON per member.")
@_guard
def cmd_sample(data_path, target, iterations, lr, depth, bins, beta, seed, clip_r, out,
               members, prior_iterations, sigma, delta, queries, save_members):
    """Train posterior samples and write per-query mean and variance."""
    t0 = time.perf_counter()
    target = int(target) if target.lstrip("-").isdigit() else target
    raw = load_csv(data_path, target, clip_r)
    cfg = BoostConfig(learning_rate=lr, iterations=iterations, depth=depth, bins=bins, beta=beta, seed=seed,
                      prior_iterations=prior_iterations, sigma=sigma, delta=delta)
    data = bin_dataset(raw, bins)
    cfg.replace(l2=cfg.posterior_l2).check_step(data.n_samples)
    if queries is None:
        qbins = data.bins
    else:
        rows, _ = load_features_csv(queries, raw.feature_names)
        qbins = data.bin_rows(rows)
    out = _outdir(out)
    artifacts = {"summary": "summary.csv"}
    save = None
    if save_members:
        (out / "members").mkdir(exist_ok=True)
        artifacts["members"] = "members/"

        def save(i, s):
            doc = {"member": i, "sigma": s.sigma, "delta": s.delta,
                   "prior": {"trees": s.prior.ensemble.to_list()}, "boosted": s.boosted.to_dict()}
            (out / "members" / f"member_{i:05d}.json").write_text(json.dumps(doc, separators=(",", ":")) + "\n")

    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        if members == 1:
            click.echo("warning: --members 1 gives no variance estimate; writing the mean only", err=True)
            s = sample_posterior(data, cfg, 0)
            if save:
                save(0, s)
            w.writerow(["query_id", "mean"])
            for i, v in enumerate(s.predict_binned(qbins)):
                w.writerow([i, repr(float(v))])
        else:
            summ = ensemble(data, cfg, members, query_bins=qbins, on_member=save, keep_samples=False)
            w.writerow(["query_id", "mean", "variance"])
            for i, (mu, var) in enumerate(zip(summ.mean, summ.variance)):
                w.writerow([i, repr(float(mu)), repr(float(var))])
    RunManifest(
        "sample", cfg.digest(), seed,
        {"data": str(data_path), "queries": None if queries is None else str(queries)}, artifacts,
        time.perf_counter() - t0,
        {"members": members, "effective_lambda": cfg.posterior_l2, "sigma": sigma, "delta": delta,
         "threads": default_threads(), "config": cfg.to_dict()},
    ).write(out)


def _column(rows: dict, name: str, path) -> np.ndarray:
    if name not in rows:
        raise click.UsageError(f"{path}: missing column {name!r} (have {sorted(rows)})")
    return rows[name]


def _read_columns(path) -> dict[str, np.ndarray]:
    mat, header = load_features_csv(path)
    return {h: mat[:, j] for j, h in enumerate(header)}


@main.command("evaluate")
@click.option("--predictions", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--targets", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Optional CSV, row-aligned with --predictions, holding target/domain columns.")
@click.option("--prediction-column", default="mean", show_default=True)
@click.option("--uncertainty-column", default="variance", show_default=True)
@click.option("--target-column", default="target", show_default=True)
@click.option("--domain-column", default="in_domain", show_default=True,
              help="1 for in-domain, 0 for out-of-domain; used when present.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@_guard
def cmd_evaluate(predictions, targets, prediction_column, uncertainty_column, target_column, domain_column, out):
    """RMSE, PRR and AUC-ROC of uncertainty scores."""
    t0 = time.perf_counter()
    cols = _read_columns(predictions)
    if targets is not None:
        extra = _read_columns(targets)
        n = len(next(iter(cols.values())))
        if len(next(iter(extra.values()))) != n:
            raise click.UsageError("--targets and --predictions have different row counts")
        cols = {**extra, **cols}
    pred = _column(cols, prediction_column, predictions)
    unc = _column(cols, uncertainty_column, predictions)
    tgt = _column(cols, target_column, targets or predictions)
    out = _outdir(out)
    report = {"rmse": rmse(pred, tgt), "prr": prr((pred, unc, tgt))}
    rejection_curve((pred, unc, tgt)).write_csv(out / "curve.csv")
    artifacts = {"metrics": "metrics.json", "curve": "curve.csv"}
    if domain_column in cols:
        is_out = cols[domain_column] == 0
        report.update(auc=auc_roc((unc, is_out)), n_in=int((~is_out).sum()), n_out=int(is_out.sum()))
        inside = ~is_out
        if inside.sum() >= 2:
            report["prr_in_domain"] = prr((pred[inside], unc[inside], tgt[inside]))
    (out / "metrics.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    RunManifest("evaluate", _hash(report), 0, {"predictions": str(predictions), "targets": targets},
                artifacts, time.perf_counter() - t0).write(out)


@main.command("oracle-verify")
@click.option("--fixture", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Fixture JSON; defaults to the bundled 8-point instance.")
@click.option("--max-structures", type=click.IntRange(min=1), default=10**6, show_default=True)
@click.option("--beta", type=click.FloatRange(min=0), default=1.0, show_default=True)
@click.option("--lr", type=float, default=0.1, show_default=True)
@click.option("--lambda", "l2", type=click.FloatRange(min=0), default=0.5, show_default=True)
@click.option("--iterations", type=click.IntRange(min=0), default=500, show_default=True)
@click.option("--trials", type=click.IntRange(min=1), default=5, show_default=True)
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@_guard
def cmd_oracle_verify(fixture, max_structures, beta, lr, l2, iterations, trials, seed, out):
    """Check boosting against brute-force kernels on an enumerable instance."""
    t0 = time.perf_counter()
    fx = fixtures.bundled() if fixture is None else fixtures.load_fixture(fixture)
    data = fx.data
    cfg = BoostConfig(learning_rate=lr, l2=l2, iterations=iterations, depth=fx.depth, bins=fx.bins,
                      beta=beta, seed=seed)
    cfg.check_step(data.n_samples)
    results = run_checks(data, cfg, fx.reference_fit, max_structures=max_structures)
    report = verify_convergence(data, cfg, trials, max_structures=max_structures)
    out = _outdir(out)
    report.write_csv(out / "report.csv")
    report.write_summary(out / "summary.json")
    (out / "checks.json").write_text(json.dumps([asdict(r) for r in results], indent=2) + "\n")
    for r in results:
        click.echo(f"{r.status:>7}  {r.name}  {r.detail}")
    RunManifest("oracle-verify", cfg.digest(), seed, {"fixture": fixture or "bundled"},
                {"checks": "checks.json", "report": "report.csv", "summary": "summary.json"},
                time.perf_counter() - t0).write(out)
    if not all(r.ok for r in results):
        sys.exit(1)


@main.command("synthetic-heart")
@click.option("--seed", type=click.IntRange(min=0), required=True)
@click.option("--points", type=click.IntRange(min=1), default=synthetic.PRESET_POINTS, show_default=True)
@click.option("--domain-variant", type=click.Choice(synthetic.VARIANTS), default="verbatim", show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@_guard
def cmd_synthetic_heart(seed, points, domain_variant, out):
    """Write train.csv (in-domain points) and eval.csv (all points with in_domain flag)."""
    t0 = time.perf_counter()
    sample = synthetic.generate(seed, points, domain_variant)
    out = _outdir(out)
    sample.write_train_csv(out / "train.csv")
    sample.write_eval_csv(out / "eval.csv")
    RunManifest("synthetic-heart", _hash({"points": points, "variant": domain_variant}), seed, {},
                {"train": "train.csv", "eval": "eval.csv"}, time.perf_counter() - t0,
                {"preset": synthetic.PRESET, "members": synthetic.PRESET_MEMBERS,
                 "n_train": int(sample.in_domain.sum())}).write(out)


if __name__ == "__main__":
    main()
