"""Command-line driver: generate -> train -> offline -> fitts -> stats -> latent."""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import analysis, experiment, models, plots

EXIT_CONFIG = 2
EXIT_MISSING_DATA = 3
EXIT_TRAINING = 4


def _load(config, seed, subjects, roster) -> experiment.ExperimentConfig:
    import dataclasses

    cfg = experiment.load_config(config)
    if seed is not None:
        cfg = dataclasses.replace(cfg, master_seed=seed)
    if subjects is not None:
        cfg = dataclasses.replace(cfg, subjects=subjects)
    if roster is not None:
        names = tuple(part.strip() for part in roster.split(",") if part.strip())
        cfg = dataclasses.replace(cfg, roster=names)
    return cfg


def _run(func):
    try:
        func()
    except experiment.ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except experiment.MissingDataError as exc:
        click.echo(f"missing data: {exc}", err=True)
        sys.exit(EXIT_MISSING_DATA)
    except models.TrainingError as exc:
        click.echo(f"training failed: {exc}", err=True)
        sys.exit(EXIT_TRAINING)


_shared = [
    click.option("--config", type=click.Path(), default=None, help="TOML config file."),
    click.option("--out", type=click.Path(), default="runs", show_default=True),
    click.option("--seed", type=int, default=None, help="Override the master seed."),
    click.option("--subjects", type=int, default=None, help="Override the subject count."),
    click.option("--roster", type=str, default=None,
                 help="Comma-separated classifier subset, e.g. LDA-R,LSTM-V."),
    click.option("--jobs", type=int, default=1, show_default=True,
                 help="Subjects processed in parallel (results are identical)."),
]


def shared_options(func):
    for option in reversed(_shared):
        func = option(func)
    return func


@click.group()
def main():
    """Synthetic myoelectric-control study: data, classifiers, closed-loop test."""


@main.command()
@shared_options
def generate(config, out, seed, subjects, roster, jobs):
    """Synthesize ramp and continuous sessions for every virtual subject."""
    def go():
        cfg = _load(config, seed, subjects, roster)
        results = experiment.map_subjects("generate", cfg, Path(out), jobs)
        for subject, files in enumerate(results):
            click.echo(f"subject {subject}: wrote {len(files)} sessions")
    _run(go)


@main.command()
@shared_options
def train(config, out, seed, subjects, roster, jobs):
    """Train the classifier roster from the generated sessions."""
    def go():
        cfg = _load(config, seed, subjects, roster)
        results = experiment.map_subjects("train", cfg, Path(out), jobs)
        for subject, written in enumerate(results):
            click.echo(f"subject {subject}: trained {', '.join(written)}")
    _run(go)


@main.command()
@shared_options
@click.option("--figures/--no-figures", default=True, show_default=True)
def offline(config, out, seed, subjects, roster, jobs, figures):
    """Decision streams and error reports on the held-out test trial."""
    def go():
        cfg = _load(config, seed, subjects, roster)
        out_dir = Path(out)
        reports = experiment.map_subjects("offline", cfg, out_dir, jobs)
        for subject, report in enumerate(reports):
            odir = experiment.subject_dir(out_dir, subject) / "offline"
            if figures and report["_streams"]:
                test_idx = report["test_trial"]
                data = experiment.load_subject_data(cfg, experiment.subject_dir(out_dir, subject))
                times = data.cont_seqs[test_idx].times
                plots.plot_decision_streams(
                    report["_streams"], report["_labels"], times,
                    cfg.rejection.threshold, odir / "decision_streams.png",
                )
                plots.plot_rejection_sweep(
                    experiment.SWEEP_THRESHOLDS, report["_sweeps"],
                    odir / "rejection_sweep.png",
                )
            for name, entry in report["classifiers"].items():
                click.echo(
                    f"subject {subject} {name}: accuracy {entry['frame_accuracy']:.3f}, "
                    f"total error {entry['total_error_rate']:.3f}, "
                    f"instability {entry['offline_instability']:.2f}"
                )
    _run(go)


@main.command()
@shared_options
def fitts(config, out, seed, subjects, roster, jobs):
    """Closed-loop target-acquisition runs, Latin-square ordered."""
    def go():
        cfg = _load(config, seed, subjects, roster)
        out_dir = Path(out)
        all_rows = []
        for subject, rows in enumerate(
            experiment.map_subjects("fitts", cfg, out_dir, jobs)
        ):
            all_rows.extend(rows)
            for row in rows:
                m = row["metrics"]
                click.echo(
                    f"subject {subject} {row['classifier']}: completion "
                    f"{m['completion_rate']:.2f}, time {m['movement_time']:.2f}s, "
                    f"instability {m['instability']:.2f}"
                )
        if all_rows:
            path = experiment.write_metrics_csv(out_dir, all_rows)
            click.echo(f"wrote {path}")
    _run(go)


@main.command()
@shared_options
@click.option("--metrics", type=click.Path(), default=None,
              help="Metrics CSV (defaults to <out>/metrics.csv).")
@click.option("--figures/--no-figures", default=True, show_default=True)
def stats(config, out, seed, subjects, roster, jobs, metrics, figures):
    """Repeated-measures ANOVA and baseline comparisons over the run metrics."""
    def go():
        cfg = _load(config, seed, subjects, roster)
        out_dir = Path(out)
        metrics_path = Path(metrics) if metrics else out_dir / "metrics.csv"
        if not metrics_path.exists():
            raise experiment.MissingDataError(f"{metrics_path} not found; run fitts first")
        results = experiment.run_stats(metrics_path)
        paths = experiment.write_stats(out_dir, results)
        if figures:
            table = experiment.read_metrics_csv(metrics_path)
            classifiers = sorted({c for cells in table.values() for _, c in cells})
            paths.append(
                plots.plot_metric_boxes(table, classifiers, out_dir / "metrics_boxplots.png")
            )
        for metric, result in sorted(results.items()):
            line = f"{metric}: F{result.df}={result.F:.3f}, p={result.p:.4g}"
            if result.posthoc:
                sig = [f"{ph.pair[0]} (p_adj={ph.p_adjusted:.3g}, d={ph.cohens_d:.2f} "
                       f"{ph.effect_label})" for ph in result.posthoc]
                line += "; vs baseline: " + ", ".join(sig)
            click.echo(line)
        click.echo("wrote " + ", ".join(str(p) for p in paths))
    _run(go)


@main.command()
@shared_options
@click.option("--figures/--no-figures", default=True, show_default=True)
def latent(config, out, seed, subjects, roster, jobs, figures):
    """Export 2D projections of the pre-trained latent space per data source."""
    def go():
        cfg = _load(config, seed, subjects, roster)
        out_dir = Path(out)
        for subject in range(cfg.subjects):
            written = experiment.latent_subject(cfg, subject, out_dir)
            if figures:
                panels = {}
                for name, path in written.items():
                    rows = np.genfromtxt(path, delimiter=",", skip_header=1,
                                         dtype=None, encoding="utf-8")
                    rows = np.atleast_1d(rows)
                    points = np.array([[r[0], r[1]] for r in rows])
                    tags = [r[2] for r in rows]
                    panels[name] = (points, tags)
                ldir = experiment.subject_dir(out_dir, subject) / "latent"
                plots.plot_latent(panels, ldir / "latent_space.png")
            click.echo(f"subject {subject}: exported {', '.join(written)}")
    _run(go)


if __name__ == "__main__":
    main()
