"""Command-line entry point.

Subcommands: gen-synth, train, kfold, ablate, sweep, gradcheck, eval.
Exit codes: 0 success, 1 config error, 2 runtime/numeric error,
3 verification failure (gradient check over tolerance).
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from .autodiff import NumericError, Parameter, grad_check
from .autodiff.gradcheck import PROBES
from .checkpoint import load_checkpoint
from .dae import DAEConfig
from .data import generate, load_manifest
from .mmd import KernelConfig, mmd_estimate
from .objective import ModelBundle
from .training import (
    ConfigError,
    ablate,
    config_hash,
    evaluate_records,
    kfold_select,
    load_run_config,
    sweep_unlabeled,
    train,
)
from .training import reports

EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_CHECK_FAILED = 3

log = logging.getLogger("emomatch")


class CheckFailure(RuntimeError):
    pass


def _run(fn) -> None:
    try:
        fn()
    except (ConfigError, click.ClickException) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except CheckFailure as exc:
        click.echo(f"check failed: {exc}", err=True)
        sys.exit(EXIT_CHECK_FAILED)
    except (NumericError, Exception) as exc:  # noqa: BLE001 - CLI boundary
        if isinstance(exc, SystemExit):
            raise
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)


def _load(config_path, seed):
    cfg = load_run_config(config_path)
    if seed is not None:
        cfg = type(cfg)(
            synth=type(cfg.synth).from_dict({**cfg.synth.to_dict(), "seed": seed}),
            train=cfg.train.replace(seed=seed),
            manifest_path=cfg.manifest_path,
            out_dir=cfg.out_dir,
        )
    return cfg


def _manifest_for(cfg, manifest_opt):
    path = manifest_opt or cfg.manifest_path
    if path is None:
        raise ConfigError("no manifest: pass --manifest or set paths.manifest in the config")
    return load_manifest(path)


def _new_run_dir(cfg, out_opt, kind: str):
    """(directory, stable id): the id is the config hash, no collision suffix."""
    out = Path(out_opt or cfg.out_dir)
    doc = cfg.to_dict()
    stem = f"{kind}-{config_hash(doc)}"
    run_dir = reports.allocate_run_dir(out, stem)
    reports.write_effective_config(run_dir, doc)
    return run_dir, stem


def _parse_seeds(text: str | None, fallback: int) -> list[int]:
    if not text:
        return [fallback]
    return [int(tok) for tok in text.replace(" ", "").split(",") if tok]


@click.group()
@click.option("--verbose", is_flag=True, help="Debug logging.")
def main(verbose: bool):
    """Semi-supervised multi-modal emotion classification with MMD alignment."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command("gen-synth")
@click.option("--config", "config_path", type=click.Path(), default=None, help="JSON config file.")
@click.option("--out", "out_dir", type=click.Path(), required=True, help="Dataset output directory.")
@click.option("--seed", type=int, default=None, help="Override the generator seed.")
def cmd_gen_synth(config_path, out_dir, seed):
    """Generate the synthetic multi-modal dataset."""

    def body():
        cfg = _load(config_path, seed)
        manifest, report = generate(cfg.synth, out_dir)
        click.echo(json.dumps(report, indent=1, sort_keys=True))
        counts = np.asarray(report["unlabeled_class_counts"], dtype=float)
        n = counts.sum()
        for k, prior in enumerate(cfg.synth.unlabeled_priors):
            sigma = max(np.sqrt(n * prior * (1.0 - prior)), 1.0)
            if abs(counts[k] - n * prior) > 3.0 * sigma:
                raise CheckFailure(
                    f"unlabeled class {k}: count {counts[k]:.0f} deviates from prior {prior} by >3 sigma"
                )
        click.echo(f"dataset written to {out_dir}")

    _run(body)


@main.command("train")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--manifest", "manifest_opt", type=click.Path(), default=None)
@click.option("--out", "out_opt", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
def cmd_train(config_path, manifest_opt, out_opt, seed):
    """Run one training job (mode per config: fully or semi)."""

    def body():
        cfg = _load(config_path, seed)
        if cfg.train.mode == "fully" and cfg.train.weights.omega != 0.0:
            log.warning("mode=fully ignores omega=%s (no unsupervised part)", cfg.train.weights.omega)
        manifest = _manifest_for(cfg, manifest_opt)
        run_dir, run_id = _new_run_dir(cfg, out_opt, "train")
        result = train(cfg.train, manifest, run_id=run_id)
        reports.write_train_reports(run_dir, result, manifest.config.get("class_names"))
        t = result.record.test
        click.echo(f"run dir: {run_dir}")
        click.echo(f"test WAP={t.wap:.4f} UA={t.ua:.4f} weightedF1={t.weighted_f1:.4f}")

    _run(body)


@main.command("kfold")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--manifest", "manifest_opt", type=click.Path(), default=None)
@click.option("--out", "out_opt", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
def cmd_kfold(config_path, manifest_opt, out_opt, seed):
    """k-fold cross-validated model selection, then one test evaluation."""

    def body():
        cfg = _load(config_path, seed)
        manifest = _manifest_for(cfg, manifest_opt)
        run_dir, _ = _new_run_dir(cfg, out_opt, "kfold")
        result = kfold_select(cfg.train, manifest)
        reports.write_kfold_reports(run_dir, result, manifest.config.get("class_names"))
        click.echo(f"run dir: {run_dir}")
        click.echo(f"selected fold {result.selected_fold}; test UA={result.test.ua:.4f}")

    _run(body)


@main.command("ablate")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--manifest", "manifest_opt", type=click.Path(), default=None)
@click.option("--out", "out_opt", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--seeds", "seeds_opt", type=str, default=None, help="Comma-separated seed list.")
def cmd_ablate(config_path, manifest_opt, out_opt, seed, seeds_opt):
    """Six-cell component-contribution grid (reconstruction x matching, fully/semi)."""

    def body():
        cfg = _load(config_path, seed)
        manifest = _manifest_for(cfg, manifest_opt)
        run_dir, _ = _new_run_dir(cfg, out_opt, "ablate")
        cells = ablate(manifest, cfg.train, seeds=_parse_seeds(seeds_opt, cfg.train.seed))
        reports.write_ablation_reports(run_dir, cells)
        click.echo(f"run dir: {run_dir}")
        for cell in cells:
            click.echo(
                f"{cell.setting:5s} rec={'on ' if cell.reconstruction else 'off'} "
                f"mmd={'on ' if cell.mmd else 'off'} UA={cell.mean_ua:.4f} WAP={cell.mean_wap:.4f}"
            )

    _run(body)


@main.command("sweep")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--manifest", "manifest_opt", type=click.Path(), default=None)
@click.option("--out", "out_opt", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--seeds", "seeds_opt", type=str, default=None, help="Comma-separated seed list.")
@click.option("--quota-list", "quota_list", type=str, required=True, help="Comma-separated quotas.")
def cmd_sweep(config_path, manifest_opt, out_opt, seed, seeds_opt, quota_list):
    """Unlabeled-quantity sweep: one semi run per quota per seed."""

    def body():
        cfg = _load(config_path, seed)
        manifest = _manifest_for(cfg, manifest_opt)
        quotas = [int(tok) for tok in quota_list.replace(" ", "").split(",") if tok]
        run_dir, _ = _new_run_dir(cfg, out_opt, "sweep")
        points = sweep_unlabeled(manifest, cfg.train, quotas, seeds=_parse_seeds(seeds_opt, cfg.train.seed))
        reports.write_sweep_reports(run_dir, points)
        click.echo(f"run dir: {run_dir}")
        for p in points:
            click.echo(f"quota {p.quota:6d}: UA={p.mean_ua:.4f} WAP={p.mean_wap:.4f}")

    _run(body)


@main.command("gradcheck")
@click.option("--seeds", "n_seeds", type=int, default=20, show_default=True, help="Probe seeds per op.")
@click.option("--epsilon", type=float, default=1e-5, show_default=True)
@click.option("--tolerance", type=float, default=1e-5, show_default=True)
def cmd_gradcheck(n_seeds, epsilon, tolerance):
    """Finite-difference verification of every registered op and the MMD gradients."""

    def body():
        from .autodiff.gradcheck import run_gradcheck_suite

        report = run_gradcheck_suite(seeds=range(n_seeds), epsilon=epsilon)
        report["mmd_estimate"] = _mmd_gradcheck(range(n_seeds), epsilon)
        failed = []
        for name in sorted(report):
            err = report[name]
            status = "ok" if err <= tolerance else "FAIL"
            click.echo(f"{name:36s} max_rel_err={err:.3e}  {status}")
            if err > tolerance:
                failed.append(name)
        if failed:
            raise CheckFailure(f"{len(failed)} op(s) over tolerance {tolerance}: {', '.join(failed)}")
        click.echo(f"all {len(report)} checks passed (tolerance {tolerance})")

    _run(body)


def _mmd_gradcheck(seeds, epsilon: float) -> float:
    worst = 0.0
    for seed in seeds:
        rng = np.random.default_rng(seed)
        p = Parameter("p", rng.normal(size=(4, 3)))
        q = Parameter("q", rng.normal(size=(5, 3)))
        kernel = KernelConfig(sigma_policy="fixed", sigma=float(rng.uniform(0.7, 1.5)))
        worst = max(worst, grad_check(lambda: mmd_estimate(p, q, kernel), [p, q], epsilon))
    return worst


@main.command("eval")
@click.option("--checkpoint", "ckpt_path", type=click.Path(exists=True), required=True)
@click.option("--manifest", "manifest_opt", type=click.Path(), required=True)
@click.option("--split", type=click.Choice(["test", "val"]), default="test", show_default=True)
@click.option("--out", "out_opt", type=click.Path(), default=None, help="Write reports here.")
def cmd_eval(ckpt_path, manifest_opt, split, out_opt):
    """Evaluate a saved checkpoint on the test or validation split."""

    def body():
        from .data import FeaturePipeline

        meta, params = load_checkpoint(ckpt_path)
        manifest = load_manifest(manifest_opt)
        bundle = ModelBundle(
            tuple(meta["modalities"]),
            DAEConfig.from_dict(meta["dae"]),
            meta["n_classes"],
            np.random.default_rng(0),
        )
        bundle.load_state_dict(params)
        pipe = FeaturePipeline(manifest, modalities=bundle.modalities)
        records = manifest.test_records() if split == "test" else manifest.val_records()
        report = evaluate_records(bundle, pipe, records)
        click.echo(json.dumps(report.as_dict(), indent=1, sort_keys=True))
        if out_opt:
            run_dir = reports.allocate_run_dir(out_opt, f"eval-{Path(ckpt_path).stem}")
            reports.write_confusion_csv(run_dir, report)
            reports.plot_confusion(run_dir, report, manifest.config.get("class_names"))
            click.echo(f"reports in {run_dir}")

    _run(body)


if __name__ == "__main__":
    main()
