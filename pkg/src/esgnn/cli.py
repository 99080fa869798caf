"""Command-line entry point: ``esgnn {gen-array,embed,run,gridsearch,energy}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import DATA_ENV, PRESETS, file_sha256, load_config, load_preset
from .device import save_array
from .energy import count_ops, count_training_ops, energy_report
from .evaluation import (
    grid_search,
    kfold_cv,
    project_2d,
    repeated_trials,
    write_matrix_csv,
    write_report,
)
from .exceptions import ConfigurationError, DataError, EsgnnError
from .model import EsgnnModel

REPORT_SCHEMA = "esgnn.report/1"
logger = logging.getLogger("esgnn")


class Manifest:
    """Records completed stages in ``MANIFEST.json`` so partial runs stay inspectable."""

    def __init__(self, out_dir, command):
        self.path = Path(out_dir) / "MANIFEST.json"
        self.data = {"command": command, "completed": [], "failed": None}
        self._flush()

    def done(self, stage, files=()):
        self.data["completed"].append({"stage": stage, "files": sorted(str(Path(f).name) for f in files)})
        self._flush()

    def fail(self, stage, exc):
        self.data["failed"] = {"stage": stage, "error": f"{type(exc).__name__}: {exc}"}
        self._flush()

    def _flush(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")


def _resolve(args):
    if (args.config is None) == (args.preset is None):
        raise ConfigurationError("give exactly one of --config or --preset")
    cfg = load_config(args.config) if args.config else load_preset(args.preset)
    trials = getattr(args, "trials", None)
    return cfg.with_overrides(seed=args.seed, trials=trials, out=args.out)


def _out_dir(cfg):
    out = Path(cfg.raw.get("output_dir", "runs/" + cfg.name))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _inputs(cfg, ds):
    files = cfg.dataset_files()
    return {
        "files": {p.name: file_sha256(p) for p in files},
        "dataset_hash": ds.content_hash(),
    }


def _dataset_summary(ds):
    return {
        "name": ds.name,
        "num_graphs": len(ds),
        "num_classes": ds.num_classes,
        "class_names": {str(name): i for i, name in enumerate(ds.class_names)},
        "feature_dim": ds.feature_dim,
        "total_nodes": ds.total_nodes,
        "recipe": ds.recipe,
    }


def _write_json(path, obj):
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")
    return path


def _report(cfg, command, **body):
    return {
        "schema": REPORT_SCHEMA,
        "command": command,
        "package_version": __version__,
        "config": cfg.to_dict(),
        **body,
    }


def _runtime(started, jobs, cfg):
    """Invocation details that legitimately differ between identical runs."""
    return {
        "config_source": cfg.source,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "elapsed_s": round(time.perf_counter() - started, 3),
        "jobs": jobs,
    }


def cmd_gen_array(args):
    started = time.perf_counter()
    cfg = _resolve(args)
    out = _out_dir(cfg)
    ds = cfg.load_dataset()
    seed = cfg.eval_spec["seed"]
    model = EsgnnModel.random(
        cfg.esgnn_config(), ds.feature_dim, cfg.device_model(), seed=seed, allow_unstable=True
    )
    w_in, _ = save_array(model.w_input, out / "w_input.csv")
    w_rec, _ = save_array(model.w_recursive, out / "w_recursive.csv")
    max_deg = max(g.max_degree() for g in ds)
    summary = {
        "w_input_shape": list(model.w_input.shape),
        "w_recursive_shape": list(model.w_recursive.shape),
        "on_fraction_input": model.w_input.on_fraction(),
        "on_fraction_recursive": model.w_recursive.on_fraction(),
        "rho": model.rho,
        "rho_times_max_degree": model.degree_bound(max_deg),
        "max_degree": max_deg,
        "echo_state_ok": model.rho < 1.0,
    }
    print(f"w_input {model.w_input.rows}x{model.w_input.cols}  on-fraction {summary['on_fraction_input']:.4f}")
    print(f"w_recursive {model.w_recursive.rows}x{model.w_recursive.cols}  on-fraction {summary['on_fraction_recursive']:.4f}")
    print(f"rho(alpha_r * G_R) = {model.rho:.6g}   rho * max_degree = {summary['rho_times_max_degree']:.6g}")
    _write_json(out / "gen_array.json", _report(cfg, "gen-array", seeds={"array": seed}, arrays=summary,
                                                 runtime=_runtime(started, args.jobs, cfg)))
    if model.rho >= 1.0 and not args.allow_unstable:
        raise ConfigurationError(
            f"echo-state condition violated (rho = {model.rho:.6g} >= 1); pass --allow-unstable to keep going"
        )
    return 0


def cmd_embed(args):
    started = time.perf_counter()
    cfg = _resolve(args)
    out = _out_dir(cfg)
    ds = cfg.load_dataset()
    seed = cfg.eval_spec["seed"]
    emb = cfg.make_embedder(allow_unstable=args.allow_unstable, n_jobs=args.jobs, seed=seed).fit(ds)
    if cfg.task == "graph":
        E = emb.transform(ds)
    else:
        E = emb.transform(ds.graphs[0])
    path = out / "embeddings.csv"
    np.savetxt(path, E, fmt="%.9g", delimiter=",")
    files = [path]
    if args.dump_states:
        idx = args.graph_index
        if not 0 <= idx < len(ds):
            raise ConfigurationError(f"--graph-index {idx} outside [0, {len(ds)})")
        noise_index = idx if cfg.task == "graph" else 0
        history = emb.model_.run(ds.graphs[idx], graph_index=noise_index, trajectory=True)
        state_dir = out / "states"
        state_dir.mkdir(exist_ok=True)
        for st in history:
            p = state_dir / f"graph{idx:04d}_step{st.t:03d}.csv"
            np.savetxt(p, st.values, fmt="%.9g", delimiter=",")
            files.append(p)
    meta = _report(
        cfg,
        "embed",
        shape=list(E.shape),
        level=cfg.task,
        seeds={"array": seed, "noise": emb.noise_seed},
        inputs=_inputs(cfg, ds),
        dataset=_dataset_summary(ds),
        rho=emb.rho_,
        instrumented=emb.stats_.to_dict(),
        runtime=_runtime(started, args.jobs, cfg),
    )
    _write_json(out / "embeddings.json", meta)
    print(f"wrote {path} ({E.shape[0]}x{E.shape[1]})" + (f" and {len(files) - 1} state files" if args.dump_states else ""))
    return 0


def _energy_block(cfg, source):
    """Forward and training op/energy reports for ``source`` (graphs or GraphStats)."""
    c = cfg.esgnn_config()
    kind = "linear" if cfg.task == "graph" else "graphconv"
    if hasattr(source, "num_classes"):
        n_classes = source.num_classes
    else:
        n_classes = int(cfg.dataset_spec["published_stats"]["num_classes"])
    model = cfg.energy_model()
    fwd = count_ops(source, c, kind, n_classes)
    if kind == "linear":
        n = len(source) if hasattr(source, "__len__") else source.num_graphs
        k = cfg.eval_spec.get("k", 10)
        train = count_training_ops(source, c, kind, n_classes, n_train=n - n // k)
    else:
        train = count_training_ops(source, c, kind, n_classes, epochs=cfg.readout_spec.get("epochs", 200))
    rep = energy_report(fwd.merge(train), model)
    rep["calibration_target_ratio"] = cfg.raw.get("energy", {}).get("calibration_target_ratio")
    rep["ops"] = fwd.merge(train).to_dict()
    return rep


def _export_projection(cfg, ds, out, seed):
    export = cfg.raw.get("export", {})
    method = export.get("projection")
    if not method:
        return None
    emb = cfg.make_embedder(allow_unstable=True, seed=seed).fit(ds)
    E = emb.transform(ds) if cfg.task == "graph" else emb.transform(ds.graphs[0])
    proj = project_2d(E, method, seed=seed)
    if cfg.task == "graph":
        labels = ds.labels
    else:
        labels = ds.graphs[0].node_labels
    path = write_matrix_csv(
        out / f"projection_{method}.csv",
        np.column_stack([proj.coords, labels]).tolist(),
        header=["x", "y", "label"],
    )
    return {"method": method, "file": path.name, "degenerate": proj.degenerate, "seed": seed}


def cmd_run(args):
    started = time.perf_counter()
    cfg = _resolve(args)
    out = _out_dir(cfg)
    manifest = Manifest(out, "run")
    stage = "load"
    try:
        ds = cfg.load_dataset()
        manifest.done(stage)
        stage = "evaluate"
        result, files = _evaluate(cfg, ds, args)
        manifest.done(stage, files.values())
        stage = "energy"
        energy = _energy_block(cfg, ds)
        _write_json(out / "energy.json", energy)
        manifest.done(stage, [out / "energy.json"])
        stage = "projection"
        seed = cfg.eval_spec["seed"] if cfg.task == "graph" else cfg.eval_spec["seeds"][0]
        projection = _export_projection(cfg, ds, out, seed)
        manifest.done(stage, [out / projection["file"]] if projection else [])
        stage = "report"
        report = _report(
            cfg,
            "run",
            seeds=result.to_dict()["seeds"],
            inputs=_inputs(cfg, ds),
            dataset=_dataset_summary(ds),
            results=result.to_dict(),
            energy=energy,
            projection=projection,
            warnings=result.warnings,
            runtime=_runtime(started, args.jobs, cfg),
        )
        _write_json(out / "report.json", report)
        manifest.done(stage, [out / "report.json"])
    except Exception as exc:
        manifest.fail(stage, exc)
        raise
    print(result.to_text())
    ratio = energy["ratio"]
    print(f"\nmean accuracy {result.mean_accuracy:.4f}   forward OPs {energy['forward_ops']:.4g}"
          f"   digital/analog energy ratio {ratio:.1f} (calibration self-consistency)")
    return 0


def _evaluate(cfg, ds, args):
    out = _out_dir(cfg)
    emb = cfg.make_embedder(allow_unstable=args.allow_unstable, seed=cfg.eval_spec["seed"])
    ev = cfg.eval_spec
    if cfg.task == "graph":
        result = kfold_cv(ds, emb, ev.get("k", 10), ev["seed"], cfg.make_readout(), n_jobs=args.jobs)
        stem = "cv_report"
    else:
        result = repeated_trials(
            ds,
            emb,
            ev.get("trials", 10),
            ev["seeds"][: ev.get("trials", 10)],
            classifier=cfg.make_readout(),
            fractions=tuple(ev.get("split", (0.6, 0.2, 0.2))),
            split_seed=ev["seed"],
            n_jobs=args.jobs,
        )
        stem = "trial_report"
    return result, write_report(result, out, stem)


def cmd_gridsearch(args):
    started = time.perf_counter()
    cfg = _resolve(args)
    out = _out_dir(cfg)
    ds = cfg.load_dataset()
    c = cfg.esgnn_config()
    grid = cfg.grid or {"alpha_i": [c.alpha_i], "alpha_r": [c.alpha_r], "T": [c.T], "a": [c.a]}
    ev = cfg.eval_spec
    emb = cfg.make_embedder(allow_unstable=args.allow_unstable, seed=ev["seed"])
    if cfg.task == "graph":
        res = grid_search(ds, emb, grid, ev.get("k", 10), ev["seed"], cfg.make_readout(), n_jobs=args.jobs)
    else:
        res = grid_search(ds, emb, grid, seed=ev["seed"], n_jobs=args.jobs, task="node",
                          trials=ev.get("grid_trials", 1), classifier=cfg.make_readout())
    for s in res.skipped:
        print(f"skipped {s['params']}: {s['reason']}")
    for r in res.ranked[:10]:
        print(f"{r['score']:.4f}  {r['params']}")
    _write_json(out / "gridsearch.json", _report(
        cfg, "gridsearch", grid={k: list(v) for k, v in grid.items()}, inputs=_inputs(cfg, ds),
        ranked=res.ranked, skipped=res.skipped, runtime=_runtime(started, args.jobs, cfg),
    ))
    return 0


def cmd_energy(args):
    started = time.perf_counter()
    cfg = _resolve(args)
    out = _out_dir(cfg)
    try:
        source = cfg.load_dataset()
        origin = "dataset"
        inputs = _inputs(cfg, source)
    except DataError:
        source = cfg.published_stats()
        if source is None:
            raise
        origin = "published_stats"
        inputs = {"published_stats": cfg.dataset_spec["published_stats"]}
        print(f"dataset not found; counting from published statistics (set {DATA_ENV} to use the files)")
    rep = _energy_block(cfg, source)
    rep["count_source"] = origin
    _write_json(out / "energy.json", _report(cfg, "energy", inputs=inputs, energy=rep,
                                              runtime=_runtime(started, args.jobs, cfg)))
    for b in rep["breakdown"]:
        print(f"{b['stage']:>20s}  {b['ops']:>16,d} OPs  digital {b['digital_energy_J']:.4g} J"
              f"  hybrid {b['analog_energy_J']:.4g} J ({b['executor']})")
    print(f"forward: digital {rep['digital_forward_energy_J']:.4g} J, hybrid {rep['analog_forward_energy_J']:.4g} J,"
          f" ratio {rep['ratio']:.1f} ({rep['label']})")
    return 0


COMMANDS = {
    "gen-array": cmd_gen_array,
    "embed": cmd_embed,
    "run": cmd_run,
    "gridsearch": cmd_gridsearch,
    "energy": cmd_energy,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="run configuration JSON")
    common.add_argument("--preset", choices=PRESETS, help="shipped configuration")
    common.add_argument("--seed", type=_u64, help="overrides eval seed(s)")
    common.add_argument("--jobs", type=_positive, default=1, help="worker cap; results do not depend on it")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--allow-unstable", action="store_true", help="continue when rho(alpha_r G_R) >= 1")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="esgnn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"esgnn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-array", parents=[common], help="form and save the random arrays")
    p = sub.add_parser("embed", parents=[common], help="write graph or node embeddings")
    p.add_argument("--graph-index", type=int, default=0)
    p.add_argument("--dump-states", action="store_true", help="one CSV per step for --graph-index")
    p = sub.add_parser("run", parents=[common], help="embed, train, evaluate, count energy")
    p.add_argument("--trials", type=_positive, help="node task: number of trials")
    sub.add_parser("gridsearch", parents=[common], help="rank the config's hyperparameter grid")
    sub.add_parser("energy", parents=[common], help="op counts and energy estimate only")
    return parser


def _u64(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be in [0, 2^64)")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except EsgnnError as exc:
        print(f"esgnn: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"esgnn: I/O error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"esgnn: numerical error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
