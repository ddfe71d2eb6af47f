"""Command-line pipeline: simulate, preprocess, train, generate, evaluate, benchmark."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ConfigError, PipelineConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

log = logging.getLogger("tsgen")


class DataError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _case(cfg: PipelineConfig):
    from .tds.case import default_case, load_case
    return default_case() if cfg.paths.case is None else load_case(cfg.paths.case)


def _read_table(path, cfg):
    from .dataset import load_schema, load_table, schema_path_for
    from .tds.scenario import sample_schema
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: file not found")
    sidecar = schema_path_for(path)
    schema = load_schema(sidecar) if sidecar.is_file() else sample_schema(_case(cfg))
    return load_table(path, schema)


def _write_table(table, path):
    from .dataset import save_schema, save_table, schema_path_for
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_table(table, path)
    save_schema(table.schema, schema_path_for(path))
    print(f"wrote {path} ({len(table)} rows)")


def _write_report(out_dir: Path, name: str, header, rows):
    from .evaluation.reports import format_csv, format_text
    out_dir.mkdir(parents=True, exist_ok=True)
    text = format_text(header, rows)
    (out_dir / f"{name}.txt").write_text(text + "\n")
    (out_dir / f"{name}.csv").write_text(format_csv(header, rows))
    print(f"\n[{name}]\n{text}")


def _load_model(path):
    from .ctgan import CTGANModel
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: model file not found")
    return CTGANModel.load(path)


def _parse_conditions(items):
    cond = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--condition expects NAME=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        cond[k.strip()] = v.strip()
    return cond


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------

def stage_simulate(cfg: PipelineConfig, n: int | None = None, out: str | None = None):
    from .dataset import class_balance
    from .tds.scenario import generate_dataset
    n = n or cfg.simulation.n_samples
    t0 = time.perf_counter()

    def progress(i, total):
        if i % 100 == 0 or i == total:
            log.info("simulated %d/%d", i, total)

    table = generate_dataset(_case(cfg), cfg.scenario_config(), n,
                             workers=cfg.simulation.workers, progress=progress)
    print(f"simulated {n} scenarios in {time.perf_counter() - t0:.1f} s")
    for cat, (count, prop) in class_balance(table, "stability").items():
        print(f"  {cat}: {count} ({100 * prop:.2f}%)")
    _write_table(table, out or cfg.paths.data)
    return table


def stage_preprocess(cfg: PipelineConfig):
    from .dataset import split_dataset
    from .transform import DataTransformer
    table = _read_table(cfg.paths.data, cfg)
    split = split_dataset(table, cfg.preprocess.train_fraction, cfg.seed)
    _write_table(split.train, cfg.paths.train)
    _write_table(split.test, cfg.paths.test)
    t0 = time.perf_counter()
    tr = DataTransformer.fit(split.train, cfg.preprocess.max_modes,
                             cfg.preprocess.weight_threshold, cfg.seed)
    Path(cfg.paths.transformer).parent.mkdir(parents=True, exist_ok=True)
    tr.save(cfg.paths.transformer)
    print(f"fitted transformer ({tr.width} encoded columns) in {time.perf_counter() - t0:.1f} s; "
          f"wrote {cfg.paths.transformer}")
    return split, tr


def stage_train(cfg: PipelineConfig):
    from .ctgan import train
    from .transform import DataTransformer
    table = _read_table(cfg.paths.train, cfg)
    tpath = Path(cfg.paths.transformer)
    if not tpath.is_file():
        raise DataError(f"{tpath}: transformer not found (run preprocess first)")
    tr = DataTransformer.load(tpath)
    t0 = time.perf_counter()
    model = train(table, cfg.train_config(), transformer=tr, log_every=10)
    Path(cfg.paths.model).parent.mkdir(parents=True, exist_ok=True)
    model.save(cfg.paths.model)
    d, g = model.history[-1] if model.history else (float("nan"),) * 2
    print(f"trained {cfg.train.epochs} epochs in {time.perf_counter() - t0:.1f} s "
          f"(final critic {d:.4f}, generator {g:.4f}); wrote {cfg.paths.model}")
    return model


def _n_generated(cfg, default):
    return cfg.evaluation.n_generated or default


def stage_generate(cfg: PipelineConfig, n: int | None = None, condition=None, out=None):
    from .ctgan import generate_samples
    model = _load_model(cfg.paths.model)
    if n is None:
        n = _n_generated(cfg, len(model.condition_codes))
    table = generate_samples(model, n, condition or None, seed=cfg.seed)
    _write_table(table, out or cfg.paths.generated)
    return table


def stage_evaluate(cfg: PipelineConfig, real_path, model_path, out_dir, metric="all"):
    from .ctgan import generate_samples
    from .dataset import split_dataset
    from .evaluation import reports as R
    real = _read_table(real_path, cfg)
    model = _load_model(model_path)
    out_dir = Path(out_dir)
    ev = cfg.evaluation
    if metric in ("proportions", "all"):
        rep = R.conditional_proportion_report(model, ev.n_per_setting, seed=cfg.seed)
        _write_report(out_dir, "table1_stability", *R.stability_table_rows(rep))
        _write_report(out_dir, "table2_load_level", *R.load_table_rows(rep))
    if metric in ("distance", "all"):
        if len(real) < 2 * ev.m:
            raise DataError(f"distance needs {2 * ev.m} real rows for two disjoint draws of "
                            f"m={ev.m}; {real_path} has {len(real)} (lower evaluation.m)")
        gen = generate_samples(model, ev.m, seed=cfg.seed + 1)
        dist = R.distance_report(real, gen, ev.m, ev.k, ev.bins, cfg.seed)
        _write_report(out_dir, "table3_distance", *R.distance_table_rows(dist))
    if metric in ("downstream", "all"):
        split = split_dataset(real, cfg.preprocess.train_fraction, cfg.seed)
        gen = generate_samples(model, _n_generated(cfg, len(split.train)), seed=cfg.seed + 2)
        rows = R.downstream_benchmark(split.train, gen, split.test, _bench_config(cfg), cfg.seed)
        _write_report(out_dir, "table4_downstream", *R.benchmark_table_rows(rows))


def _bench_config(cfg):
    from .evaluation.reports import BenchmarkConfig
    ev = cfg.evaluation
    return BenchmarkConfig(ev.dt_max_depth, ev.mlp_hidden, ev.mlp_max_iter)


def stage_benchmark(cfg: PipelineConfig, out_dir=None):
    from .evaluation import reports as R
    train = _read_table(cfg.paths.train, cfg)
    test = _read_table(cfg.paths.test, cfg)
    gen = _read_table(cfg.paths.generated, cfg)
    rows = R.downstream_benchmark(train, gen, test, _bench_config(cfg), cfg.seed)
    _write_report(Path(out_dir or cfg.paths.output_dir), "table4_downstream",
                  *R.benchmark_table_rows(rows))
    return rows


def stage_pipeline(cfg: PipelineConfig):
    t0 = time.perf_counter()
    stage_simulate(cfg)
    stage_preprocess(cfg)
    stage_train(cfg)
    stage_generate(cfg)
    stage_evaluate(cfg, cfg.paths.data, cfg.paths.model, cfg.paths.output_dir, "all")
    print(f"\npipeline finished in {time.perf_counter() - t0:.1f} s")


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tsgen", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="YAML pipeline config (defaults apply when omitted)")
        sp.add_argument("--seed", type=int, help="override the master seed")
        return sp

    sp = add("simulate", "simulate fault scenarios into a labelled sample table")
    sp.add_argument("--n", type=int, help="number of scenarios")
    sp.add_argument("--out", help="output CSV (default paths.data)")
    sp.add_argument("--workers", type=int, help="worker processes")
    sp.add_argument("--case", help="grid case file (default: bundled 39-bus case)")

    add("preprocess", "split the sample table and fit the mode-normalizing transformer")

    sp = add("train", "train the conditional generator")
    sp.add_argument("--data", help="training table (default paths.train)")
    sp.add_argument("--out", help="model file to write (default paths.model)")
    sp.add_argument("--epochs", type=int)

    sp = add("generate", "draw synthetic samples from a trained model")
    sp.add_argument("--n", type=int, help="rows to generate")
    sp.add_argument("--condition", action="append", metavar="NAME=VALUE",
                    help="fix a condition, e.g. load_level=90%% (repeatable)")
    sp.add_argument("--stability", help="requested stability class")
    sp.add_argument("--load-level", help="requested load level, e.g. 90%%")
    sp.add_argument("--model", help="model file (default paths.model)")
    sp.add_argument("--out", help="output CSV (default paths.generated)")

    sp = add("evaluate", "proportion, distance and downstream reports")
    sp.add_argument("--real", help="real sample table (default paths.data)")
    sp.add_argument("--model", help="model file (default paths.model)")
    sp.add_argument("--out", help="report directory (default paths.output_dir)")
    sp.add_argument("--metric", choices=("proportions", "distance", "downstream", "all"),
                    default="all")

    sp = add("benchmark", "downstream classifiers on the train, generated and union sets")
    sp.add_argument("--out", help="report directory (default paths.output_dir)")

    add("pipeline", "run every stage end to end")
    return p


def _resolve(args) -> PipelineConfig:
    cfg = cfgmod.parse_config(args.config) if args.config else cfgmod.config_from_dict({})
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        overrides["simulation.workers"] = args.workers
    if getattr(args, "epochs", None) is not None:
        overrides["train.epochs"] = args.epochs
    if getattr(args, "model", None) is not None:
        overrides["paths.model"] = args.model
    if getattr(args, "case", None) is not None:
        overrides["paths.case"] = args.case
    if args.command == "train":
        if args.data is not None:
            overrides["paths.train"] = args.data
        if args.out is not None:
            overrides["paths.model"] = args.out
    return cfgmod.with_overrides(cfg, overrides) if overrides else cfg


def _dispatch(args, cfg):
    cmd = args.command
    if cmd == "simulate":
        stage_simulate(cfg, args.n, args.out)
    elif cmd == "preprocess":
        stage_preprocess(cfg)
    elif cmd == "train":
        stage_train(cfg)
    elif cmd == "generate":
        cond = _parse_conditions(args.condition)
        if args.stability is not None:
            cond["stability"] = args.stability
        if args.load_level is not None:
            cond["load_level"] = args.load_level
        stage_generate(cfg, args.n, cond, args.out)
    elif cmd == "evaluate":
        stage_evaluate(cfg, args.real or cfg.paths.data, cfg.paths.model,
                       args.out or cfg.paths.output_dir, args.metric)
    elif cmd == "benchmark":
        stage_benchmark(cfg, args.out)
    elif cmd == "pipeline":
        stage_pipeline(cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    from .ctgan import ModelMismatchError, TrainingError
    from .dataset import SchemaError, TableFormatError
    from .evaluation.mlp import NumericalError
    from .tds.case import CaseError
    from .tds.scenario import ConfigurationError
    from .transform import TransformerError

    try:
        cfg = _resolve(args)
        print(f"# tsgen {args.command}  master seed {cfg.seed}")
        print("# resolved config")
        print("\n".join(f"#   {line}" for line in cfg.dump().splitlines()))
        _dispatch(args, cfg)
    except (ConfigError, ConfigurationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError, SchemaError, TableFormatError, CaseError,
            ModelMismatchError, TransformerError, KeyError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
