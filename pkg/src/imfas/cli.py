"""Command-line entry point: ``imfas {generate,split,train,eval,baseline,experiment}``.

Heavy outputs go to files in ``--out``; stdout gets one summary line per
step. Exit codes: 0 success, 2 user/config error, 3 numeric/runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import Callable, Dict, List

from . import __version__
from .baseline_sh import ShConfig, sh_eval
from .errors import ConfigError, ImfasError, NumericError
from .eval_report import (
    DEFAULT_FRACTIONS,
    SeedResult,
    build_report,
    check_fractions,
    evaluate_model,
    export_fraction_curve,
    render_report,
)
from .meta_data import (
    CURVES_FILE,
    META_FILE,
    MetaDataset,
    SyntheticSpec,
    apply_feature_stats,
    feature_stats,
    generate_synthetic,
    load_dir,
    read_flat_config,
    save_csv,
    split,
)
from .model import load_checkpoint, save_checkpoint
from .trainer import TrainConfig, config_hash, env_threads, run_seeds, train

log = logging.getLogger("imfas")

EXIT_OK, EXIT_USER, EXIT_NUMERIC = 0, 2, 3
MANIFEST = "manifest.json"


class UsageError(ImfasError):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _build(cls, data: dict, source: str):
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ImfasError):
            raise
        raise ConfigError(f"{source}: {exc}") from None


def load_train_config(path) -> TrainConfig:
    if path is None:
        return TrainConfig()
    return _build(TrainConfig, read_flat_config(path, TrainConfig), str(path))


def load_spec(path) -> SyntheticSpec:
    if path is None:
        return SyntheticSpec()
    return _build(SyntheticSpec, read_flat_config(path, SyntheticSpec), str(path))


def load_sh_config(path, eta) -> ShConfig:
    data = {} if path is None else read_flat_config(path, ShConfig)
    if eta is not None:
        data["eta"] = eta
    return _build(ShConfig, data, str(path or "--eta"))


def parse_seeds(text: str | None, default=(0,)) -> List[int]:
    if text is None:
        return list(default)
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds must be comma-separated integers, got {text!r}") from None
    if not seeds:
        raise UsageError("--seeds is empty")
    if len(set(seeds)) != len(seeds):
        raise UsageError(f"duplicate seeds in {text!r}")
    return seeds


def parse_fractions(text: str | None) -> List[float]:
    if text is None:
        return list(DEFAULT_FRACTIONS)
    try:
        values = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--fractions must be comma-separated numbers, got {text!r}") from None
    return check_fractions(values)


def _data_inputs(data_dir: Path) -> Dict[str, str]:
    return {str(data_dir / name): sha256_file(data_dir / name) for name in (CURVES_FILE, META_FILE)}


class Run:
    """Output directory with a manifest written before the heavy work starts."""

    def __init__(self, out: Path, command: str, force: bool):
        self.out = Path(out)
        if self.out.exists() and any(self.out.iterdir()) and not force:
            raise UsageError(f"output directory {self.out} is not empty; pass --force to overwrite")
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = {
            "command": command,
            "config": {},
            "seeds": [],
            "inputs": {},
            "outputs": [],
            "tool_version": __version__,
            "status": "started",
        }

    def start(self, config: dict, inputs: Dict[str, str], seeds=(), outputs=()):
        self.manifest.update(config=config, inputs=inputs, seeds=list(seeds), outputs=list(outputs))
        self._write()

    def finish(self, status="completed", error: str | None = None):
        self.manifest["status"] = status
        if error is not None:
            self.manifest["error"] = error
        self._write()

    def _write(self):
        (self.out / MANIFEST).write_text(json.dumps(self.manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def write(self, name: str, text: str) -> Path:
        path = self.out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        return path


def _plain(d):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


# commands

def cmd_generate(args, run: Run):
    spec = load_spec(args.config)
    inputs = {str(args.config): sha256_file(args.config)} if args.config else {}
    run.start({"spec": asdict(spec)}, inputs, [spec.seed], [CURVES_FILE, META_FILE])
    ds = generate_synthetic(spec)
    save_csv(ds, run.out)
    print(f"generate: {ds.n_datasets} datasets x {ds.n_algorithms} algorithms x "
          f"{ds.n_fidelities} fidelities, F={ds.n_features} -> {run.out}")


def cmd_split(args, run: Run):
    data = Path(args.data)
    seed = parse_seeds(args.seeds)[0]
    run.start({"test_fraction": args.test_fraction, "seed": seed}, _data_inputs(data), [seed],
              ["train/" + CURVES_FILE, "train/" + META_FILE, "test/" + CURVES_FILE, "test/" + META_FILE])
    train_ds, test_ds = split(load_dir(data), args.test_fraction, seed)
    save_csv(train_ds, run.out / "train")
    save_csv(test_ds, run.out / "test")
    print(f"split: {train_ds.n_datasets} train / {test_ds.n_datasets} test -> {run.out}")


def cmd_train(args, run: Run):
    data = Path(args.data)
    cfg = load_train_config(args.config)
    if args.seeds is not None:
        cfg = replace(cfg, seed=parse_seeds(args.seeds)[0])
    inputs = _data_inputs(data)
    if args.config:
        inputs[str(args.config)] = sha256_file(args.config)
    run.start({"train": _plain(asdict(cfg))}, inputs, [cfg.seed], ["checkpoint.json", "history.csv"])
    ds = load_dir(data)
    mean, sd = feature_stats(ds)
    ds = replace(ds, meta_features=apply_feature_stats(ds.meta_features, mean, sd))
    params, history = train(ds, cfg)
    save_checkpoint(run.out / "checkpoint.json", params, {
        "feature_mean": mean.tolist(),
        "feature_sd": sd.tolist(),
        "algorithm_ids": list(ds.algorithm_ids),
        "softrank_epsilon": cfg.softrank_epsilon,
        "train_config": _plain(asdict(cfg)),
    })
    run.write("history.csv", history.to_csv())
    final = history.train_loss[-1] if len(history) else float("nan")
    print(f"train: {len(history)} epochs, initial loss {history.initial_loss:.6f}, final loss {final:.6f} -> {run.out}")


def _check_dims(params, ds: MetaDataset):
    conf = params.config
    if conf.n_algorithms != ds.n_algorithms or conf.n_features != ds.n_features:
        raise UsageError(
            f"checkpoint expects |A|={conf.n_algorithms}, F={conf.n_features}; "
            f"data has |A|={ds.n_algorithms}, F={ds.n_features}"
        )


def cmd_eval(args, run: Run):
    if not args.checkpoint:
        raise UsageError("eval needs --checkpoint")
    data = Path(args.data)
    fractions = parse_fractions(args.fractions)
    sh_cfg = load_sh_config(None, args.eta)
    inputs = _data_inputs(data)
    inputs[str(args.checkpoint)] = sha256_file(args.checkpoint)
    run.start({"fractions": fractions, "sh": asdict(sh_cfg)}, inputs, [],
              ["report.json", "report.md", "fraction_curve.csv"])
    params, meta = load_checkpoint(args.checkpoint)
    ds = load_dir(data)
    _check_dims(params, ds)
    ds = replace(ds, meta_features=apply_feature_stats(ds.meta_features, meta["feature_mean"], meta["feature_sd"]))
    eps = float(meta.get("softrank_epsilon", 1.0))
    seed = int(meta.get("train_config", {}).get("seed", 0))
    model_eval = evaluate_model(params, ds, fractions, TrainConfig(softrank_epsilon=eps).softrank)
    sh = sh_eval(ds, sh_cfg)
    report = build_report(args.name or data.name, fractions, [SeedResult(seed, model_eval, sh)],
                          config_hash(sh_cfg, {"checkpoint": inputs[str(args.checkpoint)]}),
                          {"n_test": ds.n_datasets})
    _write_report(run, report)


def _write_report(run: Run, report):
    run.write("report.json", render_report(report, "json"))
    run.write("report.md", render_report(report, "markdown"))
    run.write("fraction_curve.csv", export_fraction_curve(report))
    cells = ", ".join(f"{q:g}: {report.model_mean(q):.3f}" for q in report.fractions)
    print(f"report: {cells}; SH {report.sh['mean']:.3f} -> {run.out}")


def cmd_baseline(args, run: Run):
    data = Path(args.data)
    sh_cfg = load_sh_config(args.config, args.eta)
    inputs = _data_inputs(data)
    if args.config:
        inputs[str(args.config)] = sha256_file(args.config)
    run.start({"sh": asdict(sh_cfg)}, inputs, [], ["sh_report.json"])
    res = sh_eval(load_dir(data), sh_cfg)
    payload = {"sh": {"mean": res.mean, "sd": res.sd, "schedule": res.schedule, "eta": sh_cfg.eta,
                      "per_dataset": res.per_dataset},
               "excluded_datasets": res.excluded}
    run.write("sh_report.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"baseline: SH (eta={sh_cfg.eta}) mean {res.mean:.3f} ± {res.sd:.3f} over "
          f"{len(res.per_dataset)} datasets -> {run.out}")


def cmd_experiment(args, run: Run):
    source = Path(args.data) if args.data else None
    cfg = load_train_config(args.config)
    seeds = parse_seeds(args.seeds, default=(1, 2, 3, 4, 5))
    fractions = parse_fractions(args.fractions)
    sh_cfg = load_sh_config(None, args.eta)
    inputs: Dict[str, str] = {}
    config = {"train": _plain(asdict(cfg)), "sh": asdict(sh_cfg), "fractions": fractions,
              "test_fraction": args.test_fraction}
    if source is not None and source.is_dir():
        inputs.update(_data_inputs(source))
        name = args.name or source.name
    else:
        spec = load_spec(source)
        config["spec"] = asdict(spec)
        if source is not None:
            inputs[str(source)] = sha256_file(source)
        name = args.name or "synthetic"
    if args.config:
        inputs[str(args.config)] = sha256_file(args.config)
    outputs = ["report.json", "report.md", "fraction_curve.csv"] + [f"seed_{s}/history.csv" for s in seeds]
    run.start(config, inputs, seeds, outputs)

    ds = load_dir(source) if "spec" not in config else generate_synthetic(SyntheticSpec(**config["spec"]))
    print(f"experiment: {ds.n_datasets} datasets, {len(seeds)} seeds, {cfg.epochs} epochs, "
          f"workers={min(env_threads(), len(seeds))}")
    report, runs = run_seeds(ds, cfg, seeds, fractions, sh_cfg, args.test_fraction, name=name, return_runs=True)
    for r in runs:
        run.write(f"seed_{r.result.seed}/history.csv", r.history.to_csv())
        print(f"seed {r.result.seed}: loss {r.history.initial_loss:.4f} -> "
              f"{r.result.train['final_loss']:.4f}, SH {r.result.sh.mean:.3f}")
    _write_report(run, report)


COMMANDS: Dict[str, Callable] = {
    "generate": cmd_generate,
    "split": cmd_split,
    "train": cmd_train,
    "eval": cmd_eval,
    "baseline": cmd_baseline,
    "experiment": cmd_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="imfas", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help, data=True, config=None):
        p = sub.add_parser(name, help=help)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
        if data:
            p.add_argument("--data", required=data == "required",
                           help="directory with curves.csv and meta_features.csv")
        if config:
            p.add_argument("--config", help=config)
        return p

    add("generate", "write a synthetic meta-dataset", data=False, config="synthetic spec (flat YAML)")
    p = add("split", "dataset-level train/test split", data="required")
    p.add_argument("--seeds", help="split seed (first value used)")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p = add("train", "meta-train a model", data="required", config="training config (flat YAML)")
    p.add_argument("--seeds", help="override the training seed (first value used)")
    p = add("eval", "evaluate a checkpoint at fidelity fractions", data="required")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--fractions")
    p.add_argument("--eta", type=int)
    p.add_argument("--name")
    p = add("baseline", "successive-halving baseline", data="required", config="SH config (flat YAML: eta)")
    p.add_argument("--eta", type=int)
    p = add("experiment", "multi-seed split/train/eval/baseline run",
            config="training config (flat YAML)")
    p.add_argument("--seeds", help="comma-separated seeds (default 1,2,3,4,5)")
    p.add_argument("--fractions")
    p.add_argument("--eta", type=int)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--name")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run = None
    try:
        run = Run(Path(args.out), args.command, args.force)
        COMMANDS[args.command](args, run)
    except NumericError as exc:
        return _fail(run, exc, EXIT_NUMERIC)
    except (ImfasError, OSError, KeyError, ValueError) as exc:
        return _fail(run, exc, EXIT_USER)
    run.finish()
    return EXIT_OK


def _fail(run: Run | None, exc: Exception, code: int) -> int:
    kind = "numeric failure" if code == EXIT_NUMERIC else "error"
    msg = f"imfas: {kind}: {exc}"
    if run is not None and (run.out / MANIFEST).exists():
        run.finish("failed", str(exc))
        msg += f" (partial manifest: {run.out / MANIFEST})"
    print(msg, file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
