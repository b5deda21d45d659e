"""Command-line entry point: ``cogfactor <command> --out DIR [options]``.

Every option may also come from a JSON file given with ``--config``; values
on the command line win over the file, which wins over built-in defaults.
The resolved settings are written to ``DIR/config.json``. Errors are
reported on stderr as one JSON object and give a nonzero exit status.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from cogfactor.data.datasets import load_collection, save_collection, write_json
from cogfactor.data.ndt import atomic_open
from cogfactor.data.synth import SynthConfig, generate_synthetic
from cogfactor.errors import CogfactorError, InvalidConfig, MissingInput
from cogfactor.evaluation import (
    EvalConfig,
    accuracy,
    default_targets,
    learning_curve,
    multiscale_benchmark,
    run_ablation,
)
from cogfactor.introspect import collapse, kmeans, make_templates, save_maps, save_templates
from cogfactor.model import FactoredModel
from cogfactor.optim import TrainConfig, train, write_trace_csv
from cogfactor.projection import assemble_multiscale, project
from cogfactor.store import load_checkpoint, load_dictionaries, save_checkpoint, save_dictionaries

log = logging.getLogger("cogfactor")

_SYNTH = SynthConfig()
_EVAL = EvalConfig()
_TRAIN = TrainConfig()


def int_list(text):
    return [int(x) for x in str(text).split(",") if x.strip()]


def str_list(text):
    return [x.strip() for x in str(text).split(",") if x.strip()]


def _env_seed():
    value = os.environ.get("COGFACTOR_SEED")
    try:
        return int(value) if value is not None else 0
    except ValueError:
        raise InvalidConfig(f"COGFACTOR_SEED must be an integer, got {value!r}") from None


class JsonErrorParser(argparse.ArgumentParser):
    def error(self, message):
        _fail("UsageError", f"{self.prog}: {message}", status=2)


def _fail(kind, message, status=1):
    sys.stderr.write(json.dumps({"error": kind, "message": message}, sort_keys=True) + "\n")
    sys.exit(status)


# option tables: (flag, type, default, help); a default of None means "no default"

PATHS_RAW = [("--data", str, None, "dataset collection directory (required)"),
             ("--dicts", str, None, "dictionary directory (required)")]

EVAL_OPTS = [
    ("--latent-dim", int, _EVAL.latent_dim, "latent dimension l"),
    ("--dropout", float, _EVAL.dropout_rate, "latent Dropout rate r"),
    ("--batch-size", int, _EVAL.batch_size, "minibatch size"),
    ("--iterations", int, _EVAL.iterations, "gradient steps per study"),
    ("--lr", float, _EVAL.lr, "Adam learning rate"),
    ("--test-fraction", float, _EVAL.test_fraction, "fraction of subjects held out per fold"),
    ("--inner-folds", int, _EVAL.inner_folds, "subject folds for baseline hyper-parameter search"),
    ("--folds", int, 20, "number of random subject splits"),
    ("--jobs", int, 1, "worker processes (one fold per task)"),
]

COMMANDS = {
    "gen-synth": ("generate a synthetic multi-study corpus and its dictionaries", [
        ("--p", int, _SYNTH.p, "number of voxels"),
        ("--g-true", int, _SYNTH.g_true, "dimension of the shared signal space"),
        ("--condition-dim", int, _SYNTH.condition_dim, "dimension spanned by condition vectors"),
        ("--subject-noise", float, _SYNTH.subject_noise, "subject offset level"),
        ("--trial-noise", float, _SYNTH.trial_noise, "voxel noise level"),
        ("--shared-fraction", float, _SYNTH.shared_fraction, "fraction of conditions drawn from the shared pool"),
        ("--dictionary-sizes", int_list, ",".join(map(str, _SYNTH.dictionary_sizes)), "atoms per dictionary scale"),
        ("--signal-scales", int_list, ",".join(map(str, _SYNTH.signal_scales)), "scales carrying signal"),
        ("--atoms-per-scale", int, _SYNTH.atoms_per_scale, "atoms per signal direction and scale"),
    ]),
    "project": ("project a raw collection onto the multi-scale loadings", PATHS_RAW + [
        ("--rcond", float, 1e-10, "reciprocal-condition cutoff for Gram inversion"),
    ]),
    "train": ("train a factored model on a collection", [
        ("--data", str, None, "reduced (or raw, with --dicts) collection directory (required)"),
        ("--dicts", str, "", "dictionary directory; needed for raw data"),
        ("--studies", str_list, "", "comma-separated studies to train on (default: all)"),
        ("--latent-dim", int, _EVAL.latent_dim, "latent dimension l"),
        ("--dropout", float, _TRAIN.dropout_rate, "latent Dropout rate r"),
        ("--batch-size", int, _TRAIN.batch_size, "minibatch size"),
        ("--iterations", int, _TRAIN.max_iterations, "total gradient steps"),
        ("--lr", float, _TRAIN.lr, "Adam learning rate"),
        ("--l2", float, _TRAIN.l2, "l2 penalty on embedding and head weights"),
        ("--log-every", int, 0, "log the loss every N iterations (0: never)"),
    ]),
    "evaluate": ("accuracy of a checkpoint on every study it knows", [
        ("--checkpoint", str, None, "checkpoint directory (required)"),
        ("--data", str, None, "reduced (or raw, with --dicts) collection directory (required)"),
        ("--dicts", str, "", "dictionary directory; needed for raw data"),
    ]),
    "ablate": ("six-model ablation over random subject splits", PATHS_RAW + [
        ("--variants", int_list, "1,2,3,4,5,6", "variants to run"),
        ("--targets", str_list, "", "target studies (default: all but the largest)"),
    ] + EVAL_OPTS),
    "curves": ("accuracy against the number of target training subjects", PATHS_RAW + [
        ("--target", str, "", "target study (default: the study with fewest subjects)"),
        ("--grid", int_list, "5,10", "numbers of training subjects"),
    ] + EVAL_OPTS),
    "multiscale": ("single-scale against multi-scale projection", PATHS_RAW + [
        ("--single", str, "", "dictionary used alone (default: the one with most atoms)"),
        ("--targets", str_list, "", "target studies (default: all but the largest)"),
    ] + EVAL_OPTS),
    "introspect": ("collapsed maps and latent k-means templates", [
        ("--checkpoint", str, None, "checkpoint directory (required)"),
        ("--dicts", str, None, "dictionary directory (required)"),
        ("--data", str, None, "collection whose projected samples are clustered (required)"),
        ("--clusters", int, 50, "number of k-means clusters"),
        ("--restarts", int, 10, "k-means++ restarts"),
        ("--top", int, 10, "conditions listed per study and template"),
    ]),
}


def _key(flag):
    return flag.lstrip("-").replace("-", "_")


def build_parser():
    parser = JsonErrorParser(prog="cogfactor", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=JsonErrorParser)
    for name, (summary, opts) in COMMANDS.items():
        p = sub.add_parser(name, help=summary, description=summary)
        p.add_argument("--out", required=True, help="output directory (required)")
        p.add_argument("--config", help="JSON file of option values (flags take precedence)")
        p.add_argument("--seed", type=int, help="random seed (default: $COGFACTOR_SEED, else 0)")
        p.add_argument("--log-level", default="WARNING", help="logging level (default: %(default)s)")
        for flag, typ, default, text in opts:
            if default is None or "default" in text:
                shown = ""
            else:
                shown = f" (default: {default if default != '' else 'none'})"
            p.add_argument(flag, type=typ, default=None, help=text + shown.replace("%", "%%"))
    return parser


def resolve(args):
    """Merge flags, the ``--config`` file and defaults into one dict."""
    _, opts = COMMANDS[args.command]
    from_file = {}
    if args.config:
        if not os.path.isfile(args.config):
            raise MissingInput(f"config file {args.config!r} does not exist")
        with open(args.config) as fh:
            from_file = json.load(fh)
        if not isinstance(from_file, dict):
            raise InvalidConfig("the config file must hold a JSON object")
    known = {_key(flag) for flag, *_ in opts} | {"seed", "studies_spec"}
    unknown = sorted(set(from_file) - known)
    if unknown:
        raise InvalidConfig(f"unknown config keys for {args.command}: {unknown}")
    cfg = {}
    for flag, typ, default, _ in opts:
        key = _key(flag)
        value = getattr(args, key)
        if value is None:
            value = from_file.get(key, default)
            if isinstance(value, str) and typ in (int_list, str_list):
                value = typ(value)
        if value is None:
            raise InvalidConfig(f"{flag} is required")
        cfg[key] = value
    cfg["seed"] = args.seed if args.seed is not None else from_file.get("seed", _env_seed())
    if "studies_spec" in from_file:
        cfg["studies_spec"] = from_file["studies_spec"]
    return cfg


def _need_dir(path, what):
    if not path or not os.path.isdir(path):
        raise MissingInput(f"{what} directory {path!r} does not exist")
    return path


def _write_text(path, text):
    with atomic_open(path, "w") as fh:
        fh.write(text)


def _eval_config(cfg):
    return EvalConfig(latent_dim=cfg["latent_dim"], dropout_rate=cfg["dropout"], batch_size=cfg["batch_size"],
                      iterations=cfg["iterations"], lr=cfg["lr"], seed=cfg["seed"],
                      test_fraction=cfg["test_fraction"], inner_folds=cfg["inner_folds"])


def _load_reduced(cfg):
    datasets = load_collection(_need_dir(cfg["data"], "data"))
    if any(not ds.reduced for ds in datasets):
        if not cfg.get("dicts"):
            raise InvalidConfig("raw data needs --dicts to be projected")
        op = assemble_multiscale(load_dictionaries(_need_dir(cfg["dicts"], "dictionary")))
        datasets = [ds if ds.reduced else ds.with_samples(project(op, ds.X)) for ds in datasets]
    return datasets


def _write_report(out, report):
    _write_text(os.path.join(out, "report.csv"), report.to_csv())
    _write_text(os.path.join(out, "report.json"), report.to_json())
    write_json(os.path.join(out, "summary.json"), {"summary": report.summary()})


def cmd_gen_synth(cfg, out):
    kwargs = {k: cfg[k] for k in ("p", "g_true", "condition_dim", "subject_noise", "trial_noise",
                                  "shared_fraction", "dictionary_sizes", "signal_scales", "atoms_per_scale")}
    if "studies_spec" in cfg:
        kwargs["studies"] = cfg["studies_spec"]
    synth = SynthConfig(seed=cfg["seed"], **kwargs)
    datasets, truth = generate_synthetic(synth)
    save_collection(os.path.join(out, "datasets"), datasets)
    save_dictionaries(os.path.join(out, "dictionaries"), truth.dictionaries)
    write_json(os.path.join(out, "synth_config.json"), synth.to_dict())


def cmd_project(cfg, out):
    datasets = load_collection(_need_dir(cfg["data"], "data"))
    op = assemble_multiscale(load_dictionaries(_need_dir(cfg["dicts"], "dictionary")), rcond=cfg["rcond"])
    reduced = [ds if ds.reduced else ds.with_samples(project(op, ds.X)) for ds in datasets]
    save_collection(os.path.join(out, "datasets"), reduced)


def cmd_train(cfg, out):
    datasets = _load_reduced(cfg)
    if cfg["studies"]:
        by_name = {ds.name: ds for ds in datasets}
        missing = [s for s in cfg["studies"] if s not in by_name]
        if missing:
            raise InvalidConfig(f"unknown studies {missing}")
        datasets = [by_name[s] for s in cfg["studies"]]
    rng = np.random.default_rng(cfg["seed"])
    model = FactoredModel.initialize(datasets[0].dim, cfg["latent_dim"],
                                     {ds.name: ds.condition_names for ds in datasets}, cfg["dropout"], rng=rng)
    tcfg = TrainConfig(batch_size=cfg["batch_size"], max_iterations=cfg["iterations"], lr=cfg["lr"],
                       seed=cfg["seed"], dropout_rate=cfg["dropout"], l2=cfg["l2"], log_every=cfg["log_every"])
    _, trace = train(model, {ds.name: (ds.X, ds.labels) for ds in datasets}, tcfg, rng=rng)
    save_checkpoint(os.path.join(out, "checkpoint"), model)
    with atomic_open(os.path.join(out, "trace.csv"), "w") as fh:
        write_trace_csv(fh, trace)


def cmd_evaluate(cfg, out):
    model = load_checkpoint(_need_dir(cfg["checkpoint"], "checkpoint"))
    datasets = _load_reduced(cfg)
    scores = {ds.name: accuracy(model, ds.X, ds.labels, study=ds.name) for ds in datasets if ds.name in model.heads}
    if not scores:
        raise InvalidConfig("no study of the collection is known to the checkpoint")
    write_json(os.path.join(out, "accuracy.json"), scores)


def _raw_inputs(cfg):
    datasets = load_collection(_need_dir(cfg["data"], "data"))
    dicts = load_dictionaries(_need_dir(cfg["dicts"], "dictionary"))
    return datasets, dicts


def cmd_ablate(cfg, out):
    datasets, dicts = _raw_inputs(cfg)
    report = run_ablation(datasets, assemble_multiscale(dicts), _eval_config(cfg), variants=cfg["variants"],
                          folds=cfg["folds"], targets=cfg["targets"] or None, n_jobs=cfg["jobs"])
    _write_report(out, report)


def cmd_curves(cfg, out):
    datasets, dicts = _raw_inputs(cfg)
    target = cfg["target"] or min(datasets, key=lambda ds: (ds.n_subjects, ds.name)).name
    report = learning_curve(datasets, assemble_multiscale(dicts), target, cfg["grid"], _eval_config(cfg),
                            folds=cfg["folds"], n_jobs=cfg["jobs"])
    _write_report(out, report)


def cmd_multiscale(cfg, out):
    datasets, dicts = _raw_inputs(cfg)
    by_name = {d.name: d for d in dicts}
    single = cfg["single"] or max(dicts, key=lambda d: d.n_components).name
    if single not in by_name:
        raise InvalidConfig(f"unknown dictionary {single!r}; have {sorted(by_name)}")
    ops = {"single": assemble_multiscale([by_name[single]]), "multiscale": assemble_multiscale(dicts)}
    report = multiscale_benchmark(datasets, ops, _eval_config(cfg), folds=cfg["folds"],
                                  targets=cfg["targets"] or default_targets(datasets), n_jobs=cfg["jobs"])
    _write_report(out, report)


def cmd_introspect(cfg, out):
    model = load_checkpoint(_need_dir(cfg["checkpoint"], "checkpoint"))
    dicts = load_dictionaries(_need_dir(cfg["dicts"], "dictionary"))
    op = assemble_multiscale(dicts)
    datasets = _load_reduced(cfg)
    for study in model.heads:
        save_maps(os.path.join(out, "maps"), collapse(model, op, study))
    Z = np.vstack([ds.X for ds in datasets])
    res = kmeans(Z, cfg["clusters"], seed=cfg["seed"], n_init=cfg["restarts"])
    sizes = np.bincount(res.labels, minlength=cfg["clusters"])
    templates = make_templates(model, op, res.centroids, sizes, dicts)
    save_templates(os.path.join(out, "templates"), templates, model, top=cfg["top"])


HANDLERS = {
    "gen-synth": cmd_gen_synth, "project": cmd_project, "train": cmd_train, "evaluate": cmd_evaluate,
    "ablate": cmd_ablate, "curves": cmd_curves, "multiscale": cmd_multiscale, "introspect": cmd_introspect,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s %(name)s %(message)s",
                            stream=sys.stderr)
        cfg = resolve(args)
        os.makedirs(args.out, exist_ok=True)
        HANDLERS[args.command](cfg, args.out)
        write_json(os.path.join(args.out, "config.json"), {"command": args.command, "config": cfg})
    except (CogfactorError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        _fail(type(exc).__name__, str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
