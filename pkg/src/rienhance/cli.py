"""Command-line entry point: ``rienhance {synth,train,score,eval}``.

Every command is a pure function of its config file, input files and seed,
so reruns write byte-identical outputs. Exit codes: 2 for usage and config
errors, 3 for data errors, 4 for numerical failures.
"""

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .embedding_io import format_float, read_embedding_csv, write_embedding_csv
from .errors import ConfigError, CSVFormatError, DataError, NonFiniteEvaluation, NumericalError
from .eval_metrics import (
    DEFAULT_FMR,
    DEFAULT_RANK,
    DEFAULT_REJECT_GRID,
    FAR_TARGETS,
    FPIR_TARGETS,
    EvalReport,
    MatchSet,
    all_pairs,
    erc,
    open_set_identification,
    rank1_ir,
    ri_statistics,
    verification_sweep,
)
from .recognizability import UNLABELED
from .synth_data import SPLITS, SynthConfig, SynthDataset, generate
from .trainer import ModelState, TrainConfig, embed, predict_xi_hat, train

log = logging.getLogger("rienhance")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 2, 3, 4
LOG_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
INSTANCES_FILE = "instances.csv"
EVAL_KEYS = ("far_grid", "fpir_grid", "fmr", "reject_grid", "rank")


@dataclass
class RunConfig:
    """One JSON document describing a run; blocks not used by a command are ignored."""

    seed: Optional[int] = None
    synth: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    data_dir: Optional[str] = None
    eval: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - {"seed", "synth", "train", "data_dir", "eval"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        bad_eval = set(d.get("eval", {})) - set(EVAL_KEYS)
        if bad_eval:
            raise ConfigError(f"unknown eval keys: {sorted(bad_eval)}")
        if "seed" in d.get("synth", {}) or "seed" in d.get("train", {}):
            raise ConfigError("the seed belongs at the top level, not inside a block")
        seed = d.get("seed")
        if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or seed < 0):
            raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
        return cls(seed=seed, synth=dict(d.get("synth", {})), train=dict(d.get("train", {})),
                   data_dir=d.get("data_dir"), eval=dict(d.get("eval", {})))

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        try:
            return cls.from_dict(doc)
        except ConfigError as exc:
            raise ConfigError(f"{path}: {exc}") from None

    def resolved_seed(self, override):
        seed = override if override is not None else self.seed
        if seed is None:
            raise ConfigError("a seed is required (config key 'seed' or --seed)")
        return seed

    def synth_config(self, seed):
        return SynthConfig.from_dict({**self.synth, "seed": seed})

    def train_config(self, seed, baseline=False):
        extra = dict(self.train)
        if "synth" in self.train or "data_dir" in self.train:
            raise ConfigError("'synth' and 'data_dir' are top-level blocks, not train keys")
        cfg = TrainConfig.from_dict({**extra, "seed": seed})
        if self.data_dir is not None:
            cfg = cfg.replace(synth=None, data_dir=self.data_dir)
        else:
            cfg = cfg.replace(synth=self.synth_config(seed))
        if baseline:
            cfg = cfg.replace(loss=cfg.loss.baseline())
        return cfg


def _write_instances(path, ds: SynthDataset):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label", "split", "is_hard"])
        for i, lab, sp, hard in zip(ds.ids, ds.labels, ds.split, ds.is_hard):
            w.writerow([i, int(lab), sp, int(hard)])


def write_dataset_dir(out_dir, ds: SynthDataset):
    os.makedirs(out_dir, exist_ok=True)
    for sp in SPLITS:
        ids, x, labels, _ = ds.subset(sp)
        write_embedding_csv(os.path.join(out_dir, f"{sp}.csv"), ids, labels, x)
    write_embedding_csv(os.path.join(out_dir, "ui.csv"), ds.ui_ids,
                        np.full(ds.ui_ids.size, UNLABELED), ds.ui_inputs)
    _write_instances(os.path.join(out_dir, INSTANCES_FILE), ds)


def load_dataset_dir(path) -> SynthDataset:
    """Rebuild a dataset from the files ``synth`` writes.

    ``instances.csv`` is optional; without it every instance counts as easy.
    """
    parts = {}
    for sp in SPLITS + ("ui",):
        fp = os.path.join(path, f"{sp}.csv")
        if not os.path.exists(fp):
            raise DataError(f"{fp}: missing dataset file")
        parts[sp] = read_embedding_csv(fp)
    ids = np.concatenate([parts[sp][0] for sp in SPLITS])
    labels = np.concatenate([parts[sp][1] for sp in SPLITS])
    inputs = np.vstack([parts[sp][2] for sp in SPLITS])
    split = np.concatenate([np.full(parts[sp][0].size, sp) for sp in SPLITS])
    if np.any(labels < 0):
        raise DataError(f"{path}: labeled splits contain label {UNLABELED}")
    if inputs.shape[1] != parts["ui"][2].shape[1]:
        raise DataError(f"{path}: UI inputs have dim {parts['ui'][2].shape[1]}, others {inputs.shape[1]}")
    hard = np.zeros(ids.size, dtype=bool)
    inst = os.path.join(path, INSTANCES_FILE)
    if os.path.exists(inst):
        flags = {}
        with open(inst, encoding="utf-8", newline="") as fh:
            for lineno, row in enumerate(csv.DictReader(fh), start=2):
                if row.get("is_hard") not in ("0", "1"):
                    raise CSVFormatError(inst, lineno, "is_hard", f"expected 0 or 1, got {row.get('is_hard')!r}")
                flags[row["id"]] = row["is_hard"] == "1"
        hard = np.array([flags.get(i, False) for i in ids])
    return SynthDataset(ids=ids, inputs=inputs, labels=labels, is_hard=hard, split=split,
                        ui_ids=parts["ui"][0], ui_inputs=parts["ui"][2])


def _float_list(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def cmd_synth(args):
    run = RunConfig.load(args.config)
    cfg = run.synth_config(run.resolved_seed(args.seed))
    ds = generate(cfg)
    write_dataset_dir(args.out, ds)
    print(json.dumps(ds.summary(), sort_keys=True))
    return 0


def cmd_train(args):
    run = RunConfig.load(args.config)
    cfg = run.train_config(run.resolved_seed(args.seed), baseline=args.baseline)
    model, history = train(cfg)
    os.makedirs(args.out, exist_ok=True)
    model.save(os.path.join(args.out, "checkpoint.json"))
    history.to_csv(os.path.join(args.out, "history.csv"))
    last = history.records[-1]
    log.info("trained %d epochs, final l_total %.6f", len(history.records), last.l_total)
    return 0


def _load_model(path):
    try:
        return ModelState.load(path)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: malformed checkpoint ({exc})") from None


def _quality(model, x):
    with np.errstate(over="ignore", invalid="ignore"):
        q = predict_xi_hat(model, x)
    if not np.all(np.isfinite(q)):
        raise NonFiniteEvaluation(f"{int(np.sum(~np.isfinite(q)))} predicted RI values are not finite")
    return q


def cmd_score(args):
    model = _load_model(args.checkpoint)
    ids, labels, x = read_embedding_csv(args.input)
    xi_hat = _quality(model, x)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label", "xi_hat"])
        for i, lab, q in zip(ids, labels, xi_hat):
            w.writerow([i, int(lab), format_float(q)])
    return 0


def _eval_settings(args):
    block = RunConfig.load(args.config).eval if args.config else {}
    pick = lambda flag, key, default: flag if flag is not None else block.get(key, default)  # noqa: E731
    return {
        "far": [float(f) for f in pick(args.far_grid, "far_grid", FAR_TARGETS)],
        "fpir": [float(f) for f in pick(args.fpir_grid, "fpir_grid", FPIR_TARGETS)],
        "fmr": float(pick(args.fmr, "fmr", DEFAULT_FMR)),
        "reject": [float(r) for r in pick(args.reject_grid, "reject_grid", DEFAULT_REJECT_GRID)],
        "rank": int(pick(args.rank, "rank", DEFAULT_RANK)),
    }


def evaluate_inputs(model, gallery, probe, settings) -> EvalReport:
    """Encode gallery and probe inputs and run every metric; ``xi_hat`` is the quality."""
    _, g_labels, g_x = gallery
    _, p_labels, p_x = probe
    g_v, p_v = embed(model, g_x), embed(model, p_x)
    g_q, p_q = _quality(model, g_x), _quality(model, p_x)
    if np.any(g_labels == UNLABELED):
        raise DataError("gallery entries must be labeled")
    ms = MatchSet(g_v, g_labels, p_v, p_labels)
    mated = ms.mated_mask()
    report = EvalReport(tpir_rank=settings["rank"], fmr_target=settings["fmr"])
    if mated.any():
        report.rank1_ir = rank1_ir(MatchSet(g_v, g_labels, p_v[mated], p_labels[mated]))
    if not mated.all():
        report.tpir_at_fpir = open_set_identification(ms, settings["rank"], settings["fpir"])
    pairs = all_pairs(ms.scores(), p_labels, g_labels)
    report.tpr_at_far = verification_sweep(pairs, settings["far"])
    quality = np.column_stack([np.repeat(p_q, g_q.size), np.tile(g_q, p_q.size)])
    report.erc = erc(np.column_stack([pairs, quality]), settings["fmr"], settings["reject"])
    report.ri_stats = ri_statistics(np.concatenate([g_q, p_q]))
    return report


def cmd_eval(args):
    settings = _eval_settings(args)
    model = _load_model(args.checkpoint)
    report = evaluate_inputs(model, read_embedding_csv(args.gallery), read_embedding_csv(args.probe), settings)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(args.out, "erc.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["reject_fraction", "fnmr"])
        for r, f in report.erc:
            w.writerow([format_float(r), format_float(f)])
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="rienhance", description="Recognizability-index toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a seeded synthetic dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model; writes checkpoint.json and history.csv")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--seed", type=int)
    t.add_argument("--baseline", action="store_true", help="classification loss only")
    t.set_defaults(func=cmd_train)

    sc = sub.add_parser("score", help="learned RI for every row of an input CSV")
    sc.add_argument("checkpoint")
    sc.add_argument("input")
    sc.add_argument("--out", required=True, help="output CSV")
    sc.set_defaults(func=cmd_score)

    e = sub.add_parser("eval", help="recognition metrics and error-versus-reject curve")
    e.add_argument("checkpoint")
    e.add_argument("gallery")
    e.add_argument("probe")
    e.add_argument("--out", required=True, help="output directory")
    e.add_argument("--config", help="optional run config with an 'eval' block")
    e.add_argument("--far-grid", type=_float_list)
    e.add_argument("--fpir-grid", type=_float_list)
    e.add_argument("--fmr", type=float)
    e.add_argument("--reject-grid", type=_float_list)
    e.add_argument("--rank", type=int)
    e.set_defaults(func=cmd_eval)
    return p


def _setup_logging():
    level = os.environ.get("RI_LOG", "quiet").lower()
    if level not in LOG_LEVELS:
        raise ConfigError(f"RI_LOG must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        return args.func(args)
    except ConfigError as exc:
        print(f"rienhance: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"rienhance: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"rienhance: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"rienhance: invalid argument: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
