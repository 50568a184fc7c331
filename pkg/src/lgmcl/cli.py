"""``lgmcl`` command line."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .analysis import EMBEDDING_KINDS, export_embeddings, modality_attribution
from .autodiff.gradcheck import run_op_suite
from .chem import canonical_key, murcko_key, parse_smiles
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .data import make_split
from .errors import ConfigError, LgmclError
from .featurizer import ATOM_DIM, BOND_DIM, featurize, generate_template_text
from .fingerprints import write_fingerprints
from .metrics import write_reports
from .pipeline import (
    evaluate_checkpoint,
    fingerprints_for,
    load_task_table,
    model_from_checkpoint,
    inputs_for_checkpoint,
    run_finetune,
    run_pretrain_graph,
    run_pretrain_text,
)


class CliError(LgmclError):
    code = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # one line instead of usage + message
        raise CliError(message)


class Run:
    """Per-command context: resolved config, output directory, log sink, manifest."""

    def __init__(self, args: argparse.Namespace) -> None:
        self.args = args
        self.cfg: RunConfig = load_config(args.config, args.set, args.seed)
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.start = time.perf_counter()
        self._log = open(self.out / "run.log", "a", encoding="utf-8")

    def log(self, msg: str) -> None:
        line = f"{time.strftime('%H:%M:%S')} {msg}"
        self._log.write(line + "\n")
        self._log.flush()
        if not self.args.quiet:
            print(line, file=sys.stderr)

    def output(self, path: Path) -> Path:
        self.outputs.append(path.name)
        return path

    def finish(self) -> None:
        manifest = {
            "command": self.args.command,
            "version": __version__,
            "inputs": self.inputs,
            "config_hash": self.cfg.hash,
            "config": self.cfg.resolved(),
            "seeds": list(self.cfg["data"]["seeds"]),
            "wall_time_s": round(time.perf_counter() - self.start, 3),
            "outputs": sorted(set(self.outputs)),
        }
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        self._log.close()


# -- chemistry commands --------------------------------------------------------

def cmd_parse(run: Run) -> None:
    rows = []
    for smi in run.args.smiles:
        mol = parse_smiles(smi)
        n_rings = len(mol.rings.rings) if mol.rings else 0
        row = {"smiles": smi, "atoms": mol.n_atoms, "bonds": mol.n_bonds, "rings": n_rings,
               "hydrogens": sum(mol.total_h(i) for i in range(mol.n_atoms)),
               "canonical": canonical_key(mol), "scaffold": murcko_key(mol)}
        rows.append(row)
        print(f"{smi}\tatoms={row['atoms']}\tbonds={row['bonds']}\trings={n_rings}\thydrogens={row['hydrogens']}")
    run.inputs["smiles"] = " ".join(run.args.smiles)
    (run.output(run.out / "parse.json")).write_text(json.dumps(rows, indent=2) + "\n")


def cmd_featurize(run: Run) -> None:
    mol = parse_smiles(run.args.smiles)
    g = featurize(mol)
    np.savez(run.output(run.out / "features.npz"), atom_features=g.atom_features, bond_features=g.bond_features,
             adjacency=g.adjacency, node_inputs=g.node_inputs())
    run.inputs["smiles"] = run.args.smiles
    print(f"atoms={g.n_atoms}x{ATOM_DIM} bonds={g.n_bonds}x{BOND_DIM}")


def cmd_describe(run: Run) -> None:
    text = generate_template_text(parse_smiles(run.args.smiles))
    run.inputs["smiles"] = run.args.smiles
    run.output(run.out / "description.txt").write_text(text + "\n")
    print(text)


def cmd_fingerprint(run: Run) -> None:
    table = load_task_table(run.cfg)
    run.inputs["dataset"] = run.cfg["data"]["dataset"]
    fp = fingerprints_for(run.cfg, table)
    binary = bool(np.isin(fp, (0.0, 1.0)).all())
    write_fingerprints(run.output(run.out / "fingerprints.fp"), "lgmcl", table.ids, fp, binary)
    run.log(f"fingerprint rows={fp.shape[0]} width={fp.shape[1]}")


def cmd_split(run: Run) -> None:
    table = load_task_table(run.cfg)
    run.inputs["dataset"] = run.cfg["data"]["dataset"]
    for seed in run.cfg["data"]["seeds"]:
        split = make_split(table, run.cfg.split_spec(seed))
        path = run.output(run.out / f"split_seed{seed}.csv")
        where = {}
        for name, idx in split.as_dict().items():
            for i in idx:
                where[int(i)] = name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "split"])
            for i, ident in enumerate(table.ids):
                w.writerow([ident, where[i]])
        run.log(f"split seed={seed} train={len(split.train)} valid={len(split.valid)} test={len(split.test)}")


# -- training commands ---------------------------------------------------------

def _pretrain(run: Run, which: str) -> None:
    seed = run.cfg["data"]["seeds"][0]
    run.inputs["dataset"] = run.cfg["data"]["pretrain_dataset"]
    fn = run_pretrain_graph if which == "graph" else run_pretrain_text
    res = fn(run.cfg, seed, run.log, resume=run.args.resume, force=run.args.force)
    save_checkpoint(res.checkpoint, run.output(run.out / f"{which}.ckpt"))
    res.result.write_history(run.output(run.out / "loss_history.csv"))
    if res.vocab is not None:
        res.vocab.save(run.output(run.out / "vocab.txt"))


def cmd_pretrain_graph(run: Run) -> None:
    _pretrain(run, "graph")


def cmd_pretrain_text(run: Run) -> None:
    _pretrain(run, "text")


def cmd_finetune(run: Run) -> None:
    run.inputs["dataset"] = run.cfg["data"]["dataset"]
    for key in ("graph_checkpoint", "text_checkpoint"):
        if run.cfg["finetune"][key]:
            run.inputs[key] = run.cfg["finetune"][key]
    runs = run_finetune(run.cfg, run.log)
    for r in runs:
        save_checkpoint(r.checkpoint, run.output(run.out / f"model_seed{r.seed}.ckpt"))
        with open(run.output(run.out / f"history_seed{r.seed}.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", f"valid_{r.report.metric}"])
            for epoch, loss, valid in r.result.history:
                w.writerow([epoch, repr(loss), "" if valid is None else repr(valid)])
    write_reports(run.output(run.out / "metrics.csv"), [r.report for r in runs])
    vals = [r.report.values["test"] for r in runs if r.report.values["test"] is not None]
    if vals:
        print(f"test_{runs[0].report.metric} mean={np.mean(vals):.4f} std={np.std(vals):.4f} n={len(vals)}")


def _load_model(run: Run):
    run.inputs["checkpoint"] = run.args.checkpoint
    ckpt = load_checkpoint(run.args.checkpoint)
    model, stored_cfg, vocab = model_from_checkpoint(ckpt)
    table = load_task_table(run.cfg)
    run.inputs["dataset"] = run.cfg["data"]["dataset"]
    inputs = inputs_for_checkpoint(stored_cfg, model, vocab, table, ckpt.metadata["fp_bits"])
    return ckpt, model, stored_cfg, table, inputs


def cmd_evaluate(run: Run) -> None:
    ckpt, model, stored_cfg, table, inputs = _load_model(run)
    report = evaluate_checkpoint(run.cfg, model, inputs, table, ckpt.metadata["seed"], run.cfg["data"]["dataset"])
    write_reports(run.output(run.out / "metrics.csv"), [report])
    print(f"test_{report.metric}={report.values['test']}")


def cmd_export_embeddings(run: Run) -> None:
    _, model, _, table, inputs = _load_model(run)
    mat = export_embeddings(model, inputs, table.ids, run.args.which, run.output(run.out / f"embeddings_{run.args.which}.csv"))
    run.log(f"export-embeddings which={run.args.which} rows={mat.shape[0]} width={mat.shape[1]}")


def cmd_attribute(run: Run) -> None:
    ckpt, model, _, table, inputs = _load_model(run)
    split = make_split(table, run.cfg.split_spec(ckpt.metadata["seed"]))
    shares = modality_attribution(model, inputs, split.test)
    run.output(run.out / "attribution.json").write_text(json.dumps(shares, indent=2, sort_keys=True) + "\n")
    print(" ".join(f"{m}={v:.4f}" for m, v in shares.items()))


def cmd_grad_check(run: Run) -> None:
    results = run_op_suite(trials=run.args.trials, seed=run.cfg["data"]["seeds"][0])
    with open(run.output(run.out / "gradcheck.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["op", "max_rel_error", "tolerance", "passed"])
        for r in results:
            w.writerow([r.name, repr(r.max_rel_error), r.tolerance, int(r.passed)])
    failed = [r.name for r in results if not r.passed]
    for r in results:
        run.log(f"grad-check op={r.name} max_rel_error={r.max_rel_error:.3e} {'PASS' if r.passed else 'FAIL'}")
    if failed:
        raise _GradCheckFailed(f"{len(failed)} ops failed: {','.join(failed)}")
    print(f"grad-check passed {len(results)} ops")


class _GradCheckFailed(LgmclError):
    code = "gradcheck"


COMMANDS: dict[str, Callable[[Run], None]] = {
    "parse": cmd_parse,
    "featurize": cmd_featurize,
    "describe": cmd_describe,
    "fingerprint": cmd_fingerprint,
    "split": cmd_split,
    "pretrain-graph": cmd_pretrain_graph,
    "pretrain-text": cmd_pretrain_text,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "export-embeddings": cmd_export_embeddings,
    "attribute": cmd_attribute,
    "grad-check": cmd_grad_check,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI run configuration")
    common.add_argument("--out", metavar="DIR", default="lgmcl_out", help="output directory (default: lgmcl_out)")
    common.add_argument("--set", metavar="K=V", action="append", default=[], help="override section.key=value")
    common.add_argument("--seed", type=int, help="single seed replacing data.seeds")
    common.add_argument("--quiet", action="store_true", help="no progress lines on stderr")

    parser = _Parser(prog="lgmcl", description="Molecular graph/text contrastive pretraining and fused fine-tuning.")
    parser.add_argument("--version", action="version", version=f"lgmcl {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    p = sub.add_parser("parse", parents=[common], help="parse SMILES and print graph counts")
    p.add_argument("smiles", nargs="+")
    for name, help_ in (("featurize", "atom/bond feature matrices"), ("describe", "template description")):
        sub.add_parser(name, parents=[common], help=help_).add_argument("smiles")
    sub.add_parser("fingerprint", parents=[common], help="fingerprint matrix for data.dataset")
    sub.add_parser("split", parents=[common], help="write split assignments per seed")
    for name in ("pretrain-graph", "pretrain-text"):
        p = sub.add_parser(name, parents=[common], help=f"contrastive {name.split('-')[1]} pretraining")
        p.add_argument("--resume", metavar="CKPT", help="continue from a checkpoint of the same config")
        p.add_argument("--force", action="store_true", help="accept a config-hash mismatch on --resume")
    sub.add_parser("finetune", parents=[common], help="fused fine-tuning over data.seeds")
    for name, help_ in (("evaluate", "metrics of a fine-tuned checkpoint"),
                        ("export-embeddings", "per-molecule embeddings CSV"),
                        ("attribute", "modality occlusion shares on the test split")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--checkpoint", required=True, metavar="CKPT")
        if name == "export-embeddings":
            p.add_argument("--which", default="fused", choices=sorted(EMBEDDING_KINDS))
    p = sub.add_parser("grad-check", parents=[common], help="finite-difference check of every op")
    p.add_argument("--trials", type=int, default=10)
    return parser


def _error_line(exc: BaseException) -> str:
    code = getattr(exc, "code", None) or type(exc).__name__
    return f"lgmcl: error code={code} type={type(exc).__name__} message={json.dumps(str(exc))}"


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.quiet:
            logging.getLogger().setLevel(logging.ERROR)
        run = Run(args)
        COMMANDS[args.command](run)
        run.finish()
    except (LgmclError, OSError, KeyError, FloatingPointError) as exc:
        print(_error_line(exc), file=sys.stderr)
        return 2 if isinstance(exc, (ConfigError, CliError)) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
