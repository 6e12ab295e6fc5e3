"""Command-line entry point for training, evaluation, ablations, and export.

Every run writes all of its artifacts (checkpoint, CSVs, TSVs, manifest)
under the directory given by --out, and records the fully resolved
configuration in ``manifest.json`` so the run can be reproduced exactly with
``--from-manifest``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .autodiff import NumericError
from .evaluation import (ProbeConfig, PROBE_SOLVER, ablation_suite, evaluate,
                         summary_lines, write_results_csv, write_summary)
from .graph import DatasetError, load_dataset
from .model import GateModel, forward, load_checkpoint, save_checkpoint
from .training import TrainConfig, train, write_loss_history
from . import evaluation as _evaluation

# published per-dataset settings, selected by --dataset-name (or the
# dataset directory's basename) and always overridable by explicit flags
DATASET_DEFAULTS = {
    "cora": {"lambda": 0.5, "epochs": 100},
    "citeseer": {"lambda": 20.0, "epochs": 100},
    "pubmed": {"lambda": 0.5, "epochs": 500},
}
GLOBAL_DEFAULTS = {
    "lambda": 0.5,
    "epochs": 100,
    "lr": 1e-4,
    "dims": "512,512",
    "activation": "identity",
    "tied": True,
    "ablation": "none",
    "protocol": "transductive",
    "runs": 10,
    "parallel": 1,
    "seed": 0,
    "probe_l2": 1e-2,
    "probe_max_iterations": 1000,
    "probe_tol": 1e-6,
}
ABLATION_FLAGS = {"none": "none", "A": "no_attention", "S": "no_structure",
                  "F": "no_features"}


def _error(category: str, message) -> None:
    print(f"error: {category}: {message}", file=sys.stderr)


def _add_common(sub, runs=False):
    sub.add_argument("--dataset", help="canonical dataset directory")
    sub.add_argument("--dataset-name", help="hint for published defaults (cora/citeseer/pubmed)")
    sub.add_argument("--protocol", choices=["transductive", "inductive"], default=None)
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--lambda", dest="lambda_", type=float, default=None,
                     help="structure reconstruction weight")
    sub.add_argument("--epochs", type=int, default=None)
    sub.add_argument("--lr", type=float, default=None)
    sub.add_argument("--dims", default=None, help="comma-separated layer sizes, e.g. 512,512")
    sub.add_argument("--activation", choices=["identity", "sigmoid", "tanh"], default=None)
    sub.add_argument("--untied", action="store_const", const=True, default=None,
                     help="give the decoder its own parameters")
    sub.add_argument("--ablation", choices=sorted(ABLATION_FLAGS), default=None)
    sub.add_argument("--probe-l2", type=float, default=None)
    sub.add_argument("--probe-max-iterations", type=int, default=None)
    sub.add_argument("--probe-tol", type=float, default=None)
    sub.add_argument("--from-manifest", help="take unset options from a previous manifest.json")
    sub.add_argument("--out", required=True, help="output directory (all files land here)")
    if runs:
        sub.add_argument("--runs", type=int, default=None)
        sub.add_argument("--parallel", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gate",
        description="Unsupervised graph attention auto-encoder experiments")
    commands = parser.add_subparsers(dest="command", required=True)

    p_train = commands.add_parser("train", help="train one model and save a checkpoint")
    _add_common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = commands.add_parser("eval", help="multi-run accuracy evaluation")
    _add_common(p_eval, runs=True)
    p_eval.set_defaults(func=cmd_eval)

    p_ablate = commands.add_parser("ablate", help="compare all four architecture variants")
    _add_common(p_ablate, runs=True)
    p_ablate.add_argument("--protocols", choices=["transductive", "inductive", "both"],
                          default="both")
    p_ablate.set_defaults(func=cmd_ablate)

    p_export = commands.add_parser("export-embeddings",
                                   help="write embeddings (and attention) TSVs from a checkpoint")
    p_export.add_argument("--dataset", required=True)
    p_export.add_argument("--checkpoint", required=True)
    p_export.add_argument("--attention", action="store_true",
                          help="also export per-edge attention coefficients")
    p_export.add_argument("--out", required=True)
    p_export.set_defaults(func=cmd_export)

    p_check = commands.add_parser("convert-check",
                                  help="validate a canonical dataset directory")
    p_check.add_argument("--dataset", required=True)
    p_check.set_defaults(func=cmd_convert_check)
    return parser


def _infer_dataset_name(args) -> str | None:
    if getattr(args, "dataset_name", None):
        return args.dataset_name.lower()
    if getattr(args, "dataset", None):
        base = os.path.basename(os.path.normpath(args.dataset)).lower()
        if base in DATASET_DEFAULTS:
            return base
    return None


def resolve_spec(args) -> dict:
    """Merge CLI flags, a --from-manifest record, dataset defaults, and the
    global defaults into one flat run record (highest precedence first)."""
    manifest = {}
    if getattr(args, "from_manifest", None):
        with open(args.from_manifest, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    name = _infer_dataset_name(args) or manifest.get("dataset_name")
    per_dataset = DATASET_DEFAULTS.get(name or "", {})

    def pick(key, arg_value):
        if arg_value is not None:
            return arg_value
        if key in manifest:
            return manifest[key]
        if key in per_dataset:
            return per_dataset[key]
        return GLOBAL_DEFAULTS.get(key)

    tied = args.untied is not True
    if args.untied is None and "tied" in manifest:
        tied = bool(manifest["tied"])
    spec = {
        "command": args.command,
        "dataset": pick("dataset", args.dataset),
        "dataset_name": name or "",
        "protocol": pick("protocol", args.protocol),
        "seed": int(pick("seed", args.seed)),
        "lambda": float(pick("lambda", args.lambda_)),
        "epochs": int(pick("epochs", args.epochs)),
        "lr": float(pick("lr", args.lr)),
        "dims": str(pick("dims", args.dims)),
        "activation": pick("activation", args.activation),
        "tied": tied,
        "ablation": ABLATION_FLAGS[pick("ablation", args.ablation)]
        if pick("ablation", args.ablation) in ABLATION_FLAGS
        else pick("ablation", args.ablation),
        "probe_l2": float(pick("probe_l2", args.probe_l2)),
        "probe_max_iterations": int(pick("probe_max_iterations", args.probe_max_iterations)),
        "probe_tol": float(pick("probe_tol", args.probe_tol)),
        "probe_solver": PROBE_SOLVER,
        "out": args.out,
    }
    if hasattr(args, "runs"):
        spec["runs"] = int(pick("runs", args.runs))
        spec["parallel"] = int(pick("parallel", args.parallel))
    if spec["dataset"] is None:
        raise ValueError("--dataset is required (directly or via --from-manifest)")
    return spec


def _train_config(spec: dict) -> TrainConfig:
    dims = tuple(int(d) for d in str(spec["dims"]).split(",") if d)
    return TrainConfig(
        structure_weight=spec["lambda"], epochs=spec["epochs"],
        learning_rate=spec["lr"], dims=dims, seed=spec["seed"],
        tied=spec["tied"], activation=spec["activation"], ablation=spec["ablation"])


def _probe_config(spec: dict) -> ProbeConfig:
    return ProbeConfig(l2_strength=spec["probe_l2"],
                       max_iterations=spec["probe_max_iterations"],
                       convergence_tol=spec["probe_tol"])


def _write_manifest(spec: dict):
    path = os.path.join(spec["out"], "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _prepare_out(spec: dict):
    os.makedirs(spec["out"], exist_ok=True)


def cmd_train(args) -> int:
    spec = resolve_spec(args)
    _prepare_out(spec)
    dataset = load_dataset(spec["dataset"])
    cfg = _train_config(spec)
    if spec["protocol"] == "inductive":
        g, x = _evaluation.inductive_training_inputs(dataset)
    else:
        g, x = dataset.graph, dataset.features
    model, history = train(g, x, cfg)
    ckpt = os.path.join(spec["out"], "model.ckpt")
    save_checkpoint(model, ckpt)
    write_loss_history(history, os.path.join(spec["out"], "loss_history.csv"))
    _write_manifest(spec)
    print(f"trained {cfg.epochs} epochs on {g.num_nodes} nodes; "
          f"final loss {history[-1].total:.6g}; checkpoint {ckpt}")
    return 0


def cmd_eval(args) -> int:
    spec = resolve_spec(args)
    _prepare_out(spec)
    dataset = load_dataset(spec["dataset"])
    cfg = _train_config(spec)
    stats = evaluate(dataset, cfg, spec["runs"], spec["protocol"],
                     probe=_probe_config(spec), parallel=spec["parallel"])
    results = {(spec["ablation"], spec["protocol"]): stats}
    write_results_csv(results, cfg.seed, os.path.join(spec["out"], "results.csv"))
    write_summary(results, os.path.join(spec["out"], "summary.csv"))
    _write_manifest(spec)
    for line in summary_lines(results):
        print(line)
    return 0


def cmd_ablate(args) -> int:
    spec = resolve_spec(args)
    spec["protocols"] = args.protocols
    _prepare_out(spec)
    dataset = load_dataset(spec["dataset"])
    cfg = _train_config(spec)
    protocols = ("transductive", "inductive") if args.protocols == "both" else (args.protocols,)
    results = ablation_suite(dataset, cfg, spec["runs"], protocols=protocols,
                             probe=_probe_config(spec), parallel=spec["parallel"])
    write_results_csv(results, cfg.seed, os.path.join(spec["out"], "results.csv"))
    write_summary(results, os.path.join(spec["out"], "summary.csv"))
    _write_manifest(spec)
    for line in summary_lines(results):
        print(line)
    return 0


def export_embeddings(model: GateModel, g, x, path, attention_path=None):
    """Write one TSV row per node: node_id then the embedding coordinates.

    With ``attention_path``, also dump per-edge coefficients: one row per
    stored (i, j) with every encoder/decoder layer's coefficient and their
    mean across layers, averaging the encoder and decoder values.
    """
    trace = forward(model, x, g)
    h = trace.embeddings.value
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("node_id\t" + "\t".join(f"dim_{d}" for d in range(h.shape[0])) + "\n")
        for i in range(h.shape[1]):
            fh.write(str(i) + "\t" + "\t".join(f"{v:.12g}" for v in h[:, i]) + "\n")
    if attention_path is None:
        return
    num_layers = model.num_layers
    enc = [a.value for a in trace.encoder_attention]
    dec = [a.value for a in trace.decoder_attention]
    mean = sum(e + d for e, d in zip(enc, dec)) / (2.0 * num_layers)
    header = (["src", "dst"] + [f"enc_{k}" for k in range(1, num_layers + 1)]
              + [f"dec_{k}" for k in range(1, num_layers + 1)] + ["mean"])
    rows, cols = g.edge_rows, g.col_indices
    with open(attention_path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for e in range(g.nnz):
            vals = [str(rows[e]), str(cols[e])]
            vals += [f"{layer[e]:.12g}" for layer in enc]
            vals += [f"{layer[e]:.12g}" for layer in dec]
            vals.append(f"{mean[e]:.12g}")
            fh.write("\t".join(vals) + "\n")


def cmd_export(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    dataset = load_dataset(args.dataset)
    model = load_checkpoint(args.checkpoint)
    emb_path = os.path.join(args.out, "embeddings.tsv")
    attn_path = os.path.join(args.out, "attention.tsv") if args.attention else None
    export_embeddings(model, dataset.graph, dataset.features, emb_path, attn_path)
    print(f"wrote {emb_path}" + (f" and {attn_path}" if attn_path else ""))
    return 0


def cmd_convert_check(args) -> int:
    dataset = load_dataset(args.dataset)
    dataset.graph.validate()
    dataset.splits.check_range(dataset.graph.num_nodes)
    stats = dataset.graph.stats()
    print(f"nodes={stats['num_nodes']} edges={stats['num_edges']} "
          f"features={dataset.features.num_features} classes={dataset.labels.num_classes} "
          f"train={dataset.splits.train_ids.size} val={dataset.splits.val_ids.size} "
          f"test={dataset.splits.test_ids.size} "
          f"edges_per_node={stats['edges_per_node']:.3f} "
          f"mean_neighbors={stats['mean_neighbors']:.3f}")
    print("ok")
    return 0


def run_cli(argv=None) -> int:
    """Parse and execute; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:       # argparse exits 2 on unknown/invalid flags
        return int(exc.code or 0)
    try:
        return args.func(args)
    except DatasetError as exc:
        _error("dataset", exc)
        return 3
    except NumericError as exc:
        _error("numeric", exc)
        return 4
    except (ValueError, KeyError) as exc:
        _error("usage", exc)
        return 2
    except OSError as exc:
        _error("io", exc)
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
