"""Node-classification probe on frozen embeddings plus experiment drivers.

The probe is multinomial logistic regression (softmax cross-entropy with L2
on the weights, bias unregularized) minimized with L-BFGS; outputs declare
``probe_solver=lbfgs``. Transductive runs train on the full graph; inductive
runs train with the test nodes (and their edges) removed and then embed the
full graph with the trained model.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
import scipy.optimize

from .graph import Dataset, LabelVector, induce_subgraph
from .model import forward
from .training import TrainConfig, train

PROBE_SOLVER = "lbfgs"


@dataclass
class ProbeConfig:
    l2_strength: float = 1e-2
    max_iterations: int = 1000
    convergence_tol: float = 1e-6

    def __post_init__(self):
        if self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.l2_strength < 0:
            raise ValueError("l2_strength must be nonnegative")


def _label_array(labels):
    if isinstance(labels, LabelVector):
        return labels.labels, labels.num_classes
    arr = np.asarray(labels, dtype=np.int64)
    return arr, int(arr.max()) + 1


def fit_probe(embeddings, labels, train_ids, cfg: ProbeConfig | None = None) -> np.ndarray:
    """Fit the probe on the training embeddings only.

    Returns a (num_classes, d + 1) weight matrix whose last column is the
    bias. Deterministic: zero init plus a deterministic solver.
    """
    cfg = cfg or ProbeConfig()
    h = np.asarray(getattr(embeddings, "value", embeddings), dtype=np.float64)
    if h.ndim != 2:
        raise ValueError("embeddings must be a (d, N) matrix")
    if not np.all(np.isfinite(h)):
        raise ValueError("embeddings contain non-finite values")
    y_all, num_classes = _label_array(labels)
    train_ids = np.asarray(train_ids, dtype=np.int64)
    if train_ids.size == 0:
        raise ValueError("train_ids is empty")
    y = y_all[train_ids]
    if np.unique(y).size < 2:
        raise ValueError("training split contains a single class; probe is degenerate")

    x = h[:, train_ids].T                      # (n, d)
    n, d = x.shape
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), y] = 1.0
    l2 = cfg.l2_strength

    def objective(flat):
        w = flat[: num_classes * d].reshape(num_classes, d)
        b = flat[num_classes * d:]
        z = x @ w.T + b
        zmax = z.max(axis=1, keepdims=True)
        logsum = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
        nll = (logsum - z[np.arange(n), y]).mean()
        value = nll + 0.5 * l2 * float((w * w).sum())
        p = np.exp(z - logsum[:, None])
        gz = (p - onehot) / n
        gw = gz.T @ x + l2 * w
        gb = gz.sum(axis=0)
        return value, np.concatenate([gw.ravel(), gb])

    result = scipy.optimize.minimize(
        objective, np.zeros(num_classes * (d + 1)), jac=True, method="L-BFGS-B",
        options={"maxiter": cfg.max_iterations, "gtol": cfg.convergence_tol,
                 "ftol": 1e-14})
    flat = result.x
    w = flat[: num_classes * d].reshape(num_classes, d)
    b = flat[num_classes * d:]
    return np.hstack([w, b[:, None]])


def predict_probe(weights: np.ndarray, embeddings) -> np.ndarray:
    """Class predictions for every column of the embedding matrix."""
    h = np.asarray(getattr(embeddings, "value", embeddings), dtype=np.float64)
    z = h.T @ weights[:, :-1].T + weights[:, -1]
    return np.argmax(z, axis=1)


def probe_accuracy(weights, embeddings, labels, ids) -> float:
    y, _ = _label_array(labels)
    ids = np.asarray(ids, dtype=np.int64)
    pred = predict_probe(weights, embeddings)
    return float(np.mean(pred[ids] == y[ids]))


@dataclass
class RunStatistics:
    """Per-run accuracies with sample (n-1) mean/std; std is 0.0 for one run."""

    accuracies: list
    mean: float
    std: float

    @classmethod
    def from_accuracies(cls, accuracies) -> "RunStatistics":
        accs = [float(a) for a in accuracies]
        mean = float(np.mean(accs))
        std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
        return cls(accs, mean, std)

    @property
    def runs(self) -> int:
        return len(self.accuracies)


def embed_dataset(model, dataset: Dataset) -> np.ndarray:
    """Embedding matrix (d_L x N) of the full graph under a trained model."""
    return forward(model, dataset.features, dataset.graph).embeddings.value


def _transductive_run(args):
    dataset, cfg, probe, seed = args
    model, _ = train(dataset.graph, dataset.features, replace(cfg, seed=seed))
    h = embed_dataset(model, dataset)
    weights = fit_probe(h, dataset.labels, dataset.splits.train_ids, probe)
    return probe_accuracy(weights, h, dataset.labels, dataset.splits.test_ids)


def _inductive_run(args):
    dataset, train_graph, train_features, cfg, probe, seed = args
    model, _ = train(train_graph, train_features, replace(cfg, seed=seed))
    h = embed_dataset(model, dataset)   # unseen test nodes embedded post hoc
    weights = fit_probe(h, dataset.labels, dataset.splits.train_ids, probe)
    return probe_accuracy(weights, h, dataset.labels, dataset.splits.test_ids)


def _map_runs(worker, tasks, parallel):
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(worker, tasks))
    return [worker(task) for task in tasks]


def run_seeds(base_seed: int, runs: int):
    return [base_seed + i for i in range(runs)]


def evaluate_transductive(dataset: Dataset, cfg: TrainConfig, runs: int,
                          probe: ProbeConfig | None = None,
                          parallel: int = 1) -> RunStatistics:
    """Train on the full graph once per seed and probe the test accuracy."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    probe = probe or ProbeConfig()
    tasks = [(dataset, cfg, probe, seed) for seed in run_seeds(cfg.seed, runs)]
    return RunStatistics.from_accuracies(_map_runs(_transductive_run, tasks, parallel))


def inductive_training_inputs(dataset: Dataset):
    """Training graph/features with the test nodes (and their edges) removed."""
    keep = np.setdiff1d(np.arange(dataset.graph.num_nodes), dataset.splits.test_ids)
    sub, sub_features, _ = induce_subgraph(dataset.graph, dataset.features, keep)
    return sub, sub_features


def evaluate_inductive(dataset: Dataset, cfg: TrainConfig, runs: int,
                       probe: ProbeConfig | None = None,
                       parallel: int = 1) -> RunStatistics:
    """Train with test nodes unobserved, then embed the full graph and probe."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    probe = probe or ProbeConfig()
    train_graph, train_features = inductive_training_inputs(dataset)
    tasks = [(dataset, train_graph, train_features, cfg, probe, seed)
             for seed in run_seeds(cfg.seed, runs)]
    return RunStatistics.from_accuracies(_map_runs(_inductive_run, tasks, parallel))


ABLATION_VARIANTS = ("none", "no_attention", "no_structure", "no_features")
PROTOCOLS = ("transductive", "inductive")


def evaluate(dataset, cfg, runs, protocol, probe=None, parallel=1) -> RunStatistics:
    if protocol == "transductive":
        return evaluate_transductive(dataset, cfg, runs, probe, parallel)
    if protocol == "inductive":
        return evaluate_inductive(dataset, cfg, runs, probe, parallel)
    raise ValueError(f"unknown protocol {protocol!r}")


def ablation_suite(dataset: Dataset, cfg: TrainConfig, runs: int,
                   protocols=PROTOCOLS, probe: ProbeConfig | None = None,
                   parallel: int = 1) -> dict:
    """All four variants under the requested protocols, with shared seeds.

    Returns {(ablation, protocol): RunStatistics} in a stable order.
    """
    results = {}
    for ablation in ABLATION_VARIANTS:
        variant_cfg = replace(cfg, ablation=ablation)
        for protocol in protocols:
            results[(ablation, protocol)] = evaluate(dataset, variant_cfg, runs,
                                                     protocol, probe, parallel)
    return results


def write_results_csv(results: dict, base_seed: int, path):
    """Per-run rows: variant,protocol,run,seed,accuracy."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "protocol", "run", "seed", "accuracy"])
        for (variant, protocol), stats in results.items():
            for run, acc in enumerate(stats.accuracies):
                writer.writerow([variant, protocol, run, base_seed + run, f"{acc:.6f}"])


def summary_lines(results: dict):
    """Summary rows: variant,protocol,mean,std,runs."""
    lines = ["variant,protocol,mean,std,runs"]
    for (variant, protocol), stats in results.items():
        lines.append(f"{variant},{protocol},{stats.mean:.6f},{stats.std:.6f},{stats.runs}")
    return lines


def write_summary(results: dict, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(summary_lines(results)) + "\n")
