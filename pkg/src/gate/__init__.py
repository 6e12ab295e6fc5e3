"""Unsupervised node embeddings from a graph attention auto-encoder."""

from .autodiff import NumericError, ShapeError, Tape, Tensor, backward
from .evaluation import (ProbeConfig, RunStatistics, ablation_suite,
                         evaluate_inductive, evaluate_transductive, fit_probe)
from .graph import (Dataset, DatasetError, FeatureMatrix, LabelVector,
                    SparseGraph, SplitSpec, degree, induce_subgraph,
                    load_dataset, save_dataset)
from .model import (ForwardTrace, GateModel, LayerParams, decode, encode,
                    encoder_attention, forward, init_model, load_checkpoint,
                    save_checkpoint)
from .training import (AdamState, TrainConfig, adam_step, feature_loss,
                       structure_loss, total_loss, train)

__version__ = "0.1.0"
