"""pcbgnn: bipartite-graph schematics and GNN node-pair prediction for PCB
design optimization (pull-up/-down resistors, RC filters, decoupling caps).
"""

__version__ = "0.1.0"

from .embedding import EMBED_DIM, HashNgramEmbedder, TableEmbedder, cosine_similarity, load_table, store_table
from .graph import PcbGraph, attach_labels, build_graph, build_labeled_graph, graph_stats
from .model import ModelSpec, PairModel, predict_full_matrix
from .netlist import Schematic, Task, load_dataset, parse_netlist, serialize_schematic, store_dataset
from .synth import GenConfig, generate, validate_labels
from .training import TrainConfig, split_dataset, train

__all__ = [
    "EMBED_DIM",
    "GenConfig",
    "HashNgramEmbedder",
    "ModelSpec",
    "PairModel",
    "PcbGraph",
    "Schematic",
    "TableEmbedder",
    "TrainConfig",
    "Task",
    "attach_labels",
    "build_graph",
    "build_labeled_graph",
    "cosine_similarity",
    "generate",
    "graph_stats",
    "load_dataset",
    "load_table",
    "parse_netlist",
    "predict_full_matrix",
    "serialize_schematic",
    "split_dataset",
    "store_dataset",
    "store_table",
    "train",
    "validate_labels",
]
