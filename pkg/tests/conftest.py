from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for oracles.py

from pcbgnn.embedding import HashNgramEmbedder
from pcbgnn.graph import build_labeled_graph
from pcbgnn.netlist import Net, PairLabel, Pin, Schematic, Symbol, Task, make_annotations


@pytest.fixture(scope="session")
def embedder():
    return HashNgramEmbedder()


_CORPUS_CACHE: dict = {}


def corpus_500(task: Task):
    """Session-cached default-config 500-sample corpus (schematics + graphs)."""
    if task not in _CORPUS_CACHE:
        from pcbgnn.synth import GenConfig, generate

        emb = HashNgramEmbedder()
        schems = generate(GenConfig(task=task, count=500, seed=42))
        _CORPUS_CACHE[task] = (schems, [build_labeled_graph(s, emb) for s in schems])
    return _CORPUS_CACHE[task]


def make_schematic(name="s", n_nets=4, n_symbols=3, pins=None, annotations=None):
    nets = [Net(id=i, name=f"NET{i}") for i in range(n_nets)]
    symbols = [Symbol(id=i, name=f"SYM{i}") for i in range(n_symbols)]
    if pins is None:
        pins = [Pin(symbol_id=i % n_symbols, net_id=i % n_nets, pin_name=f"P{i}") for i in range(max(n_nets, n_symbols))]
    return Schematic(name=name, nets=nets, symbols=symbols, pins=pins, annotations=annotations)


def random_small_schematic(rng: np.random.Generator, n_nodes: int, task: Task | None = None):
    """A connected-ish random bipartite schematic with 4-8 nodes for grad checks."""
    n_nets = max(2, n_nodes // 2)
    n_symbols = max(2, n_nodes - n_nets)
    nets = [Net(id=i, name=f"N{i}") for i in range(n_nets)]
    symbols = [Symbol(id=i, name=f"S{i}") for i in range(n_symbols)]
    pins = []
    for j in range(n_symbols):
        for net in rng.choice(n_nets, size=int(rng.integers(1, 3)), replace=False):
            pins.append(Pin(symbol_id=j, net_id=int(net), pin_name=f"P{int(rng.integers(0, 5))}"))
    annotations = None
    if task is not None:
        if task is Task.PULL_UP_DOWN:
            label = 1
        elif task is Task.RC_FILTER:
            label = "resistor"
        else:
            label = 2
        annotations = make_annotations(task, [PairLabel(net_a=0, net_b=1, label=label)], range(n_nets))
    return Schematic(name="rand", nets=nets, symbols=symbols, pins=pins, annotations=annotations)


def random_small_graph(rng, embedder, n_nodes=6, task=Task.PULL_UP_DOWN):
    return build_labeled_graph(random_small_schematic(rng, n_nodes, task), embedder)
