"""Parsing, validation, and serialization of schematics.

The canonical format is one JSON object per schematic, one schematic per
line in dataset files. Connectivity is strictly net <-> symbol: a pin always
references one symbol id and one net id, so net-net or symbol-symbol links
are unrepresentable. Parsing is strict: unknown keys, dangling references,
duplicate ids, and inconsistent labels are rejected, never repaired.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum


class Task(Enum):
    PULL_UP_DOWN = "pull_up_down"
    RC_FILTER = "rc_filter"
    DECOUPLING_CAPS = "decoupling_caps"


# Multiclass labels for the RC-filter task.
RC_NONE = "none"
RC_RESISTOR = "resistor"
RC_CAPACITOR = "capacitor"
RC_CLASSES = (RC_NONE, RC_RESISTOR, RC_CAPACITOR)


class NetlistError(ValueError):
    """Raised for malformed schematic documents; carries position context."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Net:
    id: int
    name: str


@dataclass(frozen=True)
class Symbol:
    id: int
    name: str


@dataclass(frozen=True)
class Pin:
    symbol_id: int
    net_id: int
    pin_name: str


@dataclass(frozen=True)
class PairLabel:
    """An unordered net pair with a task label (net_a < net_b)."""

    net_a: int
    net_b: int
    label: object  # int for pull-up/-down and decoupling counts, str for RC classes


@dataclass
class TaskAnnotations:
    task: Task
    node_labels: dict[int, int] = field(default_factory=dict)
    pair_labels: list[PairLabel] = field(default_factory=list)


@dataclass
class Schematic:
    name: str
    nets: list[Net] = field(default_factory=list)
    symbols: list[Symbol] = field(default_factory=list)
    pins: list[Pin] = field(default_factory=list)
    annotations: TaskAnnotations | None = None


def is_positive_label(task: Task, label) -> bool:
    """Whether a pair label marks an insertion point for its task."""
    if task is Task.PULL_UP_DOWN:
        return label == 1
    if task is Task.RC_FILTER:
        return label != RC_NONE
    return label >= 1  # decoupling: capacitor count


def _check_label_domain(task: Task, label, line=None) -> None:
    if task is Task.PULL_UP_DOWN:
        if label not in (0, 1):
            raise NetlistError(f"pull-up/-down pair label must be 0 or 1, got {label!r}", line)
    elif task is Task.RC_FILTER:
        if label not in RC_CLASSES:
            raise NetlistError(f"rc-filter pair label must be one of {RC_CLASSES}, got {label!r}", line)
    else:
        if not isinstance(label, int) or isinstance(label, bool) or label < 0:
            raise NetlistError(f"decoupling pair label must be a count >= 0, got {label!r}", line)


def _require_keys(obj: dict, required: tuple, optional: tuple, what: str, line=None) -> None:
    unknown = set(obj) - set(required) - set(optional)
    if unknown:
        raise NetlistError(f"unknown keys in {what}: {sorted(unknown)}", line)
    missing = set(required) - set(obj)
    if missing:
        raise NetlistError(f"missing keys in {what}: {sorted(missing)}", line)


def _int_field(obj: dict, key: str, what: str, line=None) -> int:
    v = obj[key]
    if not isinstance(v, int) or isinstance(v, bool):
        raise NetlistError(f"{what}.{key} must be an integer, got {v!r}", line)
    return v


def _name_field(obj: dict, key: str, what: str, line=None) -> str:
    v = obj[key]
    if not isinstance(v, str) or not v:
        raise NetlistError(f"{what}.{key} must be a non-empty string, got {v!r}", line)
    return v


def validate_schematic(s: Schematic, line: int | None = None) -> None:
    """Check every structural invariant; raise NetlistError on the first violation."""
    if not s.name:
        raise NetlistError("schematic name must be non-empty", line)
    net_ids = set()
    for net in s.nets:
        if net.id in net_ids:
            raise NetlistError(f"duplicate net id {net.id}", line)
        if not net.name:
            raise NetlistError(f"net {net.id} has an empty name", line)
        net_ids.add(net.id)
    symbol_ids = set()
    for sym in s.symbols:
        if sym.id in symbol_ids:
            raise NetlistError(f"duplicate symbol id {sym.id}", line)
        if not sym.name:
            raise NetlistError(f"symbol {sym.id} has an empty name", line)
        symbol_ids.add(sym.id)
    for pin in s.pins:
        if pin.symbol_id not in symbol_ids:
            raise NetlistError(f"pin references unknown symbol id {pin.symbol_id}", line)
        if pin.net_id not in net_ids:
            raise NetlistError(f"pin references unknown net id {pin.net_id}", line)
        if not pin.pin_name:
            raise NetlistError("pin has an empty name", line)
    if s.annotations is not None:
        _validate_annotations(s.annotations, net_ids, line)


def _validate_annotations(a: TaskAnnotations, net_ids: set, line=None) -> None:
    seen = set()
    positive_nets = set()
    for p in a.pair_labels:
        if p.net_a >= p.net_b:
            raise NetlistError(f"pair ({p.net_a}, {p.net_b}) must be stored with net_a < net_b", line)
        if p.net_a not in net_ids or p.net_b not in net_ids:
            raise NetlistError(f"pair ({p.net_a}, {p.net_b}) references an unknown net id", line)
        key = (p.net_a, p.net_b)
        if key in seen:
            raise NetlistError(f"duplicate pair label for ({p.net_a}, {p.net_b})", line)
        seen.add(key)
        _check_label_domain(a.task, p.label, line)
        if is_positive_label(a.task, p.label):
            positive_nets.update(key)
    for net_id, lab in a.node_labels.items():
        if net_id not in net_ids:
            raise NetlistError(f"node label references unknown net id {net_id}", line)
        if lab not in (0, 1):
            raise NetlistError(f"node label for net {net_id} must be 0 or 1, got {lab!r}", line)
        if lab != (1 if net_id in positive_nets else 0):
            raise NetlistError(
                f"node label for net {net_id} is {lab} but the positively labeled pairs imply "
                f"{1 if net_id in positive_nets else 0}",
                line,
            )
    for net_id in positive_nets:
        if a.node_labels.get(net_id, 0) != 1:
            raise NetlistError(f"net {net_id} participates in a positive pair but node_labels says 0", line)


def derived_node_labels(s: Schematic) -> dict[int, int]:
    """Node labels implied by the positive pairs: 1 iff the net appears in one."""
    labels = {net.id: 0 for net in s.nets}
    if s.annotations is not None:
        for p in s.annotations.pair_labels:
            if is_positive_label(s.annotations.task, p.label):
                labels[p.net_a] = 1
                labels[p.net_b] = 1
    return labels


def make_annotations(task: Task, pair_labels: list[PairLabel], net_ids) -> TaskAnnotations:
    """Build annotations with node labels derived from the positive pairs."""
    positive = set()
    for p in pair_labels:
        if is_positive_label(task, p.label):
            positive.update((p.net_a, p.net_b))
    node_labels = {nid: (1 if nid in positive else 0) for nid in net_ids}
    return TaskAnnotations(task=task, node_labels=node_labels, pair_labels=list(pair_labels))


# ---------------------------------------------------------------------------
# Parsing / serialization
# ---------------------------------------------------------------------------


def parse_netlist(text: str, line: int | None = None) -> Schematic:
    """Parse one schematic document (a single JSON object)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise NetlistError(f"syntax error at position {e.pos} (line {e.lineno}, col {e.colno}): {e.msg}", line)
    if not isinstance(doc, dict):
        raise NetlistError("schematic document must be an object", line)
    _require_keys(doc, ("name", "nets", "symbols", "pins"), ("annotations",), "schematic", line)
    name = _name_field(doc, "name", "schematic", line)

    nets = []
    for obj in _list_field(doc, "nets", line):
        _require_keys(obj, ("id", "name"), (), "net", line)
        nets.append(Net(id=_int_field(obj, "id", "net", line), name=_name_field(obj, "name", "net", line)))
    symbols = []
    for obj in _list_field(doc, "symbols", line):
        _require_keys(obj, ("id", "name"), (), "symbol", line)
        symbols.append(Symbol(id=_int_field(obj, "id", "symbol", line), name=_name_field(obj, "name", "symbol", line)))
    pins = []
    for obj in _list_field(doc, "pins", line):
        _require_keys(obj, ("symbol_id", "net_id", "pin_name"), (), "pin", line)
        pins.append(
            Pin(
                symbol_id=_int_field(obj, "symbol_id", "pin", line),
                net_id=_int_field(obj, "net_id", "pin", line),
                pin_name=_name_field(obj, "pin_name", "pin", line),
            )
        )

    annotations = None
    if "annotations" in doc and doc["annotations"] is not None:
        annotations = _parse_annotations(doc["annotations"], line)

    s = Schematic(name=name, nets=nets, symbols=symbols, pins=pins, annotations=annotations)
    validate_schematic(s, line)
    return s


def _list_field(doc: dict, key: str, line=None) -> list:
    v = doc[key]
    if not isinstance(v, list):
        raise NetlistError(f"schematic.{key} must be an array", line)
    return v


def _parse_annotations(obj, line=None) -> TaskAnnotations:
    if not isinstance(obj, dict):
        raise NetlistError("annotations must be an object", line)
    _require_keys(obj, ("task", "node_labels", "pair_labels"), (), "annotations", line)
    try:
        task = Task(obj["task"])
    except ValueError:
        raise NetlistError(f"unknown task {obj['task']!r}", line)
    if not isinstance(obj["node_labels"], dict):
        raise NetlistError("annotations.node_labels must be an object", line)
    node_labels = {}
    for k, v in obj["node_labels"].items():
        try:
            nid = int(k)
        except ValueError:
            raise NetlistError(f"node_labels key {k!r} is not an integer net id", line)
        node_labels[nid] = v
    pair_labels = []
    for p in obj["pair_labels"]:
        if not isinstance(p, dict):
            raise NetlistError("pair label must be an object", line)
        _require_keys(p, ("net_a", "net_b", "label"), (), "pair label", line)
        pair_labels.append(
            PairLabel(
                net_a=_int_field(p, "net_a", "pair", line),
                net_b=_int_field(p, "net_b", "pair", line),
                label=p["label"],
            )
        )
    return TaskAnnotations(task=task, node_labels=node_labels, pair_labels=pair_labels)


def serialize_schematic(s: Schematic) -> str:
    """Serialize to a single-line document; parse_netlist round-trips exactly."""
    validate_schematic(s)
    doc = {
        "name": s.name,
        "nets": [{"id": n.id, "name": n.name} for n in s.nets],
        "symbols": [{"id": y.id, "name": y.name} for y in s.symbols],
        "pins": [{"symbol_id": p.symbol_id, "net_id": p.net_id, "pin_name": p.pin_name} for p in s.pins],
    }
    if s.annotations is not None:
        doc["annotations"] = {
            "task": s.annotations.task.value,
            "node_labels": {str(k): v for k, v in s.annotations.node_labels.items()},
            "pair_labels": [
                {"net_a": p.net_a, "net_b": p.net_b, "label": p.label} for p in s.annotations.pair_labels
            ],
        }
    return json.dumps(doc, separators=(",", ":"))


def load_dataset(path) -> list[Schematic]:
    """Load a line-delimited dataset file; parse errors cite the line number."""
    schematics = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            raw = raw.strip()
            if not raw:
                continue
            schematics.append(parse_netlist(raw, line=lineno))
    return schematics


def store_dataset(schematics: list[Schematic], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in schematics:
            f.write(serialize_schematic(s))
            f.write("\n")
