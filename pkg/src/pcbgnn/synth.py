"""Rule-based generator of labeled schematics for the three tasks.

Each schematic is a pre-optimization draft: power rails, ICs with realistic
pin names, passives, connectors. Task labels mark where optimizing
components belong, derived from structural rules that an independent
validator can re-derive from the schematic alone:

* pull-up/-down: a net driven by exactly one open-drain-style pin and
  feeding a digital input pairs with the driving IC's supply net; a floating
  MOSFET-gate net (no IC pin on it) pairs with the net on the FET's source.
* RC filter: each IC reset pin yields a resistor label on (supply, reset)
  and a capacitor label on (reset, ground), using that IC's own rails.
* decoupling: each powered IC adds one capacitor per parallel supply pin to
  the count on its (supply, ground) rail pair.

Target nets for the first two tasks usually carry generic names ("N$k"), so
identifying them requires the pin-name edge features; supply and ground
rails keep their well-known names, which is what makes the decoupling task
solvable from node features alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .netlist import (
    RC_CAPACITOR,
    RC_RESISTOR,
    PairLabel,
    Pin,
    Schematic,
    Task,
    make_annotations,
    Net,
    Symbol,
)

SUPPLY_NET_NAMES = ("+5V", "+3V3", "VCC", "VDD")
GROUND_NET_NAMES = ("GND", "AGND")

SUPPLY_PIN_PREFIXES = ("VDD", "VCC")
GROUND_PIN_PREFIXES = ("GND", "VSS")
OD_PIN_NAMES = ("OD_OUT", "INT", "SDA", "SCL")
INPUT_PIN_NAMES = ("IN", "EN")
OUTPUT_PIN_NAMES = ("OUT", "TXD")
RESET_PIN_NAMES = ("RST", "nRESET", "nRST", "MCLR")

_GENERIC_SIGNAL_PINS = (
    "GPIO0", "GPIO1", "GPIO2", "GPIO3", "GPIO4", "GPIO5", "GPIO6", "GPIO7",
    "AIN0", "AIN1", "AIN2", "D0", "D1", "D2", "D3", "CLK", "MISO", "MOSI",
    "SCK", "XTAL1", "XTAL2", "PWM0", "PWM1", "CS",
)
_DESCRIPTIVE_NET_NAMES = (
    "SPI_CLK", "SPI_MISO", "SPI_MOSI", "UART_TX", "UART_RX", "LED1", "LED2",
    "BTN1", "SENSE", "CTRL", "DATA0", "DATA1", "DATA2", "CLK_OUT", "VREF_IN",
    "PWM_A", "PWM_B", "ADC_IN", "STATUS", "FAULT", "SYNC", "TRIG",
)

# Table-style calibration targets for the average node count per task.
_SIZE_MEANS = {
    Task.PULL_UP_DOWN: 122.6,
    Task.RC_FILTER: 123.5,
    Task.DECOUPLING_CAPS: 100.1,
}

# Parallel decoupling capacitors saturate per rail pair: beyond this many,
# adding more has no labeled benefit. Keeps per-pair counts in a range the
# regression head can actually resolve.
DECAP_PAIR_CAP = 4


@dataclass
class GenConfig:
    task: Task
    count: int
    seed: int = 0
    size_mu: float | None = None  # lognormal mean parameter; per-task default
    size_sigma: float = 0.45
    clip_min: int = 6
    clip_max: int = 702
    name_noise: float = 0.5  # probability a plain signal net gets a generic name
    target_name_noise: float = 0.85  # same, for nets that carry a task label
    od_net_rate: float = 1.3  # Poisson rate for extra open-drain nets (pull-up task)
    floating_gate_rate: float = 0.5  # Poisson rate for floating MOSFET gates
    second_reset_prob: float = 0.05  # probability of a second reset-pin IC
    extra_supply_prob: float = 0.45  # probability of a second supply rail
    unpowered_rail_prob: float = 0.15  # second rail feeds no IC (connector only)

    def __post_init__(self):
        if isinstance(self.task, str):
            self.task = Task(self.task)
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if not (0.0 <= self.name_noise <= 1.0 and 0.0 <= self.target_name_noise <= 1.0):
            raise ValueError("name noise levels must lie in [0, 1]")
        if self.clip_min < 6 or self.clip_max > 702 or self.clip_min > self.clip_max:
            raise ValueError("size clip bounds must stay within [6, 702]")
        if self.size_mu is None:
            mean = _SIZE_MEANS[self.task]
            self.size_mu = float(np.log(mean) - self.size_sigma**2 / 2.0)


class _Builder:
    """Incremental schematic assembly with sequential ids."""

    def __init__(self, name: str):
        self.name = name
        self.nets: list[Net] = []
        self.symbols: list[Symbol] = []
        self.pins: list[Pin] = []
        self._counters: dict[str, int] = {}

    def seq(self, prefix: str) -> int:
        self._counters[prefix] = self._counters.get(prefix, 0) + 1
        return self._counters[prefix]

    def add_net(self, name: str) -> int:
        nid = len(self.nets)
        self.nets.append(Net(id=nid, name=name))
        return nid

    def add_symbol(self, name: str) -> int:
        sid = len(self.symbols)
        self.symbols.append(Symbol(id=sid, name=name))
        return sid

    def add_pin(self, symbol_id: int, net_id: int, pin_name: str) -> None:
        self.pins.append(Pin(symbol_id=symbol_id, net_id=net_id, pin_name=pin_name))

    @property
    def node_count(self) -> int:
        return len(self.nets) + len(self.symbols)


@dataclass
class _Ic:
    symbol_id: int
    supply_net: int
    ground_net: int
    supply_pin_count: int
    total_pins: int
    signal_slots: int


def _signal_net_name(b: _Builder, rng, noise: float) -> str:
    if rng.random() < noise:
        return f"N${b.seq('N$')}"
    pool_pos = b.seq("descriptive") - 1
    if pool_pos < len(_DESCRIPTIVE_NET_NAMES):
        return _DESCRIPTIVE_NET_NAMES[pool_pos]
    return f"SIG{pool_pos}"


def _make_rails(b: _Builder, rng, cfg: GenConfig, n_target: int) -> tuple[list[int], list[int], set[int]]:
    """Create supply and ground nets; returns (supplies, grounds, unpowered).

    Larger boards tend to have more supply domains, which also spreads the
    ICs (and with them the decoupling counts) over more rail pairs.
    """
    supply_names = list(rng.permutation(np.array(SUPPLY_NET_NAMES)))
    n_supplies = 1 + int(rng.random() < cfg.extra_supply_prob)
    if n_target > 90 and rng.random() < 0.5:
        n_supplies += 1
    if n_target > 250 and rng.random() < 0.6:
        n_supplies += 1
    n_supplies = min(n_supplies, len(SUPPLY_NET_NAMES))
    supplies = [b.add_net(str(supply_names[i])) for i in range(n_supplies)]
    unpowered: set[int] = set()
    if n_supplies > 1 and rng.random() < cfg.unpowered_rail_prob:
        unpowered.add(supplies[-1])
    grounds = [b.add_net(GROUND_NET_NAMES[0])]
    if rng.random() < 0.2:
        grounds.append(b.add_net(GROUND_NET_NAMES[1]))
    return supplies, grounds, unpowered


_IC_PIN_CHOICES = np.array([4, 6, 8, 14, 16, 20, 28, 32])
_IC_PIN_WEIGHTS = np.array([0.18, 0.16, 0.16, 0.14, 0.12, 0.12, 0.07, 0.05])


def _make_ic(b: _Builder, rng, cfg: GenConfig, supplies, grounds, unpowered, generic_pins: tuple, pin_cap: int = 32) -> _Ic:
    prefix = "U" if rng.random() < 0.4 else "IC"
    sid = b.add_symbol(f"{prefix}{b.seq('IC')}")
    allowed = _IC_PIN_CHOICES <= max(4, pin_cap)
    weights = _IC_PIN_WEIGHTS[allowed] / _IC_PIN_WEIGHTS[allowed].sum()
    total_pins = int(rng.choice(_IC_PIN_CHOICES[allowed], p=weights))
    powered = [s for s in supplies if s not in unpowered]
    supply_net = int(powered[0] if len(powered) == 1 else rng.choice(powered, p=_rail_weights(len(powered))))
    ground_net = int(grounds[0] if len(grounds) == 1 else rng.choice(grounds, p=[0.8, 0.2]))

    if total_pins >= 24:
        n_sup = 2
    elif total_pins >= 12:
        n_sup = 1 + int(rng.random() < 0.1)
    else:
        n_sup = 1
    sup_prefix = str(rng.choice(SUPPLY_PIN_PREFIXES))
    for k in range(n_sup):
        b.add_pin(sid, supply_net, sup_prefix if k == 0 else f"{sup_prefix}{k + 1}")
    n_gnd = max(1, n_sup - int(rng.random() < 0.5))
    gnd_prefix = str(rng.choice(GROUND_PIN_PREFIXES))
    for k in range(n_gnd):
        b.add_pin(sid, ground_net, gnd_prefix if k == 0 else f"{gnd_prefix}{k + 1}")

    ic = _Ic(
        symbol_id=sid,
        supply_net=supply_net,
        ground_net=ground_net,
        supply_pin_count=n_sup,
        total_pins=total_pins,
        signal_slots=max(0, total_pins - n_sup - n_gnd),
    )
    # Fill a fraction of the signal slots with plain signal nets now.
    n_fill = int(round(ic.signal_slots * rng.uniform(0.45, 0.8)))
    signal_nets = [n.id for n in b.nets if n.id not in set(supplies) | set(grounds)]
    used_names = set()
    for _ in range(n_fill):
        if ic.signal_slots <= 0:
            break
        pin_name = str(rng.choice(generic_pins))
        if pin_name in used_names:
            pin_name = f"{pin_name}_{b.seq('pin')}"
        used_names.add(pin_name)
        if signal_nets and rng.random() < 0.3:
            net = int(rng.choice(signal_nets))
        else:
            net = b.add_net(_signal_net_name(b, rng, cfg.name_noise))
            signal_nets.append(net)
        b.add_pin(sid, net, pin_name)
        ic.signal_slots -= 1
    return ic


def _rail_weights(n: int) -> list[float]:
    return [1.0 / n] * n


def _signal_nets(b: _Builder, rails: set[int]) -> list[int]:
    return [n.id for n in b.nets if n.id not in rails]


def _add_filler(b: _Builder, rng, cfg: GenConfig, grounds: list[int], rails: set[int]) -> None:
    """Add one decorative element (passive, LED chain, connector, testpoint)."""
    signal = _signal_nets(b, rails)
    kind = rng.random()
    if not signal:
        kind = 0.95  # force a testpoint-style net if nothing to attach to
    gnd = int(grounds[0])
    if kind < 0.30 and signal:
        # series resistor into a new net
        a = int(rng.choice(signal))
        nb = b.add_net(_signal_net_name(b, rng, cfg.name_noise))
        r = b.add_symbol(f"R{b.seq('R')}")
        b.add_pin(r, a, "1")
        b.add_pin(r, nb, "2")
    elif kind < 0.45 and len(signal) >= 2:
        a, c = (int(x) for x in rng.choice(signal, size=2, replace=False))
        r = b.add_symbol(f"R{b.seq('R')}")
        b.add_pin(r, a, "1")
        b.add_pin(r, c, "2")
    elif kind < 0.65 and signal:
        # shunt capacitor to ground
        a = int(rng.choice(signal))
        c = b.add_symbol(f"C{b.seq('C')}")
        b.add_pin(c, a, "1")
        b.add_pin(c, gnd, "2")
    elif kind < 0.75 and signal:
        # LED with series resistor to ground
        a = int(rng.choice(signal))
        mid = b.add_net(_signal_net_name(b, rng, cfg.name_noise))
        d = b.add_symbol(f"D{b.seq('D')}")
        r = b.add_symbol(f"R{b.seq('R')}")
        b.add_pin(d, a, "A")
        b.add_pin(d, mid, "K")
        b.add_pin(r, mid, "1")
        b.add_pin(r, gnd, "2")
    elif kind < 0.90 and signal:
        n_conn = int(rng.integers(2, min(6, len(signal)) + 1)) if len(signal) >= 2 else 1
        chosen = rng.choice(signal, size=min(n_conn, len(signal)), replace=False)
        j = b.add_symbol(f"J{b.seq('J')}")
        for i, net in enumerate(chosen, start=1):
            b.add_pin(j, int(net), str(i))
    else:
        net = b.add_net(_signal_net_name(b, rng, cfg.name_noise)) if not signal else int(rng.choice(signal))
        tp = b.add_symbol(f"TP{b.seq('TP')}")
        b.add_pin(tp, net, "1")


def _generic_pin_pool(task: Task) -> tuple:
    # Reserve the task's discriminating pin names for deliberate structures.
    if task is Task.PULL_UP_DOWN:
        reserved = set(OD_PIN_NAMES) | set(INPUT_PIN_NAMES) | set(OUTPUT_PIN_NAMES)
    elif task is Task.RC_FILTER:
        reserved = set(RESET_PIN_NAMES)
    else:
        reserved = set()
    return tuple(p for p in _GENERIC_SIGNAL_PINS if p not in reserved)


def generate(config: GenConfig) -> list[Schematic]:
    """Generate ``config.count`` labeled schematics (deterministic per seed)."""
    return [_generate_one(config, index) for index in range(config.count)]


def _generate_one(cfg: GenConfig, index: int) -> Schematic:
    rng = np.random.default_rng([cfg.seed, index])
    if rng.random() < 0.04:  # occasional very small board
        n_target = int(rng.integers(cfg.clip_min, 31))
    else:
        n_target = int(np.clip(round(rng.lognormal(cfg.size_mu, cfg.size_sigma)), cfg.clip_min, cfg.clip_max))
    b = _Builder(name=f"{cfg.task.value}_{cfg.seed}_{index:05d}")
    generic_pins = _generic_pin_pool(cfg.task)

    supplies, grounds, unpowered = _make_rails(b, rng, cfg, n_target)
    rails = set(supplies) | set(grounds)

    # ICs until ~70% of the node budget (at least one, and enough for the
    # task structures below).
    ics: list[_Ic] = []
    min_ics = 2 if (cfg.task is Task.PULL_UP_DOWN and n_target >= 20) else 1
    while len(ics) < min_ics or (b.node_count < 0.38 * n_target and len(ics) < 40):
        pin_cap = max(4, int((n_target - b.node_count) * 0.9))
        ics.append(_make_ic(b, rng, cfg, supplies, grounds, unpowered, generic_pins, pin_cap=pin_cap))

    pair_labels: dict[tuple[int, int], object] = {}

    if cfg.task is Task.PULL_UP_DOWN:
        _add_pullup_structures(b, rng, cfg, ics, grounds, rails, pair_labels, n_target)
    elif cfg.task is Task.RC_FILTER:
        _add_reset_structures(b, rng, cfg, ics, pair_labels)
    else:
        for ic in ics:
            key = _ordered(ic.supply_net, ic.ground_net)
            pair_labels[key] = min(DECAP_PAIR_CAP, pair_labels.get(key, 0) + ic.supply_pin_count)

    # Ornamental rail hookup so unpowered rails are not isolated.
    for rail in unpowered:
        j = b.add_symbol(f"J{b.seq('J')}")
        b.add_pin(j, rail, "1")
        b.add_pin(j, int(grounds[0]), "2")

    while b.node_count < n_target:
        _add_filler(b, rng, cfg, grounds, rails)

    labels = [PairLabel(net_a=a, net_b=bb, label=lab) for (a, bb), lab in sorted(pair_labels.items())]
    annotations = make_annotations(cfg.task, labels, [n.id for n in b.nets])
    return Schematic(
        name=b.name,
        nets=b.nets,
        symbols=b.symbols,
        pins=b.pins,
        annotations=annotations,
    )


def _ordered(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


def _add_pullup_structures(b, rng, cfg, ics, grounds, rails, pair_labels, n_target) -> None:
    n_od = 1 + int(rng.poisson(cfg.od_net_rate))
    n_gate = int(rng.poisson(cfg.floating_gate_rate))
    n_od = min(n_od, max(1, n_target // 12))
    n_gate = min(n_gate, max(0, n_target // 25))

    for _ in range(n_od):
        owner = ics[int(rng.integers(len(ics)))]
        net = b.add_net(_signal_net_name(b, rng, cfg.target_name_noise))
        b.add_pin(owner.symbol_id, net, str(rng.choice(OD_PIN_NAMES)))
        others = [ic for ic in ics if ic.symbol_id != owner.symbol_id]
        listener = others[int(rng.integers(len(others)))] if others else owner
        b.add_pin(listener.symbol_id, net, str(rng.choice(INPUT_PIN_NAMES)))
        pair_labels[_ordered(net, owner.supply_net)] = 1

    # Push-pull distractor nets: identical shape, driver pin named OUT/TXD.
    for _ in range(int(rng.poisson(1.0))):
        owner = ics[int(rng.integers(len(ics)))]
        net = b.add_net(_signal_net_name(b, rng, cfg.target_name_noise))
        b.add_pin(owner.symbol_id, net, str(rng.choice(OUTPUT_PIN_NAMES)))
        others = [ic for ic in ics if ic.symbol_id != owner.symbol_id]
        listener = others[int(rng.integers(len(others)))] if others else owner
        b.add_pin(listener.symbol_id, net, str(rng.choice(INPUT_PIN_NAMES)))

    signal = _signal_nets(b, rails)
    for _ in range(n_gate):
        gate_net = b.add_net(_signal_net_name(b, rng, cfg.target_name_noise))
        load_net = int(rng.choice(signal)) if signal else b.add_net(_signal_net_name(b, rng, cfg.name_noise))
        q = b.add_symbol(f"Q{b.seq('Q')}")
        gnd = int(grounds[0])
        b.add_pin(q, gate_net, "G")
        b.add_pin(q, load_net, "D")
        b.add_pin(q, gnd, "S")
        if rng.random() < 0.4:
            tp = b.add_symbol(f"TP{b.seq('TP')}")
            b.add_pin(tp, gate_net, "1")
        pair_labels[_ordered(gate_net, gnd)] = 1

    # Driven-gate distractors: same FET shape, but an IC GPIO drives the gate.
    for _ in range(int(rng.poisson(0.6))):
        owner = ics[int(rng.integers(len(ics)))]
        gate_net = b.add_net(_signal_net_name(b, rng, cfg.target_name_noise))
        load_net = int(rng.choice(signal)) if signal else b.add_net(_signal_net_name(b, rng, cfg.name_noise))
        q = b.add_symbol(f"Q{b.seq('Q')}")
        b.add_pin(q, gate_net, "G")
        b.add_pin(q, load_net, "D")
        b.add_pin(q, int(grounds[0]), "S")
        b.add_pin(owner.symbol_id, gate_net, f"GPIO{b.seq('gpio') + 60}")


def _add_reset_structures(b, rng, cfg, ics, pair_labels) -> None:
    n_reset = 1 + int(rng.random() < cfg.second_reset_prob)
    n_reset = min(n_reset, len(ics))
    chosen = rng.choice(len(ics), size=n_reset, replace=False)
    for idx in chosen:
        ic = ics[int(idx)]
        reset_net = b.add_net(_signal_net_name(b, rng, cfg.target_name_noise))
        b.add_pin(ic.symbol_id, reset_net, str(rng.choice(RESET_PIN_NAMES)))
        if rng.random() < 0.5:
            j = b.add_symbol(f"J{b.seq('J')}")
            b.add_pin(j, reset_net, "1")
        pair_labels[_ordered(ic.supply_net, reset_net)] = RC_RESISTOR
        pair_labels[_ordered(reset_net, ic.ground_net)] = RC_CAPACITOR
    # Structural twins: low-degree IC nets whose pins are not reset pins.
    for _ in range(int(rng.poisson(1.2))):
        ic = ics[int(rng.integers(len(ics)))]
        twin = b.add_net(_signal_net_name(b, rng, cfg.target_name_noise))
        b.add_pin(ic.symbol_id, twin, f"AIN{b.seq('ain') + 20}")
        if rng.random() < 0.5:
            j = b.add_symbol(f"J{b.seq('J')}")
            b.add_pin(j, twin, "1")


# ---------------------------------------------------------------------------
# Rule re-derivation / label validation
# ---------------------------------------------------------------------------


@dataclass
class LabelReport:
    consistent: bool
    mismatches: list = field(default_factory=list)


def derive_rule_labels(s: Schematic, task: Task) -> dict:
    """Re-derive the pair labels from the schematic structure alone."""
    by_net: dict[int, list[Pin]] = {}
    by_symbol: dict[int, list[Pin]] = {}
    for p in s.pins:
        by_net.setdefault(p.net_id, []).append(p)
        by_symbol.setdefault(p.symbol_id, []).append(p)
    sym_name = {y.id: y.name for y in s.symbols}

    def is_ic(sid: int) -> bool:
        return sym_name[sid].startswith(("IC", "U"))

    def rail_of(sid: int, prefixes) -> int | None:
        for p in by_symbol.get(sid, []):
            if p.pin_name.startswith(prefixes):
                return p.net_id
        return None

    labels: dict[tuple[int, int], object] = {}
    if task is Task.PULL_UP_DOWN:
        for net in s.nets:
            pins = by_net.get(net.id, [])
            od = [p for p in pins if p.pin_name in OD_PIN_NAMES and is_ic(p.symbol_id)]
            drivers = [p for p in pins if p.pin_name in OD_PIN_NAMES + OUTPUT_PIN_NAMES]
            inputs = [p for p in pins if p.pin_name in INPUT_PIN_NAMES]
            if len(od) == 1 and len(drivers) == 1 and inputs:
                supply = rail_of(od[0].symbol_id, SUPPLY_PIN_PREFIXES)
                if supply is not None:
                    labels[_ordered(net.id, supply)] = 1
            gates = sorted(
                (p for p in pins if sym_name[p.symbol_id].startswith("Q") and p.pin_name == "G"),
                key=lambda p: p.symbol_id,
            )
            if gates and not any(is_ic(p.symbol_id) for p in pins):
                source = next(
                    (p.net_id for p in by_symbol.get(gates[0].symbol_id, []) if p.pin_name == "S"), None
                )
                if source is not None:
                    labels[_ordered(net.id, source)] = 1
    elif task is Task.RC_FILTER:
        for sym in s.symbols:
            if not is_ic(sym.id):
                continue
            for p in by_symbol.get(sym.id, []):
                if p.pin_name in RESET_PIN_NAMES:
                    supply = rail_of(sym.id, SUPPLY_PIN_PREFIXES)
                    ground = rail_of(sym.id, GROUND_PIN_PREFIXES)
                    if supply is not None and ground is not None:
                        labels[_ordered(supply, p.net_id)] = RC_RESISTOR
                        labels[_ordered(p.net_id, ground)] = RC_CAPACITOR
    else:
        for sym in s.symbols:
            if not is_ic(sym.id):
                continue
            supply = rail_of(sym.id, SUPPLY_PIN_PREFIXES)
            ground = rail_of(sym.id, GROUND_PIN_PREFIXES)
            if supply is None or ground is None:
                continue
            n_sup = sum(1 for p in by_symbol[sym.id] if p.pin_name.startswith(SUPPLY_PIN_PREFIXES))
            key = _ordered(supply, ground)
            labels[key] = min(DECAP_PAIR_CAP, labels.get(key, 0) + n_sup)
    return labels


def validate_labels(s: Schematic) -> LabelReport:
    """Check annotated labels against the re-derived rule labels."""
    if s.annotations is None:
        return LabelReport(consistent=False, mismatches=["schematic carries no annotations"])
    derived = derive_rule_labels(s, s.annotations.task)
    annotated = {(p.net_a, p.net_b): p.label for p in s.annotations.pair_labels}
    mismatches = []
    for key, lab in sorted(derived.items()):
        if key not in annotated:
            mismatches.append(f"pair {key} should be labeled {lab!r} but is unannotated")
        elif annotated[key] != lab:
            mismatches.append(f"pair {key} labeled {annotated[key]!r}, rules say {lab!r}")
    for key, lab in sorted(annotated.items()):
        if key not in derived:
            mismatches.append(f"pair {key} labeled {lab!r} but the rules derive no label")
    # Node labels must match the positive pairs.
    positive = set()
    from .netlist import is_positive_label

    for key, lab in annotated.items():
        if is_positive_label(s.annotations.task, lab):
            positive.update(key)
    for net in s.nets:
        expected = 1 if net.id in positive else 0
        if s.annotations.node_labels.get(net.id, 0) != expected:
            mismatches.append(f"node label for net {net.id} should be {expected}")
    return LabelReport(consistent=not mismatches, mismatches=mismatches)
