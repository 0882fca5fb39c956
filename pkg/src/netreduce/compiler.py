"""Job compiler: parse the job DSL, place in-network reducers on programmable
switches, and emit per-switch routes plus a self-contained run manifest.

Placement is greedy per reducer group in declaration order: among feasible
switches it picks the one minimizing sum-of-mapper-hops plus the switch to
reducer leg, breaking ties by lowest switch id. A switch is feasible for a
group when the mapper-to-switch and switch-to-reducer shortest paths meet
only at the switch (so installed routes stay loop free) and it has group
capacity left.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .codec import OP_CODES, OP_NAMES
from .netsim import Topology, format_topology, parse_topology


class CompileError(Exception):
    pass


class ParseError(CompileError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class UnresolvedName(ParseError):
    pass


class DuplicateId(ParseError):
    pass


class NoFeasibleSwitch(CompileError):
    pass


@dataclass
class JobSpec:
    datasets: dict[str, tuple[str, str]] = field(default_factory=dict)
    mapper_assignments: dict[str, str] = field(default_factory=dict)
    reducer_groups: dict[str, list[str]] = field(default_factory=dict)
    op: int = 0

    def mapper_host(self, mapper: str) -> str:
        return self.datasets[self.mapper_assignments[mapper]][0]


def parse_job(text: str) -> JobSpec:
    """Line grammar: `dataset <name> = <host>:<path>`, `mapper <id> on <name>`,
    `reducer <host> from <id>[, <id>...]`, `op <ADD|MAX|MIN>`, `#` comments."""
    spec = JobSpec()
    op_seen = False
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(None, 1)
        kw = parts[0]
        rest = parts[1] if len(parts) > 1 else ""
        if kw == "dataset":
            if "=" not in rest:
                raise ParseError(ln, "expected `dataset <name> = <host>:<path>`")
            name, target = (s.strip() for s in rest.split("=", 1))
            if ":" not in target:
                raise ParseError(ln, "dataset target must be <host>:<path>")
            if not name:
                raise ParseError(ln, "empty dataset name")
            if name in spec.datasets:
                raise DuplicateId(ln, f"dataset {name} already declared")
            host, path = target.split(":", 1)
            spec.datasets[name] = (host, path)
        elif kw == "mapper":
            words = rest.split()
            if len(words) != 3 or words[1] != "on":
                raise ParseError(ln, "expected `mapper <id> on <dataset>`")
            mid, _, ds = words
            if mid in spec.mapper_assignments:
                raise DuplicateId(ln, f"mapper {mid} already declared")
            if ds not in spec.datasets:
                raise UnresolvedName(ln, f"dataset {ds} not declared")
            spec.mapper_assignments[mid] = ds
        elif kw == "reducer":
            words = rest.split(None, 2)
            if len(words) != 3 or words[1] != "from":
                raise ParseError(ln, "expected `reducer <host> from <mappers>`")
            rid, _, mlist = words
            if rid in spec.reducer_groups:
                raise DuplicateId(ln, f"reducer {rid} already declared")
            mappers = [m.strip() for m in mlist.split(",")]
            if any(not m for m in mappers):
                raise ParseError(ln, "empty mapper id in list")
            if len(set(mappers)) != len(mappers):
                raise DuplicateId(ln, "repeated mapper in group")
            for m in mappers:
                if m not in spec.mapper_assignments:
                    raise UnresolvedName(ln, f"mapper {m} not declared")
            spec.reducer_groups[rid] = mappers
        elif kw == "op":
            if op_seen:
                raise DuplicateId(ln, "op already declared")
            name = rest.strip()
            if name not in OP_CODES:
                raise ParseError(ln, f"unknown op {name!r}")
            spec.op = OP_CODES[name]
            op_seen = True
        else:
            raise ParseError(ln, f"unknown directive {kw!r}")
    grouped = {m for ms in spec.reducer_groups.values() for m in ms}
    for m in spec.mapper_assignments:
        if m not in grouped:
            raise ParseError(0, f"mapper {m} belongs to no reducer group")
    return spec


def pretty_print(spec: JobSpec) -> str:
    out = []
    for name, (host, path) in spec.datasets.items():
        out.append(f"dataset {name} = {host}:{path}")
    for mid, ds in spec.mapper_assignments.items():
        out.append(f"mapper {mid} on {ds}")
    for rid, mappers in spec.reducer_groups.items():
        out.append(f"reducer {rid} from {', '.join(mappers)}")
    out.append(f"op {OP_NAMES[spec.op]}")
    return "\n".join(out) + "\n"


@dataclass
class Placement:
    assigned: dict[str, str]  # group id -> switch id
    cost: int


def _group_cost(topo: Topology, hosts: list[str], switch: str, reducer: str) -> int:
    dist = topo.hop_counts(switch)
    return sum(dist[h] for h in hosts) + dist[reducer]


def feasible_switch(topo: Topology, hosts: list[str], switch: str, reducer: str) -> bool:
    """Routes go mapper -> switch -> reducer; both legs may share only the
    switch itself, otherwise some node would need two route entries."""
    down = set(topo.shortest_path(switch, reducer))
    for h in hosts:
        up = set(topo.shortest_path(h, switch))
        if up & down != {switch}:
            return False
    return True


def place_reducers(spec: JobSpec, topo: Topology, cap: int = 4) -> Placement:
    for rid in spec.reducer_groups:
        if rid not in topo.nodes or topo.nodes[rid].kind != "host":
            raise CompileError(f"reducer host {rid} not a topology host")
    for m in spec.mapper_assignments:
        h = spec.mapper_host(m)
        if h not in topo.nodes or topo.nodes[h].kind != "host":
            raise CompileError(f"mapper {m} host {h} not a topology host")
    remaining = {s: cap for s in topo.switches() if topo.nodes[s].programmable}
    if not remaining:
        raise NoFeasibleSwitch("no programmable switches in topology")
    assigned: dict[str, str] = {}
    total = 0
    for rid, mappers in spec.reducer_groups.items():
        hosts = [spec.mapper_host(m) for m in mappers]
        best: tuple[int, str] | None = None
        for s in sorted(remaining):
            if remaining[s] <= 0:
                continue
            if not feasible_switch(topo, hosts, s, rid):
                continue
            cost = _group_cost(topo, hosts, s, rid)
            if best is None or (cost, s) < best:
                best = (cost, s)
        if best is None:
            raise NoFeasibleSwitch(f"no feasible switch for group {rid}")
        cost, s = best
        assigned[rid] = s
        remaining[s] -= 1
        total += cost
    return Placement(assigned, total)


@dataclass
class MapperPlan:
    mapper_id: str
    host: str
    dataset_path: str


@dataclass
class GroupPlan:
    group_id: str  # also the reducer host name
    reducer_host: str
    switch: str
    mappers: list[str]
    mapper_flows: list[int]  # one flow per group membership, parallel to mappers
    ctrl_flow: int  # collection-signal flow, sent from the signaler host
    flush_flow: int  # switch-originated flush/fallback flow
    signaler_host: str


@dataclass
class SwitchPlan:
    name: str
    role: str
    bound_b: int
    num_slots: int
    num_hash: int


@dataclass
class Manifest:
    op: int
    cost: int
    master_host: str
    node_ids: dict[str, int]
    mappers: list[MapperPlan]
    groups: list[GroupPlan]
    switches: dict[str, SwitchPlan]
    routes: dict[str, dict[tuple[int, int], str]]
    topo_text: str

    def topology(self) -> Topology:
        return parse_topology(self.topo_text)

    def node_name(self, nid: int) -> str:
        for name, i in self.node_ids.items():
            if i == nid:
                return name
        raise KeyError(nid)


FLOW_BASE = 1000


def _install(routes, topo, path: list[str], flow: int, dst: int) -> None:
    for u, v in zip(path, path[1:]):
        if topo.nodes[u].kind == "switch":
            table = routes.setdefault(u, {})
            prev = table.get((flow, dst))
            if prev is not None and prev != v:
                raise CompileError(f"route conflict at {u} for flow {flow}")
            table[(flow, dst)] = v


def emit_routes(
    spec: JobSpec, placement: Placement, topo: Topology, manifest: "Manifest"
) -> None:
    """Install mapper, signal, and flush flow routes through each group's
    assigned switch, with symmetric reverse entries for ACK traffic."""
    ids = manifest.node_ids
    hostof = {m.mapper_id: m.host for m in manifest.mappers}
    for g in manifest.groups:
        s = placement.assigned[g.group_id]
        down = topo.shortest_path(s, g.reducer_host)
        rid = ids[g.reducer_host]
        sid = ids[s]
        for m, flow in zip(g.mappers, g.mapper_flows):
            up = topo.shortest_path(hostof[m], s)
            full = up + down[1:]
            _install(manifest.routes, topo, full, flow, rid)
            _install(manifest.routes, topo, full[::-1], flow, ids[hostof[m]])
        sig_up = topo.shortest_path(g.signaler_host, s)
        sig_full = sig_up + down[1:]
        _install(manifest.routes, topo, sig_full, g.ctrl_flow, rid)
        _install(manifest.routes, topo, sig_full[::-1], g.ctrl_flow, ids[g.signaler_host])
        _install(manifest.routes, topo, down, g.flush_flow, rid)
        _install(manifest.routes, topo, down[::-1], g.flush_flow, sid)


def compile_job(
    spec: JobSpec,
    topo: Topology,
    cap: int = 4,
    bound_b: int = 1024,
    num_slots: int = 4096,
    num_hash: int = 2,
) -> Manifest:
    placement = place_reducers(spec, topo, cap)
    node_ids = {name: i + 1 for i, name in enumerate(sorted(topo.nodes))}
    next_flow = FLOW_BASE + 1
    mappers = []
    for mid, ds in spec.mapper_assignments.items():
        host, path = spec.datasets[ds]
        mappers.append(MapperPlan(mid, host, path))
    groups = []
    for rid, ms in spec.reducer_groups.items():
        mapper_flows = list(range(next_flow, next_flow + len(ms)))
        next_flow += len(ms)
        signaler = spec.mapper_host(ms[0]) if ms else rid
        groups.append(
            GroupPlan(rid, rid, placement.assigned[rid], list(ms), mapper_flows,
                      next_flow, next_flow + 1, signaler)
        )
        next_flow += 2
    switches = {}
    agg = set(placement.assigned.values())
    for s in topo.switches():
        role = "aggregating" if s in agg else "forwarding-only"
        switches[s] = SwitchPlan(s, role, bound_b, num_slots, num_hash)
    master = mappers[0].host if mappers else (topo.hosts()[0] if topo.hosts() else "")
    manifest = Manifest(
        op=spec.op,
        cost=placement.cost,
        master_host=master,
        node_ids=node_ids,
        mappers=mappers,
        groups=groups,
        switches=switches,
        routes={},
        topo_text=format_topology(topo),
    )
    emit_routes(spec, placement, topo, manifest)
    return manifest


def format_manifest(m: Manifest) -> str:
    out = ["manifest v1"]
    out.append(f"op {OP_NAMES[m.op]}")
    out.append(f"cost {m.cost}")
    out.append(f"master {m.master_host}")
    for name in sorted(m.node_ids):
        out.append(f"node {name} {m.node_ids[name]}")
    for mp in m.mappers:
        out.append(f"mapper {mp.mapper_id} {mp.host} {mp.dataset_path}")
    for g in m.groups:
        members = ",".join(f"{mid}={fl}" for mid, fl in zip(g.mappers, g.mapper_flows))
        out.append(
            f"group {g.group_id} {g.reducer_host} {g.switch} {g.ctrl_flow} "
            f"{g.flush_flow} {g.signaler_host} {members}"
        )
    for name in sorted(m.switches):
        s = m.switches[name]
        out.append(f"switch {name} {s.role} {s.bound_b} {s.num_slots} {s.num_hash}")
    for sw in sorted(m.routes):
        for (flow, dst) in sorted(m.routes[sw]):
            out.append(f"route {sw} {flow} {dst} {m.routes[sw][(flow, dst)]}")
    for line in m.topo_text.strip().splitlines():
        out.append(f"topo {line}")
    out.append("end")
    return "\n".join(out) + "\n"


def parse_manifest(text: str) -> Manifest:
    lines = [l.rstrip("\n") for l in text.splitlines()]
    if not lines or lines[0] != "manifest v1":
        raise CompileError("not a manifest (missing header)")
    m = Manifest(0, 0, "", {}, [], [], {}, {}, "")
    topo_lines = []
    for raw in lines[1:]:
        if not raw.strip() or raw == "end":
            continue
        parts = raw.split()
        kw = parts[0]
        if kw == "op":
            m.op = OP_CODES[parts[1]]
        elif kw == "cost":
            m.cost = int(parts[1])
        elif kw == "master":
            m.master_host = parts[1]
        elif kw == "node":
            m.node_ids[parts[1]] = int(parts[2])
        elif kw == "mapper":
            m.mappers.append(MapperPlan(parts[1], parts[2], " ".join(parts[3:])))
        elif kw == "group":
            members = [tuple(x.split("=")) for x in parts[7].split(",")]
            m.groups.append(
                GroupPlan(
                    parts[1], parts[2], parts[3],
                    [mid for mid, _ in members],
                    [int(fl) for _, fl in members],
                    int(parts[4]), int(parts[5]), parts[6],
                )
            )
        elif kw == "switch":
            m.switches[parts[1]] = SwitchPlan(
                parts[1], parts[2], int(parts[3]), int(parts[4]), int(parts[5])
            )
        elif kw == "route":
            m.routes.setdefault(parts[1], {})[(int(parts[2]), int(parts[3]))] = parts[4]
        elif kw == "topo":
            topo_lines.append(raw.split(None, 1)[1])
        else:
            raise CompileError(f"unknown manifest line: {raw!r}")
    m.topo_text = "\n".join(topo_lines) + "\n"
    return m
