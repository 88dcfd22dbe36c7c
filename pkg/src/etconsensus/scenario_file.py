"""YAML scenario files, bundled scenarios and the random scenario generator.

A scenario file is a mapping with these keys::

    name: str                       # optional
    graph:                          # exactly one of
      n: 3
      edges: [[from, to, weight], ...]   # 1-based, a_{to,from} = weight
      laplacian: [[...], ...]            # rows are receivers
    output: identity | saturation(h) | [tag per agent]
    x0: [..n values..] or [[..p values..], ..n rows..]
    alpha: scalar or n values
    beta: scalar or n values
    horizon: T
    stride: dt                      # optional, default 0.01
    threshold_floor: eps            # optional, default 1e-9
    out: directory                  # optional
    tolerances: {consensus: 0.05, dissipation: 1e-6}   # optional
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .errors import ConsensusError, ScenarioError
from .graph import Connectivity, WeightedDigraph, classify_connectivity, from_edges, from_laplacian
from .nonlinearity import parse_output_tag
from .sim import DEFAULT_STRIDE, DEFAULT_THRESHOLD_FLOOR, Scenario

__all__ = [
    "ScenarioFile",
    "parse_scenario",
    "load_scenario",
    "dump_scenario",
    "bundled_names",
    "load_bundled",
    "resolve_scenario",
    "generate_random",
]

_REQUIRED = ("graph", "output", "x0", "alpha", "beta", "horizon")
_OPTIONAL = ("name", "stride", "threshold_floor", "out", "tolerances")
_TOLERANCE_KEYS = ("consensus", "dissipation")


@dataclass
class ScenarioFile:
    graph: dict
    output: str | list
    x0: list
    alpha: float | list
    beta: float | list
    horizon: float
    name: str = ""
    stride: float = DEFAULT_STRIDE
    threshold_floor: float = DEFAULT_THRESHOLD_FLOOR
    out: str | None = None
    tolerances: dict = field(default_factory=dict)
    lines: dict = field(default_factory=dict, compare=False, repr=False)

    def to_dict(self) -> dict:
        data = {"name": self.name} if self.name else {}
        data.update(
            graph=self.graph,
            output=self.output,
            x0=self.x0,
            alpha=self.alpha,
            beta=self.beta,
            horizon=self.horizon,
            stride=self.stride,
            threshold_floor=self.threshold_floor,
        )
        if self.out is not None:
            data["out"] = self.out
        if self.tolerances:
            data["tolerances"] = dict(self.tolerances)
        return data

    def digest(self) -> str:
        canon = yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=True)
        return hashlib.sha256(canon.encode()).hexdigest()

    def _err(self, message, key):
        return ScenarioError(message, field=key, line=self.lines.get(key))

    def build_graph(self) -> WeightedDigraph:
        spec = self.graph
        try:
            if "laplacian" in spec:
                return from_laplacian(spec["laplacian"])
            return from_edges(spec["n"], spec.get("edges", []))
        except (ConsensusError, ValueError, TypeError) as exc:
            raise self._err(str(exc), "graph") from exc

    def to_scenario(self, **overrides) -> Scenario:
        graph = self.build_graph()
        n = graph.n
        x0 = np.asarray(self.x0, dtype=float)
        if x0.ndim not in (1, 2) or x0.shape[0] != n:
            raise self._err(f"x0 must have {n} rows, got shape {x0.shape}", "x0")
        p = 1 if x0.ndim == 1 else x0.shape[1]
        try:
            if isinstance(self.output, (list, tuple)):
                if len(self.output) != n:
                    raise ValueError(f"need {n} output tags, got {len(self.output)}")
                output = tuple(parse_output_tag(tag, p) for tag in self.output)
            else:
                output = parse_output_tag(self.output, p)
        except ValueError as exc:
            raise self._err(str(exc), "output") from exc
        kwargs = dict(
            graph=graph,
            output=output,
            x0=x0,
            alpha=self.alpha,
            beta=self.beta,
            horizon=float(self.horizon),
            stride=float(self.stride),
            threshold_floor=float(self.threshold_floor),
            name=self.name,
        )
        kwargs.update(overrides)
        try:
            return Scenario(**kwargs)
        except ScenarioError as exc:
            raise self._err(exc.message, exc.field) from exc


def _key_lines(text: str) -> dict:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError:
        return {}
    if not isinstance(node, yaml.MappingNode):
        return {}
    return {k.value: k.start_mark.line + 1 for k, _ in node.value if isinstance(k, yaml.ScalarNode)}


def _number(value, key, lines, allow_list=False):
    if isinstance(value, bool):
        raise ScenarioError("expected a number, got a boolean", field=key, line=lines.get(key))
    if allow_list and isinstance(value, list):
        return [_number(v, key, lines) for v in value]
    if isinstance(value, (int, float)):
        return float(value)
    raise ScenarioError(f"expected a number, got {value!r}", field=key, line=lines.get(key))


def parse_scenario(text: str) -> ScenarioFile:
    """Parse and type-check a scenario document (without building the graph)."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ScenarioError(f"invalid YAML: {getattr(exc, 'problem', exc)}", line=line) from exc
    if not isinstance(data, dict):
        raise ScenarioError("scenario file must be a mapping")
    lines = _key_lines(text)
    unknown = sorted(set(data) - set(_REQUIRED) - set(_OPTIONAL))
    if unknown:
        raise ScenarioError(f"unknown key {unknown[0]!r}", field=unknown[0], line=lines.get(unknown[0]))
    for key in _REQUIRED:
        if key not in data:
            raise ScenarioError("missing required key", field=key)

    graph = data["graph"]
    if not isinstance(graph, dict) or ("laplacian" in graph) == ("edges" in graph or "n" in graph):
        raise ScenarioError("graph needs either 'laplacian' or 'n' with 'edges'", field="graph", line=lines.get("graph"))
    if "laplacian" not in graph and "n" not in graph:
        raise ScenarioError("edge-list graph needs 'n'", field="graph", line=lines.get("graph"))

    output = data["output"]
    if not isinstance(output, (str, list)):
        raise ScenarioError("output must be a tag or a list of tags", field="output", line=lines.get("output"))

    x0 = data["x0"]
    if not isinstance(x0, list) or not x0:
        raise ScenarioError("x0 must be a non-empty list", field="x0", line=lines.get("x0"))
    x0 = [_number(v, "x0", lines, allow_list=True) for v in x0]

    tolerances = data.get("tolerances") or {}
    if not isinstance(tolerances, dict) or set(tolerances) - set(_TOLERANCE_KEYS):
        raise ScenarioError(
            f"tolerances accepts only {list(_TOLERANCE_KEYS)}", field="tolerances", line=lines.get("tolerances")
        )
    tolerances = {k: _number(v, "tolerances", lines) for k, v in tolerances.items()}

    out = data.get("out")
    if out is not None and not isinstance(out, str):
        raise ScenarioError("out must be a path string", field="out", line=lines.get("out"))

    return ScenarioFile(
        graph=graph,
        output=output,
        x0=x0,
        alpha=_number(data["alpha"], "alpha", lines, allow_list=True),
        beta=_number(data["beta"], "beta", lines, allow_list=True),
        horizon=_number(data["horizon"], "horizon", lines),
        name=str(data.get("name") or ""),
        stride=_number(data.get("stride", DEFAULT_STRIDE), "stride", lines),
        threshold_floor=_number(data.get("threshold_floor", DEFAULT_THRESHOLD_FLOOR), "threshold_floor", lines),
        out=out,
        tolerances=tolerances,
        lines=lines,
    )


def load_scenario(path) -> ScenarioFile:
    return parse_scenario(Path(path).read_text())


def dump_scenario(sf: ScenarioFile) -> str:
    return yaml.safe_dump(sf.to_dict(), sort_keys=False, default_flow_style=None)


def bundled_names() -> list[str]:
    root = resources.files("etconsensus") / "bundled"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_bundled(name: str) -> ScenarioFile:
    res = resources.files("etconsensus") / "bundled" / f"{name}.yaml"
    if not res.is_file():
        raise ScenarioError(f"no bundled scenario named {name!r}; have {bundled_names()}")
    return parse_scenario(res.read_text())


def resolve_scenario(ref: str) -> ScenarioFile:
    """A file path, or the name of a bundled scenario."""
    path = Path(ref)
    if path.is_file():
        return load_scenario(path)
    if ref in bundled_names():
        return load_bundled(ref)
    raise ScenarioError(f"scenario {ref!r} is neither a file nor a bundled name")


def _cycle_edges(rng, members):
    order = list(rng.permutation(members))
    return [(order[k], order[(k + 1) % len(order)]) for k in range(len(order))] if len(order) > 1 else []


def _draw_graph(rng, n, connectivity):
    pairs = set()
    if connectivity == "strong":
        pairs.update(_cycle_edges(rng, range(n)))
        for s in range(n):
            for r in range(n):
                if s != r and rng.random() < 0.25:
                    pairs.add((s, r))
    else:
        k = int(rng.integers(2, min(n, 4) + 1))
        cuts = np.sort(rng.choice(np.arange(1, n), size=k - 1, replace=False))
        agents = rng.permutation(n)
        blocks = [list(b) for b in np.split(agents, cuts)]
        for b in blocks:
            pairs.update(_cycle_edges(rng, b))
            for s in b:
                for r in b:
                    if s != r and rng.random() < 0.25:
                        pairs.add((s, r))
        # block m must hear from some later block; the last block is closed
        for m in range(k - 1):
            later = [a for b in blocks[m + 1:] for a in b]
            pairs.add((int(rng.choice(later)), int(rng.choice(blocks[m]))))
            for s in later:
                for r in blocks[m]:
                    if rng.random() < 0.1:
                        pairs.add((s, r))
    edges = []
    for s, r in sorted((int(s), int(r)) for s, r in pairs):
        edges.append([s + 1, r + 1, round(float(rng.uniform(0.5, 5.0)), 2)])
    return edges


def generate_random(
    n: int,
    p: int = 1,
    seed: int = 0,
    connectivity: str = "strong",
    output: str = "saturation(1.0)",
    horizon: float = 20.0,
    max_tries: int = 100,
) -> ScenarioFile:
    """Random scenario whose graph is certified by :func:`classify_connectivity`.

    ``connectivity="strong"`` gives a strongly connected graph;
    ``"spanning-tree"`` gives a graph with a spanning tree and at least two
    strongly connected components.
    """
    if n < 2:
        raise ScenarioError("random scenarios need n >= 2", field="n")
    wanted = {"strong": Connectivity.STRONGLY_CONNECTED, "spanning-tree": Connectivity.SPANNING_TREE}
    if connectivity not in wanted:
        raise ScenarioError(f"connectivity must be one of {sorted(wanted)}", field="connectivity")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        edges = _draw_graph(rng, n, connectivity)
        if classify_connectivity(from_edges(n, edges)) is wanted[connectivity]:
            break
    else:
        raise ScenarioError(f"no {connectivity} graph found in {max_tries} draws")
    x0 = np.round(rng.uniform(-10, 10, size=(n, p)), 3)
    alpha = np.round(rng.uniform(0.5, 10.0, size=n), 2)
    beta = np.round(rng.uniform(0.5, 10.0, size=n), 2)
    return ScenarioFile(
        graph={"n": n, "edges": edges},
        output=output,
        x0=x0[:, 0].tolist() if p == 1 else x0.tolist(),
        alpha=alpha.tolist(),
        beta=beta.tolist(),
        horizon=float(horizon),
        name=f"random-{connectivity}-n{n}-p{p}-seed{seed}",
    )

