import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from etconsensus.errors import ScenarioError
from etconsensus.graph import Connectivity, classify_connectivity
from etconsensus.scenario_file import (
    bundled_names,
    dump_scenario,
    generate_random,
    load_bundled,
    parse_scenario,
    resolve_scenario,
)
from etconsensus.sim import run

MINIMAL = """\
name: tiny
graph:
  n: 2
  edges: [[1, 2, 1.0], [2, 1, 1.0]]
output: identity
x0: [1.0, 0.0]
alpha: 1.0
beta: 1.0
horizon: 2.0
"""


def test_bundled_present():
    assert bundled_names() == ["paper_fig2", "paper_fig3"]


@pytest.mark.parametrize("name", ["paper_fig2", "paper_fig3"])
def test_bundled_parse_and_run_within_budget(name):
    sf = load_bundled(name)
    sc = sf.to_scenario()
    assert sc.n == 7 and sc.horizon == 20.0
    start = time.perf_counter()
    run(sc)
    assert time.perf_counter() - start < 5.0


def test_minimal_round_trip():
    sf = parse_scenario(MINIMAL)
    again = parse_scenario(dump_scenario(sf))
    assert again == sf
    assert again.digest() == sf.digest()


def test_laplacian_graph_spec():
    sf = load_bundled("paper_fig2")
    assert "laplacian" in sf.graph
    assert parse_scenario(dump_scenario(sf)) == sf


@given(st.integers(0, 10**6), st.integers(2, 8), st.integers(1, 3), st.sampled_from(["strong", "spanning-tree"]))
@settings(max_examples=60, deadline=None)
def test_generated_round_trip(seed, n, p, connectivity):
    if connectivity == "spanning-tree" and n < 3:
        n = 3
    sf = generate_random(n, p, seed, connectivity)
    assert parse_scenario(dump_scenario(sf)) == sf


def test_generate_two_cycle():
    sf = generate_random(2, 1, seed=1, connectivity="strong")
    assert [e[:2] for e in sf.graph["edges"]] == [[1, 2], [2, 1]]


def test_generate_deterministic():
    assert dump_scenario(generate_random(6, 2, 5, "spanning-tree")) == dump_scenario(
        generate_random(6, 2, 5, "spanning-tree")
    )


def test_generate_spanning_tree_certified():
    g = generate_random(10, 1, seed=7, connectivity="spanning-tree").build_graph()
    assert classify_connectivity(g) is Connectivity.SPANNING_TREE


def test_generate_rejects_small_n():
    with pytest.raises(ScenarioError):
        generate_random(1, 1, 0)


# --- error reporting -------------------------------------------------------

def test_missing_key():
    with pytest.raises(ScenarioError) as info:
        parse_scenario(MINIMAL.replace("horizon: 2.0\n", ""))
    assert info.value.field == "horizon"


def test_unknown_key_has_line():
    with pytest.raises(ScenarioError) as info:
        parse_scenario(MINIMAL + "colour: blue\n")
    assert info.value.field == "colour" and info.value.line == 10


def test_zero_alpha_points_at_line():
    sf = parse_scenario(MINIMAL.replace("alpha: 1.0", "alpha: 0"))
    with pytest.raises(ScenarioError) as info:
        sf.to_scenario()
    assert info.value.field == "alpha" and info.value.line == 7
    assert "line 7" in str(info.value)


def test_malformed_yaml_line():
    with pytest.raises(ScenarioError) as info:
        parse_scenario(MINIMAL.replace("x0: [1.0, 0.0]", "x0: [1.0, 0.0"))
    assert info.value.line is not None


def test_dimension_mismatch():
    sf = parse_scenario(MINIMAL.replace("x0: [1.0, 0.0]", "x0: [1.0, 0.0, 2.0]"))
    with pytest.raises(ScenarioError) as info:
        sf.to_scenario()
    assert info.value.field == "x0"


def test_non_numeric_alpha():
    with pytest.raises(ScenarioError) as info:
        parse_scenario(MINIMAL.replace("alpha: 1.0", "alpha: lots"))
    assert info.value.field == "alpha"


def test_resolve_path_or_name(tmp_path):
    path = tmp_path / "s.yaml"
    path.write_text(MINIMAL)
    assert resolve_scenario(str(path)).name == "tiny"
    assert resolve_scenario("paper_fig3").name == "paper_fig3"
    with pytest.raises(ScenarioError):
        resolve_scenario("nope")


def test_per_agent_outputs():
    sf = parse_scenario(MINIMAL.replace("output: identity", "output: [identity, saturation(0.5)]"))
    sc = sf.to_scenario(horizon=20.0)
    assert [f.kind for f in sc.outputs] == ["identity", "saturation"]
    # the sum is conserved and the only rest point with x_1 = sat(x_2) is (0.5, 0.5)
    assert np.allclose(run(sc).final_x[:, 0], [0.5, 0.5], atol=1e-3)
