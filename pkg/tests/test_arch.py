import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from condenser_forge import blocks
from condenser_forge.arch import (
    chain, compile_arch, cost, indicator, infer_shapes, load_weights, parse_arch, print_arch,
    reference_arch, save_weights, validate_constraints,
)
from condenser_forge.arch.weights import MAGIC, decode_tensors, encode_tensors
from condenser_forge.autodiff import Tensor, batchnorm2d, conv2d, flatten, global_avg_pool, relu
from condenser_forge.errors import DSLError, ShapeError, WeightsFormatError

from _oracles import count_execute, random_spec_source

MINIMAL = """\
input 1x8x8
node c conv k=3,c=4
node g gap
node h dualhead
edge input c
edge c g
edge g h
output h
"""


def _random_spec(seed, **kw):
    return parse_arch(random_spec_source(np.random.default_rng(seed), **kw))


# -- parser ---------------------------------------------------------------

def test_minimal_source():
    spec = parse_arch(MINIMAL)
    assert [n.id for n in spec.nodes] == ["input", "c", "g", "h"]
    assert spec.input_shape == (1, 8, 8)


def test_comments_and_blank_lines():
    spec = parse_arch("# header\n\n" + MINIMAL.replace("node g gap", "node g gap   # pool"))
    assert spec.node("g").op == "gap"


@pytest.mark.parametrize("src,line,fragment", [
    (MINIMAL.replace("node g gap", "node c gap"), 3, "'c'"),
    (MINIMAL.replace("node g gap", "node g blur"), 3, "blur"),
    (MINIMAL.replace("edge c g", "edge c nowhere"), 6, "nowhere"),
    (MINIMAL.replace("node c conv k=3,c=4", "node c conv k=3,q=4"), 2, "q"),
    (MINIMAL.replace("node c conv k=3,c=4", "node c conv k=three,c=4"), 2, "three"),
    (MINIMAL.replace("input 1x8x8", "input 1x8"), 1, "1x8"),
    (MINIMAL.replace("output h\n", ""), None, "output"),
    (MINIMAL + "edge g c\n", 9, "cycle"),
    (MINIMAL.replace("edge c g", "flow c g"), 6, "flow"),
])
def test_parse_errors_carry_location(src, line, fragment):
    with pytest.raises(DSLError) as e:
        parse_arch(src)
    assert fragment in str(e.value)
    if line is not None:
        assert e.value.line == line
        assert str(e.value).startswith(f"line {line}")


def test_duplicate_id_names_id_and_line():
    with pytest.raises(DSLError) as e:
        parse_arch(MINIMAL.replace("node g gap", "node c gap"))
    assert "'c'" in str(e.value) and e.value.line == 3 and e.value.column is not None


@pytest.mark.parametrize("seed", range(50))
def test_print_parse_round_trip(seed):
    spec = _random_spec(seed)
    again = parse_arch(print_arch(spec))
    assert again.structurally_equal(spec)
    assert print_arch(again) == print_arch(spec)


def test_round_trip_ignores_node_order():
    spec = reference_arch()
    shuffled = spec.copy()
    shuffled.nodes = shuffled.nodes[:1] + shuffled.nodes[1:][::-1]
    assert parse_arch(print_arch(shuffled)).structurally_equal(spec)


def test_topological_order_is_stable_by_id():
    spec = parse_arch(random_spec_source(np.random.default_rng(3)))
    order = spec.topo_order()
    pos = {k: i for i, k in enumerate(order)}
    assert all(pos[s] < pos[d] for s, d in spec.edges)
    assert order == parse_arch(print_arch(spec)).topo_order()


# -- shapes / compile -----------------------------------------------------

def test_reference_compiles_and_forwards():
    g = compile_arch(reference_arch(), seed=0)
    out = g.forward(np.zeros((1, 1, 64, 64), dtype=np.float32), training=True)
    assert out.agg.shape == (1, 2)
    assert abs(out.agg.data.sum() - 1) < 1e-6


def test_join_channel_mismatch_names_both_edges():
    src = """\
input 1x8x8
node a conv c=4
node b conv c=6
node j relu
node g gap
node h dualhead
edge input a
edge input b
edge a j
edge b j
edge j g
edge g h
output h
"""
    with pytest.raises(ShapeError) as e:
        compile_arch(parse_arch(src))
    assert "a -> j" in str(e.value) and "b -> j" in str(e.value)


@pytest.mark.parametrize("edit", [
    lambda s: s.replace("node h dualhead", "node h gap"),              # output not a head
    lambda s: s.replace("edge g h\n", "edge g h\nedge c h\n"),          # head fed twice, mismatch
    lambda s: s.replace("node g gap\n", "node g gap\nnode d relu\nedge input d\n"),  # dead end
])
def test_structural_errors(edit):
    with pytest.raises((ShapeError, DSLError)):
        compile_arch(parse_arch(edit(MINIMAL)))


def test_compiled_matches_hand_wired_blocks():
    src = """\
input 1x12x12
node stem conv k=3,s=2,c=4
node bn bn
node act relu
node ac acond c=2
node ds aads
node res resblock
node g gap
node h dualhead
edge input stem
edge stem bn
edge bn act
edge act ac
edge ac ds
edge ds res
edge res g
edge g h
output h
"""
    g = compile_arch(parse_arch(src), seed=3)
    x = np.random.default_rng(0).normal(size=(3, 1, 12, 12)).astype(np.float32)
    got = g.forward(x, training=True)
    m = g.modules
    h = conv2d(Tensor(x), m["stem"]["w"], m["stem"]["b"], stride=2, pad=1)
    from condenser_forge.autodiff import BatchNormState
    h = batchnorm2d(h, m["bn"]["gamma"], m["bn"]["beta"], BatchNormState.fresh(4), True)
    h = blocks.attention_condenser(relu(h), m["ac"])
    h = blocks.aads_downsample(h, 3)
    res = m["res"]
    fresh = blocks.ResBlockParams(res.dw_w, res.bn1_gamma, res.bn1_beta, res.pw_w, res.bn2_gamma, res.bn2_beta,
                                  BatchNormState.fresh(4), BatchNormState.fresh(4))
    h = blocks.dwsep_residual_block(h, fresh, True)
    want = blocks.dual_head_forward(flatten(global_avg_pool(h)), m["h"])
    assert got.agg.data.tobytes() == want.agg.data.tobytes()


def test_same_seed_same_parameters_and_order_independent():
    a = compile_arch(reference_arch(), seed=7)
    b = compile_arch(reference_arch(), seed=7)
    shuffled = reference_arch()
    shuffled.nodes = shuffled.nodes[:1] + shuffled.nodes[1:][::-1]
    c = compile_arch(shuffled, seed=7)
    for k, t in a.named_tensors().items():
        assert t.tobytes() == b.named_tensors()[k].tobytes() == c.named_tensors()[k].tobytes()
    d = compile_arch(reference_arch(), seed=8)
    assert any(not np.array_equal(t, d.named_tensors()[k]) for k, t in a.named_tensors().items())


# -- cost -----------------------------------------------------------------

def test_single_conv_cost():
    spec = chain((1, 8, 8), [("c", "conv", {"k": 3, "c": 16, "s": 1, "p": 1})])
    row = [r for r in cost(_with_head(spec)).per_node if r.id == "c"][0]
    assert row.params == 160
    assert 2 * row.macs == 18432


def _with_head(spec):
    src = print_arch(spec).replace(f"output {spec.output}\n", "")
    return parse_arch(src + f"node zz_g gap\nnode zz_h dualhead\nedge {spec.output} zz_g\nedge zz_g zz_h\noutput zz_h\n")


def test_parameter_free_body_has_no_params():
    spec = parse_arch("input 1x4x4\nnode g gap\nnode r relu\nnode h dualhead c=2\n"
                      "edge input r\nedge r g\nedge g h\noutput h\n")
    rows = {r.id: r for r in cost(spec).per_node}
    assert rows["r"].params == rows["g"].params == 0
    assert cost(spec).params == rows["h"].params == 2 * (2 * 1 + 2)


@pytest.mark.parametrize("seed", range(20))
def test_cost_matches_counting_executor(seed):
    spec = _random_spec(seed)
    rep = cost(spec, flops_per_mac=2)
    cnt = count_execute(spec, seed)
    assert rep.params == cnt.params
    assert rep.flops == 2 * cnt.macs + cnt.elementwise


def test_cost_totals_are_sum_of_rows_and_nonnegative():
    rep = cost(reference_arch())
    assert rep.params == sum(r.params for r in rep.per_node)
    assert rep.flops == sum(r.flops for r in rep.per_node)
    assert all(min(r.params, r.macs, r.elementwise, r.flops) >= 0 for r in rep.per_node)
    assert "1 MAC = 2 FLOPs" in rep.convention
    assert cost(reference_arch(), flops_per_mac=1).flops < rep.flops


def _rename(text, prefix):
    positions = {"node": (1,), "edge": (1, 2), "output": (1,)}
    lines = []
    for line in text.splitlines():
        toks = line.split()
        idx = range(1, len(toks)) if toks[:1] == ["column"] else positions.get(toks[0] if toks else "", ())
        for i in idx:
            if toks[i] != "input":
                toks[i] = prefix + toks[i]
        lines.append(" ".join(toks))
    return "\n".join(lines) + "\n"


def test_cost_invariant_to_renaming():
    spec = reference_arch()
    renamed = parse_arch(_rename(print_arch(spec), "zz"))
    assert {n.id for n in renamed.nodes} != {n.id for n in spec.nodes}
    assert cost(renamed).flops == cost(spec).flops and cost(renamed).params == cost(spec).params


def test_batch_scales_flops():
    assert cost(reference_arch(), batch=4).flops == 4 * cost(reference_arch()).flops


# -- constraints ----------------------------------------------------------

def test_reference_is_feasible():
    rep = validate_constraints(reference_arch())
    assert rep.feasible and rep.violations == [] and rep.cost.flops < 100_000_000


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 10**9))
def test_indicator_monotone_in_budget(seed, bump):
    spec = _random_spec(seed % 200)
    flops = cost(spec).flops
    for budget in (flops, flops + 1, flops + bump):
        assert validate_constraints(spec, budget).feasible == (budget > flops)
    assert indicator(spec, flops + 1 + bump) == 1


@pytest.mark.parametrize("seed", range(30))
def test_random_compliant_specs_are_feasible(seed):
    # generator only emits AADS downsampling and stride-1 pointwise convs
    assert indicator(_random_spec(seed), 10**9) == 1


# -- weights --------------------------------------------------------------

def _trained_graph():
    g = compile_arch(reference_arch((1, 24, 24)), seed=1)
    g.forward(np.random.default_rng(0).normal(size=(4, 1, 24, 24)), training=True)
    return g


def test_save_load_forward_bit_exact(tmp_path):
    g = _trained_graph()
    x = np.random.default_rng(1).normal(size=(3, 1, 24, 24)).astype(np.float32)
    before = g.forward(x).agg.data
    save_weights(g, tmp_path / "w.ldnw")
    h = compile_arch(reference_arch((1, 24, 24)), seed=99)
    load_weights(h, tmp_path / "w.ldnw")
    assert h.forward(x).agg.data.tobytes() == before.tobytes()


def test_two_saves_byte_identical(tmp_path):
    g = _trained_graph()
    save_weights(g, tmp_path / "a")
    save_weights(g, tmp_path / "b")
    digest = [hashlib.sha256((tmp_path / n).read_bytes()).hexdigest() for n in "ab"]
    assert digest[0] == digest[1]


def test_file_layout_header():
    buf = encode_tensors({"b": np.ones((2, 3)), "a": np.zeros(1)})
    assert buf[:4] == MAGIC == b"LDNW"
    assert int.from_bytes(buf[4:8], "little") == 1 and int.from_bytes(buf[8:12], "little") == 2
    assert buf[12:14] == (1).to_bytes(2, "little") and buf[14:15] == b"a"  # sorted by name
    assert list(decode_tensors(buf)) == ["a", "b"]


@pytest.mark.parametrize("mutilate,fragment", [
    (lambda b: b[:-3], "truncated"),
    (lambda b: b"XXXX" + b[4:], "magic"),
    (lambda b: b[:4] + (2).to_bytes(4, "little") + b[8:], "version"),
    (lambda b: b + b"\0", "trailing"),
])
def test_corrupt_files_rejected_without_mutation(tmp_path, mutilate, fragment):
    g = _trained_graph()
    save_weights(g, tmp_path / "w")
    (tmp_path / "w").write_bytes(mutilate((tmp_path / "w").read_bytes()))
    h = compile_arch(reference_arch((1, 24, 24)), seed=5)
    before = {k: v.copy() for k, v in h.named_tensors().items()}
    with pytest.raises(WeightsFormatError) as e:
        load_weights(h, tmp_path / "w")
    assert fragment in str(e.value)
    assert all(np.array_equal(v, h.named_tensors()[k]) for k, v in before.items())


def test_missing_and_mismatched_tensors_named(tmp_path):
    g = _trained_graph()
    tensors = g.named_tensors()
    dropped = dict(tensors)
    del dropped["head.w1"]
    (tmp_path / "m").write_bytes(encode_tensors(dropped))
    with pytest.raises(WeightsFormatError, match="head.w1"):
        load_weights(g, tmp_path / "m")
    wrong = dict(tensors)
    wrong["stem.w"] = np.zeros((1, 1, 1, 1))
    (tmp_path / "s").write_bytes(encode_tensors(wrong))
    with pytest.raises(WeightsFormatError, match="stem.w"):
        load_weights(g, tmp_path / "s")


def test_zero_condenser_scale_equals_network_without_condensers():
    spec = reference_arch((1, 32, 32))
    with_ac = compile_arch(spec, seed=4, dtype=np.float64)
    for nid, m in with_ac.modules.items():
        if spec.node(nid).op == "acond":
            m.scale.data[:] = 0
    stripped = spec.copy()
    for nid in [n.id for n in spec.nodes if n.op == "acond"]:
        (p,) = stripped.preds()[nid]
        succs = stripped.succs()[nid]
        stripped.nodes = [n for n in stripped.nodes if n.id != nid]
        stripped.edges = [e for e in stripped.edges if nid not in e] + [(p, s) for s in succs]
        stripped.columns = [[m for m in col if m != nid] for col in stripped.columns]
    without = compile_arch(parse_arch(print_arch(stripped)), seed=4, dtype=np.float64)
    x = np.random.default_rng(0).normal(size=(3, 1, 32, 32))
    for training in (True, False):
        a = with_ac.forward(x, training=training).agg.data
        b = without.forward(x, training=training).agg.data
        np.testing.assert_array_equal(a, b)
