import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from condenser_forge.arch import compile_arch, cost, infer_shapes, parse_arch, print_arch, reference_arch, \
    validate_constraints
from condenser_forge.explorer import (
    MUTATIONS, SearchConfig, check_search_log, explore, mutate, mutate_with_kind, netscore, proxy_evaluate,
    repair_joins, seed_prototype,
)
from condenser_forge.synth import GenConfig, generate_dataset, split

from _oracles import random_spec_source


@pytest.fixture(scope="module")
def small_data():
    data = generate_dataset(GenConfig(count=40, image_size=(32, 32), defect_fraction=0.5, seed=2))
    return split(data, 0.5)


# -- netscore -------------------------------------------------------------

def test_netscore_examples():
    assert netscore(98.2, 0.77, 93) == pytest.approx(61.13, abs=0.01)
    assert netscore(10, 1, 1) == pytest.approx(40.0)
    assert netscore(90, 1, 20) - netscore(90, 1, 40) == pytest.approx(20 * 0.5 * math.log10(2))


@pytest.mark.parametrize("args", [(0, 1, 1), (50, -1, 1), (50, 1, 0), (50, 1, 1, 0)])
def test_netscore_rejects_non_positive(args):
    with pytest.raises(ValueError):
        netscore(*args)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(1, 100), st.floats(0.01, 5), st.floats(1, 500)), min_size=2, max_size=8),
       st.floats(0.05, 1.0))
def test_netscore_argmax_invariant_to_accuracy_scaling(cands, k):
    a = [netscore(acc, p, f) for acc, p, f in cands]
    b = [netscore(acc * k, p, f) for acc, p, f in cands]
    # scaling every accuracy shifts every score by the same constant
    np.testing.assert_allclose(np.array(b) - np.array(a), 40 * math.log10(k), atol=1e-9)
    assert int(np.argmax(a)) == int(np.argmax(b)) or math.isclose(max(a), a[int(np.argmax(b))])


# -- prototype + mutation -------------------------------------------------

def test_prototype_is_feasible_and_deterministic():
    p = seed_prototype()
    assert print_arch(p) == print_arch(seed_prototype())
    assert validate_constraints(p).feasible
    out = compile_arch(p).forward(np.zeros((3, 1, 64, 64), np.float32))
    assert out.agg.shape == (3, 2)


@pytest.mark.parametrize("shape", [(1, 8, 8), (1, 32, 32), (3, 48, 40)])
def test_prototype_other_inputs(shape):
    assert validate_constraints(seed_prototype(shape)).feasible


def test_mutate_is_deterministic():
    p = seed_prototype()
    for s in range(10):
        assert print_arch(mutate(p, s)) == print_arch(mutate(p, s))


def test_mutation_kinds_are_all_reachable():
    spec, kinds = seed_prototype(), set()
    for s in range(400):
        spec2, kind = mutate_with_kind(spec, s)
        kinds.add(kind)
        if s % 3 == 0 and kind is not None:
            spec = spec2
    assert set(MUTATIONS) <= kinds


def test_mutants_always_shape_check():
    rng = np.random.default_rng(0)
    pool = [seed_prototype(), reference_arch()] + [
        parse_arch(random_spec_source(np.random.default_rng(i))) for i in range(20)]
    for i in range(500):
        spec = pool[int(rng.integers(len(pool)))]
        child = mutate(spec, i)
        infer_shapes(child)
        assert parse_arch(print_arch(child)).structurally_equal(child)
        if i % 5 == 0:
            pool.append(child)


def test_insert_acond_strictly_increases_cost():
    p = seed_prototype()
    hits = 0
    for s in range(200):
        child, kind = mutate_with_kind(p, s)
        if kind == "insert_acond":
            hits += 1
            assert cost(child).flops > cost(p).flops and cost(child).params > cost(p).params
    assert hits > 0


def test_mutation_on_unmutable_spec_returns_copy():
    src = """\
input 1x1x1
node g gap
node h dualhead c=2
edge input g
edge g h
output h
"""
    spec = parse_arch(src)
    out, kind = mutate_with_kind(spec, 0)
    assert kind is None and out.structurally_equal(spec) and out is not spec


def test_repair_joins_inserts_adapter():
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
    fixed = repair_joins(parse_arch(src))
    infer_shapes(fixed)
    adapters = [n for n in fixed.nodes if n.op == "pwconv"]
    assert len(adapters) == 1 and adapters[0].params["c"] == 4


# -- proxy evaluation -----------------------------------------------------

def test_proxy_is_deterministic(small_data):
    spec = seed_prototype((1, 32, 32))
    assert proxy_evaluate(spec, small_data, 1, seed=3) == proxy_evaluate(spec, small_data, 1, seed=3)


@pytest.mark.filterwarnings("ignore:batchnorm2d evaluated")
def test_proxy_zero_epochs_near_chance():
    data = generate_dataset(GenConfig(count=80, defect_fraction=0.5, seed=4))
    res = proxy_evaluate(seed_prototype(), data, 0, train_fraction=0.5)
    assert not res.diverged and 35 <= res.accuracy <= 65


@pytest.mark.slow
def test_reference_proxy_five_epochs_beats_sixty():
    res = proxy_evaluate(reference_arch(), generate_dataset(GenConfig()), 5)
    assert res.accuracy > 60


# -- search ---------------------------------------------------------------

def test_search_config_validation():
    for bad in ({"seeds": ()}, {"iterations": 0}, {"population": 0}, {"elite": 3, "population": 2},
                {"alpha": 0}, {"proxy_epochs": -1}):
        with pytest.raises(ValueError):
            SearchConfig(**bad)


def test_degenerate_search_returns_prototype(small_data):
    log = []
    out = explore(SearchConfig(iterations=1, population=1, elite=1, proxy_epochs=1), small_data, log.append)
    assert len(out) == 1 and len(log) == 1
    assert print_arch(out[0].spec) == print_arch(seed_prototype((1, 32, 32)))
    assert out[0].u_value is not None and 0 <= out[0].proxy_acc <= 100


def test_infeasible_candidates_never_evaluated(small_data):
    log = []
    cfg = SearchConfig(iterations=3, population=4, elite=2, proxy_epochs=1, budget_flops=1_200_000)
    out = explore(cfg, small_data, log.append)
    assert check_search_log(log) == []
    assert any(not r["feasible"] for r in log)
    assert all(c.feasible and c.proxy_acc is not None for c in out)
    for r in log:
        if not r["feasible"]:
            assert r["proxy_acc"] is None and r["u_value"] is None and r["violations"]
    ranks = [c.rank_key() for c in out]
    assert ranks == sorted(ranks, reverse=True)


def test_search_matches_with_threads(small_data, monkeypatch):
    cfg = dict(iterations=2, population=4, elite=2, proxy_epochs=1, seed=5)
    serial, threaded = [], []
    explore(SearchConfig(threads=0, **cfg), small_data, serial.append)
    explore(SearchConfig(threads=3, **cfg), small_data, threaded.append)
    assert serial == threaded
    monkeypatch.setenv("CONDENSER_FORGE_THREADS", "2")
    assert SearchConfig().worker_count() == 2
    monkeypatch.setenv("CONDENSER_FORGE_THREADS", "many")
    with pytest.raises(ValueError):
        SearchConfig().worker_count()


def test_check_search_log_flags_problems():
    recs = [{"feasible": True, "proxy_acc": 50.0, "best_u": 10.0},
            {"feasible": False, "proxy_acc": 40.0, "best_u": 10.0},
            {"feasible": True, "proxy_acc": 45.0, "best_u": 9.0}]
    problems = check_search_log(recs)
    assert len(problems) == 2 and "record 1" in problems[0] and "record 2" in problems[1]
