import json

import pytest

from cpwc.layer import Variant, count_cpwc, init_params, plan_groups
from cpwc.netspec import (
    SpecError,
    builtin_spec,
    count_network,
    parse_spec,
    serialize,
    surgery,
)


def one_node(kernel, cin=256, cout=64, cpwc=None, hw=56):
    doc = {"name": "one", "input": {"channels": cin, "height": hw, "width": hw},
           "stages": [{"block": "conv", "params": {"out_channels": cout, "kernel": kernel}}]}
    if cpwc:
        doc["stages"][0]["cpwc"] = cpwc
    return parse_spec(json.dumps(doc))


def test_single_pwc_node_counts():
    assert count_network(one_node(1, cpwc="full")).params == 19_264
    assert count_network(one_node(1)).params == 16_384
    assert count_network(one_node(3)).params == 147_456


def test_single_node_macs():
    assert count_network(one_node(1, cpwc="full")).macs == 56 * 56 * 19_264


@pytest.mark.parametrize("name", ["resnet164", "resnet50"])
def test_builtin_round_trip(name):
    spec = builtin_spec(name)
    assert parse_spec(serialize(spec)) == spec
    mod = surgery(spec, Variant.FULL)
    assert parse_spec(serialize(mod)) == mod


def test_channel_chain_error():
    doc = {"name": "bad", "input": {"channels": 3, "height": 8, "width": 8},
           "stages": [{"block": "conv", "params": {"out_channels": 32, "kernel": 3}},
                      {"block": "conv", "params": {"in_channels": 64, "out_channels": 8,
                                                   "kernel": 1}}]}
    with pytest.raises(SpecError) as e:
        parse_spec(json.dumps(doc))
    assert e.value.violations[0][0] == 1
    assert "in_channels 64" in str(e.value)


def test_empty_and_malformed_documents():
    with pytest.raises(SpecError, match="no input node"):
        parse_spec('{"name": "x", "stages": []}')
    with pytest.raises(SpecError, match="empty node list"):
        parse_spec('{"name": "x", "input": {"channels": 1, "height": 4, "width": 4}, "stages": []}')
    with pytest.raises(SpecError, match="malformed"):
        parse_spec("{not json")
    with pytest.raises(SpecError, match="unknown node kind"):
        parse_spec('{"input": {"channels": 1, "height": 4, "width": 4}, '
                   '"stages": [{"block": "lstm"}]}')


def test_spatial_collapse_is_reported():
    doc = {"input": {"channels": 1, "height": 2, "width": 2},
           "stages": [{"block": "conv", "params": {"out_channels": 1, "kernel": 5,
                                                   "padding": 0}}]}
    with pytest.raises(SpecError, match="collapses"):
        parse_spec(doc)


def test_builtin_unknown():
    with pytest.raises(ValueError):
        builtin_spec("vgg16")


def test_resnet_structure():
    nodes = builtin_spec("resnet50").nodes()
    convs = [n for n in nodes if n.kind == "conv"]
    assert len(convs) == 53  # 1 stem + 16 blocks x 3 + 4 projections
    assert nodes[-1].kind == "fc" and nodes[-1].in_channels == 2048
    assert convs[-1].out_hw == (7, 7)
    nodes164 = builtin_spec("resnet164").nodes()
    assert sum(n.kind == "conv" for n in nodes164) == 1 + 54 * 3 + 3
    assert [n.out_hw for n in nodes164 if n.kind == "add"][-1] == (8, 8)


@pytest.mark.parametrize("name", ["resnet164", "resnet50"])
def test_surgery_idempotent_and_identity(name):
    spec = builtin_spec(name)
    once = surgery(spec, Variant.FULL)
    assert surgery(once, Variant.FULL) == once
    base = count_network(spec)
    same = count_network(surgery(spec, Variant.PWC_ONLY))
    assert (same.params, same.macs) == (base.params, base.macs)


@pytest.mark.parametrize("name", ["resnet164", "resnet50"])
def test_surgery_per_node_delta(name):
    spec = builtin_spec(name)
    rep = count_network(surgery(spec, Variant.FULL), baseline=spec)
    assert rep.params >= rep.baseline.params
    n_pwc = 0
    for node, dp, dm in rep.deltas():
        if node.kind == "conv" and node.kernel == "1":
            n_pwc += 1
            c, z = node.in_channels, node.out_channels
            assert dp == 9 * max(c, z) + 9 * z
            assert dm == node.out_hw[0] * node.out_hw[1] * dp
        else:
            assert dp == 0 and dm == 0
    assert n_pwc > 0


def test_node_counts_match_instantiated_params():
    rep = count_network(surgery(builtin_spec("resnet164"), Variant.NO_STAGE2))
    seen = set()
    for n in rep.nodes:
        if n.cpwc and (n.in_channels, n.out_channels) not in seen:
            seen.add((n.in_channels, n.out_channels))
            p = init_params(plan_groups(n.in_channels, n.out_channels), n.cpwc, seed=0)
            assert n.params == p.num_params()
    assert len(seen) >= 5


def test_totals_equal_node_sums():
    rep = count_network(builtin_spec("resnet50"))
    d = rep.to_dict()
    assert d["total_params"] == sum(n["params"] for n in d["nodes"])
    assert d["total_macs"] == sum(n["macs"] for n in d["nodes"])


def test_report_exports():
    spec = builtin_spec("resnet164")
    rep = count_network(surgery(spec, "full"), baseline=spec)
    d = json.loads(rep.to_json())
    assert d["schema_version"] == 1
    assert d["delta_params"] == d["total_params"] - d["baseline_params"]
    text = rep.to_text()
    assert "Params" in text and "FLOPS" in text
    assert "resnet164 cpwc=full" in text
    assert "s1.0.conv1" in rep.to_text(per_node=True)


def test_count_cpwc_consistency_with_analyzer():
    for c, z in [(64, 16), (16, 64), (256, 256)]:
        for v in Variant:
            doc = {"input": {"channels": c, "height": 4, "width": 4},
                   "stages": [{"block": "conv", "params": {"out_channels": z, "kernel": 1},
                               "cpwc": v.value}]}
            assert count_network(parse_spec(doc)).params == count_cpwc(c, z, v)
