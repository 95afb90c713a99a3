import json

import pytest

from narrowspace import core
from narrowspace.core import Architecture, LayerDescriptor as L


def conv(lid, src, c, k=3, s=1, p=0, kw=None):
    return L(lid, "conv2d", (src,), kernel=(k, kw or k), stride=s, padding=p, out_channels=c)


def plain3():
    layers = (
        conv("c1", "input", 16, p=1), L("r1", "relu", ("c1",)),
        conv("c2", "r1", 32, p=1), L("r2", "relu", ("c2",)),
        conv("c3", "r2", 64, p=1),
    )
    return Architecture("plain3", layers, (3, 32, 32))


def test_valid_plain_stack():
    assert core.validate(plain3()).ok


def test_add_shape_mismatch_is_reported():
    layers = (
        conv("a", "input", 16, p=1),
        conv("b", "input", 8, p=1),
        L("j", "add", ("a", "b")),
    )
    report = core.validate(Architecture("x", layers, (3, 32, 32)))
    assert not report.ok
    assert any("shape mismatch at add" in v and "'j'" in v for v in report.violations)


def test_cycle_is_reported():
    layers = (L("a", "relu", ("b",)), L("b", "relu", ("a",)))
    report = core.validate(Architecture("x", layers, (3, 8, 8)))
    assert report.violations == ["cycle detected"]


@pytest.mark.parametrize("layers, fragment", [
    ((L("a", "relu", ("zz",)),), "unknown predecessor"),
    ((L("a", "relu", ("input",)), L("a", "relu", ("input",))), "duplicate"),
    ((L("a", "relu", ("input",)), L("b", "relu", ("input",))), "exactly one output"),
    ((L("a", "conv2d", ("input",), out_channels=4),), "missing kernel"),
    ((L("a", "relu", ("input",), kernel=(1, 1), stride=1, padding=0),), "not allowed"),
    ((L("a", "concat", ("input",)),), "at least two inputs"),
    ((L("b", "relu", ("a",)), L("a", "relu", ("input",))), "topologically"),
])
def test_structural_violations(layers, fragment):
    report = core.validate(Architecture("x", layers, (3, 8, 8)))
    assert any(fragment in v for v in report.violations), report.violations


def test_output_shape_conv_same_padding():
    assert core.output_shape(conv("c", "input", 16, k=3, p=1), [(3, 32, 32)]) == (16, 32, 32)


def test_output_shape_max_pool():
    pool = L("p", "max_pool", ("input",), kernel=(2, 2), stride=2, padding=0)
    assert core.output_shape(pool, [(16, 32, 32)]) == (16, 16, 16)


def test_output_shape_degenerate():
    with pytest.raises(core.ShapeError, match="degenerate shape"):
        core.output_shape(conv("big", "input", 4, k=7), [(3, 5, 5)])


def test_concat_and_flatten_shapes():
    cat = L("c", "concat", ("a", "b"))
    assert core.output_shape(cat, [(4, 8, 8), (6, 8, 8)]) == (10, 8, 8)
    assert core.output_shape(L("f", "flatten", ("c",)), [(10, 8, 8)]) == (640, 1, 1)


def test_single_conv_parameters():
    arch = Architecture("c", (conv("c1", "input", 16),), (3, 32, 32))
    assert core.count_parameters(arch) == 3 * 3 * 3 * 16 + 16 == 448


def test_dense_parameters():
    arch = Architecture("d", (L("fc", "dense", ("input",), out_channels=10),), (64, 1, 1))
    assert core.count_parameters(arch) == 64 * 10 + 10 == 650


def test_parameter_free_architecture():
    layers = (
        L("r", "relu", ("input",)),
        L("p", "max_pool", ("r",), kernel=(2, 2), stride=2, padding=0),
        L("g", "global_avg_pool", ("p",)),
    )
    assert core.count_parameters(Architecture("z", layers, (4, 8, 8))) == 0


def test_conv_flops():
    arch = Architecture("c", (conv("c1", "input", 16, p=1),), (3, 32, 32))
    assert core.count_flops(arch) == 2 * 3 * 3 * 3 * 16 * 32 * 32 == 884_736


def test_relu_flops():
    arch = Architecture("r", (L("r", "relu", ("input",)),), (16, 32, 32))
    assert core.count_flops(arch) == 16_384


def test_empty_architecture():
    arch = Architecture("e", (), (3, 32, 32))
    assert core.validate(arch).ok
    assert core.count_flops(arch) == 0
    assert core.count_parameters(arch) == 0
    assert arch.output_id == "input"


def test_add_flops_counts_one_op_per_element():
    layers = (conv("a", "input", 4, p=1), conv("b", "input", 4, p=1), L("j", "add", ("a", "b")))
    arch = Architecture("x", layers, (3, 8, 8))
    conv_ops = 2 * 2 * 9 * 3 * 4 * 8 * 8
    assert core.count_flops(arch) == conv_ops + 4 * 8 * 8


def test_metrics_require_validity():
    layers = (L("a", "relu", ("b",)), L("b", "relu", ("a",)))
    with pytest.raises(core.InvalidArchitecture):
        core.count_parameters(Architecture("x", layers, (3, 8, 8)))


def test_serialization_round_trip_preserves_metrics():
    arch = plain3()
    again = core.loads(core.dumps(arch))
    assert again == arch
    assert core.analyze(again) == core.analyze(arch)
    assert core.dumps(core.loads(core.dumps(arch, indent=2))) == core.dumps(arch)


def test_serialization_field_names():
    doc = json.loads(core.dumps(plain3()))
    assert set(doc) == {"id", "input_shape", "layers"}
    assert set(doc["layers"][0]) == {"id", "kind", "inputs", "kernel", "stride", "padding", "out_channels"}
    assert set(doc["layers"][1]) == {"id", "kind", "inputs"}


def test_unknown_fields_rejected():
    doc = json.loads(core.dumps(plain3()))
    doc["layers"][0]["dilation"] = 2
    with pytest.raises(ValueError, match="unknown fields"):
        core.from_dict(doc)
    doc = json.loads(core.dumps(plain3()))
    doc["comment"] = "x"
    with pytest.raises(ValueError, match="unknown fields"):
        core.from_dict(doc)
