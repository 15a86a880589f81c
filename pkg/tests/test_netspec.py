import dataclasses

import pytest

from canaltrace.netspec import (PUBLISHED_TOTAL_PARAMETERS, BlockSpec, NetSpec, SpecInconsistencyError,
                                census_all_conventions, count_parameters, default_network, format_table,
                                propagate_shapes)

# Published block table, (input, output) in H, W, D, C order.
TABLE = [
    ((64, 64, 64, 1), (64, 64, 64, 64)),
    ((64, 64, 64, 64), (32, 32, 64, 64)),
    ((32, 32, 64, 64), (32, 32, 64, 128)),
    ((32, 32, 64, 128), (16, 16, 64, 128)),
    ((16, 16, 64, 128), (16, 16, 64, 256)),
    ((16, 16, 64, 256), (8, 8, 64, 256)),
    ((8, 8, 64, 256), (8, 8, 64, 512)),
    ((8, 8, 64, 512), (16, 16, 64, 512 + 256)),
    ((16, 16, 64, 512 + 256), (16, 16, 64, 256)),
    ((16, 16, 64, 256), (32, 32, 64, 256 + 128)),
    ((32, 32, 64, 256 + 128), (32, 32, 64, 128)),
    ((32, 32, 64, 128), (64, 64, 64, 128 + 64)),
    ((64, 64, 64, 128 + 64), (64, 64, 64, 64)),
    ((64, 64, 64, 64), (64, 64, 64, 2)),
]


def _conv(k, cin, cout, bias=True):
    return k ** 3 * cin * cout + (cout if bias else 0)


# Hand-summed oracle per block: double 3^3 convs, 2^3 up-convs, pools carry nothing.
HAND = {
    1: _conv(3, 1, 64) + _conv(3, 64, 64),
    2: 0,
    3: _conv(3, 64, 128) + _conv(3, 128, 128),
    4: 0,
    5: _conv(3, 128, 256) + _conv(3, 256, 256),
    6: 0,
    7: _conv(3, 256, 512) + _conv(3, 512, 512),
    8: _conv(2, 512, 512),
    9: _conv(3, 768, 256) + _conv(3, 256, 256),
    10: _conv(2, 256, 256),
    11: _conv(3, 384, 128) + _conv(3, 128, 128),
    12: _conv(2, 128, 128),
    13: _conv(3, 192, 64) + _conv(3, 64, 64),
    14: _conv(1, 64, 2),
}


def test_all_block_shapes_match_table():
    assert propagate_shapes(default_network()) == TABLE


def test_single_conv_examples():
    assert _conv(3, 1, 64) == 1792
    b = BlockSpec(1, kernel=3, in_channels=1, out_channels=64)
    assert count_parameters(NetSpec([b])).total == 1792
    b = BlockSpec(14, kernel=1, in_channels=64, out_channels=2, activation="Softmax", batch_norm=False)
    assert count_parameters(NetSpec([b], input_shape=(4, 4, 4, 64))).total == 130


def test_census_matches_hand_sum():
    census = count_parameters(default_network())
    assert dict(census.per_block) == HAND
    assert census.total == sum(HAND.values()) == 26_092_994
    assert census.delta_to_published == 26_092_994 - PUBLISHED_TOTAL_PARAMETERS


def test_conventions_are_monotone():
    net = default_network()
    for bias in (False, True):
        totals = [count_parameters(net, bias, bn).total for bn in (0, 2, 4)]
        assert totals == sorted(totals) and len(set(totals)) == 3
    for bn in (0, 2, 4):
        assert count_parameters(net, False, bn).total < count_parameters(net, True, bn).total


def test_closest_convention_reported():
    ranked = census_all_conventions(default_network())
    assert len(ranked) == 6
    deltas = [abs(c.delta_to_published) for c in ranked]
    assert deltas == sorted(deltas)
    assert ranked[0].total == 26_089_280  # no bias, no BN


def test_chain_mismatch_names_block():
    net = default_network()
    net.blocks[4] = dataclasses.replace(net.blocks[4], in_channels=100)
    with pytest.raises(SpecInconsistencyError, match="block 5"):
        propagate_shapes(net)


@pytest.mark.parametrize("cut", range(1, 14))
def test_prefix_suffix_chaining(cut):
    net = default_network()
    head = propagate_shapes(NetSpec(net.blocks[:cut]))
    tail = propagate_shapes(NetSpec(net.blocks[cut:]), input_shape=head[-1][1])
    assert head + tail == TABLE


def test_metadata_is_inert_and_table_renders():
    net = default_network()
    assert net.metadata.dropout == 0.15 and net.metadata.batch_size == 3
    text = format_table(net)
    assert "16x16x64x(512+256)" in text
    assert "19,077,636" in text
