import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bwnsim.network import INPUT_ID, ChipConfig, LayerDescriptor, NetworkGraph
from bwnsim.planner import (CLOSED_FORMS, Halo, PlanError, find_blocks, halo_occupancy, halo_words, layer_halo,
                            liveness, memory_report, plan_segments, wcl_words)
from bwnsim.zoo import load_fixture, resnet34_body, resnet50_body


def chain(shape, *layers):
    return NetworkGraph(shape, tuple(layers))


def test_single_layer_liveness_is_input_plus_output():
    net = chain((4, 8, 8), LayerDescriptor(6))
    assert liveness(net) == [4 * 64 + 6 * 64]


def test_empty_network_fits():
    plan = plan_segments(NetworkGraph((2, 3, 3)))
    assert plan.peak_words == 18


def test_does_not_fit_reports_deficit():
    net = chain((16, 32, 32), LayerDescriptor(16))
    with pytest.raises(PlanError) as exc:
        plan_segments(net, ChipConfig(fmm_words=1000))
    assert exc.value.code == "does-not-fit"
    assert exc.value.deficit == 2 * 16 * 32 * 32 - 1000


@pytest.mark.parametrize("build,kind", [(resnet34_body, "basic"), (resnet50_body, "bottleneck")])
def test_blocks_recognized(build, kind):
    kinds = {b.kind for b in find_blocks(build(224))}
    assert kind in kinds and f"strided-{kind}" in kinds


def test_block_closed_forms_match_liveness():
    for net in (resnet34_body(224), resnet50_body(224)):
        live = liveness(net)
        for b in find_blocks(net):
            num, den = CLOSED_FORMS[b.kind]
            x = net.fm_shape(b.input_fm)
            assert b.closed_form_words == num * int(np.prod(x)) // den
            assert max(live[i] for i in b.layers) == b.closed_form_words


def test_in_place_bypass_reuses_segment():
    plan = plan_segments(resnet34_body(224))
    lp = plan.layers[1]  # second conv of the first basic block adds its input in place
    assert lp.in_place and plan.segment(lp.output_seg).offset == plan.segment(lp.bypass_seg).offset


def random_chain(draw):
    shape = (draw(st.integers(1, 8)), draw(st.integers(2, 12)), draw(st.integers(2, 12)))
    layers = []
    for i in range(draw(st.integers(1, 6))):
        k = draw(st.sampled_from([1, 3]))
        byp = draw(st.sampled_from([None, i - 2])) if i >= 2 else None
        n_out = layers[byp].n_out if byp is not None else draw(st.integers(1, 8))
        layers.append(LayerDescriptor(n_out, kh=k, kw=k, bypass=byp))
    return NetworkGraph(shape, tuple(layers))


@settings(max_examples=60)
@given(st.data())
def test_segments_never_overlap_while_live(data):
    net = random_chain(data.draw)
    plan = plan_segments(net, ChipConfig().unbounded())
    live = {plan.input_seg}
    segs = {s.id: s for s in plan.segments}
    for lp in plan.layers:
        for a in live:
            if a == lp.output_seg or (lp.in_place and a == lp.bypass_seg):
                continue
            sa, sb = segs[a], segs[lp.output_seg]
            assert sa.end <= sb.offset or sb.end <= sa.offset
        live.add(lp.output_seg)
        live -= set(lp.freed)
    assert plan.peak_words == max(liveness(net))


def test_halo_widths():
    assert layer_halo(LayerDescriptor(4)) == Halo(1, 1, 1, 1)
    assert layer_halo(LayerDescriptor(4, stride=2)) == Halo(1, 0, 1, 0)
    assert layer_halo(LayerDescriptor(4, kh=1, kw=1, stride=2)).empty
    assert halo_words((2, 5, 7), Halo(1, 1, 1, 1)) == (2 * (7 * 2 + 5 * 2), 2 * 4)


def test_resnet34_memories():
    rep = memory_report(load_fixture("resnet34"))
    assert rep.wcl_words == 401_408 and rep.fits
    assert rep.border_bits == 458_752 and rep.corner_bits == 65_536


def test_halo_occupancy_chain_is_input_plus_output_halo():
    net = chain((4, 8, 8), LayerDescriptor(5), LayerDescriptor(6))
    occ = halo_occupancy(net)
    assert occ[0][0] == halo_words((4, 8, 8), Halo(1, 1, 1, 1))[0] + halo_words((5, 8, 8), Halo(1, 1, 1, 1))[0]
    assert wcl_words(net).words == max(liveness(net))
    assert INPUT_ID == -1
