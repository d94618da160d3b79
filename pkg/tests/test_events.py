import numpy as np
import pytest

import edgeflow.autodiff as ad
from edgeflow.autodiff import Tensor
from edgeflow.events import (EventEncoder, EventError, EventStream,
                             edge_pretrain_loss, edge_strength, event_encode,
                             make_edge_heads, pool_edge, split_window, voxelize)
from edgeflow.rng import Rng


def stream(ts, xs, ys, ps, t0=0.0, t1=1.0, h=4, w=4):
    return EventStream(np.array(ts, dtype=float), np.array(xs), np.array(ys),
                       np.array(ps), t0, t1, h, w)


def random_stream(seed, h=6, w=6, max_events=40):
    rng = Rng(seed)
    n = rng.randint(max_events + 1)
    ts = sorted(rng.uniforms(n, 0.0, 1.0 - 1e-9))
    xs = [rng.randint(w) for _ in range(n)]
    ys = [rng.randint(h) for _ in range(n)]
    ps = [1 if rng.uniform() < 0.5 else -1 for _ in range(n)]
    return stream(ts, xs, ys, ps, h=h, w=w)


# ---------------------------------------------------------------------------
# stream invariants

def test_unsorted_events_rejected():
    with pytest.raises(EventError, match="sorted"):
        stream([0.5, 0.2], [0, 0], [0, 0], [1, 1])


def test_out_of_window_rejected():
    with pytest.raises(EventError, match="window"):
        stream([1.0], [0], [0], [1])  # t == t_end violates half-open window


def test_out_of_extent_rejected():
    with pytest.raises(EventError, match="extent"):
        stream([0.1], [4], [0], [1])


def test_empty_window_rejected():
    with pytest.raises(EventError):
        stream([], [], [], [], t0=1.0, t1=1.0)


# ---------------------------------------------------------------------------
# voxelize

def test_voxelize_empty_stream():
    grid = voxelize(stream([], [], [], []), 5)
    assert grid.shape == (2, 5, 4, 4)
    assert np.all(grid == 0.0)


def test_voxelize_single_event():
    grid = voxelize(stream([0.0], [2], [1], [1]), 5)
    assert grid.sum() == 1.0
    assert grid[1, 0, 1, 2] == 1.0


def test_voxelize_clamps_last_bin():
    t = np.nextafter(1.0, 0.0)
    grid = voxelize(stream([t], [0], [0], [-1]), 5)
    assert grid[0, 4, 0, 0] == 1.0


def test_voxelize_rejects_bad_bins():
    with pytest.raises(EventError):
        voxelize(stream([], [], [], []), 0)


def test_voxelize_mass_conservation_1000_streams():
    for seed in range(1000):
        s = random_stream(seed)
        grid = voxelize(s, 5)
        assert grid.sum() == len(s)
        assert np.all(grid >= 0.0)


# ---------------------------------------------------------------------------
# edge strength

def test_edge_strength_zero_events_pixel():
    e = edge_strength(stream([0.1], [0], [0], [1]))
    assert e[3, 3] == 0.0


def test_edge_strength_synchronized_max_pixel():
    # all events of the busiest pixel share one timestamp: variance 0
    e = edge_strength(stream([0.3, 0.3, 0.3], [1, 1, 1], [2, 2, 2], [1, 1, 1]))
    assert e[2, 1] == 1.0


def test_edge_strength_endpoint_pixel_scores_zero():
    # two events at t0 and just under t1: variance = (L/2)^2 so score 0
    t1 = np.nextafter(1.0, 0.0)
    s = stream([0.0, t1], [1, 1], [1, 1], [1, 1])
    e = edge_strength(s)
    assert e[1, 1] == pytest.approx(0.0, abs=1e-9)


def test_edge_strength_range_1000_streams():
    for seed in range(1000):
        e = edge_strength(random_stream(seed + 5000))
        assert np.all(e >= 0.0) and np.all(e <= 1.0)


def test_edge_strength_order_permutation_invariant():
    rng = Rng(17)
    base = random_stream(901)
    # shuffle same-timestamp groups by re-sorting on a different tiebreak
    order = np.lexsort((np.array(rng.uniforms(len(base))), base.t))
    s2 = EventStream(base.t[order], base.x[order], base.y[order], base.p[order],
                     base.t_start, base.t_end, base.height, base.width)
    assert np.allclose(edge_strength(base), edge_strength(s2))


def test_edge_strength_time_translation_invariant():
    base = random_stream(77)
    shifted = EventStream(base.t + 3.25, base.x, base.y, base.p,
                          base.t_start + 3.25, base.t_end + 3.25,
                          base.height, base.width)
    assert np.allclose(edge_strength(base), edge_strength(shifted), atol=1e-9)


# ---------------------------------------------------------------------------
# pooling and splitting

@pytest.mark.parametrize("c", [0.0, 0.37, 1.0])
def test_pool_edge_constant(c):
    e = np.full((8, 8), c)
    for s in (1, 2, 3):
        out = pool_edge(e, s)
        assert out.shape == (8 // 2 ** s, 8 // 2 ** s)
        assert np.allclose(out, c)


def test_pool_edge_block_mean():
    e = np.zeros((2, 2))
    e[0, 0] = 1.0
    assert pool_edge(e, 1) == pytest.approx(np.array([[0.25]]))


def test_pool_edge_indivisible_errors():
    with pytest.raises(EventError):
        pool_edge(np.zeros((6, 6)), 2)


def test_split_window_midpoint_goes_future():
    s = stream([0.5], [0], [0], [1])
    past, future = split_window(s)
    assert len(past) == 0 and len(future) == 1
    assert past.t_start == 0.0 and past.t_end == 0.5
    assert future.t_start == 0.5 and future.t_end == 1.0


def test_split_window_empty_future_is_valid():
    s = stream([0.1, 0.2], [0, 1], [0, 1], [1, -1])
    past, future = split_window(s)
    assert len(past) == 2 and len(future) == 0
    assert future.t_end == 1.0


def test_split_window_uniform_partition():
    ts = [k / 10 for k in range(10)]
    s = stream(ts, [0] * 10, [0] * 10, [1] * 10)
    past, future = split_window(s)
    assert list(past.t) == [0.0, 0.1, 0.2, 0.3, 0.4]
    assert list(future.t) == [0.5, 0.6, 0.7, 0.8, 0.9]


# ---------------------------------------------------------------------------
# encoder and pretraining loss

def test_event_encode_zero_grid_zero_pyramid():
    enc = EventEncoder.create(Rng(1), (4, 6, 8), bins=5)
    pyr = event_encode(np.zeros((2, 5, 16, 16)), enc)
    assert [f.shape for f in pyr] == [(4, 8, 8), (6, 4, 4), (8, 2, 2)]
    for f in pyr:
        assert np.all(f.data == 0.0)


def test_event_encode_extents_32():
    enc = EventEncoder.create(Rng(1), (4, 6, 8), bins=5)
    pyr = event_encode(np.ones((2, 5, 32, 32)), enc)
    assert [f.shape[1:] for f in pyr] == [(16, 16), (8, 8), (4, 4)]


def test_frozen_encoder_blocks_gradient():
    enc = EventEncoder.create(Rng(2), (3, 4, 5), bins=5).freeze()
    pyr = event_encode(np.ones((2, 5, 8, 8)), enc)
    assert all(not f.requires_grad for f in pyr)
    for p in enc.params.values():
        assert not p.requires_grad


def test_edge_pretrain_loss_zero_when_exact():
    enc = EventEncoder.create(Rng(3), (3, 4, 5), bins=5)
    heads = make_edge_heads(Rng(4), (3, 4, 5))
    pyr = event_encode(np.zeros((2, 5, 8, 8)), enc)
    # zero features + zero head bias -> sigmoid(0) = 0.5 predictions
    targets = [np.full(f.shape[1:], 0.5) for f in pyr]
    loss = edge_pretrain_loss(pyr, targets, heads)
    assert float(loss.data) == pytest.approx(0.0, abs=1e-12)


def test_edge_pretrain_loss_half_offset_single_scale():
    enc = EventEncoder.create(Rng(3), (3, 4, 5), bins=5)
    heads = make_edge_heads(Rng(4), (3, 4, 5))
    pyr = event_encode(np.zeros((2, 5, 8, 8)), enc)
    targets = [np.full(f.shape[1:], 0.5) for f in pyr]
    targets[1] = np.zeros(pyr[1].shape[1:])  # one scale off by 0.5 everywhere
    loss = edge_pretrain_loss(pyr, targets, heads)
    assert float(loss.data) == pytest.approx(0.5 / 3, abs=1e-12)


def test_edge_pretrain_loss_gradcheck():
    # dense random voxel keeps every relu pre-activation away from its kink
    rng = Rng(5)
    enc = EventEncoder.create(rng, (2, 3, 4), bins=5)
    heads = make_edge_heads(rng, (2, 3, 4))
    vox = np.array(Rng(8).uniforms(2 * 5 * 8 * 8, 0.1, 2.0)).reshape(2, 5, 8, 8)
    targets = [np.array(Rng(9).uniforms((8 // 2 ** s) ** 2)).reshape(8 // 2 ** s, -1)
               for s in (1, 2, 3)]
    names = sorted(heads) + sorted(enc.params)

    def f(ps):
        pmap = dict(zip(names, ps))
        live = EventEncoder((2, 3, 4), 5,
                            {k: pmap[k] for k in enc.params})
        pyr = event_encode(vox, live)
        return edge_pretrain_loss(pyr, targets, {k: pmap[k] for k in heads})

    params = [heads[k] for k in sorted(heads)] + [enc.params[k] for k in sorted(enc.params)]
    assert ad.finite_diff_check(f, params) < 1e-4


def test_edge_pretrain_loss_extent_mismatch():
    enc = EventEncoder.create(Rng(3), (3, 4, 5), bins=5)
    heads = make_edge_heads(Rng(4), (3, 4, 5))
    pyr = event_encode(np.zeros((2, 5, 8, 8)), enc)
    bad = [np.zeros((7, 7))] * 3
    with pytest.raises(EventError):
        edge_pretrain_loss(pyr, bad, heads)
