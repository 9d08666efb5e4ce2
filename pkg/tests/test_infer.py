import numpy as np
import pytest

import pixmatch as pm
from pixmatch.infer import mask_from_quarter, mask_to_quarter, offsets_to_full
from pixmatch.synth import ObjectSpec, SceneSpec, gen_sequence


def test_split_classes_examples():
    mask = np.array([[0, 1], [1, 2]], np.uint8)
    maps = pm.split_classes(mask, [0, 1, 2])
    assert np.array_equal(maps[0], [[1, 0], [0, 0]])
    assert np.array_equal(maps[1], [[0, 1], [1, 0]])
    assert np.array_equal(maps[2], [[0, 0], [0, 1]])
    assert np.array_equal(maps.sum(axis=0), np.ones((2, 2)))


def test_split_classes_single_class():
    maps = pm.split_classes(np.zeros((3, 3), np.uint8), [0, 1])
    assert np.all(maps[0] == 1) and np.all(maps[1] == 0)


def test_split_classes_roundtrip(rng):
    mask = rng.integers(0, 4, (6, 6)).astype(np.uint8)
    maps = pm.split_classes(mask, [0, 1, 2, 3])
    assert np.array_equal(maps.argmax(axis=0), mask)


def test_split_classes_stray_value():
    with pytest.raises(ValueError):
        pm.split_classes(np.array([[5]]), [0, 1])


def test_mask_quarter_roundtrip_block_aligned():
    mask = np.zeros((16, 16), np.uint8)
    mask[4:12, 8:16] = 1
    q = mask_to_quarter(mask)
    assert np.array_equal(mask_from_quarter(q), mask)


def test_offsets_to_full_units():
    off = np.zeros((1, 2, 2, 2), np.float32)
    off[0, 1, 0, 0] = 1.5  # 1.5 quarter cells = 6 full-resolution pixels
    full = offsets_to_full(off)
    assert full.shape == (1, 2, 8, 8)
    assert full[0, 1, 0, 0] == 6.0 and full[0, 1, 3, 3] == 6.0
    assert full[0, 1, 4, 4] == 0.0


def test_propagate_zero_offsets_identity(small_params, rng):
    frame = (rng.uniform(0, 255, (32, 32, 3))).astype(np.uint8)
    mask = rng.integers(0, 3, (32, 32)).astype(np.uint8)
    out = pm.propagate_mask(small_params, frame, frame, mask, [0, 1, 2],
                            offsets=np.zeros((1, 2, 8, 8), np.float32))
    assert np.array_equal(out, mask)


def test_propagate_integer_cell_shift_background_fill(small_params):
    # block-scale version of the one-cell shift: object in quarter-cells
    # [[1,1,0],[1,1,0]], constant offset (0,+1) cell shifts it one cell left;
    # the vacated cells read out-of-bounds zeros for every class, tie -> 0
    frame = np.zeros((12, 12, 3), np.uint8)
    mask = np.zeros((12, 12), np.uint8)
    mask[0:8, 0:8] = 1
    off = np.zeros((1, 2, 3, 3), np.float32)
    off[0, 1] = 1.0
    out = pm.propagate_mask(small_params, frame, frame, mask, [0, 1], offsets=off)
    want = np.zeros((12, 12), np.uint8)
    want[0:8, 0:4] = 1
    assert np.array_equal(out, want)


def test_propagate_tie_breaks_to_smaller_class(small_params):
    # sample exactly between a class-1 and a class-2 row: both score 0.5,
    # the smaller class index wins
    frame = np.zeros((8, 8, 3), np.uint8)
    mask = np.zeros((8, 8), np.uint8)
    mask[0:4] = 1
    mask[4:8] = 2
    off = np.zeros((1, 2, 2, 2), np.float32)
    off[0, 0] = 0.375  # 1.5 full-resolution pixels down
    out = pm.propagate_mask(small_params, frame, frame, mask, [0, 1, 2], offsets=off)
    assert np.all(out[2] == 1)  # row 3.5: 0.5 vs 0.5 between classes 1 and 2
    assert np.all(out[3] == 2)  # row 4.5: fully inside class 2
    assert np.all(out[7] == 0)  # row 8.5: out of bounds, every class 0, tie -> 0


def test_propagate_resolution_mismatch(small_params):
    with pytest.raises(ValueError):
        pm.propagate_mask(small_params, np.zeros((32, 32, 3), np.uint8),
                          np.zeros((32, 32, 3), np.uint8), np.zeros((8, 8), np.uint8), [0])


def test_run_sequence_static_identity_exact(small_params):
    spec = SceneSpec(height=32, width=32, n_frames=5, seed=2, objects=[
        ObjectSpec(size=12, position=(8, 8), velocity=(0, 0)),
    ])
    video = gen_sequence(spec)
    zero = lambda t: np.zeros((1, 2, 8, 8), np.float32)
    outs = pm.run_sequence(small_params, video.frames, video.masks[0], offsets_provider=zero)
    assert len(outs) == 5
    for m in outs:
        assert np.array_equal(m, video.masks[0])
        assert pm.jaccard(m, video.masks[0], 1) == 1.0


def test_run_sequence_oracle_flow_tracks_exactly(small_params):
    # integer-cell translation (4 px/frame): injecting the true motion as
    # quarter-grid offsets reproduces the ground-truth masks exactly
    spec = SceneSpec(height=32, width=32, n_frames=4, seed=3, background="noise", objects=[
        ObjectSpec(shape="rect", size=8, position=(8, 4), velocity=(0, 4)),
    ])
    video = gen_sequence(spec)

    def oracle(t):
        off = np.zeros((1, 2, 8, 8), np.float32)
        off[0, 1] = -4.0 / 4.0
        return off

    outs = pm.run_sequence(small_params, video.frames, video.masks[0], offsets_provider=oracle)
    for t in range(1, 4):
        assert np.array_equal(outs[t], video.masks[t]), t
        assert pm.jaccard(mask_to_quarter(outs[t]), mask_to_quarter(video.masks[t]), 1) == 1.0


def test_run_sequence_oracle_subcell_motion_tracks(small_params):
    # 1 px/frame is far below one quarter cell per frame; full-resolution
    # propagation still follows it exactly for block-rendered motion
    spec = SceneSpec(height=32, width=32, n_frames=8, seed=4, background="noise", objects=[
        ObjectSpec(shape="rect", size=8, position=(8, 4), velocity=(0, 1)),
    ])
    video = gen_sequence(spec)

    def oracle(t):
        off = np.zeros((1, 2, 8, 8), np.float32)
        off[0, 1] = -1.0 / 4.0
        return off

    outs = pm.run_sequence(small_params, video.frames, video.masks[0], offsets_provider=oracle)
    for t in range(1, 8):
        assert np.array_equal(outs[t], video.masks[t]), t


def test_run_sequence_two_frames(small_params):
    frames = [np.zeros((32, 32, 3), np.uint8)] * 2
    outs = pm.run_sequence(small_params, frames, np.zeros((32, 32), np.uint8))
    assert len(outs) == 2


def test_run_sequence_needs_two_frames(small_params):
    with pytest.raises(ValueError):
        pm.run_sequence(small_params, [np.zeros((32, 32, 3), np.uint8)], np.zeros((32, 32), np.uint8))


def test_run_sequence_class_closure(small_params, rng):
    spec = SceneSpec(height=32, width=32, n_frames=4, seed=5, objects=[
        ObjectSpec(size=10, position=(8, 8), velocity=(1.0, 0.5)),
    ])
    video = gen_sequence(spec)
    outs = pm.run_sequence(small_params, video.frames, video.masks[0])
    allowed = set(np.unique(video.masks[0]).tolist()) | {0}
    for m in outs:
        assert set(np.unique(m).tolist()) <= allowed


def test_run_sequence_no_parameter_updates(small_params):
    spec = SceneSpec(height=32, width=32, n_frames=4, seed=6, objects=[
        ObjectSpec(size=10, position=(8, 8), velocity=(0.5, 0.5)),
    ])
    video = gen_sequence(spec)
    before = small_params.checksum()
    pm.run_sequence(small_params, video.frames, video.masks[0])
    assert small_params.checksum() == before


def test_run_sequence_causality(small_params):
    spec = SceneSpec(height=32, width=32, n_frames=5, seed=7, objects=[
        ObjectSpec(size=10, position=(8, 8), velocity=(0.5, 1.0)),
    ])
    video = gen_sequence(spec)
    outs_full = pm.run_sequence(small_params, video.frames, video.masks[0])
    corrupted = [f.copy() for f in video.frames]
    corrupted[3] = np.zeros_like(corrupted[3])  # future frame for t <= 2
    outs_cut = pm.run_sequence(small_params, corrupted, video.masks[0])
    for t in range(3):
        assert np.array_equal(outs_full[t], outs_cut[t])


def test_refine_hook_applied(small_params):
    frames = [np.zeros((32, 32, 3), np.uint8)] * 3
    mask = np.zeros((32, 32), np.uint8)
    mask[8:16, 8:16] = 1

    def erase(m, frame):
        return np.zeros_like(m)

    outs = pm.run_sequence(small_params, frames, mask, refine=erase)
    assert outs[1].sum() == 0 and outs[2].sum() == 0
