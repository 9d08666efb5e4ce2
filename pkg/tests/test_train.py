import math

import numpy as np
import pytest

import pixmatch as pm
from pixmatch.synth import ObjectSpec, SceneSpec, gen_sequence
from pixmatch.tensor import Tensor
from pixmatch.train import OptimizerState


def make_videos(n=2, frames=6, size=32, static=False, with_masks=True, seed=0):
    vids = []
    for i in range(n):
        spec = SceneSpec(height=size, width=size, n_frames=frames, seed=seed + i, objects=[
            ObjectSpec(size=12, position=(8, 6), velocity=(0, 0) if static else (0.5, 1.0)),
        ])
        v = gen_sequence(spec, name=f"v{i}")
        if not with_masks:
            v.masks = None
        vids.append(v)
    return vids


# --- sample_pair -----------------------------------------------------------

def test_sample_pair_gap():
    video = make_videos(1, frames=20)[0]
    ref, tar = pm.sample_pair(video, t=5, gap=5)
    assert ref is video.frames[0] and tar is video.frames[5]


def test_sample_pair_zero_gap():
    video = make_videos(1, frames=6)[0]
    ref, tar = pm.sample_pair(video, t=3, gap=0)
    assert ref is tar is video.frames[3]


def test_sample_pair_out_of_range():
    video = make_videos(1, frames=6)[0]
    with pytest.raises(IndexError):
        pm.sample_pair(video, t=3, gap=5)


# --- reconstruction_loss ---------------------------------------------------

def test_loss_zero_when_equal(rng):
    x = Tensor(rng.uniform(0, 1, (2, 3, 4, 4)))
    assert pm.reconstruction_loss(x, Tensor(x.data.copy())).item() == 0.0


def test_loss_unit_difference_everywhere():
    pred = Tensor(np.zeros((1, 3, 4, 4)))
    target = Tensor(np.ones((1, 3, 4, 4)))
    assert pm.reconstruction_loss(pred, target).item() == pytest.approx(3.0)


def test_loss_single_pixel_case():
    # 2x2 image, one pixel off by 2 in one channel: 4 / 4 pixels = 1.0
    pred = Tensor(np.zeros((1, 3, 2, 2)))
    target = Tensor(np.zeros((1, 3, 2, 2)))
    target.data[0, 1, 0, 1] = 2.0
    assert pm.reconstruction_loss(pred, target).item() == pytest.approx(1.0)


def test_loss_shape_mismatch():
    with pytest.raises(ValueError):
        pm.reconstruction_loss(Tensor(np.zeros((1, 3, 2, 2))), Tensor(np.zeros((1, 3, 4, 4))))


def test_loss_invariant_under_joint_permutation(rng):
    pred = rng.uniform(0, 1, (1, 3, 4, 4))
    target = rng.uniform(0, 1, (1, 3, 4, 4))
    perm = rng.permutation(16)
    pp = pred.reshape(1, 3, 16)[:, :, perm].reshape(1, 3, 4, 4)
    tp = target.reshape(1, 3, 16)[:, :, perm].reshape(1, 3, 4, 4)
    a = pm.reconstruction_loss(Tensor(pred), Tensor(target)).item()
    b = pm.reconstruction_loss(Tensor(pp), Tensor(tp)).item()
    assert a == pytest.approx(b, rel=1e-12)


def test_loss_gradient(rng):
    pred = Tensor(rng.uniform(0, 1, (1, 3, 4, 4)))
    target = Tensor(rng.uniform(0, 1, (1, 3, 4, 4)))
    err = pm.grad_check(lambda p: pm.reconstruction_loss(p, Tensor(target.data)), [pred])
    assert err < 1e-6


# --- poly_lr ---------------------------------------------------------------

def test_poly_lr_initial():
    assert pm.poly_lr(0, 100, 0.001) == pytest.approx(0.001)


def test_poly_lr_final_zero():
    assert pm.poly_lr(100, 100, 0.001) == 0.0


def test_poly_lr_midpoint():
    assert pm.poly_lr(50, 100, 0.001) == pytest.approx(0.001 * 0.5 ** 0.9, abs=1e-12)
    assert pm.poly_lr(50, 100, 0.001) == pytest.approx(5.359e-4, abs=1e-7)


def test_poly_lr_strictly_decreasing():
    vals = [pm.poly_lr(e, 40, 0.01) for e in range(41)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_poly_lr_range_error():
    with pytest.raises(ValueError):
        pm.poly_lr(5, 4, 0.001)


# --- sgd_step ----------------------------------------------------------------

def test_sgd_vanilla():
    p = Tensor(np.array([1.0, 2.0]))
    g = np.array([0.5, -0.5])
    pm.sgd_step([p], [g], OptimizerState(), lr=0.1, momentum=0.0, weight_decay=0.0)
    assert np.allclose(p.data, [0.95, 2.05])


def test_sgd_momentum_two_step_unroll():
    p = Tensor(np.array([0.0], np.float64))
    g = np.array([1.0])
    st = OptimizerState()
    pm.sgd_step([p], [g.copy()], st, lr=1.0, momentum=0.9, weight_decay=0.0)
    assert p.data[0] == pytest.approx(-1.0, abs=1e-12)
    pm.sgd_step([p], [g.copy()], st, lr=1.0, momentum=0.9, weight_decay=0.0)
    assert p.data[0] == pytest.approx(-1.0 - 1.9, abs=1e-12)


def test_sgd_weight_decay_only():
    p = Tensor(np.array([1.0], np.float64))
    pm.sgd_step([p], [np.array([0.0])], OptimizerState(), lr=0.001, momentum=0.0, weight_decay=0.0005)
    assert p.data[0] == pytest.approx(1.0 - 5e-7, abs=1e-15)


def test_sgd_decay_mask():
    p1 = Tensor(np.array([1.0]))
    p2 = Tensor(np.array([1.0]))
    pm.sgd_step([p1, p2], [np.zeros(1), np.zeros(1)], OptimizerState(), lr=1.0,
                momentum=0.0, weight_decay=0.1, decay_mask=[True, False])
    assert p1.data[0] == pytest.approx(0.9)
    assert p2.data[0] == pytest.approx(1.0)


def test_sgd_rejects_nan_gradient():
    p = Tensor(np.array([1.0]))
    with pytest.raises(FloatingPointError):
        pm.sgd_step([p], [np.array([math.nan])], OptimizerState(), 0.1, 0.9, 0.0)


# --- train loop --------------------------------------------------------------

def small_cfg(**kw):
    base = dict(epochs=2, frame_gap=2, batch_size=4, seed=3, variant="deform",
                height=32, width=32, lr_init=0.001)
    base.update(kw)
    return pm.TrainConfig(**base)


def test_train_static_video_loss_does_not_increase():
    vids = make_videos(2, frames=6, static=True)
    res = pm.train(vids, small_cfg(epochs=3))
    assert res.epoch_losses[-1] <= res.epoch_losses[0] + 1e-9


def test_train_deterministic_checkpoints():
    blobs = []
    for _ in range(2):
        vids = make_videos(2, frames=6)
        res = pm.train(vids, small_cfg())
        ck = pm.checkpoint_from_params(res.params, res.state)
        blobs.append(b"".join(v.tobytes() for v in ck.tensors.values()))
    assert blobs[0] == blobs[1]


def test_train_never_reads_masks():
    vids = make_videos(2, frames=6, with_masks=False)
    res = pm.train(vids, small_cfg())
    assert len(res.epoch_losses) == 2


def test_train_requires_enough_frames():
    vids = make_videos(1, frames=3)
    with pytest.raises(ValueError):
        pm.train(vids, small_cfg(frame_gap=5))


def test_train_empty_dataset():
    with pytest.raises(ValueError):
        pm.train([], small_cfg())


def test_train_log_lines_format():
    vids = make_videos(1, frames=5)
    res = pm.train(vids, small_cfg(epochs=1))
    parts = res.log_lines[0].split()
    assert len(parts) == 4
    int(parts[0]), int(parts[1]), float(parts[2]), float(parts[3])


def test_train_preserves_parameter_inventory():
    vids = make_videos(1, frames=5)
    params = pm.build_model(pm.ModelConfig(height=32, width=32, seed=3))
    before = [(n, t.data.shape) for n, t, _ in params.named_params()]
    pm.train(vids, small_cfg(epochs=1), params=params)
    after = [(n, t.data.shape) for n, t, _ in params.named_params()]
    assert before == after


def test_train_updates_every_trainable_parameter():
    vids = make_videos(2, frames=6)
    params = pm.build_model(pm.ModelConfig(height=32, width=32, seed=3))
    start = {n: t.data.copy() for n, t, _ in params.named_params()}
    pm.train(vids, small_cfg(epochs=1), params=params)
    moved = [n for n, t, _ in params.named_params() if not np.array_equal(start[n], t.data)]
    assert len(moved) == len(start)
