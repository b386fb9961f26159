import numpy as np
import pytest
import torch

from vecvad.completion import (CompletionModelSpec, TrainConfig, TrainingError, build_model,
                               completion_loss, forward, load_checkpoint, pack_context,
                               patch_score, patch_scores, predict, save_checkpoint, train)
from vecvad.events import IncompleteEvent, SpatioTemporalCube, erase_patch
from vecvad.roi import BoundingBox

MINI = (4, 8)


def smooth_cube(depth=5, size=32):
    _, xx = np.mgrid[0:size, 0:size]
    tint = np.array([1.0, 0.8, 0.6])
    patches = np.stack([0.5 + 0.4 * np.sin((xx + 2 * k) / 5.0)[..., None] * tint
                        for k in range(depth)]).astype(np.float32)
    return SpatioTemporalCube(patches, BoundingBox(0, 0, size, size), "v", depth - 1, 0)


def test_pack_context_stacks_patches_in_time_order(rng):
    ctx = rng.random((4, 6, 5, 3)).astype(np.float32)
    x = pack_context(ctx)
    assert x.shape == (12, 6, 5)
    for k in range(4):
        for c in range(3):
            np.testing.assert_array_equal(x[3 * k + c], ctx[k, :, :, c])


@pytest.mark.parametrize("kind,channels", [("appearance", 3), ("motion", 2)])
def test_full_size_output_shapes(kind, channels, rng):
    model = build_model(CompletionModelSpec(kind, 5), seed=0)
    ie = IncompleteEvent(rng.random((4, 32, 32, 3)).astype(np.float32), 5, 0)
    out = forward(model, ie)
    assert out.shape == (32, 32, channels)
    assert np.isfinite(out).all()
    if kind == "appearance":
        assert ((out >= 0) & (out <= 1)).all()


def test_forward_rejects_wrong_type(rng):
    model = build_model(CompletionModelSpec("appearance", 2, widths=MINI))
    with pytest.raises(ValueError):
        forward(model, IncompleteEvent(np.zeros((4, 32, 32, 3), np.float32), 3, 0))


def test_untrained_model_is_deterministic(rng):
    spec = CompletionModelSpec("motion", 1, widths=MINI)
    ie = IncompleteEvent(rng.random((4, 32, 32, 3)).astype(np.float32), 1, 0)
    a = forward(build_model(spec, seed=3), ie)
    b = forward(build_model(spec, seed=3), ie)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, forward(build_model(spec, seed=3), ie))


def test_spec_validation():
    with pytest.raises(ValueError):
        CompletionModelSpec("appearance", 6)
    with pytest.raises(ValueError):
        CompletionModelSpec("depth", 1)
    with pytest.raises(ValueError):
        CompletionModelSpec("appearance", 1, height=30)


def test_loss_zero_iff_equal(rng):
    t = torch.from_numpy(rng.random((1, 3, 8, 8)))
    assert completion_loss(t, t).item() == 0
    assert completion_loss(t, t, reduction="sum").item() == 0
    assert completion_loss(t + 1e-3, t).item() > 0


def test_loss_reductions_match_definition(rng):
    a, b = rng.random((2, 4, 3, 5, 5))
    diff2 = (a - b) ** 2
    per_event_sum = diff2.reshape(4, -1).sum(axis=1)
    ta, tb = torch.from_numpy(a), torch.from_numpy(b)
    assert completion_loss(ta, tb, reduction="sum").item() == pytest.approx(per_event_sum.mean())
    assert completion_loss(ta, tb).item() == pytest.approx(per_event_sum.mean() / 75)


def test_patch_score():
    z, o = np.zeros((32, 32, 3)), np.ones((32, 32, 3))
    assert patch_score(z, z) == 0.0
    assert patch_score(z, o) == 1.0
    with pytest.raises(ValueError):
        patch_score(z, np.zeros((32, 32, 2)))


def test_patch_score_matches_loop(rng):
    a, b = rng.random((2, 6, 7, 3))
    total = 0.0
    for idx in np.ndindex(a.shape):
        total += (a[idx] - b[idx]) ** 2
    assert patch_score(a, b) == pytest.approx(total / a.size, abs=1e-9)
    batch = rng.random((3, 6, 7, 2)), rng.random((3, 6, 7, 2))
    np.testing.assert_allclose(patch_scores(*batch),
                               [patch_score(batch[0][k], batch[1][k]) for k in range(3)])


def memorize(steps=200, widths=(8, 16), seed=0):
    stc = smooth_cube()
    ie, target = erase_patch(stc, 3)
    model = build_model(CompletionModelSpec("appearance", 3, widths=widths), seed=seed)
    cfg = TrainConfig(epochs=1000, batch_size=10, max_steps=steps, seed=seed)
    return model, train(model, [(ie, target)] * 50, cfg), stc


def test_memorization_reaches_small_loss():
    model, result, stc = memorize()
    assert len(result.step_losses) == 200
    assert result.final_loss < 1e-3
    assert result.epoch_losses[-1] <= result.epoch_losses[0]


def test_seeded_training_is_reproducible():
    _, a, _ = memorize(steps=30)
    _, b, _ = memorize(steps=30)
    assert a.step_losses == b.step_losses


def test_training_one_type_leaves_other_models_untouched():
    other = build_model(CompletionModelSpec("appearance", 1, widths=MINI), seed=5)
    before = {k: v.clone() for k, v in other.state_dict().items()}
    memorize(steps=5)
    for k, v in other.state_dict().items():
        assert torch.equal(v, before[k])


def test_empty_stream_and_mismatched_samples():
    model = build_model(CompletionModelSpec("appearance", 5, widths=MINI))
    with pytest.raises(TrainingError):
        train(model, [], TrainConfig(epochs=1))
    ie, target = erase_patch(smooth_cube(), 2)
    with pytest.raises(ValueError):
        train(model, [(ie, target)], TrainConfig(epochs=1))
    motion = build_model(CompletionModelSpec("motion", 2, widths=MINI))
    with pytest.raises(ValueError):
        train(motion, [(ie, target)], TrainConfig(epochs=1))


def test_non_finite_loss_aborts():
    ie, target = erase_patch(smooth_cube(), 5)
    target = target.copy()
    target[0, 0, 0] = np.nan
    model = build_model(CompletionModelSpec("appearance", 5, widths=MINI))
    with pytest.raises(TrainingError, match="non-finite"):
        train(model, [(ie, target)] * 4, TrainConfig(epochs=1, batch_size=2))


def test_checkpoint_roundtrip(tmp_path, rng):
    model, result, stc = memorize(steps=3)
    save_checkpoint(tmp_path / "m.pt", model, result, TrainConfig())
    loaded, payload = load_checkpoint(tmp_path / "m.pt")
    assert loaded.spec == model.spec
    assert payload["epoch_losses"] == result.epoch_losses
    ctx = rng.random((2, 4, 32, 32, 3)).astype(np.float32)
    np.testing.assert_array_equal(predict(loaded, ctx), predict(model, ctx))


def finite_difference_check(reduction, seed=0, per_tensor=6, eps=1e-6):
    """Largest relative error between autograd and central differences over sampled weights."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    spec = CompletionModelSpec("appearance", 3, depth=5, height=8, width=8, widths=(4, 4))
    model = build_model(spec, seed=seed).double()
    x = torch.from_numpy(rng.random((2, 12, 8, 8)))
    y = torch.from_numpy(rng.random((2, 3, 8, 8)))

    def loss_value():
        with torch.no_grad():
            return completion_loss(model(x), y, 2.0, reduction).item()

    model.zero_grad()
    completion_loss(model(x), y, 2.0, reduction).backward()
    worst = 0.0
    for param in model.parameters():
        flat = param.data.view(-1)
        grad = param.grad.view(-1)
        for k in rng.choice(flat.numel(), size=min(per_tensor, flat.numel()), replace=False):
            orig = flat[k].item()
            flat[k] = orig + eps
            up = loss_value()
            flat[k] = orig - eps
            down = loss_value()
            flat[k] = orig
            numeric = (up - down) / (2 * eps)
            analytic = grad[k].item()
            scale = max(abs(numeric), abs(analytic))
            if scale < 1e-9:
                continue
            worst = max(worst, abs(numeric - analytic) / scale)
    return worst


@pytest.mark.parametrize("reduction", ["mean", "sum"])
def test_gradient_matches_finite_differences(reduction):
    assert finite_difference_check(reduction) < 1e-4
