import math

import numpy as np
import pytest

from poreflow.autodiff import AdamState
from poreflow.errors import InputError, ShapeError
from poreflow.grids import OccupancyField, VoxelGrid
from poreflow.metrics import dice
from poreflow.unet import (UNetConfig, UNetModel, binarize, build_input_stack,
                           unet_train_step)


def make_stack(rng, dims=16, no_velocity=False):
    occ0 = OccupancyField.from_mask(rng.random(dims if isinstance(dims, tuple) else (dims,) * 3) < 0.4)
    shape = occ0.values.shape
    occ1 = OccupancyField.from_mask(rng.random(shape) < 0.4)
    geo = OccupancyField.from_mask(np.ones(shape, bool))
    vel = None if no_velocity else VoxelGrid(rng.normal(size=(3, *shape)))
    return build_input_stack([occ0, occ1], vel, geo, no_velocity)


class TestArchitecture:
    def test_output_shape_matches_input(self):
        rng = np.random.default_rng(0)
        model = UNetModel(UNetConfig(base_channels=4), seed=0)
        stack = make_stack(rng, 32)
        assert model.predict_logits(stack).shape == (32, 32, 32)

    def test_padding_for_indivisible_dims(self):
        rng = np.random.default_rng(1)
        model = UNetModel(UNetConfig(base_channels=4), seed=0)
        stack = make_stack(rng, (9, 10, 11))
        out = model.predict_logits(stack)
        assert out.shape == (9, 10, 11)

    def test_encoder_channel_doubling(self):
        model = UNetModel(UNetConfig(), seed=0)
        assert model.encoder_channels() == [16, 32, 64, 128]
        for k, c in enumerate(model.encoder_channels()):
            assert c == 16 * 2 ** k
            assert model.params[f"enc{k}.conv0.w"].data.shape[0] == c

    def test_input_channel_count(self):
        assert UNetConfig(n_in=2).in_channels == 6
        assert UNetConfig(n_in=2, no_velocity=True).in_channels == 3

    def test_zeroed_head_gives_bias_logits(self):
        rng = np.random.default_rng(2)
        model = UNetModel(UNetConfig(base_channels=4), seed=0)
        model.params["head.w"].data = np.zeros_like(model.params["head.w"].data)
        model.params["head.b"].data = np.array([0.37])
        out = model.predict_logits(make_stack(rng, 16))
        assert np.allclose(out, 0.37)

    def test_wrong_channel_count_rejected(self):
        model = UNetModel(UNetConfig(base_channels=4), seed=0)
        with pytest.raises(ShapeError):
            model.predict_logits(np.zeros((4, 16, 16, 16)))

    def test_ablated_parameter_count_differs(self):
        full = UNetModel(UNetConfig(base_channels=4), seed=0)
        ablated = UNetModel(UNetConfig(base_channels=4, no_velocity=True), seed=0)
        assert full.parameter_count() > ablated.parameter_count()
        # exactly the first conv loses 3 input channels
        diff = full.parameter_count() - ablated.parameter_count()
        assert diff == 3 * 27 * 4

    def test_no_velocity_controls_channel_assembly_only(self):
        rng = np.random.default_rng(3)
        occ0 = OccupancyField.from_mask(rng.random((8, 8, 8)) < 0.5)
        occ1 = OccupancyField.from_mask(rng.random((8, 8, 8)) < 0.5)
        geo = OccupancyField.from_mask(np.ones((8, 8, 8), bool))
        stack = build_input_stack([occ0, occ1], None, geo, no_velocity=True)
        assert stack.shape == (3, 8, 8, 8)
        assert np.array_equal(stack[0], occ0.values)
        assert np.array_equal(stack[1], occ1.values)
        assert np.array_equal(stack[2], geo.values)
        with pytest.raises(InputError):
            build_input_stack([occ0, occ1], None, geo, no_velocity=False)

    def test_channel_order_full_model(self):
        rng = np.random.default_rng(4)
        occ0 = OccupancyField.from_mask(rng.random((8, 8, 8)) < 0.5)
        occ1 = OccupancyField.from_mask(rng.random((8, 8, 8)) < 0.5)
        geo = OccupancyField.from_mask(rng.random((8, 8, 8)) < 0.7)
        vel = VoxelGrid(rng.normal(size=(3, 8, 8, 8)))
        stack = build_input_stack([occ0, occ1], vel, geo)
        assert stack.shape == (6, 8, 8, 8)
        assert np.array_equal(stack[0], occ0.values)   # oldest interface first
        assert np.array_equal(stack[2], vel.data[0])
        assert np.array_equal(stack[5], geo.values)    # geometry last

    def test_eval_forward_deterministic(self):
        rng = np.random.default_rng(5)
        model = UNetModel(UNetConfig(base_channels=4), seed=0)
        stack = make_stack(rng, 16)
        a = model.predict_logits(stack)
        b = model.predict_logits(stack)
        assert np.array_equal(a, b)


class TestBinarize:
    def test_boundary_inclusive(self):
        out = binarize(np.array([[[0.0, -3.0], [2.0, -0.001]],
                                 [[1e-12, -1e-12], [5.0, -5.0]]]))
        assert out.values[0, 0, 0] == 1.0   # logit exactly 0 -> occupied
        assert out.values[0, 0, 1] == 0.0
        assert out.values[0, 1, 1] == 0.0

    def test_sign_oracle(self):
        rng = np.random.default_rng(6)
        logits = rng.normal(size=(5, 6, 7))
        out = binarize(logits)
        assert np.array_equal(out.values, (logits >= 0).astype(float))

    def test_nonfinite_rejected(self):
        bad = np.zeros((2, 2, 2))
        bad[0, 0, 0] = np.inf
        with pytest.raises(InputError):
            binarize(bad)


class TestTraining:
    def test_perfect_logits_tiny_loss(self):
        rng = np.random.default_rng(7)
        target = (rng.random((1, 1, 8, 8, 8)) < 0.5).astype(float)
        model = UNetModel(UNetConfig(base_channels=2), seed=0)
        # bypass network: check the loss operator directly through the step API
        from poreflow import autodiff as ad

        logits = ad.Tensor(np.where(target > 0.5, 20.0, -20.0))
        loss = ad.bce_with_logits_loss(logits, target)
        assert float(loss.data) < 1e-6

    def test_uniform_zero_logits_ln2(self):
        from poreflow import autodiff as ad

        t = (np.random.default_rng(8).random((4, 4, 4)) < 0.5).astype(float)
        loss = ad.bce_with_logits_loss(ad.Tensor(np.zeros((4, 4, 4))), t)
        assert float(loss.data) == pytest.approx(math.log(2), abs=1e-12)

    def test_non_binary_target_rejected(self):
        rng = np.random.default_rng(9)
        model = UNetModel(UNetConfig(base_channels=2), seed=0)
        stack = make_stack(rng, 8)
        with pytest.raises(InputError):
            unet_train_step(model, stack[None], np.full((1, 1, 8, 8, 8), 0.5),
                            AdamState(lr=1e-3))

    def test_overfit_single_transition(self):
        rng = np.random.default_rng(10)
        dims = 12
        zz, yy, xx = np.meshgrid(*[np.arange(dims)] * 3, indexing="ij")
        occ0 = OccupancyField.from_mask(xx <= 4)
        occ1 = OccupancyField.from_mask(xx <= 5)
        target_occ = OccupancyField.from_mask(xx <= 6)
        geo = OccupancyField.from_mask(np.ones((dims,) * 3, bool))
        vel = VoxelGrid(np.ones((3, dims, dims, dims)) * 0.5)
        stack = build_input_stack([occ0, occ1], vel, geo)
        model = UNetModel(UNetConfig(base_channels=4), seed=1)
        adam = AdamState(lr=1e-3)
        target = target_occ.values[None, None]
        for _ in range(120):
            unet_train_step(model, stack[None], target, adam)
        pred = binarize(model.predict_logits(stack))
        assert dice(pred, target_occ) > 0.95


class TestPersistence:
    def test_save_load_roundtrip(self, tmp_path):
        rng = np.random.default_rng(11)
        model = UNetModel(UNetConfig(base_channels=4), seed=0)
        stack = make_stack(rng, 16)
        # move running stats off their initial values
        unet_train_step(model, stack[None],
                        (rng.random((1, 1, 16, 16, 16)) < 0.5).astype(float),
                        AdamState(lr=1e-4))
        a = model.predict_logits(stack)
        p = tmp_path / "u.ckpt"
        model.save(p)
        back = UNetModel.load(p)
        b = back.predict_logits(stack)
        assert np.allclose(a, b, atol=1e-4)  # f32 storage quantization

    def test_channel_order_recorded(self, tmp_path):
        from poreflow.autodiff import load_checkpoint

        model = UNetModel(UNetConfig(base_channels=2), seed=0)
        p = tmp_path / "u.ckpt"
        model.save(p)
        _, meta = load_checkpoint(p)
        assert "S(t-N_in+1)" in meta["channel_order"]
        assert meta["config"]["n_in"] == 2
