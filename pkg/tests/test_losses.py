"""Pretraining loss terms, total objective composition, and task losses."""

import math

import numpy as np
import pytest

from voxformer import numerics as nx
from voxformer.errors import ShapeMismatch
from voxformer.model import Model, toy_config
from voxformer.numerics import RngState, Tensor, backward, tape
from voxformer.numerics.gradcheck import check_gradients
from voxformer.train import (
    cce_loss,
    loss_intensity,
    loss_l1,
    loss_perceptual,
    mse_loss,
    pretrain_total,
    volume_to_slices,
)


@pytest.fixture(scope="module")
def model():
    return Model(toy_config(dropout_p=0.0), seed=0)


class TestL1:
    def test_zero_on_equal(self):
        x = Tensor(np.random.default_rng(0).standard_normal((2, 1, 4, 4, 4)).astype(np.float32))
        assert loss_l1(x, x).item() == 0.0

    def test_unit_shift(self):
        t = Tensor(np.zeros((2, 1, 3, 3, 3), np.float32))
        r = Tensor(np.ones((2, 1, 3, 3, 3), np.float32))
        assert loss_l1(r, t).item() == pytest.approx(1.0)

    def test_matches_direct_mean(self):
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal((3, 1, 4, 4, 4)), rng.standard_normal((3, 1, 4, 4, 4))
        got = loss_l1(Tensor(a, dtype=np.float64), Tensor(b, dtype=np.float64)).item()
        assert got == pytest.approx(float(np.mean(np.abs(a - b))), abs=1e-7)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            loss_l1(Tensor(np.zeros((1, 1, 2, 2, 2))), Tensor(np.zeros((1, 1, 2, 2, 3))))


class TestIntensity:
    def test_empty_mask_zero(self):
        r = Tensor(np.ones((1, 1, 2, 2, 2), np.float32))
        t = Tensor(np.zeros((1, 1, 2, 2, 2), np.float32))
        mask = np.zeros((1, 1, 2, 2, 2), bool)
        assert loss_intensity(r, t, mask).item() == 0.0

    def test_full_mask_equals_l1(self):
        rng = np.random.default_rng(2)
        r = Tensor(rng.standard_normal((2, 1, 3, 3, 3)).astype(np.float32))
        t = Tensor(rng.standard_normal((2, 1, 3, 3, 3)).astype(np.float32))
        mask = np.ones((2, 1, 3, 3, 3), bool)
        assert loss_intensity(r, t, mask).item() == pytest.approx(loss_l1(r, t).item(), abs=1e-7)

    def test_half_mask_hand_computed(self):
        r = np.zeros((1, 1, 2, 2, 1), np.float32)
        t = np.array([1.0, 2.0, 3.0, 4.0], np.float32).reshape(1, 1, 2, 2, 1)
        mask = np.array([True, True, False, False]).reshape(1, 1, 2, 2, 1)
        got = loss_intensity(Tensor(r), Tensor(t), mask).item()
        assert got == pytest.approx((1.0 + 2.0) / 2)


class TestPerceptual:
    def test_zero_on_equal(self, model):
        x = Tensor(np.random.default_rng(3).standard_normal((2, 1, 16, 16, 16)).astype(np.float32))
        assert loss_perceptual(x, x, model).item() == 0.0

    def test_symmetry(self, model):
        rng = np.random.default_rng(4)
        a = Tensor(rng.standard_normal((1, 1, 16, 16, 16)).astype(np.float32))
        b = Tensor(rng.standard_normal((1, 1, 16, 16, 16)).astype(np.float32))
        assert loss_perceptual(a, b, model).item() == pytest.approx(
            loss_perceptual(b, a, model).item(), rel=1e-6)

    def test_single_slice_matches_direct_feature_distance(self, model):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((1, 1, 16, 16, 1)).astype(np.float32)
        b = rng.standard_normal((1, 1, 16, 16, 1)).astype(np.float32)
        got = loss_perceptual(Tensor(a), Tensor(b), model).item()
        fa = model.perceptual_features(Tensor(a[:, :, :, :, 0]))
        fb = model.perceptual_features(Tensor(b[:, :, :, :, 0]))
        want = float(np.mean((fa[0].numpy() - fb[0].numpy()) ** 2)
                     + np.mean((fa[1].numpy() - fb[1].numpy()) ** 2))
        assert got == pytest.approx(want, rel=1e-6)

    def test_slicing_layout(self):
        vol = np.arange(2 * 1 * 3 * 4 * 5).reshape(2, 1, 3, 4, 5).astype(np.float32)
        slices = volume_to_slices(Tensor(vol)).numpy()
        assert slices.shape == (10, 1, 3, 4)
        np.testing.assert_array_equal(slices[0, 0], vol[0, 0, :, :, 0])
        np.testing.assert_array_equal(slices[5, 0], vol[1, 0, :, :, 0])


class TestTotal:
    def test_all_on_zero_on_equal(self, model):
        x = Tensor(np.random.default_rng(6).standard_normal((1, 1, 16, 16, 16)).astype(np.float32))
        mask = np.ones((1, 1, 16, 16, 16), bool)
        total, terms = pretrain_total(x, x, mask, model)
        assert total.item() == 0.0
        assert terms["total"] == 0.0

    def test_only_l1(self, model):
        rng = np.random.default_rng(7)
        r = Tensor(rng.standard_normal((1, 1, 16, 16, 16)).astype(np.float32))
        t = Tensor(rng.standard_normal((1, 1, 16, 16, 16)).astype(np.float32))
        mask = np.ones(r.shape, bool)
        total, terms = pretrain_total(r, t, mask, model,
                                      use_intensity=False, use_perceptual=False)
        assert total.item() == pytest.approx(loss_l1(r, t).item())
        assert set(terms) == {"l1", "total"}

    def test_sum_of_independent_terms(self, model):
        rng = np.random.default_rng(8)
        r = Tensor(rng.standard_normal((2, 1, 16, 16, 16)).astype(np.float32))
        t = Tensor(rng.standard_normal((2, 1, 16, 16, 16)).astype(np.float32))
        mask = rng.random((2, 1, 16, 16, 16)) > 0.8
        total, terms = pretrain_total(r, t, mask, model)
        parts = (loss_l1(r, t).item(), loss_intensity(r, t, mask).item(),
                 loss_perceptual(r, t, model).item())
        assert total.item() == pytest.approx(sum(parts), rel=1e-6)
        # exact decomposition in float32 accumulation order
        acc = np.float32(np.float32(terms["l1"] + terms["intensity"]) + terms["perceptual"])
        assert float(acc) == terms["total"]

    def test_all_disabled_rejected(self, model):
        x = Tensor(np.zeros((1, 1, 16, 16, 16), np.float32))
        with pytest.raises(ValueError):
            pretrain_total(x, x, np.ones(x.shape, bool), model,
                           use_l1=False, use_intensity=False, use_perceptual=False)


class TestTaskLosses:
    def test_perfect_logits_near_zero_cce(self):
        logits = Tensor(np.array([[20.0, -20.0], [-20.0, 20.0]], np.float32))
        assert cce_loss(logits, np.array([0, 1])).item() == pytest.approx(0.0, abs=1e-6)

    def test_uniform_logits_ln2(self):
        logits = Tensor(np.zeros((4, 2), np.float32))
        assert cce_loss(logits, np.array([0, 1, 0, 1])).item() == pytest.approx(math.log(2), abs=1e-6)

    def test_mse_basic(self):
        preds = Tensor(np.array([[1.0], [3.0]], np.float32))
        assert mse_loss(preds, np.array([0.0, 1.0])).item() == pytest.approx((1 + 4) / 2)

    def test_cce_gradient_checks(self):
        logits = Tensor(np.random.default_rng(9).standard_normal((3, 4)), dtype=np.float64)
        y = np.array([1, 3, 0])
        res = check_gradients(lambda: cce_loss(logits, y), [("logits", logits)],
                              RngState(0), n_coords=8)
        assert all(r.passed for r in res)


class TestFullPipelineGradients:
    """End-to-end finite differences through pretraining and fine-tune losses."""

    @staticmethod
    def _build(seed):
        cfg = toy_config(extents=(12, 12, 12), window=3, heads=2, dropout_p=0.0)
        model = Model(cfg, seed=seed, dtype=np.float64)
        gen = np.random.default_rng(seed)
        w = Tensor(gen.standard_normal((1, 3, 2, 12, 12, 12)), dtype=np.float64)
        t = Tensor(gen.standard_normal((3, 1, 12, 12, 12)), dtype=np.float64)
        mask = gen.random((3, 1, 12, 12, 12)) > 0.8
        return model, w, t, mask

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_pretraining_loss_gradients(self, seed):
        model, w, t, mask = self._build(seed)

        def forward():
            recon = model.stage2_forward(w)
            recon = nx.reshape(recon, (3, 1, 12, 12, 12))
            total, _ = pretrain_total(recon, t, mask, model)
            return total

        names = sorted(model.trainable_parameters())
        rng = RngState(seed)
        pick = [names[i] for i in rng.choice(len(names), size=25, replace=False)]
        res = check_gradients(forward, [(n, model.params[n]) for n in pick],
                              rng, n_coords=3, rtol=1e-3)
        bad = [r for r in res if not r.passed]
        assert not bad, [(r.name, r.failures[:1]) for r in bad]

    @pytest.mark.parametrize("seed", [0, 1])
    def test_finetune_loss_gradients(self, seed):
        model, w, _, _ = self._build(seed)
        model.ensure_head("classification", 2)
        y = np.array([1])

        def forward():
            return cce_loss(model.classify_windows(w), y)

        names = [n for n in sorted(model.trainable_parameters())
                 if not n.startswith("decoder.")]
        rng = RngState(seed + 10)
        pick = [names[i] for i in rng.choice(len(names), size=20, replace=False)]
        pick.append("head.w")
        res = check_gradients(forward, [(n, model.params[n]) for n in pick],
                              rng, n_coords=3, rtol=1e-3)
        bad = [r for r in res if not r.passed]
        assert not bad, [(r.name, r.failures[:1]) for r in bad]
