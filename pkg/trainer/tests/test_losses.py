import math

import pytest
import torch

from cycleseg.losses import cross_entropy_term, dice_term, l1_loss, lsgan_loss, seg_loss


class TestSegLoss:
    def test_perfect_binary_prediction_is_zero(self):
        g = torch.tensor([[0.0, 1.0], [1.0, 0.0]])
        assert seg_loss(g.clone(), g).item() == pytest.approx(0.0, abs=1e-9)

    def test_hand_evaluated_8_voxel_patch(self):
        # p uniform 0.5, half the voxels foreground:
        #   CE   = -(4 ln 0.5)/8 = 0.5 ln 2
        #   dice = 1 - 2*(4*0.5)/(8*0.5 + 4) = 0.5
        p = torch.full((2, 2, 2), 0.5)
        g = torch.zeros(2, 2, 2)
        g[0] = 1.0
        expected = 0.5 * math.log(2.0) + 0.5
        assert seg_loss(p, g).item() == pytest.approx(expected, rel=1e-6)
        assert expected == pytest.approx(0.8465735902799726, rel=1e-12)

    def test_nonnegative_on_random_inputs(self):
        torch.manual_seed(0)
        for _ in range(20):
            p = torch.rand(4, 4)
            g = (torch.rand(4, 4) > 0.5).float()
            assert seg_loss(p, g).item() >= 0.0

    def test_moving_toward_target_never_increases_dice_term(self):
        torch.manual_seed(1)
        for _ in range(10):
            p = torch.rand(5, 5)
            g = (torch.rand(5, 5) > 0.6).float()
            values = []
            for lam in (0.0, 0.25, 0.5, 0.75, 1.0):
                values.append(dice_term(p + lam * (g - p), g).item())
            for a, b in zip(values, values[1:]):
                assert b <= a + 1e-7

    def test_decreases_toward_minimum_as_p_approaches_g(self):
        g = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
        coarse = seg_loss(torch.full_like(g, 0.5), g)
        fine = seg_loss(0.9 * g + 0.05, g)
        assert fine < coarse

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            seg_loss(torch.rand(2, 2), torch.rand(3, 3))

    def test_ce_handles_zero_probabilities(self):
        p = torch.tensor([0.0, 1.0])
        g = torch.tensor([0.0, 1.0])
        value = cross_entropy_term(p, g).item()
        assert value == pytest.approx(0.0, abs=1e-9)
        assert not math.isnan(value)


class TestGanLosses:
    def test_lsgan_targets(self):
        scores = torch.tensor([0.0, 1.0])
        assert lsgan_loss(scores, True).item() == pytest.approx(0.5)
        assert lsgan_loss(scores, False).item() == pytest.approx(0.5)
        assert lsgan_loss(torch.ones(3), True).item() == 0.0

    def test_l1(self):
        assert l1_loss(torch.tensor([1.0, 3.0]),
                       torch.tensor([2.0, 1.0])).item() == pytest.approx(1.5)
