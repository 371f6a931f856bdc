import numpy as np
import pytest
import torch

from pps_grounding.config import GroundingConfig
from pps_grounding.errors import EmptyQuery, InvalidParam
from pps_grounding.generator import (
    GaussianParams,
    ProposalGenerator,
    assemble_positive,
    membership,
    proposal_slices,
)
from pps_grounding.gradcheck import analytic_jacobian, central_difference, relative_error
from pps_grounding.mask_math import gaussian_mask

CFG = GroundingConfig(d_V=12, d_Q=8, d_G=16, d_R=16, heads=2, layers=1, T_max=10, N_max=5,
                      vocab_size=20, K=4, E_en=3)


def make_generator(cfg=CFG, seed=0, dtype=torch.float64):
    torch.manual_seed(seed)
    return ProposalGenerator(cfg).to(dtype).eval()


def make_inputs(B=3, T=10, N=5, seed=0, dtype=torch.float64):
    rng = np.random.default_rng(seed)
    video = torch.as_tensor(rng.standard_normal((B, T, CFG.d_V)), dtype=dtype)
    query = torch.as_tensor(rng.integers(2, CFG.vocab_size, (B, N)))
    vlen = torch.as_tensor(rng.integers(2, T + 1, B))
    qlen = torch.as_tensor(rng.integers(1, N + 1, B))
    query[torch.arange(N) >= qlen[:, None]] = 0
    return video, vlen, query, qlen


class TestLayout:
    @pytest.mark.parametrize("K", [1, 2, 5, 7])
    def test_mask_count(self, K):
        sl = proposal_slices(K)
        assert [s.stop - s.start for s in sl] == list(range(1, K + 1))
        assert sl[-1].stop == K * (K + 1) // 2
        assert membership(K).sum().item() == K * (K + 1) // 2
        assert torch.equal(membership(K).sum(0), torch.ones(K * (K + 1) // 2, dtype=torch.long))

    def test_forward_shapes(self):
        gen = make_generator()
        p = gen(*make_inputs())
        M = CFG.num_positive_masks
        assert p.centers.shape == p.widths.shape == (3, M)
        assert p.log_masks.shape == (3, M, 10)
        assert p.easy_centers.shape == (3, CFG.K, CFG.E_en)
        assert p.easy_log_curves.shape == (3, CFG.K, 10)
        assert p.hard_log_curve.shape == (3, 10)

    def test_positive_params_slices_agree(self):
        gen = make_generator()
        cls = torch.randn(2, CFG.d_G, dtype=torch.float64)
        every = gen.all_positive_params(cls)
        for k, sl in enumerate(proposal_slices(CFG.K), start=1):
            one = gen.positive_params(cls, k)
            assert one.E == k
            torch.testing.assert_close(one.centers, every.centers[:, sl])
            torch.testing.assert_close(one.widths, every.widths[:, sl])

    @pytest.mark.parametrize("k", [0, CFG.K + 1])
    def test_positive_index_range(self, k):
        with pytest.raises(InvalidParam):
            make_generator().positive_params(torch.zeros(CFG.d_G, dtype=torch.float64), k)


class TestParameterRanges:
    def test_zero_heads_give_midpoint(self):
        gen = make_generator()
        for head in (gen.center_head, gen.width_head):
            torch.nn.init.zeros_(head.weight)
            torch.nn.init.zeros_(head.bias)
        p = gen.all_positive_params(torch.randn(4, CFG.d_G, dtype=torch.float64))
        assert torch.all(p.centers == 0.5)
        torch.testing.assert_close(p.widths, torch.full_like(p.widths, 0.5 / CFG.sigma), rtol=0, atol=1e-15)

    def test_random_draws_stay_in_range(self):
        gen = make_generator(GroundingConfig.activitynet(d_G=16, d_R=16, d_Q=8, heads=2, layers=1))
        rng = np.random.default_rng(4)
        cls = torch.as_tensor(rng.standard_normal((1000, 16)) * 3)
        p = gen.all_positive_params(cls)
        assert torch.all((p.centers > 0) & (p.centers < 1))
        assert torch.all((p.widths > 0) & (p.widths < 0.25))

    def test_widths_bounded_by_sigma(self):
        cfg = CFG.replace(sigma=9.0)
        gen = make_generator(cfg)
        p = gen.easy_negative_params(torch.randn(200, cfg.d_G, dtype=torch.float64) * 5)
        assert torch.all(p.widths < 1 / 9)


class TestNegatives:
    def test_hard_negative_is_all_ones(self):
        gen = make_generator()
        p = gen(*make_inputs())
        assert torch.all(p.hard_curve()[p.valid] == 1.0)
        _, hard = gen.mine_negatives(torch.randn(3, CFG.d_G, dtype=torch.float64), 10)
        assert torch.all(hard == 1.0)

    def test_easy_negative_is_unweighted_mean(self):
        gen = make_generator()
        video, _, query, qlen = make_inputs()
        vlen = torch.full((3,), 10)
        p = gen(video, vlen, query, qlen)
        expected = gaussian_mask(p.easy_centers, p.easy_widths, 10).mean(-2)
        torch.testing.assert_close(p.easy_curves(), expected)
        _, cls = gen.encode_context(video, vlen, query, qlen)
        easy, _ = gen.mine_negatives(cls, 10)
        torch.testing.assert_close(easy, expected)


class TestForward:
    def test_deterministic_given_seed(self):
        a = make_generator(seed=3)(*make_inputs())
        b = make_generator(seed=3)(*make_inputs())
        assert torch.equal(a.centers, b.centers) and torch.equal(a.log_masks, b.log_masks)

    def test_padding_invariance(self):
        gen = make_generator()
        video, vlen, query, qlen = make_inputs(B=2, T=8, N=4, seed=2)
        base = gen(video, vlen, query, qlen)
        padded_video = torch.cat([video, torch.randn(2, 2, CFG.d_V, dtype=video.dtype) * 100], 1)
        padded_query = torch.cat([query, torch.full((2, 1), 7)], 1)
        more = gen(padded_video, vlen, padded_query, qlen)
        torch.testing.assert_close(more.centers, base.centers)
        torch.testing.assert_close(more.widths, base.widths)

    def test_masks_use_sample_length(self):
        gen = make_generator()
        video, _, query, qlen = make_inputs(B=1, T=10)
        p = gen(video, torch.tensor([6]), query, qlen)
        expected = gaussian_mask(p.centers[0], p.widths[0], 6)
        torch.testing.assert_close(p.masks()[0, :, :6], expected)
        assert torch.all(p.masks()[0, :, 6:] == 0)

    def test_empty_query_rejected(self):
        video, vlen, query, _ = make_inputs()
        with pytest.raises(EmptyQuery):
            make_generator()(video, vlen, query, torch.tensor([2, 0, 1]))

    def test_mask_jacobian_matches_fd(self):
        gen = make_generator()
        rng = np.random.default_rng(11)
        for _ in range(5):
            cls0 = torch.as_tensor(rng.standard_normal(CFG.d_G))
            k = int(rng.integers(1, CFG.K + 1))

            def fn(cls):
                p = gen.positive_params(cls, k)
                return gaussian_mask(p.centers, p.widths, 10)
            err = relative_error(analytic_jacobian(fn, cls0), central_difference(fn, cls0))
            assert err < 1e-4


class TestAssemble:
    def test_bimodal_mixture(self):
        params = GaussianParams(torch.tensor([0.2, 0.8], dtype=torch.float64),
                                torch.tensor([0.08, 0.08], dtype=torch.float64))
        masks, curve = assemble_positive(params, torch.tensor([0.5, 0.5], dtype=torch.float64), 41)
        c = curve.numpy()
        peaks = [i for i in range(1, 40) if c[i] > c[i - 1] and c[i] > c[i + 1]]
        assert peaks == [8, 32]
        assert masks.shape == (2, 41)

    def test_weight_count_checked(self):
        params = GaussianParams(torch.tensor([0.2, 0.8]), torch.tensor([0.1, 0.1]))
        with pytest.raises(InvalidParam):
            assemble_positive(params, torch.tensor([1.0]), 10)
