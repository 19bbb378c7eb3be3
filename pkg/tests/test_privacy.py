import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from fedcrossval.defense import SubModel
from fedcrossval.errors import InputError
from fedcrossval.privacy import (DpConfig, assert_disjoint_groups, clip_delta,
                                 dp_mean, perturb_submodel)
from fedcrossval.rng import derive_rng


class TestClip:
    def test_within_bound_unchanged(self):
        v = np.array([3.0, 4.0])  # norm 5
        assert np.array_equal(clip_delta(v, 10.0), v)

    def test_double_norm_halved(self):
        v = np.array([3.0, 4.0])
        out = clip_delta(v, 2.5)
        assert np.isclose(np.linalg.norm(out), 2.5)
        assert np.allclose(out, v / 2)

    def test_scaled_poison_clipped_to_bound(self):
        rng = derive_rng(0, "clip")
        poisoned = rng.normal(0, 1, 400)
        poisoned *= 150.0 / np.linalg.norm(poisoned)
        out = clip_delta(poisoned, 15.0)
        assert np.isclose(np.linalg.norm(out), 15.0)
        # direction preserved
        cos = out @ poisoned / (np.linalg.norm(out) * np.linalg.norm(poisoned))
        assert np.isclose(cos, 1.0)

    @given(hnp.arrays(np.float64, st.integers(1, 30),
                      elements=st.floats(-1e6, 1e6)),
           st.floats(0.01, 100.0))
    @settings(max_examples=60, deadline=None)
    def test_idempotent_and_bounded(self, v, s):
        once = clip_delta(v, s)
        assert np.linalg.norm(once) <= s * (1 + 1e-12)
        assert np.allclose(clip_delta(once, s), once)


class TestDpMean:
    def test_sigma_zero_is_clipped_average(self):
        deltas = [np.array([6.0, 8.0]), np.array([0.0, 1.0])]  # norms 10, 1
        out = dp_mean(deltas, s=5.0, sigma=0.0, rng=derive_rng(0, "dp"))
        expected = (np.array([3.0, 4.0]) + np.array([0.0, 1.0])) / 2
        assert np.allclose(out, expected)

    def test_sigma_zero_permutation_invariant(self):
        rng = derive_rng(1, "dp")
        deltas = [rng.normal(0, 1, 6) for _ in range(5)]
        a = dp_mean(deltas, 2.0, 0.0, derive_rng(0, "x"))
        b = dp_mean(deltas[::-1], 2.0, 0.0, derive_rng(0, "x"))
        assert np.allclose(a, b)

    def test_noise_scale_oracle(self):
        # all-zero deltas: output is pure noise / K with std sigma*S/K per coord
        k, s, sigma, dim = 4, 2.0, 0.5, 10_000
        deltas = [np.zeros(dim) for _ in range(k)]
        out = dp_mean(deltas, s, sigma, derive_rng(7, "noise"))
        observed = out.std()
        expected = sigma * s / k
        assert abs(observed - expected) / expected < 0.05

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            dp_mean([], 1.0, 0.0, derive_rng(0, "dp"))

    def test_deterministic_per_stream(self):
        deltas = [np.ones(8)]
        a = dp_mean(deltas, 1.0, 0.3, derive_rng(5, "n"))
        b = dp_mean(deltas, 1.0, 0.3, derive_rng(5, "n"))
        c = dp_mean(deltas, 1.0, 0.3, derive_rng(6, "n"))
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)


class TestPerturbSubmodel:
    def _sub(self, deltas, w):
        mean = np.mean(deltas, axis=0)
        return SubModel(0, tuple(range(len(deltas))), mean, w + mean)

    def test_sigma_zero_within_bound_unchanged(self):
        rng = derive_rng(0, "p")
        w = rng.normal(0, 1, 6)
        deltas = [rng.normal(0, 0.1, 6) for _ in range(3)]
        sub = self._sub(deltas, w)
        out = perturb_submodel(sub, deltas, w, s=100.0, sigma=0.0,
                               rng=derive_rng(1, "p"))
        assert np.allclose(out.mean_delta, sub.mean_delta)
        assert np.allclose(out.materialized, sub.materialized)
        assert out.members == sub.members

    def test_streams_control_noise(self):
        rng = derive_rng(2, "p")
        w = np.zeros(6)
        deltas = [rng.normal(0, 0.1, 6) for _ in range(2)]
        sub = self._sub(deltas, w)
        a = perturb_submodel(sub, deltas, w, 1.0, 0.1, derive_rng(3, "p"))
        b = perturb_submodel(sub, deltas, w, 1.0, 0.1, derive_rng(3, "p"))
        c = perturb_submodel(sub, deltas, w, 1.0, 0.1, derive_rng(4, "p"))
        assert np.array_equal(a.mean_delta, b.mean_delta)
        assert not np.array_equal(a.mean_delta, c.mean_delta)

    def test_member_count_checked(self):
        sub = self._sub([np.zeros(3), np.zeros(3)], np.zeros(3))
        with pytest.raises(InputError):
            perturb_submodel(sub, [np.zeros(3)], np.zeros(3), 1.0, 0.0,
                             derive_rng(0, "p"))


class TestDisjointness:
    def test_accepts_partition(self):
        subs = [SubModel(0, (0, 1), np.zeros(2), np.zeros(2)),
                SubModel(1, (2, 3), np.zeros(2), np.zeros(2))]
        assert_disjoint_groups(subs)

    def test_rejects_overlap(self):
        subs = [SubModel(0, (0, 1), np.zeros(2), np.zeros(2)),
                SubModel(1, (1, 2), np.zeros(2), np.zeros(2))]
        with pytest.raises(InputError):
            assert_disjoint_groups(subs)


class TestDpConfig:
    def test_validation(self):
        with pytest.raises(InputError):
            DpConfig(clip=0.0, sigma=0.1)
        with pytest.raises(InputError):
            DpConfig(clip=1.0, sigma=-0.1)
        with pytest.raises(InputError):
            DpConfig(clip=1.0, sigma=0.1, apply_to=frozenset({"everything"}))
