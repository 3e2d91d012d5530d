import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semfsl.databank import FeatureBank, SynthSpec, synth_generate
from semfsl.episodes import NoiseConfig, inject_noise, sample_episode
from semfsl.errors import ConfigurationError
from semfsl.gradcore import RngStream


@pytest.fixture(scope="module")
def bank_table():
    return synth_generate(SynthSpec(n_classes=10, samples_per_class=30, d_v=4, d_e=3, split_counts=(10, 0, 0), seed=1))


def episode(bank_table, seed=0, ways=5, shots=5, queries=15):
    bank, table = bank_table
    return sample_episode(bank, table, ways, shots, queries, RngStream(seed, "test/episode").generator())


def test_shapes_5way_1shot(bank_table):
    ep = episode(bank_table, shots=1)
    assert ep.support_features.shape == (5, 1, 4)
    assert ep.query_features.shape == (75, 4)
    assert ep.query_labels.tolist() == sorted(list(range(5)) * 15)
    assert ep.class_embeddings.shape == (5, 3)
    ep.check()


def test_all_classes_when_ways_equals_view(bank_table):
    ep = episode(bank_table, ways=10, shots=1, queries=1)
    assert sorted(ep.class_names) == sorted(bank_table[0].names)


def test_replay_field_by_field(bank_table):
    a, b = episode(bank_table, seed=9), episode(bank_table, seed=9)
    for f in dataclasses.fields(a):
        if f.name == "source":
            continue
        va, vb = getattr(a, f.name), getattr(b, f.name)
        if isinstance(va, np.ndarray):
            assert va.tobytes() == vb.tobytes(), f.name
        else:
            assert va == vb, f.name


def test_features_come_from_named_rows(bank_table):
    ep = episode(bank_table, seed=4)
    bank = bank_table[0]
    for c in range(ep.ways):
        src = bank[ep.class_indices[c]]
        np.testing.assert_array_equal(ep.support_features[c], src.features[ep.sample_indices[c, : ep.shots]])
        np.testing.assert_array_equal(ep.class_embeddings[c], bank_table[1][src.name])


def test_insufficient_capacity(bank_table):
    bank, table = bank_table
    with pytest.raises(ConfigurationError, match="10 classes"):
        sample_episode(bank, table, 11, 1, 1, np.random.default_rng(0))
    with pytest.raises(ConfigurationError, match="required 31"):
        sample_episode(bank, table, 5, 16, 15, np.random.default_rng(0))


def test_class_selection_uniform():
    view = FeatureBank.from_arrays(1, [(f"c{i}", "train", [[float(i)]]) for i in range(10)])
    stream = RngStream(0, "uniformity")
    counts = np.zeros(10)
    n = 100_000
    for t in range(n):
        counts[sample_episode(view, None, 5, 1, 0, stream.generator(t)).class_indices] += 1
    assert np.all(np.abs(counts / n - 0.5) <= 0.01)


# ---- noise ---------------------------------------------------------------


def test_noise_prob_zero_is_identity(bank_table):
    ep = episode(bank_table)
    out = inject_noise(ep, NoiseConfig(True, 3, 0.0), np.random.default_rng(0))
    assert out.support_features.tobytes() == ep.support_features.tobytes()
    assert not out.noisy_mask.any()


def test_disabled_noise_returns_input(bank_table):
    ep = episode(bank_table)
    assert inject_noise(ep, NoiseConfig(False), np.random.default_rng(0)) is ep


def check_noisy_episode(clean, noisy, min_clean):
    noisy.check(min_clean)
    assert noisy.query_features.tobytes() == clean.query_features.tobytes()
    assert noisy.class_embeddings.tobytes() == clean.class_embeddings.tobytes()
    assert noisy.support_features[:, :min_clean].tobytes() == clean.support_features[:, :min_clean].tobytes()
    bank = clean.source
    for c, slot in zip(*np.nonzero(noisy.noisy_mask)):
        donor = noisy.support_true[c, slot]
        assert donor != c
        bank_class, row = noisy.support_sources[c, slot]
        assert bank_class == clean.class_indices[donor]
        assert row not in clean.sample_indices[donor]
        np.testing.assert_array_equal(noisy.support_features[c, slot], bank[bank_class].features[row])
    for c, slot in zip(*np.nonzero(~noisy.noisy_mask)):
        np.testing.assert_array_equal(noisy.support_features[c, slot], clean.support_features[c, slot])


def test_noise_invariants_1000_episodes(bank_table):
    bank, table = bank_table
    cfg = NoiseConfig(True, 3, 0.5)
    per_class = []
    for t in range(1000):
        clean = sample_episode(bank, table, 5, 5, 15, RngStream(t, "ep").generator())
        noisy = inject_noise(clean, cfg, RngStream(t, "noise").generator())
        clean.check()
        check_noisy_episode(clean, noisy, 3)
        counts = noisy.noisy_mask.sum(axis=1)
        assert set(counts.tolist()) <= {0, 1, 2}
        per_class.extend(counts.tolist())
    assert set(per_class) == {0, 1, 2}


def test_bernoulli_expectation_over_1e4_episodes(bank_table):
    bank, table = bank_table
    cfg = NoiseConfig(True, 3, 0.5)
    ep_stream, noise_stream = RngStream(3, "ep"), RngStream(3, "noise")
    total = 0
    n = 10_000
    for t in range(n):
        ep = sample_episode(bank, table, 5, 5, 1, ep_stream.generator(t))
        total += inject_noise(ep, cfg, noise_stream.generator(t)).noisy_mask.sum()
    assert abs(total / (5 * n) - 1.0) <= 0.03


def test_noise_prob_one_gives_exactly_two(bank_table):
    ep = episode(bank_table)
    out = inject_noise(ep, NoiseConfig(True, 3, 1.0), np.random.default_rng(1))
    assert out.noisy_mask.sum(axis=1).tolist() == [2] * 5


def test_min_clean_exceeding_shots(bank_table):
    with pytest.raises(ConfigurationError):
        inject_noise(episode(bank_table, shots=2), NoiseConfig(True, 3, 0.5), np.random.default_rng(0))


def test_exhausted_donors_fall_back_then_stay_clean():
    # each class holds exactly shots+queries samples, so there is nothing left to donate
    bank = FeatureBank.from_arrays(1, [(f"c{i}", "train", np.full((3, 1), float(i))) for i in range(2)])
    ep = sample_episode(bank, None, 2, 3, 0, np.random.default_rng(0))
    out = inject_noise(ep, NoiseConfig(True, 1, 1.0), np.random.default_rng(0))
    assert not out.noisy_mask.any() and len(out.warnings) == 4

    # only "b" has spare rows, so every noisy slot of "a" and "c" must draw from "b"
    bank = FeatureBank.from_arrays(
        1, [("a", "train", np.zeros((3, 1))), ("b", "train", np.ones((10, 1))), ("c", "train", np.full((3, 1), 2.0))]
    )
    for seed in range(20):
        ep = sample_episode(bank, None, 3, 3, 0, np.random.default_rng(seed))
        out = inject_noise(ep, NoiseConfig(True, 0, 1.0), np.random.default_rng(seed))
        b = int(np.flatnonzero(np.array(ep.class_names) == "b")[0])
        for c in range(3):
            if c != b:
                assert out.support_true[c].tolist() == [b] * 3
        out.check()


@settings(max_examples=40, deadline=None)
@given(
    st.integers(2, 6), st.integers(1, 6), st.integers(0, 4), st.integers(0, 6), st.floats(0, 1), st.integers(0, 2**32 - 1)
)
def test_noise_property(ways, shots, queries, min_clean, prob, seed):
    min_clean = min(min_clean, shots)
    bank, table = synth_generate(SynthSpec(n_classes=8, samples_per_class=20, d_v=2, d_e=2, split_counts=(8, 0, 0)))
    clean = sample_episode(bank, table, ways, shots, queries, np.random.default_rng(seed))
    noisy = inject_noise(clean, NoiseConfig(True, min_clean, prob), np.random.default_rng(seed + 1))
    clean.check()
    check_noisy_episode(clean, noisy, min_clean)
    assert np.all(noisy.noisy_mask.sum(axis=1) <= shots - min_clean)
