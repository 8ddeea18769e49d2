import itertools

import numpy as np
import pytest

import demux


def tiny_config(feature_dim=4, speakers=2):
    c = demux.ModelConfig()
    c.feature_dim = feature_dim
    c.embed_dim = 8
    c.max_speakers = speakers
    c.encoder_blocks = 1
    c.decoder_blocks = 1
    c.attention_heads = 2
    c.ffn_dim = 16
    c.demux_cnn_stacks = 1
    c.demux_kernel_size = 3
    return c


def test_corpus_shapes():
    corpus = demux.generate_corpus(num_sequences=4, frames=30, feature_dim=4, pool_size=6, seed=2)
    assert len(corpus) == 4
    s = corpus.samples[0]
    assert s.features.shape == (4, 30)
    assert s.labels.shape == (30, 2)
    assert set(np.unique(s.labels)) <= {0.0, 1.0}


def test_forward_shapes_and_ranges():
    model = demux.Model(tiny_config(), seed=3)
    out = model.forward(np.random.default_rng(0).normal(size=(4, 25)))
    assert out["posteriors"].shape == (25, 2)
    assert out["existence"].shape == (2,)
    assert np.all((out["posteriors"] > 0) & (out["posteriors"] < 1))
    assert out["valid_set"] == [i for i, p in enumerate(out["existence"]) if p >= 0.5]


def test_frame_permutation_equivariance():
    # With a pointwise demultiplexer every stage is per-frame or pooled over
    # time, so posteriors follow a permutation of the input frames.
    config = tiny_config()
    config.demux_kernel_size = 1
    model = demux.Model(config, seed=3)
    x = np.random.default_rng(1).normal(size=(4, 12))
    perm = np.random.default_rng(2).permutation(12)
    a = model.forward(x)["posteriors"]
    b = model.forward(x[:, perm])["posteriors"]
    np.testing.assert_allclose(b, a[perm], atol=1e-10)


def test_wrong_feature_dim_raises():
    model = demux.Model(tiny_config(), seed=3)
    with pytest.raises(Exception):
        model.forward(np.zeros((5, 10)))


def test_der_against_bruteforce():
    rng = np.random.default_rng(4)
    for _ in range(20):
        ref = (rng.random((15, 2)) < 0.5).astype(float)
        ref[0, 0] = 1
        hyp = (rng.random((15, 3)) < 0.5).astype(float)
        best = 0
        for cols in itertools.permutations(range(3), 2):
            best = max(best, sum(np.sum(ref[:, r] * hyp[:, c]) for r, c in enumerate(cols)))
        n_ref, n_hyp = ref.sum(axis=1), hyp.sum(axis=1)
        errors = np.sum(np.maximum(n_ref, n_hyp)) - best
        assert demux.der(ref, hyp)["der"] == pytest.approx(errors / ref.sum(), abs=1e-12)


def test_silent_reference_raises():
    with pytest.raises(demux.DerError):
        demux.der(np.zeros((5, 2)), np.ones((5, 2)))


def test_assignment_is_optimal():
    cost = np.array([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]])
    perm, total = demux.assign(cost)
    brute = min(sum(cost[r, c] for r, c in enumerate(p)) for p in itertools.permutations(range(3)))
    assert total == pytest.approx(brute)
    assert sum(cost[r, c] for r, c in enumerate(perm)) == pytest.approx(total)


def test_gradcheck_losses_pass():
    results = demux.gradcheck("loss_ort", seed=2)
    assert results and all(passed for _, passed, _ in results)
    with pytest.raises(Exception):
        demux.gradcheck("nope")


def test_config_json_round_trip():
    t = demux.train_preset("desk")
    assert demux.TrainConfig.from_json(t.to_json()).to_json() == t.to_json()
    with pytest.raises(demux.ConfigError):
        demux.TrainConfig.from_json('{"batchsize": 4}')


def test_checkpoint_round_trip(tmp_path):
    model = demux.Model(tiny_config(), seed=5)
    path = tmp_path / "m.ckpt"
    model.save(path)
    x = np.random.default_rng(5).normal(size=(4, 9))
    np.testing.assert_array_equal(demux.Model.load(path).forward(x)["posteriors"], model.forward(x)["posteriors"])


def test_train_single_speaker_and_diarize():
    corpus = demux.generate_corpus(num_sequences=8, frames=30, feature_dim=4, max_speakers=1,
                                   speakers_per_mix=[1], pool_size=3, seed=6)
    config = demux.TrainConfig.from_json(
        '{"model": ' + tiny_config(speakers=1).to_json() + ', "weights": {"dis": 0}, "max_steps": 5, "batch_size": 4}')
    model = demux.train(config, corpus, corpus)
    activity, rttm = model.diarize(corpus.samples[0].features, recording="seq0")
    assert activity.shape == (30, 1)
    assert all(line.startswith("SPEAKER seq0 1 ") for line in rttm.splitlines())
