from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eigenshot.contrastive import (
    ContrastiveBatch,
    Encoder,
    MixedStream,
    MixerConfig,
    TrainConfig,
    TrainingDivergedError,
    info_nce_grad,
    info_nce_loss,
    make_mixed_stream,
    train_encoder,
)
from eigenshot.store import FeatureSet
from eigenshot.synth import generate_preset, scaled_preset


# ----------------------------------------------------------------- oracles


def info_nce_reference(queries, positives, negatives, tau) -> float:
    """High-precision re-evaluation of the contrastive loss, dot products
    included, via mpmath. Independent of the production code path."""
    from mpmath import mp, mpf

    mp.dps = 60
    total = mpf(0)
    b, k = negatives.shape[0], negatives.shape[1]
    for i in range(b):
        def dot(u, v):
            return sum(mpf(float(a)) * mpf(float(c)) for a, c in zip(u, v))

        pos = mp.e ** (dot(queries[i], positives[i]) / mpf(tau))
        denom = pos
        for j in range(k):
            denom += mp.e ** (dot(queries[i], negatives[i, j]) / mpf(tau))
        total += -mp.log(pos / denom)
    return float(total / b)


def finite_difference_grads(batch: ContrastiveBatch, step: float = 1e-5):
    """Central differences of the loss w.r.t. every embedding coordinate."""
    grads = []
    for arr in (batch.queries, batch.positives, batch.negatives):
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + step
            up = info_nce_loss(batch)
            flat[idx] = original - step
            down = info_nce_loss(batch)
            flat[idx] = original
            gflat[idx] = (up - down) / (2 * step)
        grads.append(g)
    return tuple(grads)


def unit_rows(rng, *shape):
    x = rng.normal(size=shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def make_random_batch(rng, b=4, k=8, d=8, tau=0.2) -> ContrastiveBatch:
    return ContrastiveBatch(
        queries=unit_rows(rng, b, d),
        positives=unit_rows(rng, b, d),
        negatives=unit_rows(rng, b, k, d),
        temperature=tau,
    )


# ------------------------------------------------------------------- loss


class TestInfoNceLoss:
    @pytest.mark.parametrize("k", [1, 3, 7, 15])
    def test_equal_logits_give_log_k_plus_one(self, k, rng):
        d = 6
        q = unit_rows(rng, 1, d)
        key = unit_rows(rng, 1, d)
        batch = ContrastiveBatch(
            queries=q,
            positives=key.copy(),
            negatives=np.repeat(key[:, None, :], k, axis=1),
            temperature=0.2,
        )
        assert info_nce_loss(batch) == pytest.approx(math.log(k + 1), abs=1e-9)

    def test_no_negatives_gives_zero(self, rng):
        batch = ContrastiveBatch(
            queries=unit_rows(rng, 3, 5),
            positives=unit_rows(rng, 3, 5),
            negatives=np.empty((3, 0, 5)),
            temperature=0.5,
        )
        assert info_nce_loss(batch) == 0.0

    def test_matches_high_precision_reference(self, rng):
        for _ in range(20):
            batch = make_random_batch(rng)
            expected = info_nce_reference(
                batch.queries, batch.positives, batch.negatives, batch.temperature
            )
            assert info_nce_loss(batch) == pytest.approx(expected, abs=1e-10)

    def test_negative_permutation_invariance(self, rng):
        batch = make_random_batch(rng, b=3, k=6)
        before = info_nce_loss(batch)
        perm = rng.permutation(6)
        shuffled = ContrastiveBatch(
            queries=batch.queries,
            positives=batch.positives,
            negatives=batch.negatives[:, perm, :],
            temperature=batch.temperature,
        )
        assert info_nce_loss(shuffled) == pytest.approx(before, abs=1e-12)

    def test_strictly_positive_with_negatives(self, rng):
        for _ in range(10):
            batch = make_random_batch(rng, b=2, k=4)
            assert info_nce_loss(batch) > 0.0

    def test_validation(self, rng):
        good = unit_rows(rng, 2, 4)
        with pytest.raises(ValueError, match="temperature"):
            ContrastiveBatch(good, good, np.empty((2, 0, 4)), temperature=0.0)
        with pytest.raises(ValueError):
            ContrastiveBatch(good, unit_rows(rng, 3, 4), np.empty((2, 0, 4)), 0.2)
        with pytest.raises(ValueError, match="unit-norm"):
            ContrastiveBatch(good * 3.0, good, np.empty((2, 0, 4)), 0.2)


class TestInfoNceGrad:
    def test_matches_central_differences(self, rng):
        worst = 0.0
        for trial in range(20):
            b = int(rng.integers(1, 5))
            k = int(rng.integers(0, 7))
            d = int(rng.integers(2, 9))
            batch = make_random_batch(rng, b=b, k=k, d=d, tau=0.2)
            analytic = info_nce_grad(batch)
            numeric = finite_difference_grads(batch, step=1e-5)
            for a, f in zip(analytic, numeric):
                if a.size == 0:
                    continue
                err = np.abs(a - f) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(f)))
                worst = max(worst, float(err.max()))
        assert worst < 1e-4

    def test_equal_logits_symmetric_negative_grads(self, rng):
        d, k = 5, 4
        q = unit_rows(rng, 1, d)
        key = unit_rows(rng, 1, d)
        batch = ContrastiveBatch(
            queries=q,
            positives=key.copy(),
            negatives=np.repeat(key[:, None, :], k, axis=1),
            temperature=0.3,
        )
        _, _, d_neg = info_nce_grad(batch)
        norms = np.linalg.norm(d_neg[0], axis=1)
        np.testing.assert_allclose(norms, norms[0], atol=1e-12)

    def test_no_negatives_gives_zero_grads(self, rng):
        batch = ContrastiveBatch(
            queries=unit_rows(rng, 2, 4),
            positives=unit_rows(rng, 2, 4),
            negatives=np.empty((2, 0, 4)),
            temperature=0.2,
        )
        d_q, d_pos, d_neg = info_nce_grad(batch)
        assert np.array_equal(d_q, np.zeros((2, 4)))
        assert np.array_equal(d_pos, np.zeros((2, 4)))
        assert d_neg.shape == (2, 0, 4)


@settings(max_examples=25, deadline=None)
@given(st.data())
def test_loss_nonnegative_property(data):
    seed = data.draw(st.integers(0, 10_000))
    k = data.draw(st.integers(0, 6))
    rng = np.random.default_rng(seed)
    batch = make_random_batch(rng, b=2, k=k, d=4, tau=0.3)
    assert info_nce_loss(batch) >= 0.0


# ------------------------------------------------------------------ mixer


class TestMixedStream:
    def test_rebalance_percentage_validation(self):
        with pytest.raises(ValueError):
            MixerConfig(0.0)
        with pytest.raises(ValueError):
            MixerConfig(1.2)
        with pytest.raises(ValueError):
            MixerConfig(-0.5)

    def test_target_fraction_converges(self, rng):
        source = FeatureSet([f"s{i}" for i in range(500)], rng.normal(size=(500, 3)))
        target = FeatureSet([f"t{i}" for i in range(40)], rng.normal(size=(40, 3)))
        p = 0.2
        stream = make_mixed_stream(source, [target], MixerConfig(p, seed=0))
        draws = 30_000
        hits = sum(stream.draw().origin == "target" for _ in range(draws))
        expected = p / (1 + p)
        sigma = math.sqrt(expected * (1 - expected) / draws)
        assert abs(hits / draws - expected) < 3 * sigma + 1e-9

    def test_two_targets_share_equally(self, rng):
        source = FeatureSet([f"s{i}" for i in range(300)], rng.normal(size=(300, 2)))
        t1 = FeatureSet([f"a{i}" for i in range(20)], rng.normal(size=(20, 2)))
        t2 = FeatureSet([f"b{i}" for i in range(35)], rng.normal(size=(35, 2)))
        stream = make_mixed_stream(source, [t1, t2], MixerConfig(0.2, seed=1))
        draws = 30_000
        counts = [0, 0]
        for _ in range(draws):
            item = stream.draw()
            if item.origin == "target":
                counts[item.target_index] += 1
        expected = 0.2 / 1.2 / 2
        sigma = math.sqrt(expected * (1 - expected) / draws)
        for c in counts:
            assert abs(c / draws - expected) < 3 * sigma + 1e-9

    def test_no_targets_is_pure_source(self, rng):
        source = FeatureSet(["s0", "s1"], rng.normal(size=(2, 2)))
        stream = make_mixed_stream(source, [], MixerConfig(0.2, seed=0))
        assert all(stream.draw().origin == "source" for _ in range(50))

    def test_deterministic(self, rng):
        source = FeatureSet([f"s{i}" for i in range(10)], rng.normal(size=(10, 2)))
        target = FeatureSet([f"t{i}" for i in range(4)], rng.normal(size=(4, 2)))

        def trace(seed):
            stream = make_mixed_stream(source, [target], MixerConfig(0.5, seed=seed))
            return [tuple(stream.draw().vector) for _ in range(20)]

        assert trace(3) == trace(3)
        assert trace(3) != trace(4)

    def test_empty_and_mismatched_inputs(self, rng):
        source = FeatureSet(["s0"], rng.normal(size=(1, 3)))
        with pytest.raises(ValueError, match="empty"):
            make_mixed_stream(FeatureSet([], np.zeros((0, 3))), [], MixerConfig(0.2))
        with pytest.raises(ValueError, match="dimension"):
            make_mixed_stream(
                source,
                [FeatureSet(["t0"], rng.normal(size=(1, 2)))],
                MixerConfig(0.2),
            )


# ---------------------------------------------------------------- encoder


class TestEncoder:
    def test_outputs_unit_norm(self, rng):
        enc = Encoder.initialize(8, 16, 4, seed=0)
        z = enc.encode(rng.normal(size=(40, 8)) * 5.0)
        np.testing.assert_allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-6)

    def test_save_load_round_trip(self, tmp_path, rng):
        enc = Encoder.initialize(5, 7, 3, seed=2)
        enc.save(tmp_path / "enc.json")
        back = Encoder.load(tmp_path / "enc.json")
        x = rng.normal(size=(6, 5))
        assert np.array_equal(back.encode(x), enc.encode(x))

    def test_dim_validation(self, rng):
        enc = Encoder.initialize(5, 7, 3, seed=2)
        with pytest.raises(ValueError):
            enc.encode(rng.normal(size=(4, 6)))


class TestTrainEncoder:
    def _stream(self, seed=0):
        data = generate_preset(
            scaled_preset("blobs-standard", source_size=200, target_size=80,
                          eval_size=10, dim=8, source_blobs=10),
            seed=seed,
        )
        return MixedStream(data.source, [data.target], MixerConfig(0.2, seed=seed))

    def test_learning_beats_uninformative_loss(self):
        hp = TrainConfig(steps=300, batch_size=16, num_negatives=7,
                         learning_rate=0.5, augment_sigma=0.3, seed=0,
                         hidden_dim=32, embed_dim=8)
        result = train_encoder(self._stream(), hp)
        assert len(result.losses) == 300
        tail = float(np.mean(result.losses[-20:]))
        assert tail < math.log(hp.num_negatives + 1)

    def test_bit_identical_trajectories(self):
        hp = TrainConfig(steps=40, batch_size=8, num_negatives=3, seed=9,
                         hidden_dim=16, embed_dim=4)
        a = train_encoder(self._stream(seed=5), hp)
        b = train_encoder(self._stream(seed=5), hp)
        assert a.losses == b.losses
        assert np.array_equal(a.encoder.w1, b.encoder.w1)

    def test_divergence_aborts_with_step(self):
        # unit-norm embeddings bound the logits, so runaway learning rates
        # saturate rather than explode; non-finite inputs are the realistic
        # way a non-finite loss appears

        class PoisonedStream:
            dim = 4

            def draw_vectors(self, count):
                out = np.ones((count, 4))
                out[0, 0] = np.nan
                return out

        hp = TrainConfig(steps=10, batch_size=8, num_negatives=3, seed=0,
                         hidden_dim=16, embed_dim=4)
        with pytest.raises(TrainingDivergedError) as err:
            train_encoder(PoisonedStream(), hp)
        assert err.value.step == 0

    def test_negative_count_validation(self):
        with pytest.raises(ValueError, match="num_negatives"):
            TrainConfig(batch_size=8, num_negatives=8)
        with pytest.raises(ValueError):
            TrainConfig(steps=0)
