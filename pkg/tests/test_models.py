"""Encoder/generator contracts: determinism, distribution validity,
normalization, gradient correctness, decode behaviour."""
import numpy as np
import pytest

from levae import autodiff as ad
from levae.autodiff import Tensor
from levae.errors import EmptySequence
from levae.models import (
    GaussianPosterior,
    decode,
    encode,
    encode_tensors,
    entropy_upper_bound,
    gaussian_kl,
    gaussian_kl_tensors,
    init_state,
    legal_action_mask,
    pad_batch,
    reparameterize,
    sequence_nll,
    sequence_nll_tensors,
    step,
)
from levae.kde import enumerate_sequences, exact_model_entropy
from levae.sequences import BOS, EOS, PAD, Vocabulary

from conftest import tiny_model, zero_generator


class TestStep:
    def test_distribution_validity_and_determinism(self):
        model = tiny_model(seed=3)
        gen = model.generator
        z = Tensor(np.zeros((2, 1)))
        state = init_state(gen, z)
        state2, logits = step(gen, state, np.array([BOS, BOS]))
        p = np.exp(ad.log_softmax(logits, legal_action_mask(5)).data)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
        assert p[:, BOS].max() == 0.0 and p[:, PAD].max() == 0.0
        legal = np.ones(5, dtype=bool)
        legal[[BOS, PAD]] = False
        assert (p[:, legal] > 0).all()
        _, logits_again = step(gen, state, np.array([BOS, BOS]))
        np.testing.assert_array_equal(logits.data, logits_again.data)

    def test_logits_gradient_fd(self):
        model = tiny_model(seed=4)
        gen = model.generator
        h = 1e-5
        weights = np.array([0.3, -0.2, 0.5, 0.1, -0.7])

        def loss_value():
            state = init_state(gen, Tensor(np.ones((1, 1))))
            _, logits = step(gen, state, np.array([3]))
            return ad.tsum(logits * Tensor(weights))

        loss = loss_value()
        params = gen.named()
        ad.zero_grads(params)
        ad.backward(loss)
        for name, p in params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            it = np.nditer(p.data, flags=["multi_index"])
            for _ in it:
                ix = it.multi_index
                orig = p.data[ix]
                p.data[ix] = orig + h
                up = loss_value().data
                p.data[ix] = orig - h
                dn = loss_value().data
                p.data[ix] = orig
                fd = (up - dn) / (2 * h)
                assert abs(fd - g[ix]) <= 1e-4 * max(abs(fd), abs(g[ix]), 1e-3), name


class TestEncoder:
    def test_deterministic(self):
        model = tiny_model(seed=5)
        post1 = encode((3, 4), model.encoder)
        post2 = encode((3, 4), model.encoder)
        np.testing.assert_array_equal(post1.mu, post2.mu)
        np.testing.assert_array_equal(post1.log_sigma, post2.log_sigma)

    def test_empty_sequence_rejected(self):
        model = tiny_model()
        with pytest.raises(EmptySequence):
            encode((), model.encoder)

    def test_order_sensitivity_possible(self):
        # untrained but nonzero recurrent weights already distinguish orders
        model = tiny_model(seed=6, d_h=8)
        a = encode((3, 4), model.encoder)
        b = encode((4, 3), model.encoder)
        assert not np.allclose(a.mu, b.mu)

    def test_mu_gradient_fd(self):
        model = tiny_model(seed=7)
        enc = model.encoder
        ids, lengths = pad_batch([(3, 4, 3)])
        h = 1e-5

        def mu0():
            mu, _ = encode_tensors(enc, ids, lengths)
            return ad.tsum(ad.gather(mu, np.array([0])))

        loss = mu0()
        params = enc.named()
        ad.zero_grads(params)
        ad.backward(loss)
        for name, p in params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            it = np.nditer(p.data, flags=["multi_index"])
            for _ in it:
                ix = it.multi_index
                orig = p.data[ix]
                p.data[ix] = orig + h
                up = mu0().data
                p.data[ix] = orig - h
                dn = mu0().data
                p.data[ix] = orig
                fd = (up - dn) / (2 * h)
                assert abs(fd - g[ix]) <= 1e-4 * max(abs(fd), abs(g[ix]), 1e-3), name

    def test_batch_padding_matches_single(self):
        # padded batch encodings equal per-sequence encodings
        model = tiny_model(seed=8)
        seqs = [(3,), (3, 4, 3), (4, 4)]
        ids, lengths = pad_batch(seqs)
        with ad.no_grad():
            mu, ls = encode_tensors(model.encoder, ids, lengths)
        for i, s in enumerate(seqs):
            single = encode(s, model.encoder)
            np.testing.assert_allclose(mu.data[i], single.mu, atol=1e-12)
            np.testing.assert_allclose(ls.data[i], single.log_sigma, atol=1e-12)


class TestReparameterize:
    def test_eps_zero(self):
        post = GaussianPosterior(mu=np.array([1.0, -2.0]), log_sigma=np.array([0.3, 0.1]))
        np.testing.assert_array_equal(reparameterize(post, np.zeros(2)), post.mu)

    def test_identity_posterior(self):
        post = GaussianPosterior(mu=np.zeros(2), log_sigma=np.zeros(2))
        eps = np.array([0.5, -1.5])
        np.testing.assert_array_equal(reparameterize(post, eps), eps)

    def test_mc_mean(self):
        rng = np.random.default_rng(9)
        post = GaussianPosterior(mu=np.array([0.7]), log_sigma=np.array([0.2]))
        n = 100_000
        zs = np.array([reparameterize(post, rng.standard_normal(1))[0] for _ in range(n)])
        sigma = np.exp(0.2)
        assert abs(zs.mean() - 0.7) < 3 * sigma / np.sqrt(n)


class TestGaussianKl:
    def test_standard_is_zero(self):
        post = GaussianPosterior(mu=np.zeros(3), log_sigma=np.zeros(3))
        assert gaussian_kl(post) == 0.0

    def test_mean_shift(self):
        post = GaussianPosterior(mu=np.array([1.0, 0.0]), log_sigma=np.zeros(2))
        assert gaussian_kl(post) == pytest.approx(0.5, abs=1e-12)

    def test_log_variance_one(self):
        # log sigma^2 = 1 -> (e - 2) / 2
        post = GaussianPosterior(mu=np.zeros(1), log_sigma=np.array([0.5]))
        assert gaussian_kl(post) == pytest.approx((np.e - 2) / 2, abs=1e-12)

    def test_tensor_version_matches(self):
        rng = np.random.default_rng(10)
        mu = rng.standard_normal((4, 3))
        ls = rng.standard_normal((4, 3)) * 0.3
        got = gaussian_kl_tensors(Tensor(mu), Tensor(ls)).data
        want = [gaussian_kl(GaussianPosterior(mu=m, log_sigma=s)) for m, s in zip(mu, ls)]
        np.testing.assert_allclose(got, want, atol=1e-12)


class TestSequenceNll:
    def test_uniform_generator_closed_form(self):
        model = zero_generator(tiny_model(vocab_size=6))
        # 3 legal content tokens + EOS = 4 legal actions; |x| = 2 -> 3 steps
        nll = sequence_nll(model.generator, (3, 4), np.zeros(1))
        assert nll == pytest.approx(3 * np.log(4), abs=1e-12)

    def test_nonnegative(self):
        model = tiny_model(seed=11)
        assert sequence_nll(model.generator, (3, 3, 4), np.array([0.4])) >= 0

    def test_likelihood_normalization_certified(self):
        vocab = Vocabulary(["a", "b"])
        model = tiny_model(vocab_size=vocab.size, seed=12, eos_bias=5.0)
        z = np.array([0.3])
        l_max = 14
        seqs = enumerate_sequences(vocab, l_max)
        ids, lengths = pad_batch(seqs)
        with ad.no_grad():
            nll = sequence_nll_tensors(
                model.generator, ids, lengths, Tensor(np.tile(z, (len(seqs), 1)))
            ).data
            # certified tail: every enumerated prefix state's EOS probability
            probs_eos = []
            state = init_state(model.generator, Tensor(np.zeros((len(seqs), 1))))
            mask = legal_action_mask(vocab.size)
            tokens = np.full(len(seqs), BOS)
            for pos in range(l_max + 1):
                state, logits = step(model.generator, state, tokens)
                p = np.exp(ad.log_softmax(logits, mask).data)
                probs_eos.append(p[:, EOS].min())
                tokens = np.where(pos < lengths, ids[:, min(pos, ids.shape[1] - 1)], EOS)
        total = np.exp(-nll).sum()
        tail_cap = (1 - min(probs_eos)) ** (l_max + 1)
        assert total <= 1 + 1e-12
        assert total + tail_cap >= 1 - 1e-6
        assert tail_cap < 1e-6  # the chosen eos bias keeps truncation negligible


class TestDecode:
    def test_greedy_dominant_token(self):
        model = zero_generator(tiny_model(vocab_size=6))
        model.generator.b_out.data[4] = 8.0
        model.generator.b_out.data[EOS] = 4.0
        out = decode(model.generator, np.zeros((1, 1)), mode="greedy", l_cap=10)
        assert out.sequences[0] == (4,) * 10  # dominant token until the cap

    def test_greedy_tie_breaks_lowest_id(self):
        model = zero_generator(tiny_model(vocab_size=6))
        model.generator.b_out.data[:] = 0.0  # uniform: EOS (id 1) wins ties
        out = decode(model.generator, np.zeros((1, 1)), mode="greedy", l_cap=10)
        assert out.sequences[0] == ()

    def test_sample_deterministic_given_seed(self):
        model = tiny_model(seed=13)
        a = decode(model.generator, np.zeros((3, 1)), "sample", np.random.default_rng(42), 12)
        b = decode(model.generator, np.zeros((3, 1)), "sample", np.random.default_rng(42), 12)
        assert a.sequences == b.sequences

    def test_step1_frequencies_match_distribution(self):
        model = tiny_model(seed=14)
        n = 100_000
        out = decode(
            model.generator, np.zeros((n, 1)), "sample", np.random.default_rng(0), l_cap=1
        )
        p = out.step_probs[0][0]
        firsts = np.array([s[0] if s else EOS for s in out.sequences])
        for tok in range(5):
            freq = (firsts == tok).mean()
            se = np.sqrt(p[tok] * (1 - p[tok]) / n)
            assert abs(freq - p[tok]) <= 3 * se + 1e-9

    def test_fixed_length(self):
        model = tiny_model(seed=15)
        out = decode(
            model.generator,
            np.zeros((4, 1)),
            "sample",
            np.random.default_rng(1),
            l_cap=20,
            fixed_length=6,
        )
        assert all(len(s) == 6 for s in out.sequences)
        assert all(EOS not in s for s in out.sequences)


class TestEntropyBound:
    def test_z_independent_generator_equals_entropy(self):
        vocab = Vocabulary(["a", "b"])
        model = tiny_model(vocab_size=vocab.size, seed=16, eos_bias=4.0)
        model.generator.w_init.data[:] = 0.0  # decoder ignores z entirely
        h_exact, trunc = exact_model_entropy(model.generator, 1, vocab, 10, n_nodes=24)
        assert trunc < 1e-6
        rng = np.random.default_rng(2)
        est, se = entropy_upper_bound(model.generator, 1, 4000, rng, l_cap=20)
        assert abs(est - h_exact) <= 3 * se + 1e-3

    def test_bound_at_least_exact_entropy(self):
        vocab = Vocabulary(["a", "b"])
        for seed in range(4):
            model = tiny_model(vocab_size=vocab.size, seed=seed, eos_bias=4.0)
            h_exact, trunc = exact_model_entropy(model.generator, 1, vocab, 10, n_nodes=24)
            assert trunc < 1e-6
            rng = np.random.default_rng(seed)
            est, se = entropy_upper_bound(model.generator, 1, 4000, rng, l_cap=20)
            assert est + 3 * se >= h_exact

    def test_near_deterministic_generator_near_zero(self):
        model = zero_generator(tiny_model(vocab_size=6))
        model.generator.b_out.data[EOS] = 25.0  # point mass on the empty sequence
        est, _ = entropy_upper_bound(model.generator, 1, 500, np.random.default_rng(3))
        assert est == pytest.approx(0.0, abs=1e-6)
