import math

import numpy as np
import pytest
import torch

from app.errors import DivergenceError, ShapeMismatchError
from app.models.config import EncoderConfig, HeadKind
from app.models.skeleton import SkeletonSequence
from app.services.contrastive import build_learner, info_nce
from app.services.encoder import (
    DTYPE, ProjectionHead, build_encoder, cae, cae_plus, compute_gradients, copy_params, init_head,
    init_params, last_hidden, momentum_update, parameter_checksum, project, represent, sequences_to_tensor,
    tap,
)
from app.services.gradient_check import central_difference, finite_difference_check, relative_error
from app.services.rng import RngStream


def _sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def _random_input(batch=3, steps=5, size=6, seed=0, scale=1.0):
    return torch.from_numpy(np.random.default_rng(seed).normal(0.0, scale, (batch, steps, size)))


@pytest.mark.unit
class TestInitialization:
    """Seeded parameter initialization"""

    def test_weight_bounds_and_biases(self):
        encoder = init_params(6, 8, 2, RngStream(0))
        bound = 1.0 / math.sqrt(8)
        for name, param in encoder.lstm.named_parameters():
            if name.startswith("weight"):
                assert param.abs().max().item() <= bound
                assert param.dtype == DTYPE
            elif name.startswith("bias_ih"):
                expected = torch.zeros(32, dtype=DTYPE)
                expected[8:16] = 1.0
                assert torch.equal(param.detach(), expected)
            else:
                assert torch.all(param == 0.0)

    def test_same_seed_same_parameters(self):
        a = init_params(6, 8, 2, RngStream(5))
        b = init_params(6, 8, 2, RngStream(5))
        assert parameter_checksum(a) == parameter_checksum(b)

    def test_different_seed_differs(self):
        a = init_params(6, 8, 1, RngStream(5))
        b = init_params(6, 8, 1, RngStream(6))
        assert parameter_checksum(a) != parameter_checksum(b)

    def test_zero_hidden_size_rejected(self):
        with pytest.raises(ValueError):
            init_params(6, 0, 1, RngStream(0))

    def test_build_encoder_with_heads(self):
        for kind, out_dim in [(HeadKind.NONE, 8), (HeadKind.LINEAR, 64), (HeadKind.NONLINEAR, 64)]:
            config = EncoderConfig(hidden_size=8, layers=1, head=kind, head_dim=64)
            encoder, head = build_encoder(6, config, RngStream(0))
            out = represent(encoder, head, _random_input())
            assert out.shape == (3, out_dim)


@pytest.mark.unit
class TestForwardPass:
    """LSTM recurrence and its boundary cases"""

    def test_zero_parameters_give_zero_output(self):
        encoder = init_params(6, 4, 2, RngStream(0))
        with torch.no_grad():
            for param in encoder.parameters():
                param.zero_()
        hidden = encoder(_random_input())
        assert torch.all(hidden == 0.0)

    def test_matches_closed_form_gates(self):
        encoder = init_params(1, 1, 1, RngStream(0))
        a_i, a_f, a_g, a_o = 0.3, -0.7, 1.2, 0.5
        with torch.no_grad():
            encoder.lstm.weight_ih_l0.copy_(torch.tensor([[a_i], [a_f], [a_g], [a_o]], dtype=DTYPE))
            encoder.lstm.weight_hh_l0.zero_()
            encoder.lstm.bias_ih_l0.zero_()
            encoder.lstm.bias_hh_l0.zero_()
        xs = [0.8, -1.5]
        hidden = encoder(torch.tensor([[[x] for x in xs]], dtype=DTYPE))

        c, expected = 0.0, []
        for x in xs:
            i, f, g, o = _sigmoid(a_i * x), _sigmoid(a_f * x), math.tanh(a_g * x), _sigmoid(a_o * x)
            c = f * c + i * g
            expected.append(o * math.tanh(c))
        np.testing.assert_allclose(hidden[0, :, 0].detach().numpy(), expected, atol=1e-12)

    def test_forget_bias_carries_cell_state(self):
        # x_0 writes the cell, x_1 = 0 leaves only the forget path
        encoder = init_params(1, 1, 1, RngStream(0))
        with torch.no_grad():
            encoder.lstm.weight_ih_l0.copy_(torch.tensor([[0.0], [0.0], [1.0], [0.0]], dtype=DTYPE))
            encoder.lstm.weight_hh_l0.zero_()
        hidden = encoder(torch.tensor([[[2.0], [0.0]]], dtype=DTYPE))
        c0 = 0.5 * math.tanh(2.0)
        c1 = _sigmoid(1.0) * c0
        np.testing.assert_allclose(hidden[0, :, 0].detach().numpy(),
                                   [0.5 * math.tanh(c0), 0.5 * math.tanh(c1)], atol=1e-12)

    def test_causal(self):
        encoder = init_params(6, 5, 2, RngStream(1))
        x = _random_input()
        changed = x.clone()
        changed[:, 3] += 10.0
        a, b = encoder(x), encoder(changed)
        assert torch.equal(a[:, :3], b[:, :3])
        assert not torch.equal(a[:, 3:], b[:, 3:])

    def test_hidden_states_bounded(self):
        encoder = init_params(6, 5, 2, RngStream(2))
        hidden = encoder(_random_input(scale=100.0))
        assert hidden.abs().max().item() <= 1.0

    def test_input_size_mismatch(self):
        encoder = init_params(6, 4, 1, RngStream(0))
        with pytest.raises(ShapeMismatchError):
            encoder(_random_input(size=5))

    def test_non_finite_input_diverges(self):
        encoder = init_params(6, 4, 1, RngStream(0))
        x = _random_input()
        x[0, 1, 2] = float("nan")
        with pytest.raises(DivergenceError):
            encoder(x)

    def test_sequences_to_tensor_flattens_actor_joint_axis(self):
        coords = np.zeros((2, 2, 3, 3))
        for t, m, j, a in np.ndindex(coords.shape):
            coords[t, m, j, a] = 1000 * t + 100 * m + 10 * j + a
        x = sequences_to_tensor([SkeletonSequence(coords=coords, valid_frames=2)])
        assert x.shape == (1, 2, 18)
        assert x[0, 1, :4].tolist() == [1000.0, 1001.0, 1002.0, 1010.0]
        assert x[0, 0, 9].item() == 100.0


@pytest.mark.unit
class TestPooling:
    """Temporal average pooling and projection heads"""

    def test_tap_of_ramp(self):
        hidden = torch.tensor([[1.0], [2.0], [3.0]], dtype=DTYPE)
        assert tap(hidden).tolist() == [2.0]

    def test_tap_single_step(self):
        hidden = torch.tensor([[[0.5, -0.25]]], dtype=DTYPE)
        assert torch.equal(tap(hidden), hidden[:, 0])

    def test_tap_of_constant(self):
        hidden = torch.full((2, 7, 3), 0.3, dtype=DTYPE)
        torch.testing.assert_close(tap(hidden), torch.full((2, 3), 0.3, dtype=DTYPE), rtol=0, atol=1e-15)

    def test_tap_empty_raises(self):
        with pytest.raises(ValueError):
            tap(torch.zeros((0, 4), dtype=DTYPE))

    def test_last_hidden(self):
        hidden = torch.arange(6, dtype=DTYPE).reshape(1, 3, 2)
        assert last_hidden(hidden).tolist() == [[4.0, 5.0]]

    def test_identity_head(self):
        head = ProjectionHead(HeadKind.NONE, 5, 64)
        v = torch.ones((2, 5), dtype=DTYPE)
        assert head.out_dim == 5
        assert torch.equal(project(head, v), v)

    def test_nonlinear_head_output_dim(self):
        head = init_head(HeadKind.NONLINEAR, 5, 128, RngStream(0))
        assert project(head, torch.ones((2, 5), dtype=DTYPE)).shape == (2, 128)

    def test_head_dim_mismatch(self):
        head = init_head(HeadKind.LINEAR, 5, 64, RngStream(0))
        with pytest.raises(ShapeMismatchError):
            project(head, torch.ones((2, 4), dtype=DTYPE))

    def test_head_dim_choices(self):
        with pytest.raises(ValueError):
            EncoderConfig(head_dim=100)


@pytest.mark.unit
class TestMomentumUpdate:
    """theta_k <- m theta_k + (1 - m) theta_q"""

    def test_zero_momentum_copies(self):
        q = init_params(6, 4, 1, RngStream(0))
        k = init_params(6, 4, 1, RngStream(1))
        momentum_update(k, q, 0.0)
        assert parameter_checksum(k) == parameter_checksum(q)

    def test_half_momentum_averages(self):
        q = init_params(6, 4, 1, RngStream(0))
        k = init_params(6, 4, 1, RngStream(1))
        expected = [0.5 * pk.detach() + 0.5 * pq.detach() for pk, pq in zip(k.parameters(), q.parameters())]
        momentum_update(k, q, 0.5)
        for param, value in zip(k.parameters(), expected):
            torch.testing.assert_close(param.detach(), value, rtol=0, atol=1e-15)

    def test_equal_parameters_are_fixed_point(self):
        q = init_params(6, 4, 1, RngStream(0))
        k = init_params(6, 4, 1, RngStream(1))
        copy_params(k, q)
        momentum_update(k, q, 0.999)
        for pk, pq in zip(k.parameters(), q.parameters()):
            torch.testing.assert_close(pk, pq, rtol=0, atol=1e-15)

    def test_source_untouched(self):
        q = init_params(6, 4, 1, RngStream(0))
        k = init_params(6, 4, 1, RngStream(1))
        before = parameter_checksum(q)
        momentum_update(k, q, 0.9)
        assert parameter_checksum(q) == before

    def test_momentum_one_rejected(self):
        q = init_params(6, 4, 1, RngStream(0))
        with pytest.raises(ValueError):
            momentum_update(init_params(6, 4, 1, RngStream(1)), q, 1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            momentum_update(init_params(6, 4, 1, RngStream(0)), init_params(6, 5, 1, RngStream(0)), 0.5)


@pytest.mark.unit
class TestRepresentations:
    """CAE and CAE+ feature extraction"""

    def test_cae_dimension(self, make_sequence):
        encoder = init_params(9, 7, 1, RngStream(0))
        assert cae(encoder, [make_sequence(), make_sequence(seed=1)]).shape == (2, 7)

    def test_cae_plus_halves(self, make_sequence):
        encoder_q = init_params(9, 7, 1, RngStream(0))
        encoder_k = init_params(9, 7, 1, RngStream(1))
        seqs = [make_sequence(seed=s) for s in range(3)]
        joint = cae_plus(encoder_q, encoder_k, seqs)
        assert joint.shape == (3, 14)
        assert torch.equal(joint[:, :7], cae(encoder_q, seqs))
        assert torch.equal(joint[:, 7:], cae(encoder_k, seqs))

    def test_cae_plus_of_identical_encoders(self, make_sequence):
        encoder = init_params(9, 7, 1, RngStream(0))
        joint = cae_plus(encoder, encoder, make_sequence())
        assert torch.equal(joint[:, :7], joint[:, 7:])

    def test_no_grad(self, make_sequence):
        encoder = init_params(9, 7, 1, RngStream(0))
        assert not cae(encoder, make_sequence()).requires_grad


@pytest.mark.unit
class TestGradients:
    """Backpropagation through time against central differences"""

    def test_relative_error_floor(self):
        assert relative_error(0.0, 0.0) == 0.0
        assert relative_error(1e-7, 0.0) == pytest.approx(1e-2)

    def test_central_difference_of_quadratic(self):
        param = torch.tensor([1.5, -2.0], dtype=DTYPE)
        numeric = central_difference(lambda: (param ** 2).sum(), param, 1)
        assert numeric == pytest.approx(-4.0, abs=1e-8)
        assert param.tolist() == [1.5, -2.0]

    def test_queue_loss_gradients(self, tiny_pretrain_config):
        learner = build_learner(6, tiny_pretrain_config, RngStream(0))
        x_q, x_k = _random_input(batch=4, seed=1), _random_input(batch=4, seed=2)
        negatives = torch.from_numpy(np.random.default_rng(3).normal(0.0, 0.5, (8, 6)))
        k = learner.key(x_k)

        def loss_fn():
            return info_nce(learner.query(x_q), k, negatives, 0.5)

        report = finite_difference_check(loss_fn, learner.trainable_parameters(), checked=200, seed=0)
        assert report.checked == 200
        assert report.max_relative_error < 1e-4

    def test_key_side_gets_no_gradient(self, tiny_pretrain_config):
        learner = build_learner(6, tiny_pretrain_config, RngStream(0))
        loss = info_nce(learner.query(_random_input(batch=4)), learner.key(_random_input(batch=4, seed=1)),
                        None, 0.5)
        loss.backward()
        for param in list(learner.encoder_k.parameters()) + list(learner.head_k.parameters()):
            assert not param.requires_grad
            assert param.grad is None
        names = [name for name, _ in learner.trainable_parameters()]
        assert names and all(name.startswith(("encoder_q.", "head_q.")) for name in names)

    def test_unused_parameters_get_zeros(self):
        used = torch.ones(3, dtype=DTYPE, requires_grad=True)
        unused = torch.ones(2, dtype=DTYPE, requires_grad=True)
        grads = compute_gradients((used * 2.0).sum(), [("used", used), ("unused", unused)])
        assert grads["used"].tolist() == [2.0, 2.0, 2.0]
        assert grads["unused"].tolist() == [0.0, 0.0]

    def test_non_finite_gradient_diverges(self):
        param = torch.zeros(1, dtype=DTYPE, requires_grad=True)
        with pytest.raises(DivergenceError):
            compute_gradients(torch.sqrt(param).sum(), [("p", param)])
