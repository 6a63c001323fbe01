"""Forward dynamics model tests: contrastive loss oracles, gradients, training."""

import math

import numpy as np
import pytest

from reaction_forge.checkpoint import load_tensors, save_tensors
from reaction_forge.data import GenConfig, synth_interactions
from reaction_forge.data.types import Demonstration, Trajectory
from reaction_forge.errors import (
    ConfigError,
    ContractError,
    InputShapeError,
    TrainingDivergenceError,
)
from reaction_forge.forward_dynamics import (
    FdmBatch,
    FdmTrainConfig,
    ForwardDynamicsModel,
    demo_tuples,
    fdm_contrastive_loss,
    fdm_forward,
    fdm_grads,
    fdm_init,
    fdm_loss,
    retrieval_accuracy,
    train_fdm,
)
from reaction_forge.nn import MlpParams
from reaction_forge.representation import (
    VaeTrainConfig,
    state_feature_rows,
    train_vae,
)
from reaction_forge.sim import SimModel, humanoid_spec
from reaction_forge.sim.dynamics import step_batch


@pytest.fixture(scope="module")
def model():
    return SimModel(humanoid_spec())


def _rollout(model, start, seed, steps=30):
    rng = np.random.default_rng(seed)
    state = start[None, :].copy()
    rest_q = state[0, 3:11].copy()
    phase = rng.normal(size=model.n_dofs)
    states, actions = [state[0].copy()], []
    for t in range(steps):
        target = rest_q + 0.3 * np.sin(0.2 * t + phase)
        target = np.clip(target, model.angle_min, model.angle_max)[None, :]
        state, _, _ = step_batch(model, state, target)
        states.append(state[0].copy())
        actions.append(target[0].copy())
    return Trajectory(np.array(states), np.array(actions), 30.0, "push", {})


@pytest.fixture(scope="module")
def demos(model):
    corpus = synth_interactions(GenConfig(n_pairs=2), seed=31)
    start = corpus[0].actor.frames[0]
    return [
        Demonstration(corpus[0], _rollout(model, start, 1), _rollout(model, start, 2)),
        Demonstration(corpus[1], _rollout(model, start, 3), _rollout(model, start, 4)),
    ]


@pytest.fixture(scope="module")
def small_vaes(model, demos):
    tracks = [t for d in demos for t in (d.actor_track, d.reactor_track)]
    feats = np.concatenate([state_feature_rows(model, t.states) for t in tracks])
    acts = np.concatenate([t.actions for t in tracks])
    svae, _ = train_vae("state", feats,
                        VaeTrainConfig(latent_dim=8, hidden=(16,), epochs=2, batch=32),
                        seed=41)
    avae, _ = train_vae("action", acts,
                        VaeTrainConfig(latent_dim=4, hidden=(16,), epochs=2, batch=32),
                        seed=42)
    return svae, avae


def _unit_rows(rng, n, d):
    rows = rng.normal(size=(n, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


# -- closed-form loss values -----------------------------------------------------


def test_loss_all_identical_pair_is_log3():
    e = np.zeros((2, 32))
    e[:, 0] = 1.0
    batch = FdmBatch(e.copy(), np.zeros((2, 16)), e.copy())
    np.testing.assert_allclose(fdm_contrastive_loss(e.copy(), batch),
                               math.log(3.0), rtol=0, atol=1e-9)


def test_loss_all_identical_pair_literal_is_log2():
    e = np.zeros((2, 32))
    e[:, 0] = 1.0
    batch = FdmBatch(e.copy(), np.zeros((2, 16)), e.copy())
    loss = fdm_contrastive_loss(e.copy(), batch, paper_literal_denominator=True)
    np.testing.assert_allclose(loss, math.log(2.0), rtol=0, atol=1e-9)


def test_loss_orthogonal_negatives_unit_temperature():
    # positive similarity 1, both surviving negatives 0: log(1 + 2/e)
    basis = np.eye(8, 32)
    pred = basis[[0, 1]]
    batch = FdmBatch(basis[[4, 5]], np.zeros((2, 16)), basis[[0, 1]], tau=1.0)
    np.testing.assert_allclose(fdm_contrastive_loss(pred, batch),
                               math.log(1.0 + 2.0 * math.exp(-1.0)),
                               rtol=0, atol=1e-9)


def test_loss_all_equal_batch_is_log_2n_minus_1():
    for n in (2, 3, 5):
        e = np.zeros((n, 32))
        e[:, 0] = 1.0
        batch = FdmBatch(e.copy(), np.zeros((n, 16)), e.copy())
        np.testing.assert_allclose(fdm_contrastive_loss(e.copy(), batch),
                                   math.log(2 * n - 1), rtol=0, atol=1e-9)


def test_loss_near_zero_when_prediction_nails_separated_successors():
    basis = np.eye(12, 32)
    pred = basis[:4]
    batch = FdmBatch(basis[4:8], np.zeros((4, 16)), basis[:4], tau=0.01)
    assert 0.0 <= fdm_contrastive_loss(pred, batch) < 1e-30


# -- batch and input validation ----------------------------------------------------


def test_batch_rejects_single_tuple():
    with pytest.raises(ContractError):
        FdmBatch(np.ones((1, 4)), np.ones((1, 2)), np.ones((1, 4)))


def test_batch_rejects_length_mismatch():
    with pytest.raises(InputShapeError):
        FdmBatch(np.ones((3, 4)), np.ones((2, 2)), np.ones((3, 4)))


def test_batch_rejects_successor_shape_mismatch():
    with pytest.raises(InputShapeError):
        FdmBatch(np.ones((3, 4)), np.ones((3, 2)), np.ones((3, 5)))


@pytest.mark.parametrize("tau", [0.0, -0.5])
def test_batch_rejects_bad_temperature(tau):
    with pytest.raises(ConfigError):
        FdmBatch(np.ones((2, 4)), np.ones((2, 2)), np.ones((2, 4)), tau=tau)


def test_loss_rejects_prediction_shape_mismatch():
    batch = FdmBatch(np.ones((2, 4)), np.ones((2, 2)), np.ones((2, 4)))
    with pytest.raises(InputShapeError):
        fdm_contrastive_loss(np.ones((2, 5)), batch)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        FdmTrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        FdmTrainConfig(batch=1)
    with pytest.raises(ConfigError):
        FdmTrainConfig(tau=0.0)
    with pytest.raises(ConfigError):
        FdmTrainConfig(val_fraction=1.0)


# -- loss structure ------------------------------------------------------------------


def test_loss_invariant_under_row_permutation():
    rng = np.random.default_rng(51)
    n = 7
    pred = _unit_rows(rng, n, 8)
    z_s, z_a, z_n = rng.normal(size=(n, 8)), rng.normal(size=(n, 3)), rng.normal(size=(n, 8))
    base = fdm_contrastive_loss(pred, FdmBatch(z_s, z_a, z_n))
    perm = rng.permutation(n)
    permuted = fdm_contrastive_loss(pred[perm], FdmBatch(z_s[perm], z_a[perm], z_n[perm]))
    np.testing.assert_allclose(permuted, base, rtol=0, atol=1e-12)


def test_loss_ignores_candidate_scale():
    rng = np.random.default_rng(52)
    n = 5
    pred = _unit_rows(rng, n, 8)
    z_s, z_a, z_n = rng.normal(size=(n, 8)), rng.normal(size=(n, 3)), rng.normal(size=(n, 8))
    base = fdm_contrastive_loss(pred, FdmBatch(z_s, z_a, z_n))
    scales = rng.uniform(0.2, 5.0, size=(n, 1))
    scaled = fdm_contrastive_loss(pred, FdmBatch(z_s * scales, z_a, z_n * scales[::-1]))
    np.testing.assert_allclose(scaled, base, rtol=0, atol=1e-12)


def test_own_current_state_is_not_a_negative():
    # put each row's own z_s exactly on top of its prediction: were it counted,
    # it would dominate the denominator and move the loss
    basis = np.eye(8, 32)
    pred = basis[[0, 1]]
    near = FdmBatch(pred.copy(), np.zeros((2, 16)), basis[[0, 1]], tau=1.0)
    far = FdmBatch(basis[[4, 5]], np.zeros((2, 16)), basis[[0, 1]], tau=1.0)
    np.testing.assert_allclose(fdm_contrastive_loss(pred, near),
                               fdm_contrastive_loss(pred, far), rtol=0, atol=1e-12)


# -- the prediction network -----------------------------------------------------------


def test_forward_output_is_unit_norm():
    fdm = fdm_init(8, 4, np.random.default_rng(61))
    rng = np.random.default_rng(62)
    out = fdm_forward(fdm, rng.normal(size=(20, 8)), rng.normal(size=(20, 4)))
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, rtol=0, atol=1e-9)


def test_forward_single_row_passthrough():
    fdm = fdm_init(8, 4, np.random.default_rng(63))
    z_s, z_a = np.linspace(-1, 1, 8), np.linspace(1, -1, 4)
    single = fdm_forward(fdm, z_s, z_a)
    assert single.shape == (8,)
    np.testing.assert_array_equal(single, fdm_forward(fdm, z_s[None], z_a[None])[0])


def test_identity_network_delegates_to_contrastive_formula():
    # a single affine layer that copies z_s makes the prediction hand-computable
    weights = np.zeros((12, 8))
    weights[:8, :8] = np.eye(8)
    net = MlpParams(layer_sizes=[12, 8], weights=[weights],
                    biases=[np.zeros(8)], activations=[])
    fdm = ForwardDynamicsModel(net)
    rng = np.random.default_rng(64)
    z_s = rng.normal(size=(5, 8))
    batch = FdmBatch(z_s, rng.normal(size=(5, 4)), rng.normal(size=(5, 8)))
    pred = z_s / np.linalg.norm(z_s, axis=1, keepdims=True)
    np.testing.assert_allclose(fdm_loss(fdm, batch),
                               fdm_contrastive_loss(pred, batch), rtol=0, atol=1e-12)


def test_gradients_match_finite_differences():
    fdm = fdm_init(6, 3, np.random.default_rng(65), hidden=(8,))
    rng = np.random.default_rng(66)
    batch = FdmBatch(rng.normal(size=(4, 6)), rng.normal(size=(4, 3)),
                     rng.normal(size=(4, 6)), tau=0.5)
    loss, grads = fdm_grads(fdm, batch)
    assert loss > 0 and any(np.abs(g).max() > 0 for g in grads.values())
    h = 1e-6
    checked = 0
    for layer, w in enumerate(fdm.net.weights):
        flat = w.reshape(-1)
        for k in rng.choice(flat.size, size=min(8, flat.size), replace=False):
            old = flat[k]
            flat[k] = old + h
            up = fdm_loss(fdm, batch)
            flat[k] = old - h
            down = fdm_loss(fdm, batch)
            flat[k] = old
            numeric = (up - down) / (2 * h)
            analytic = grads[f"w{layer}"].reshape(-1)[k]
            np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-8)
            checked += 1
    assert checked >= 16


# -- retrieval ---------------------------------------------------------------------------


def test_retrieval_untrained_sits_at_chance():
    fdm = fdm_init(32, 16, np.random.default_rng(71))
    hits = []
    for seed in range(30):
        rng = np.random.default_rng(1000 + seed)
        batch = FdmBatch(_unit_rows(rng, 64, 32), rng.normal(size=(64, 16)),
                         _unit_rows(rng, 64, 32))
        hits.append(retrieval_accuracy(fdm, batch))
    mean = float(np.mean(hits))
    # chance is 1/127; an informative untrained model would be a bug
    assert 0.0 <= mean < 0.03


def test_retrieval_perfect_when_successors_match_predictions():
    fdm = fdm_init(32, 16, np.random.default_rng(72))
    rng = np.random.default_rng(73)
    z_s = _unit_rows(rng, 64, 32)
    z_a = rng.normal(size=(64, 16))
    batch = FdmBatch(z_s, z_a, fdm_forward(fdm, z_s, z_a))
    assert retrieval_accuracy(fdm, batch) == 1.0


# -- training -----------------------------------------------------------------------------


def test_demo_tuples_cover_both_tracks(model, demos, small_vaes):
    svae, avae = small_vaes
    z_s, z_a, z_n = demo_tuples(model, demos, svae, avae)
    want = sum(len(t.actions) for d in demos for t in (d.actor_track, d.reactor_track))
    assert z_s.shape == (want, svae.latent_dim)
    assert z_a.shape == (want, avae.latent_dim)
    assert z_n.shape == (want, svae.latent_dim)


def test_train_fdm_reduces_loss_and_reports_retrieval(model, demos, small_vaes):
    svae, avae = small_vaes
    frozen = {k: v.copy() for k, v in svae.tensors().items()}
    cfg = FdmTrainConfig(epochs=4, batch=32, hidden=(16,))
    fdm, curves = train_fdm(model, demos, svae, avae, cfg, seed=81)
    assert curves[-1]["loss"] < curves[0]["loss"]
    assert all(np.isfinite(c["loss"]) for c in curves)
    assert all(0.0 <= c["retrieval"] <= 1.0 for c in curves)
    assert fdm.net.in_dim == svae.latent_dim + avae.latent_dim
    for key, val in svae.tensors().items():
        np.testing.assert_array_equal(val, frozen[key])


def test_train_fdm_is_seed_deterministic(model, demos, small_vaes):
    svae, avae = small_vaes
    cfg = FdmTrainConfig(epochs=2, batch=32, hidden=(16,))
    fdm_a, curves_a = train_fdm(model, demos, svae, avae, cfg, seed=82)
    fdm_b, curves_b = train_fdm(model, demos, svae, avae, cfg, seed=82)
    fdm_c, _ = train_fdm(model, demos, svae, avae, cfg, seed=83)
    assert curves_a == curves_b
    ta, tb, tc = fdm_a.tensors(), fdm_b.tensors(), fdm_c.tensors()
    for key in ta:
        np.testing.assert_array_equal(ta[key], tb[key])
    assert any(not np.array_equal(ta[k], tc[k]) for k in ta)


def test_train_fdm_requires_demos(model, small_vaes):
    svae, avae = small_vaes
    with pytest.raises(ContractError):
        train_fdm(model, [], svae, avae, FdmTrainConfig(epochs=1), seed=0)


def test_train_fdm_aborts_on_divergence(model, demos, small_vaes, monkeypatch):
    import reaction_forge.forward_dynamics as fd

    svae, avae = small_vaes
    real = fd._loss_tape
    calls = {"n": 0}

    def spiking(tape, batch, paper_literal_denominator=False):
        calls["n"] += 1
        loss = real(tape, batch, paper_literal_denominator)
        return loss if calls["n"] == 1 else loss * 1e4

    monkeypatch.setattr(fd, "_loss_tape", spiking)
    with pytest.raises(TrainingDivergenceError, match="diverged"):
        train_fdm(model, demos, svae, avae,
                  FdmTrainConfig(epochs=2, batch=32, hidden=(16,)), seed=84)


def test_fdm_checkpoint_file_roundtrip(tmp_path):
    fdm = fdm_init(8, 4, np.random.default_rng(91))
    path = tmp_path / "fdm.ck"
    save_tensors(path, fdm.tensors())
    back = ForwardDynamicsModel.from_tensors(load_tensors(path))
    rng = np.random.default_rng(92)
    z_s, z_a = rng.normal(size=(6, 8)), rng.normal(size=(6, 4))
    np.testing.assert_array_equal(fdm_forward(back, z_s, z_a),
                                  fdm_forward(fdm, z_s, z_a))
