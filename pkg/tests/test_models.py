import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.linear_model import LogisticRegression

from tabadv import autodiff as ad
from tabadv.autodiff import Tensor
from tabadv.constraints import violation_mask
from tabadv.data import fit
from tabadv.models import (
    AdvConfig,
    CheckpointError,
    SchemaMismatchError,
    TargetArch,
    TargetClassifier,
    adv_loss,
    generate,
    generator_loss,
    kl_divergence,
    load_generator,
    load_target,
    pert_loss,
    reconstruction_loss,
    save_generator,
    save_target,
    total_loss,
    train_advdgm,
    train_backbone,
    train_target,
    tvae_elbo,
    wgan_losses,
)
from tabadv.models import _generator_output
from tabadv.nn import Adam, DenseNet, weight_clip


def linear_net(weight, bias):
    rng = np.random.default_rng(0)
    w = np.asarray(weight, dtype=np.float64)
    net = DenseNet((w.shape[0], w.shape[1]), ("linear",), rng)
    net.weights[0].data = w.copy()
    net.biases[0].data = np.asarray(bias, dtype=np.float64).copy()
    return net


def identity_target(k, gauss):
    pipe = fit("classifier", gauss)
    return TargetClassifier(linear_net(np.eye(k)[:2] if k == 2 else np.zeros((2, k)), np.zeros(k)), pipe, [str(i) for i in range(k)])


# --- target ------------------------------------------------------------------------

def test_target_separates_gaussians(gauss_splits, gauss_target):
    tr, _, te = gauss_splits
    acc = 1.0 - gauss_target.error_rate(te)
    # independent oracle: a linear model reaches the same regime on this split
    oracle = LogisticRegression().fit(tr.continuous_array(), tr.y)
    assert oracle.score(te.continuous_array(), te.y) >= 0.95
    assert acc >= 0.95
    assert gauss_target.clean_error == pytest.approx(1.0 - acc)


def test_target_rejects_single_class(gauss):
    one = gauss.subset(np.flatnonzero(gauss.y == 0)[:50])
    with pytest.raises(ValueError, match="single class"):
        train_target(one, one, TargetArch(epochs=1))


def test_target_parameters_frozen(gauss_target):
    assert all(not p.requires_grad for p in gauss_target.net.parameters())


# --- losses -------------------------------------------------------------------------

def test_adv_loss_uniform_is_log_k(gauss):
    t = identity_target(3, gauss)
    assert adv_loss(t, Tensor(np.ones((4, 2))), [0, 1, 2, 0]).item() == pytest.approx(math.log(3), abs=1e-12)


def test_adv_loss_hand_logits(gauss):
    t = identity_target(2, gauss)
    x = Tensor([[2.0, 0.0]])
    # the class holding logit 2
    assert adv_loss(t, x, [0]).item() == pytest.approx(math.log1p(math.e**2) - 2, abs=1e-12)
    assert adv_loss(t, x, [1]).item() == pytest.approx(math.log1p(math.e**2), abs=1e-12)


def test_adv_loss_decreases_with_confidence(gauss):
    t = identity_target(2, gauss)
    weak = adv_loss(t, Tensor([[1.0, 0.0]]), [0]).item()
    strong = adv_loss(t, Tensor([[4.0, 0.0]]), [0]).item()
    assert strong < weak < math.log(2)


def test_pert_loss_examples():
    assert pert_loss(np.zeros((3, 2))).item() == 0.0
    assert pert_loss(np.array([3.0, 4.0])).item() == 5.0
    assert pert_loss(np.array([[3.0, 4.0], [0.0, 0.0]])).item() == 2.5


def test_total_loss_arithmetic():
    assert total_loss(1.0, 0.5, 0.25, 1.0, 2.0) == 1.0
    assert total_loss(0.7, 123.0, 9.0, 0.0, 0.0) == 0.7
    t = total_loss(Tensor(1.0), Tensor(0.5), Tensor(0.25), 1.0, 2.0)
    assert t.item() == 1.0


finite = st.floats(-50, 50, allow_nan=False)


@given(finite, st.floats(0.01, 50), finite, st.floats(0, 20), st.floats(0, 20), st.floats(0.01, 5))
def test_total_loss_strictly_decreasing_in_alpha(l_dgm, l_adv, l_pert, alpha, beta, step):
    assert total_loss(l_dgm, l_adv, l_pert, alpha + step, beta) < total_loss(l_dgm, l_adv, l_pert, alpha, beta)


@pytest.mark.parametrize("alpha,beta", [(0.0, 0.0), (1.0, 2.0), (10.0, 1.0)])
def test_total_loss_affine_in_adv_and_pert(alpha, beta):
    probes = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]
    base, at_adv, at_pert = (total_loss(0.3, a, p, alpha, beta) for a, p in probes)
    assert at_adv - base == pytest.approx(-alpha, abs=1e-12)
    assert at_pert - base == pytest.approx(beta, abs=1e-12)
    assert total_loss(0.3, 2.5, -1.5, alpha, beta) == pytest.approx(base - 2.5 * alpha - 1.5 * beta, abs=1e-12)


def test_wgan_losses():
    rng = np.random.default_rng(0)
    critic = DenseNet((3, 4, 1), ("relu", "linear"), rng)
    batch = rng.normal(size=(5, 3))
    c_loss, _ = wgan_losses(critic, Tensor(batch), Tensor(batch))
    assert c_loss.item() == 0.0
    const = linear_net(np.zeros((3, 1)), [1.75])
    _, g_loss = wgan_losses(const, Tensor(batch), Tensor(rng.normal(size=(7, 3))))
    assert g_loss.item() == -1.75
    with pytest.raises(ValueError):
        wgan_losses(critic, Tensor(batch), Tensor(np.zeros((5, 2))))


def test_critic_separates_clouds():
    rng = np.random.default_rng(0)
    critic = DenseNet((1, 16, 1), ("relu", "linear"), rng)
    opt = Adam(critic.parameters(), 0.005)
    real, fake = rng.normal(2.0, 0.3, (64, 1)), rng.normal(-2.0, 0.3, (64, 1))
    for _ in range(100):
        c_loss, _ = wgan_losses(critic, Tensor(real), Tensor(fake))
        opt.zero_grad()
        ad.backward(c_loss)
        opt.step()
        weight_clip([p.data for p in critic.parameters()], 0.01)
    out_real = critic(Tensor(real)).data.mean()
    out_fake = critic(Tensor(fake)).data.mean()
    assert out_real > out_fake


def test_kl_closed_form():
    assert kl_divergence(Tensor([[0.0, 0.0]]), Tensor([[0.0, 0.0]])).item() == 0.0
    assert kl_divergence(Tensor([[1.0, 0.0]]), Tensor([[0.0, 0.0]])).item() == 0.5
    mu, var = np.array([[0.3, -1.2, 2.0]]), np.array([[0.5, 2.0, 1.3]])
    expected = 0.5 * np.sum(mu**2 + var - 1 - np.log(var))
    assert kl_divergence(Tensor(mu), Tensor(np.log(var))).item() == pytest.approx(expected, rel=1e-12)


def test_perfect_reconstruction(toy):
    pipe = fit("generator", toy)
    batch = pipe.transform(toy.subset(range(20)))
    cont = Tensor(batch[:, pipe.continuous_columns()])
    logits = [Tensor(1e3 * batch[:, s:e]) for _, s, e in pipe.categorical_blocks()]
    assert reconstruction_loss(pipe, cont, logits, Tensor(batch)).item() == pytest.approx(0.0, abs=1e-12)


def test_elbo_finite(toy):
    pipe = fit("generator", toy)
    rng = np.random.default_rng(0)
    enc = DenseNet((pipe.width, 6, 4), ("relu", "linear"), rng)
    dec = DenseNet((2, 6, pipe.width), ("relu", "linear"), rng)
    v = tvae_elbo(enc, dec, pipe.transform(toy.subset(range(16))), pipe).item()
    assert math.isfinite(v) and v > 0


# --- config -------------------------------------------------------------------------

def test_config_validation_and_labels():
    assert AdvConfig(mode="C").label == "C-AdvWGAN"
    assert AdvConfig(backbone="tvae").label == "AdvTVAE"
    for bad in ({"backbone": "gan"}, {"mode": "X"}, {"alpha": -1}, {"lr": 0}, {"max_step": 0}, {"batch_size": 0}):
        with pytest.raises(ValueError):
            AdvConfig(**bad)
    with pytest.raises(ValueError):
        AdvConfig.from_dict({"alpha": 1, "gamma": 2})
    cfg = AdvConfig(hidden=(8, 4), mode="P")
    assert AdvConfig.from_dict(cfg.to_dict()) == cfg


# --- training and generation ----------------------------------------------------------------

SMALL = dict(hidden=(16,), epochs=3, batch_size=64, critic_steps=2, lr=0.005)


@pytest.fixture(scope="module")
def toy_train(toy_splits):
    return toy_splits[0]


@pytest.fixture(scope="module")
def c_model(toy_train, toy_target, toy_mixed):
    return train_advdgm(toy_train, toy_target, toy_mixed, AdvConfig(mode="C", **SMALL))


def test_mode_c_has_no_violations_during_training(c_model):
    assert [h["train_violations"] for h in c_model.history] == [0] * SMALL["epochs"]


@pytest.mark.parametrize("mode", ["P", "C"])
@pytest.mark.parametrize("backbone", ["wgan", "tvae"])
def test_repaired_modes_generate_feasible_sets(mode, backbone, toy_splits, toy_target, toy_mixed):
    tr, _, te = toy_splits
    model = train_advdgm(tr, toy_target, toy_mixed, AdvConfig(backbone=backbone, mode=mode, **SMALL))
    out = generate(model, toy_target, te)
    assert not violation_mask(toy_mixed, out.adversarial.columns).any()
    # the immutable categorical never moves
    assert out.adversarial.columns["segment"].tolist() == te.columns["segment"].tolist()


def test_generate_is_deterministic(c_model, toy_target, toy_splits):
    te = toy_splits[2]
    a, b = generate(c_model, toy_target, te), generate(c_model, toy_target, te)
    assert a.delta.tobytes() == b.delta.tobytes()
    assert a.pred_after.tolist() == b.pred_after.tolist()


def test_attack_set_examples(c_model, toy_target, toy_splits):
    te = toy_splits[2]
    out = generate(c_model, toy_target, te)
    ex = out[3]
    assert ex.delta_norm == pytest.approx(out.delta_norms[3])
    assert ex.flipped == (out.pred_after[3] != te.y[3])
    assert len(out[:5]) == 5


def test_generate_rejects_other_schema(c_model, toy_target, gauss):
    with pytest.raises(SchemaMismatchError):
        generate(c_model, toy_target, gauss)


def test_training_rejects_mismatched_target(toy_train, gauss_target):
    with pytest.raises(SchemaMismatchError):
        train_advdgm(toy_train, gauss_target, None, AdvConfig(**SMALL))


def test_repaired_modes_need_constraints(toy_train, toy_target):
    with pytest.raises(ValueError, match="constraint"):
        train_advdgm(toy_train, toy_target, None, AdvConfig(mode="P", **SMALL))


@pytest.mark.parametrize("backbone", ["wgan", "tvae"])
def test_zero_weights_match_plain_backbone(backbone, toy_train, toy_target):
    cfg = AdvConfig(backbone=backbone, alpha=0.0, beta=0.0, **SMALL)
    plain = train_backbone(toy_train, cfg)
    adv = train_advdgm(toy_train, toy_target, None, cfg)
    assert [h["dgm"] for h in plain.history] == [h["dgm"] for h in adv.history]
    for p, q in zip(plain.parameters(), adv.parameters()):
        assert p.data.tobytes() == q.data.tobytes()


def _scaled_model(backbone, seed, toy_train, toy_target, toy_mixed):
    cfg = AdvConfig(backbone=backbone, mode="C", hidden=(6,), epochs=0, latent=3, seed=seed)
    model = train_advdgm(toy_train, toy_target, toy_mixed, cfg)
    rng = np.random.default_rng(seed)
    for p in model.parameters():
        # large steps so the repair layer is active on many rows; nonzero biases keep
        # rows off the ||delta|| = 0 kink that a dead hidden layer would produce
        p.data = 3.0 * p.data + rng.normal(0.0, 0.3, p.data.shape)
    return model


def mode_c_gradient_error(backbone, seed, toy_train, toy_target, toy_mixed):
    """Worst per-coordinate relative error of the mode-C generator loss w.r.t. its parameters.

    Central differences only resolve gradients down to about eps * |loss| / h, so
    the absolute floor of the relative error scales with the loss.
    """
    model = _scaled_model(backbone, seed, toy_train, toy_target, toy_mixed)
    idx = np.random.default_rng(seed).choice(len(toy_train), 8, replace=False)
    x = model.pipeline.transform(toy_train.subset(idx))
    y = toy_train.y[idx]
    noise = np.random.default_rng(100 + seed).standard_normal((8, 3))
    loss = lambda: generator_loss(model, toy_target, x, y, noise)[0]
    pre = model.pipeline.inverse_tensor(_generator_output(model, Tensor(x), track=False)).data
    cols = dict(zip(model.schema.continuous, pre[:, model.pipeline.continuous_columns()].T))
    active = int(violation_mask(toy_mixed, cols).sum())
    floor = 1e-6 * max(1.0, abs(loss().item()))
    return ad.parameters_grad_check(loss, model.parameters(), h=1e-5, floor=floor), active


@pytest.mark.parametrize("backbone", ["wgan", "tvae"])
def test_mode_c_generator_loss_gradients(backbone, toy_train, toy_target, toy_mixed):
    results = [mode_c_gradient_error(backbone, seed, toy_train, toy_target, toy_mixed) for seed in range(10)]
    assert max(e for e, _ in results) <= 1e-4
    # the repair layer is exercised, not bypassed
    assert sum(a for _, a in results) > 0


# --- checkpoints ----------------------------------------------------------------------

def test_target_checkpoint_round_trip(tmp_path, toy_target, toy_splits):
    path = tmp_path / "t.json"
    save_target(toy_target, path, {"note": "x"})
    back = load_target(path, toy_target.pipeline.schema)
    te = toy_splits[2]
    assert back.predict(te).tolist() == toy_target.predict(te).tolist()
    assert back.clean_error == toy_target.clean_error


def test_generator_checkpoint_round_trip(tmp_path, c_model, toy_target, toy_mixed, toy_splits):
    path = tmp_path / "g.json"
    save_generator(c_model, path)
    back = load_generator(path, c_model.schema, toy_mixed)
    te = toy_splits[2]
    assert generate(back, toy_target, te).delta.tobytes() == generate(c_model, toy_target, te).delta.tobytes()
    with pytest.raises(CheckpointError):
        load_generator(path, c_model.schema, None)


def test_checkpoint_tamper_and_schema_checks(tmp_path, toy_target, gauss_schema):
    path = tmp_path / "t.json"
    save_target(toy_target, path)
    with pytest.raises(SchemaMismatchError):
        load_target(path, gauss_schema)
    doc = json.loads(path.read_text())
    doc["clean_error"] = 0.999
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointError, match="checksum"):
        load_target(path)
    path.write_text("not json")
    with pytest.raises(CheckpointError):
        load_target(path)
    with pytest.raises(FileNotFoundError):
        load_target(tmp_path / "missing.json")


def test_adversarial_term_raises_adv_loss(gauss_splits, gauss_target):
    cfg = AdvConfig(alpha=10.0, beta=1.0, epochs=40, hidden=(32, 32), batch_size=64, critic_steps=2, lr=0.005)
    model = train_advdgm(gauss_splits[0], gauss_target, None, cfg)
    adv = [h["adv"] for h in model.history]
    assert np.mean(adv[-10:]) > np.mean(adv[:10])
