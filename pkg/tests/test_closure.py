import itertools
from fractions import Fraction

import numpy as np
import pytest

from gradcheck import fd_grad, grad_rel_err
from partialforce.closure import (
    Adam,
    EncoderStack,
    MaskSizeError,
    TrainConfig,
    TrainingDivergence,
    ae_loss_and_grad,
    build_cache,
    cached_loss_and_grad,
    encode,
    load_ae,
    load_model,
    loss_lx,
    loss_lxp,
    loss_lz,
    save_ae,
    save_model,
    train_autoencoder,
    train_dynamics,
)
from partialforce.closure.encoder import KineticBinsFront, PatchPoolFront
from partialforce.datagen import Sampling, generate_dataset
from partialforce.evalsuite import sandwich_terms
from partialforce.microsim import AcParams, AllenCahn, LennardJones
from toys import (
    LinearToy,
    affine_model,
    orthonormal_stack,
    pp_states,
    random_decoder,
    random_model,
    random_stack,
    tiny_pp,
)

PP3 = tiny_pp(3)


# -- encoder -----------------------------------------------------------------

def test_encode_observable_head_exact():
    stack = random_stack(PP3, 4, (5,), "tanh", 0)
    x = pp_states(PP3, 4, 0)
    z, jp = encode(stack, x)
    zs, js = PP3.observable(x)
    assert np.array_equal(z[:, :2], zs)
    assert np.array_equal(jp[:, :2], js)
    xc = np.concatenate([np.full(3, 0.3), np.full(3, 0.5)])
    assert encode(stack, xc)[0][0] == pytest.approx(0.3, abs=1e-15)


def test_encode_zero_weights_give_zero_closure_rows():
    stack = EncoderStack.create(PP3, 4, hidden=(5,), rng=None)
    _, jp = encode(stack, pp_states(PP3, 2, 1))
    assert np.all(jp[:, 2:] == 0.0)


def _fd_encoder_jacobian(stack, x, h=1e-6):
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((encode(stack, x + e, False)[0] - encode(stack, x - e, False)[0]) / (2 * h))
    return np.stack(cols, axis=1)


@pytest.mark.parametrize("act", ["tanh", "softplus"])
def test_encoder_jacobian_fd_pp(act):
    stack = random_stack(tiny_pp(5), 4, (6, 6), act, 2)
    x = pp_states(stack.system, 1, 3)[0]
    _, jp = encode(stack, x)
    assert grad_rel_err(jp, _fd_encoder_jacobian(stack, x)) < 1e-6


def test_encoder_jacobian_fd_patch_front():
    ac = AllenCahn(AcParams(grid=8))
    front = PatchPoolFront(ac.N, grid=8, patch=4)
    stack = EncoderStack.create(ac, 4, hidden=(5,), rng=__import__("partialforce").rng.Xoshiro256(1),
                                front=front)
    x = ac.initial(0.35, 0.12) + 0.01 * np.random.default_rng(0).standard_normal(ac.N)
    stack.front.fit_normalization(np.stack([x, -x, 0.5 * x]))
    _, jp = encode(stack, x)
    assert grad_rel_err(jp, _fd_encoder_jacobian(stack, x)) < 1e-6


def test_encoder_jacobian_fd_kinetic_front():
    lj = LennardJones()
    front = KineticBinsFront(lj.N, lattice=lj.lattice, box=lj.box, bins=3)
    from partialforce.rng import Xoshiro256
    stack = EncoderStack.create(lj, 3, hidden=(4,), rng=Xoshiro256(2), front=front)
    x = lj.initial(1.0, 0)
    x = x + 0.01 * np.random.default_rng(1).standard_normal(x.shape)
    stack.front.fit_normalization(np.stack([x, lj.initial(1.2, 1), lj.initial(0.7, 2)]))
    _, jp = encode(stack, x)
    fd = _fd_encoder_jacobian(stack, x)
    assert grad_rel_err(jp, fd) < 1e-6


# -- autoencoder loss --------------------------------------------------------

def test_ae_lambda_zero_is_reconstruction():
    stack = random_stack(PP3, 4, (5,), "tanh", 3)
    dec = random_decoder(4, 6, (5,), "tanh", 4)
    x = pp_states(PP3, 5, 2)
    val, _, _, info = ae_loss_and_grad(stack, dec, x, 0.0)
    assert val == info["rec"]
    z = encode(stack, x, False)[0]
    assert val == pytest.approx(np.mean(np.sum((dec(z) - x) ** 2, axis=1)), rel=1e-14)
    with pytest.raises(ValueError):
        ae_loss_and_grad(stack, dec, x, -1.0)


def test_ae_perfect_autoencoder_zero_loss():
    stack, q = orthonormal_stack(3, 2, 3, 1, 0)
    dec = random_decoder(3, 6, (), "tanh", 0)
    dec.params.layers[0][0][...] = q
    dec.params.layers[0][1][...] = 0.0
    x = (q @ np.random.default_rng(1).standard_normal((3, 4))).T
    val, _, _, info = ae_loss_and_grad(stack, dec, x, 1.0)
    assert val == pytest.approx(0.0, abs=1e-20)
    np.testing.assert_allclose(info["kappa"], 1.0, atol=1e-12)


@pytest.mark.parametrize("lam", [0.0, 1e-2])
def test_ae_gradients_fd(lam):
    stack = random_stack(PP3, 4, (4,), "tanh", 5)
    dec = random_decoder(4, 6, (4,), "softplus", 6)
    x = pp_states(PP3, 3, 4)
    _, ge, gd, _ = ae_loss_and_grad(stack, dec, x, lam)
    fe = fd_grad(lambda: ae_loss_and_grad(stack, dec, x, lam)[0], stack.params.flat)
    fdd = fd_grad(lambda: ae_loss_and_grad(stack, dec, x, lam)[0], dec.params.flat)
    assert grad_rel_err(ge, fe) < 1e-5
    assert grad_rel_err(gd, fdd) < 1e-5


# -- dynamics losses ---------------------------------------------------------

def _setup(seed=0, grid=3):
    pp = tiny_pp(grid)
    stack = random_stack(pp, 4, (5,), "tanh", seed)
    model = random_model(4, (5,), "tanh", seed + 1)
    x = pp_states(pp, 4, seed)
    return pp, stack, model, x, pp.rhs(x)


def test_lz_zero_when_model_matches():
    pp, stack, _, x, f = _setup()
    _, jp = encode(stack, x[:1])
    w = np.einsum("bdn,bn->bd", jp, f[:1])[0]
    assert loss_lz(stack, affine_model(w), x[:1], f[:1])[0] == pytest.approx(0.0, abs=1e-24)
    zero = affine_model(np.zeros(4))
    _, jp = encode(stack, x)
    want = np.mean(np.sum(np.einsum("bdn,bn->bd", jp, f) ** 2, axis=1))
    assert loss_lz(stack, zero, x, f)[0] == pytest.approx(want, rel=1e-13)


def test_lx_projector_algebra():
    stack, q = orthonormal_stack(4, 2, 3, 1, 3)
    x = np.random.default_rng(2).standard_normal((1, 8))
    f = stack.system.rhs(x)
    w = (q.T @ f[0])
    val = loss_lx(stack, affine_model(w), x, f)[0]
    resid = f[0] - q @ (q.T @ f[0])
    assert val == pytest.approx(np.sum(resid**2), rel=1e-12)
    assert loss_lx(stack, affine_model(np.zeros(3)), x, np.zeros_like(f))[0] == 0.0


def test_full_force_losses_reject_partial():
    pp, stack, model, x, f = _setup()
    with pytest.raises(MaskSizeError):
        loss_lz(stack, model, x, f[:, :3])
    with pytest.raises(MaskSizeError):
        loss_lx(stack, model, x, f[:, :3])
    with pytest.raises(MaskSizeError):
        build_cache(stack, "L_x", x, None, f, Fraction(1, 2))


def test_lxp_p1_equals_lx():
    pp, stack, model, x, f = _setup(1)
    masks = np.tile(np.arange(6), (4, 1))
    a = loss_lxp(stack, model, x, masks, f[:, :, None], 1)[0]
    b = loss_lx(stack, model, x, f)[0]
    assert abs(a - b) <= 1e-12 * abs(b)


def test_lxp_mask_size_checked():
    pp, stack, model, x, f = _setup()
    with pytest.raises(MaskSizeError):
        loss_lxp(stack, model, x, np.zeros((4, 2), int), np.zeros((4, 2, 1)), Fraction(1, 2))


def test_two_particle_toy_enumeration():
    rng = np.random.default_rng(7)
    q, _ = np.linalg.qr(rng.standard_normal((4, 2)))
    sys_ = LinearToy(2, 2, q[:, :1].T, rng.standard_normal((4, 4)))
    stack = EncoderStack.create(sys_, 2, hidden=(), rng=None)
    stack.params.layers[0][0][...] = rng.standard_normal((1, 4))
    model = random_model(2, (3,), "tanh", 1)
    x = rng.standard_normal((1, 4))
    f = sys_.rhs(x)
    fr = f.reshape(1, 2, 2)
    vals = [loss_lxp(stack, model, x, np.array([[j]]), fr[:, [j]], Fraction(1, 2))[0] for j in (0, 1)]
    lx = loss_lx(stack, model, x, f)[0]
    assert np.mean(vals) == pytest.approx(lx, rel=1e-12)
    # each outcome is twice the masked particle's residual square
    from partialforce.evalsuite import particle_residuals
    r = particle_residuals(stack, model, x[0], f[0])
    np.testing.assert_allclose(vals, 2 * r, rtol=1e-12)


@pytest.mark.parametrize("p", [Fraction(1, 2), Fraction(1, 3), Fraction(2, 3)])
def test_mask_enumeration_equals_lx(p):
    pp, stack, model, x, f = _setup(2)
    k = int(6 * p)
    for i in range(len(x)):
        vals = []
        for m in itertools.combinations(range(6), k):
            m = np.array(m)
            vals.append(loss_lxp(stack, model, x[i:i + 1], m[None], f[i, m][None, :, None], p)[0])
        lx = loss_lx(stack, model, x[i:i + 1], f[i:i + 1])[0]
        assert abs(np.mean(vals) - lx) <= 1e-12 * abs(lx)


def test_orthonormal_equality_case():
    stack, _ = orthonormal_stack(5, 2, 4, 2, 11)
    x = np.random.default_rng(3).standard_normal((6, 10))
    f = stack.system.rhs(x)
    _, jp = encode(stack, x)
    b1, b2, c = sandwich_terms(jp, f)
    assert b1 == pytest.approx(1.0, abs=1e-12) and b2 == pytest.approx(1.0, abs=1e-12)
    for s in range(100):
        model = random_model(4, (6,), "tanh", s)
        lz = loss_lz(stack, model, x, f)[0]
        lx = loss_lx(stack, model, x, f)[0]
        assert abs(lz - (lx + c)) <= 1e-10 * max(abs(lz), 1.0)


@pytest.mark.parametrize("kind", ["L_z", "L_x", "L_xp"])
def test_cache_matches_direct(kind):
    pp, stack, model, x, f = _setup(4, grid=4)
    rng = np.random.default_rng(0)
    if kind == "L_xp":
        p = Fraction(1, 2)
        masks = np.sort(np.stack([rng.choice(8, 4, replace=False) for _ in x]), axis=1)
        fm = np.take_along_axis(f, masks, axis=1)[..., None]
        cache = build_cache(stack, kind, x, masks, fm, p)
        want, gw = loss_lxp(stack, model, x, masks, fm, p)
    else:
        cache = build_cache(stack, kind, x, None, f, 1)
        want, gw = (loss_lz if kind == "L_z" else loss_lx)(stack, model, x, f)
    got, g = cached_loss_and_grad(model, cache, np.arange(len(x)))
    assert got == pytest.approx(want, rel=1e-11)
    assert grad_rel_err(g, gw) < 1e-10


@pytest.mark.parametrize("which", ["L_z", "L_x", "L_xp"])
@pytest.mark.parametrize("act", ["tanh", "softplus"])
def test_dynamics_gradients_fd(which, act):
    pp = tiny_pp(4)
    stack = random_stack(pp, 4, (5,), act, 8)
    model = random_model(4, (5, 4), act, 9)
    x = pp_states(pp, 3, 5)
    f = pp.rhs(x)
    masks = np.array([[0, 2, 5, 7], [1, 2, 3, 4], [0, 1, 6, 7]])
    fm = np.take_along_axis(f, masks, axis=1)[..., None]

    def fn():
        if which == "L_z":
            return loss_lz(stack, model, x, f)
        if which == "L_x":
            return loss_lx(stack, model, x, f)
        return loss_lxp(stack, model, x, masks, fm, Fraction(1, 2))

    g = fn()[1]
    assert grad_rel_err(g, fd_grad(lambda: fn()[0], model.params.flat)) < 1e-6


# -- optimizer and training --------------------------------------------------

def test_adam_first_step_textbook():
    p = np.array([1.0, -2.0])
    g = np.array([0.5, -0.1])
    opt = Adam(2, lr=0.1)
    opt.step(p, g)
    m = 0.1 * g
    v = 0.001 * g * g
    want = np.array([1.0, -2.0]) - 0.1 * (m / 0.1) / (np.sqrt(v / 0.001) + 1e-8)
    np.testing.assert_allclose(p, want, rtol=1e-15)
    # second step on f = 0.5 ||p||^2 from the hand-rolled recursion
    g2 = p.copy()
    opt.step(p, g2)
    m = 0.9 * m + 0.1 * g2
    v = 0.999 * v + 0.001 * g2 * g2
    want = want - 0.1 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
    np.testing.assert_allclose(p, want, rtol=1e-14)


def test_adam_zero_gradient_leaves_params():
    p = np.array([0.3, 0.7])
    Adam(2).step(p, np.zeros(2))
    assert np.array_equal(p, [0.3, 0.7])


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch=0)
    with pytest.raises(ValueError):
        TrainConfig(lambda_cond=-1)


@pytest.fixture(scope="module")
def pp_data():
    pp = tiny_pp(5)
    s = Sampling(t_end=2.0, dt=1e-3, scheme="euler", stride=100, t_start=0.1)
    ds = generate_dataset(pp, s, Fraction(1, 5), 120, seed=3)
    return pp, ds


def test_training_deterministic_and_frozen_encoder(pp_data, tmp_path):
    pp, ds = pp_data
    stack = random_stack(pp, 4, (8,), "softplus", 1)
    enc_bytes = stack.params.flat.tobytes()
    runs = []
    for _ in range(2):
        model = random_model(4, (8,), "softplus", 2)
        hist = train_dynamics(stack, model, TrainConfig(batch=16, epochs=3, seed=5),
                              x=ds.x, masks=ds.masks, forces=ds.forces, p=ds.p,
                              log_path=str(tmp_path / "log.csv"))
        runs.append((model.params.flat.tobytes(), hist.losses))
    assert runs[0] == runs[1]
    assert stack.params.flat.tobytes() == enc_bytes
    text = (tmp_path / "log.csv").read_text().splitlines()
    assert text[0].startswith("epoch,loss,lr,kappa_mean,kappa_max,wall_time") and len(text) == 4


def test_training_loss_decreases(pp_data):
    pp, ds = pp_data
    stack = random_stack(pp, 4, (8,), "softplus", 1)
    cache = build_cache(stack, "L_xp", ds.x, ds.masks, ds.forces, ds.p)
    ok = 0
    for s in range(3):
        model = random_model(4, (8,), "softplus", 10 + s)
        hist = train_dynamics(stack, model, TrainConfig(batch=16, epochs=10, seed=s), cache=cache)
        ok += hist.losses[-1] < hist.losses[0]
    assert ok >= 2


def test_training_divergence_reported(pp_data):
    pp, ds = pp_data
    stack = random_stack(pp, 4, (8,), "softplus", 1)
    forces = ds.forces.copy()
    forces[7] = np.nan
    model = random_model(4, (8,), "softplus", 2)
    with pytest.raises(TrainingDivergence) as ei:
        train_dynamics(stack, model, TrainConfig(batch=200, epochs=1), x=ds.x, masks=ds.masks, forces=forces, p=ds.p)
    assert ei.value.epoch == 0 and ei.value.step == 0


def test_autoencoder_training_and_checkpoints(pp_data, tmp_path):
    pp, ds = pp_data
    stack = random_stack(pp, 4, (8,), "softplus", 1)
    dec = random_decoder(4, pp.N, (8,), "softplus", 2)
    hist = train_autoencoder(stack, dec, ds.x, TrainConfig(batch=32, epochs=5, seed=1, lambda_cond=1e-6))
    assert hist.rows[-1]["rec"] < hist.rows[0]["rec"]
    assert np.isfinite(hist.rows[-1]["kappa_mean"])
    save_ae(str(tmp_path / "ae"), stack, dec, seed=1, extra={"config_hash": "h"})
    s2, d2, meta = load_ae(str(tmp_path / "ae"), pp)
    x = ds.x[:3]
    assert np.array_equal(encode(s2, x)[1], encode(stack, x)[1])
    assert np.array_equal(d2(encode(s2, x)[0]), dec(encode(stack, x)[0]))
    assert meta["config_hash"] == "h"
    model = random_model(4, (8,), "softplus", 3)
    save_model(str(tmp_path / "g"), model, seed=4)
    m2, meta = load_model(str(tmp_path / "g"))
    assert m2.params.flat.tobytes() == model.params.flat.tobytes() and meta["seed"] == 4
