import numpy as np
import pytest

from turbomingru.channel import RngStream
from turbomingru.config import RunConfig, resolve_config
from turbomingru.runs import RunDir, build_models, read_csv, train_run
from turbomingru.tensor import ContractError, ParameterStore, Tensor
from turbomingru.training import (
    OptimizerState,
    TrainConfig,
    TrainingState,
    adamw_step,
    bce_loss,
    train_epoch,
    train_phase,
)

TINY = dict(k=8, enc_features=2, enc_blocks=1, dec_features=2, dec_layers=2, dec_hidden=6, dec_kernel=3,
            iterations=2, epochs=2, samples_per_epoch=32, enc_batch=16, dec_batch=16, dec_train_ratio=2,
            lr=1e-3, eval_grid=[1.0, 2.0], eval_n=40, eval_batch=20)


@pytest.fixture
def tiny_cfg():
    return RunConfig(**TINY)


def test_sample_ratio_at_defaults():
    cfg = TrainConfig()
    assert cfg.enc_batches_per_epoch == 390
    assert cfg.dec_batches_per_epoch == 1950
    assert cfg.sample_ratio == 20.0


def test_desk_batches():
    cfg = resolve_config("desk").train_config()
    assert (cfg.enc_batches_per_epoch, cfg.dec_batches_per_epoch) == (78, 390)
    assert cfg.sample_ratio == 20.0


@pytest.mark.parametrize("bad", [dict(k=0), dict(enc_batch=-1), dict(samples_per_epoch=10),
                                 dict(train_ebn0_low=4.0, train_ebn0_high=1.0)])
def test_invalid_train_config(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_bce_reference_values():
    p = Tensor(np.array([[0.9, 0.2]]))
    expected = -(np.log(0.9) + np.log(0.8)) / 2
    assert float(bce_loss(p, np.array([[1, 0]])).data) == pytest.approx(expected, rel=1e-12)
    assert np.isfinite(bce_loss(Tensor(np.array([[0.0, 1.0]])), np.array([[1, 0]])).data)


def test_bce_shape_mismatch():
    with pytest.raises(ValueError):
        bce_loss(Tensor(np.zeros((2, 3))), np.zeros((3, 2)))


def test_adamw_matches_reference():
    cfg = TrainConfig(lr=0.1, weight_decay=0.5)
    w0 = np.array([1.0, -2.0, 0.5])
    p = Tensor(w0.copy(), requires_grad=True)
    store = ParameterStore([("w", p)])
    opt = OptimizerState.for_params(store)
    grads = [np.array([0.3, -0.1, 0.0]), np.array([0.2, 0.4, -1.0])]
    # independent re-derivation of the decoupled update
    w, m, v = w0.copy(), np.zeros(3), np.zeros(3)
    for t, g in enumerate(grads, start=1):
        p.grad = g.copy()
        adamw_step(store, opt, cfg)
        w = w - cfg.lr * cfg.weight_decay * w
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - cfg.lr * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + cfg.eps)
        np.testing.assert_allclose(p.data, w, rtol=1e-12)
    assert opt.step == 2


def test_adamw_missing_gradient():
    store = ParameterStore([("w", Tensor(np.ones(2), requires_grad=True))])
    store["w"].grad = None
    with pytest.raises(ContractError):
        adamw_step(store, OptimizerState.for_params(store), TrainConfig())


def test_epoch_rows_and_steps(tiny_cfg):
    enc, dec = build_models(tiny_cfg)
    state = TrainingState.create(enc, dec, tiny_cfg.train_config())
    before = {n: t.data.copy() for n, t in state.enc_params.items()}
    rows = train_epoch(state, RngStream(0))
    assert [r.phase for r in rows] == ["encoder", "decoder"]
    assert [r.batches for r in rows] == [2, 4]
    assert rows[1].samples / rows[0].samples == 2.0
    assert all(np.isfinite(r.mean_loss) and 0 <= r.train_ber <= 1 for r in rows)
    assert any(not np.array_equal(before[n], t.data) for n, t in state.enc_params.items())
    assert state.enc_opt.step == 2 and state.dec_opt.step == 4
    assert all(t.requires_grad for t in state.enc_params.values())


def test_encoder_phase_leaves_decoder_untouched(tiny_cfg):
    enc, dec = build_models(tiny_cfg)
    state = TrainingState.create(enc, dec, tiny_cfg.train_config())
    before = {n: t.data.copy() for n, t in state.dec_params.items()}
    train_phase("encoder", enc, dec, state.enc_params, state.dec_params, state.enc_opt,
                state.cfg, 1, RngStream(0))
    assert all(np.array_equal(before[n], t.data) for n, t in state.dec_params.items())


def test_training_is_deterministic(tiny_cfg):
    def run():
        enc, dec = build_models(tiny_cfg)
        state = TrainingState.create(enc, dec, tiny_cfg.train_config())
        train_epoch(state, RngStream(0))
        return np.concatenate([t.data.ravel() for t in state.dec_params.values()])
    assert run().tobytes() == run().tobytes()


def test_resume_matches_uninterrupted(tiny_cfg, tmp_path):
    full = train_run(tiny_cfg, tmp_path / "full")
    train_run(tiny_cfg, tmp_path / "split", max_epochs=1)
    assert RunDir(tmp_path / "split").exists()
    resumed = train_run(tiny_cfg, tmp_path / "split")
    assert resumed.epoch == full.epoch == 2
    assert (tmp_path / "split" / "model.ntmg").read_bytes() == (tmp_path / "full" / "model.ntmg").read_bytes()
    assert [r["mean_loss"] for r in read_csv(tmp_path / "split" / "metrics.csv")] == \
           [r["mean_loss"] for r in read_csv(tmp_path / "full" / "metrics.csv")]


def test_resume_rejects_other_config(tiny_cfg, tmp_path):
    train_run(tiny_cfg, tmp_path / "r", max_epochs=1)
    with pytest.raises(ValueError):
        train_run(tiny_cfg.updated(lr=5e-3), tmp_path / "r")


def test_config_file_and_overrides(tmp_path):
    (tmp_path / "c.json").write_text('{"epochs": 3, "lr": 0.01}')
    cfg = resolve_config("desk", tmp_path / "c.json", epochs=4)
    assert (cfg.epochs, cfg.lr, cfg.samples_per_epoch) == (4, 0.01, 10000)
    (tmp_path / "bad.json").write_text('{"epochz": 3}')
    with pytest.raises(ValueError):
        resolve_config("paper", tmp_path / "bad.json")
    with pytest.raises(ValueError):
        resolve_config("laptop")


def test_bce_perfect_prediction_is_zero():
    assert float(bce_loss(Tensor(np.array([[1.0, 0.0]])), np.array([[1, 0]])).data) == pytest.approx(0.0, abs=1e-11)


def test_adamw_zero_gradient_only_decays():
    cfg = TrainConfig(lr=0.01, weight_decay=0.1)
    store = ParameterStore([("w", Tensor(np.array([2.0, -4.0]), requires_grad=True))])
    adamw_step(store, OptimizerState.for_params(store), cfg)
    np.testing.assert_allclose(store["w"].data, np.array([2.0, -4.0]) * (1 - 0.01 * 0.1), rtol=1e-14)


def test_adamw_first_step_is_sign_step():
    cfg = TrainConfig(lr=0.01, weight_decay=0.1)
    store = ParameterStore([("w", Tensor(np.array([0.5]), requires_grad=True))])
    store["w"].grad = np.array([1.0])
    adamw_step(store, OptimizerState.for_params(store), cfg)
    assert store["w"].data[0] == pytest.approx(0.5 * (1 - 0.001) - 0.01, rel=1e-6)
