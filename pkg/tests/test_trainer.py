import dataclasses
import math

import numpy as np
import pytest

from semfsl.databank import SynthSpec, split_view, synth_generate
from semfsl.episodes import NoiseConfig, sample_episode
from semfsl.errors import ConfigurationError, TrainingDivergedError
from semfsl.gradcore import EVAL, RngStream
from semfsl.model import HeadParams, load_checkpoint
from semfsl.trainer import VAL_SEED, TrainConfig, episode_loss, select_alpha, train, validate


def toy(seed=0, **kw):
    spec = dict(
        n_classes=20, split_counts=(10, 5, 5), samples_per_class=30, d_v=8, d_e=8,
        class_mean_scale=0.5, within_class_std=0.5, semantic_noise_std=0.05, seed=seed,
    )
    spec.update(kw)
    return synth_generate(SynthSpec(**spec))


FAST = dict(epochs=2, episodes_per_epoch=10, val_episodes=20, dist_scale=1.0)


@pytest.fixture(scope="module")
def bank_table():
    return toy()


def test_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(variant="bogus")
    with pytest.raises(ConfigurationError):
        TrainConfig(lr=-1.0)
    with pytest.raises(ConfigurationError):
        TrainConfig(shots=2, noise=NoiseConfig(True, 3, 0.5))
    with pytest.raises(ConfigurationError):
        TrainConfig(episodes_per_epoch=0)


def test_lr_schedule_exact():
    cfg = TrainConfig(lr=0.02, lr_halving_period_epochs=40)
    for e in range(0, 400, 7):
        assert cfg.lr_at(e) == 0.02 * 2.0 ** -(e // 40)
    assert [cfg.lr_at(e) for e in (0, 39, 40, 80)] == [0.02, 0.02, 0.01, 0.005]


def test_logged_lr_follows_schedule(bank_table):
    bank, table = bank_table
    cfg = TrainConfig(variant="am3", epochs=5, episodes_per_epoch=2, val_episodes=5, lr_halving_period_epochs=2, dist_scale=1.0)
    _, log = train(bank, table, cfg)
    assert [r.lr for r in log.epochs] == [0.02, 0.02, 0.01, 0.01, 0.005]


def test_zero_epochs_returns_init(bank_table):
    bank, table = bank_table
    init = HeadParams.init(TrainConfig().head_config(8, 8), seed=4)
    params, log = train(bank, table, TrainConfig(epochs=0), init=init)
    assert log.epochs == [] and log.best_epoch is None
    for name, p in init.params.items():
        assert params[name].data.tobytes() == p.data.tobytes()


def test_zero_lr_keeps_params_bit_equal(bank_table):
    bank, table = bank_table
    cfg = TrainConfig(variant="combined", lr=0.0, **FAST)
    before = HeadParams.init(cfg.head_config(8, 8), cfg.seed)
    params, log = train(bank, table, cfg)
    assert len(log.epochs) == 2
    for name, p in before.params.items():
        assert params[name].data.tobytes() == p.data.tobytes()


def test_init_is_not_modified(bank_table):
    bank, table = bank_table
    cfg = TrainConfig(variant="am3", **FAST)
    init = HeadParams.init(cfg.head_config(8, 8), seed=1)
    snapshot = init.state()
    train(bank, table, cfg, init=init)
    assert all(init[k].data.tobytes() == v.tobytes() for k, v in snapshot.items())


def test_train_log_deterministic(bank_table):
    bank, table = bank_table
    cfg = TrainConfig(variant="combined", noise=NoiseConfig(True, 1, 0.5), shots=2, **FAST)
    (p1, l1), (p2, l2) = train(bank, table, cfg), train(bank, table, cfg)
    assert l1.lines() == l2.lines()
    assert all(p1[k].data.tobytes() == p2[k].data.tobytes() for k in p1.params)
    other = train(bank, table, dataclasses.replace(cfg, seed=1))[1]
    assert other.lines() != l1.lines()


def test_best_checkpoint_reproduces_val_accuracy(bank_table, tmp_path):
    bank, table = bank_table
    path = tmp_path / "best.ckpt"
    cfg = TrainConfig(variant="combined", epochs=4, episodes_per_epoch=10, val_episodes=30, dist_scale=1.0, checkpoint_path=str(path))
    params, log = train(bank, table, cfg)
    accs = [r.val_accuracy for r in log.epochs]
    assert log.best_val_accuracy == max(accs) and log.best_epoch == accs.index(max(accs))
    assert log.best_checkpoint == str(path)
    loaded, variant = load_checkpoint(path)
    assert variant == "combined"
    assert validate(bank, table, loaded, cfg).mean_accuracy == log.best_val_accuracy
    assert validate(bank, table, params, cfg).mean_accuracy == log.best_val_accuracy


def test_train_log_lines_format(bank_table):
    bank, table = bank_table
    _, log = train(bank, table, TrainConfig(variant="am3", **FAST))
    lines = log.lines()
    assert len(lines) == 3
    for line, rec in zip(lines, log.epochs):
        fields = dict(kv.split("=") for kv in line.split())
        assert float(fields["train_loss"]) == rec.train_loss and int(fields["epoch"]) == rec.epoch
    assert lines[-1].startswith("best_epoch=")


def test_without_val_split_keeps_last(bank_table):
    bank, table = toy(split_counts=(15, 0, 5))
    params, log = train(bank, table, TrainConfig(variant="am3", **FAST))
    assert math.isnan(log.epochs[0].val_accuracy) and log.best_epoch == 1


@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_divergence_is_reported(bank_table):
    bank, table = bank_table
    cfg = TrainConfig(variant="am3", **FAST)
    init = HeadParams.init(cfg.head_config(8, 8))
    init["tau_prior.0.bias"].data[...] = 1e300
    with pytest.raises(TrainingDivergedError, match=r"epoch 0, episode 0.*tau_prior.0.bias="):
        train(bank, table, cfg, init=init)


def test_episode_loss_uniform_logits(bank_table):
    bank, table = bank_table
    params = HeadParams.init(TrainConfig(alpha=0.0).head_config(8, 8))
    W, b = params.head("tau_prior")[0]
    W.data[...] = 0.0  # every prototype collapses to the bias
    ep = sample_episode(split_view(bank, "train"), table, 5, 1, 3, np.random.default_rng(0))
    assert episode_loss(ep, params, "am3", EVAL).item() == pytest.approx(math.log(5), abs=1e-12)


def test_episode_loss_separated_data_after_training():
    # no val split: training returns the final rather than the first perfect-on-val params
    bank, table = toy(class_mean_scale=1.0, within_class_std=0.0, semantic_noise_std=0.0, split_counts=(15, 0, 5))
    cfg = TrainConfig(variant="combined", epochs=10, episodes_per_epoch=50, dist_scale=1.0)
    params, _ = train(bank, table, cfg)
    stream = RngStream(1, "separated")
    for t in range(20):
        ep = sample_episode(split_view(bank, "test"), table, 5, 1, 15, stream.generator(t))
        assert episode_loss(ep, params, "combined", EVAL).item() < 0.01


def test_moving_average_loss_non_increasing(bank_table):
    bank, table = bank_table
    for variant in ("pn", "am3"):
        cfg = TrainConfig(
            variant=variant, epochs=60, episodes_per_epoch=10, val_episodes=10, lr=1e-3, dist_scale=1.0,
            dropout=(0.0, 0.0, 0.0), resample_episodes=False,
        )
        _, log = train(bank, table, cfg)
        losses = np.array([r.train_loss for r in log.epochs])
        assert np.all(np.isfinite(losses))
        ma = np.convolve(losses, np.ones(20) / 20, mode="valid")
        assert np.all(np.diff(ma) <= 1e-12), variant


# ---- validate -----------------------------------------------------------------


def test_validate_fixed_seed(bank_table):
    bank, table = bank_table
    cfg = TrainConfig(variant="combined", val_episodes=50, dist_scale=1.0)
    params = HeadParams.init(cfg.head_config(8, 8))
    a, b = validate(bank, table, params, cfg), validate(bank, table, params, cfg)
    assert a.mean_accuracy == b.mean_accuracy and np.array_equal(a.per_task_accuracies, b.per_task_accuracies)
    assert cfg.val_seed == VAL_SEED
    assert validate(bank, table, params, dataclasses.replace(cfg, seed=99)).mean_accuracy == a.mean_accuracy


def test_validate_untrained_near_chance():
    # zero class-mean scale and large pools: classes are indistinguishable, so every model is at chance
    spec = SynthSpec(n_classes=60, split_counts=(5, 50, 5), samples_per_class=1000, d_v=8, d_e=8, class_mean_scale=0.0, seed=1)
    bank, table = synth_generate(spec)
    cfg = TrainConfig(variant="combined", val_episodes=1000, dist_scale=1.0)
    res = validate(bank, table, HeadParams.init(cfg.head_config(8, 8)), cfg)
    assert abs(res.mean_accuracy - 20.0) <= 3 * res.ci_half_width


def test_validate_after_easy_training():
    bank, table = toy(class_mean_scale=1.0, within_class_std=0.3, semantic_noise_std=0.01)
    cfg = TrainConfig(variant="am3", epochs=5, episodes_per_epoch=30, val_episodes=100, dist_scale=1.0)
    params, _ = train(bank, table, cfg)
    assert validate(bank, table, params, cfg).mean_accuracy > 95.0


# ---- select_alpha ----------------------------------------------------------------


SELECT = dict(variant="am3", epochs=5, episodes_per_epoch=50, val_episodes=100, dist_scale=1.0)


def alpha_bank(seed, **kw):
    spec = dict(n_classes=30, split_counts=(20, 5, 5), samples_per_class=40, d_v=16, d_e=16, class_mean_scale=0.25, seed=seed)
    spec.update(kw)
    return synth_generate(SynthSpec(**spec))


def test_select_alpha_singleton(bank_table):
    bank, table = bank_table
    best, scores = select_alpha(bank, table, TrainConfig(**{**SELECT, "epochs": 1}), grid=[0.5])
    assert best == 0.5 and list(scores) == [0.5]


def test_select_alpha_validation(bank_table):
    bank, table = bank_table
    with pytest.raises(ConfigurationError):
        select_alpha(bank, table, TrainConfig(**SELECT), grid=[])
    with pytest.raises(ConfigurationError):
        select_alpha(bank, table, TrainConfig(**SELECT), grid=[0.5, 1.2])


def test_select_alpha_useless_semantics_prefers_visual():
    bank, table = alpha_bank(0, within_class_std=0.25, semantic_noise_std=3.0)
    best, scores = select_alpha(bank, table, TrainConfig(**SELECT), grid=[0.0, 1.0])
    assert best == 1.0 and scores[1.0] > scores[0.0]


def test_select_alpha_exact_semantics_prefers_prior():
    wins = 0
    for seed in range(5):
        bank, table = alpha_bank(seed, within_class_std=1.0, semantic_noise_std=0.0)
        best, _ = select_alpha(bank, table, TrainConfig(**{**SELECT, "seed": seed}), grid=[1.0, 0.0])
        wins += best == 0.0
    assert wins >= 3


def test_select_alpha_fine_tunes_from_init(bank_table):
    bank, table = bank_table
    cfg = TrainConfig(**{**SELECT, "epochs": 1})
    init = HeadParams.init(cfg.head_config(8, 8), seed=7)
    snapshot = init.state()
    best, scores = select_alpha(bank, table, cfg, grid=[0.2, 0.8], init=init)
    assert set(scores) == {0.2, 0.8} and best in scores
    assert all(init[k].data.tobytes() == v.tobytes() for k, v in snapshot.items())
