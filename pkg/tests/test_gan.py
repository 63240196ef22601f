import numpy as np
import pytest

from migan import gan as G
from migan import nn
from migan.baselines import colmean_impute
from migan.errors import ConfigError, DataError
from migan.gan import (PatternGan, TrainConfig, critic_loss_batch, generator_impute,
                       generator_loss_batch, impute_migan1, initial_imputation,
                       multiple_impute_migan1, multiple_impute_migan2, plateaued,
                       snapshot_sweeps, train_impute_migan2, train_migan1)
from migan.inference import analyze
from migan.patterns import IncompleteMatrix, partition_patterns

from test_patterns import four_pattern_mask

FAST = TrainConfig(epochs=3, M=2, N=1, cell_rounds=2, batch_size=16, plateau_tol=0.0)


def identity_net(p):
    P = nn.MlpParams((p, p), ["identity"])
    P.weights[0][...] = np.eye(p)
    return P


def zero_critic(p):
    return nn.MlpParams((p, p, p, 1), ["relu", "relu", "identity"])


def unit_linear_critic(p):
    P = nn.MlpParams((p, 1), ["identity"])
    P.weights[0][0] = np.ones(p) / np.sqrt(p)
    return P


def make_gan(p=3, obs=(0,), cfg=FAST, seed=0):
    return PatternGan.create(1, np.array(obs), p, cfg, np.random.default_rng(seed))


def bivariate(n_complete, n_missing, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.multivariate_normal([0, 0], [[1, 0.8], [0.8, 1]], size=n_complete + n_missing)
    mask = np.ones_like(X, dtype=bool)
    mask[n_complete:, 1] = False
    return X, IncompleteMatrix(X, mask)


def four_pattern_data(seed=0):
    mask = four_pattern_mask()
    return IncompleteMatrix(np.random.default_rng(seed).standard_normal(mask.shape), mask)


# generator_impute

def test_all_observed_row_returned_exactly():
    g = make_gan()
    x = np.array([0.1, np.pi, -7.25])
    out = generator_impute(g, x, np.random.default_rng(0).standard_normal(3), np.ones(3))
    assert np.array_equal(out, x)


def test_observed_coordinates_bit_exact():
    g = make_gan(p=4, obs=(0, 2))
    rng = np.random.default_rng(3)
    m = g.mask_vector
    for _ in range(20):
        x = rng.standard_normal(4) * 1e3
        out = generator_impute(g, x, rng.standard_normal(4), m)
        assert np.array_equal(out[m == 1], x[m == 1])


def test_identity_generator_hand_example():
    g = make_gan(p=2, obs=(0,))
    g.generator = identity_net(2)
    out = generator_impute(g, np.array([3.0, 99.0]), np.array([42.0, 0.5]), np.array([1.0, 0.0]))
    assert out.tolist() == [3.0, 0.5]


def test_generator_impute_shape_check():
    with pytest.raises(ValueError):
        generator_impute(make_gan(), np.zeros(2), np.zeros(3), np.ones(3))


# losses

def test_constant_critic_loss_is_penalty():
    g = make_gan()
    g.critic = zero_critic(3)
    batch = np.random.default_rng(0).standard_normal((5, 3))
    loss, grad = critic_loss_batch(g, batch, batch, 10.0, np.random.default_rng(1))
    assert loss == pytest.approx(10.0)
    assert g.zero_norm_events == 5


def test_unit_linear_critic_identical_batches():
    g = make_gan()
    g.critic = unit_linear_critic(3)
    batch = np.random.default_rng(0).standard_normal((5, 3))
    loss, _ = critic_loss_batch(g, batch, batch, 10.0, np.random.default_rng(1))
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_empty_batches_rejected():
    g = make_gan()
    with pytest.raises(ValueError):
        critic_loss_batch(g, np.zeros((0, 3)), np.zeros((0, 3)), 10.0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        generator_loss_batch(g, np.zeros((0, 3)), np.zeros((0, 3)), np.ones(3), 0.1)


def test_generator_loss_zero_cases():
    g = make_gan()
    g.critic = zero_critic(3)
    rng = np.random.default_rng(0)
    x, z = rng.standard_normal((2, 4, 3))
    loss, grad = generator_loss_batch(g, x, z, g.mask_vector, 0.0)
    assert loss == 0.0 and np.all(grad == 0.0)
    g.generator = identity_net(3)
    loss, _ = generator_loss_batch(g, x, z, np.ones(3), 5.0)
    assert loss == 0.0


# training and imputation

def test_migan1_nothing_to_impute():
    X = np.random.default_rng(0).standard_normal((6, 2))
    data = IncompleteMatrix(X, np.ones_like(X, dtype=bool))
    assert train_migan1(data, partition_patterns(data), FAST) == []


def test_migan1_needs_two_complete_cases():
    X, data = bivariate(1, 5)
    with pytest.raises(DataError, match="migan2"):
        train_migan1(data, partition_patterns(data), FAST)


def test_fully_missing_row_rejected():
    X = np.random.default_rng(0).standard_normal((6, 2))
    mask = np.ones_like(X, dtype=bool)
    mask[5] = False
    data = IncompleteMatrix(X, mask)
    with pytest.raises(DataError, match="no observed columns"):
        train_migan1(data, partition_patterns(data), FAST)


def test_impute_migan1_fully_observed_unchanged():
    X = np.random.default_rng(0).standard_normal((6, 2))
    data = IncompleteMatrix(X, np.ones_like(X, dtype=bool))
    part = partition_patterns(data)
    out = impute_migan1(data, part, [], np.random.default_rng(0))
    assert np.array_equal(out, X)


def test_impute_migan1_four_patterns():
    data = four_pattern_data()
    part = partition_patterns(data)
    gans = train_migan1(data, part, FAST, np.random.default_rng(0))
    assert [g.k for g in gans] == [1, 2, 3]
    out = impute_migan1(data, part, gans, np.random.default_rng(1))
    assert np.all(np.isfinite(out))
    assert np.array_equal(out[:2], data.values[:2])
    out2 = impute_migan1(data, part, gans, np.random.default_rng(2))
    differs = out != out2
    assert not differs[data.mask].any()
    assert differs[~data.mask].all()


def test_impute_migan1_missing_generator():
    data = four_pattern_data()
    part = partition_patterns(data)
    gans = train_migan1(data, part, FAST, np.random.default_rng(0))[:2]
    with pytest.raises(DataError, match="pattern 3"):
        impute_migan1(data, part, gans, np.random.default_rng(1))


def test_multiple_imputation_between_variance_positive():
    X, data = bivariate(100, 40)
    part = partition_patterns(data)
    res = multiple_impute_migan1(data, part, FAST.replace(M=10, epochs=2))
    assert res.M == 10
    assert res.check_observed(data.values)
    pooled = analyze(res.imputations, [0], 1)
    assert pooled.B > 0


def test_migan1_deterministic():
    data = four_pattern_data()
    part = partition_patterns(data)
    a = multiple_impute_migan1(data, part, FAST)
    b = multiple_impute_migan1(data, part, FAST)
    assert all(np.array_equal(x, y) for x, y in zip(a.imputations, b.imputations))


def test_migan2_single_pattern_returns_initial():
    X = np.random.default_rng(0).standard_normal((5, 3))
    data = IncompleteMatrix(X, np.ones_like(X, dtype=bool))
    res = train_impute_migan2(X, partition_patterns(data), FAST.replace(N=0, T=1, M=1))
    assert res.M == 1 and np.array_equal(res.imputations[0], X)


def test_migan2_default_schedule():
    data = four_pattern_data()
    part = partition_patterns(data)
    cfg = FAST.replace(N=3, T=1, M=10, cell_rounds=0)
    res = train_impute_migan2(colmean_impute(data), part, cfg)
    assert res.provenance["snapshot_sweeps"] == list(range(4, 14))
    assert snapshot_sweeps(3, 1, 10) == list(range(4, 14))
    assert res.check_observed(data.values)


def test_migan2_rejects_bad_initial():
    data = four_pattern_data()
    with pytest.raises(DataError):
        train_impute_migan2(data.values, partition_patterns(data), FAST)


def test_migan2_deterministic():
    data = four_pattern_data()
    part = partition_patterns(data)
    a = multiple_impute_migan2(data, part, FAST)
    b = multiple_impute_migan2(data, part, FAST)
    assert all(np.array_equal(x, y) for x, y in zip(a.imputations, b.imputations))


def test_migan2_beats_column_means_with_few_complete_rows():
    X, data = bivariate(20, 200, seed=5)
    part = partition_patterns(data)
    cfg = TrainConfig(M=5, N=3, cell_rounds=40, seed=1, plateau_tol=0.0)
    start = colmean_impute(data)
    res = train_impute_migan2(start, part, cfg, np.random.default_rng(1))
    miss = ~data.mask[:, 1]
    target = 0.8 * X[miss, 0]
    gan_err = np.mean([np.mean((imp[miss, 1] - target) ** 2) for imp in res.imputations])
    mean_err = np.mean((start[miss, 1] - target) ** 2)
    assert gan_err < mean_err


def test_initial_imputation_paths(monkeypatch):
    X = np.random.default_rng(0).standard_normal((5, 3))
    full = IncompleteMatrix(X, np.ones_like(X, dtype=bool))
    assert np.array_equal(initial_imputation(full, partition_patterns(full), FAST), X)

    rng = np.random.default_rng(1)
    Y = rng.standard_normal((8, 3))
    mask = np.ones_like(Y, dtype=bool)
    mask[:4, 0] = False
    mask[4:, 1] = False
    data = IncompleteMatrix(Y, mask)
    out = initial_imputation(data, partition_patterns(data), FAST)
    assert np.allclose(out[:4, 0], Y[4:, 0].mean())

    calls = []
    real = G.train_migan1
    monkeypatch.setattr(G, "train_migan1", lambda *a, **k: calls.append(1) or real(*a, **k))
    _, data = bivariate(100, 10)
    initial_imputation(data, partition_patterns(data), TrainConfig(epochs=1, batch_size=256))
    assert calls


def test_plateau_rule():
    assert not plateaued([1.0] * 39, 20, 1e-3)
    assert plateaued([1.0] * 40, 20, 1e-3)
    assert not plateaued([1.0] * 41, 20, 1e-3)  # only at window boundaries
    assert not plateaued([2.0] * 20 + [1.0] * 20, 20, 1e-3)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(T=0)
    with pytest.raises(ConfigError):
        TrainConfig(lambda_gp=-1)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"bogus": 1})
    cfg = TrainConfig.from_dict({"M": 4})
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_pattern_checkpoint_round_trip():
    cfg = FAST.replace(gen_average=0.9)
    g = make_gan(p=4, obs=(1, 3), cfg=cfg)
    g.gen_avg.data[:] += 1.0
    back = PatternGan.from_bytes(g.to_bytes())
    assert back.k == g.k and back.p == 4 and list(back.obs) == [1, 3]
    assert np.array_equal(back.generator.data, g.generator.data)
    assert np.array_equal(back.critic.data, g.critic.data)
    assert np.array_equal(back.imputer.data, g.gen_avg.data)
    plain = make_gan()
    assert PatternGan.from_bytes(plain.to_bytes()).gen_avg is None
    with pytest.raises(ValueError):
        PatternGan.from_bytes(b"XXXXXXXX" + plain.to_bytes()[8:])


def test_weight_average_tracks_generator():
    X, data = bivariate(50, 10)
    part = partition_patterns(data)
    gans = train_migan1(data, part, FAST.replace(gen_average=0.5, epochs=5))
    g = gans[0]
    assert g.imputer is g.gen_avg
    assert not np.array_equal(g.gen_avg.data, g.generator.data)
