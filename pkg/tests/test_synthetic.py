import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from urs.errors import ContractError, DataError
from urs.pricing import call_price
from urs.series import Split, lagged_returns
from urs.synthetic import (CirConfig, DatasetOptions, cir_mean, cir_var, generate_dataset, read_bundle,
                           simulate_cir, write_bundle)


def test_cir_moments_match_euler_recursion_and_closed_form():
    cfg = CirConfig(v0=0.25, long_term=0.15, reversion=10.0, vol_of_vol=0.04, n=60, seed=1)
    paths = simulate_cir(cfg, n_paths=40_000)
    assert paths.shape == (40_000, 61)
    v = paths[:, -1]
    se = v.std() / np.sqrt(v.size)
    # the Euler mean recursion is exact for the scheme while the path stays positive
    euler_mean = cfg.long_term + (cfg.v0 - cfg.long_term) * (1 - cfg.reversion * cfg.dt) ** cfg.n
    assert abs(v.mean() - euler_mean) < 5 * se
    t = cfg.n * cfg.dt
    assert v.mean() == pytest.approx(cir_mean(cfg, t), abs=5 * se + 2e-3)
    assert v.var() == pytest.approx(cir_var(cfg, t), rel=0.1)


@given(st.integers(0, 10_000), st.floats(0.5, 3.0))
@settings(max_examples=30, deadline=None)
def test_cir_paths_stay_non_negative(seed, vol_of_vol):
    cfg = CirConfig(v0=0.01, long_term=0.02, reversion=1.0, vol_of_vol=vol_of_vol, n=100, seed=seed)
    assert np.all(simulate_cir(cfg) >= 0.0)


def test_dataset_is_deterministic_and_consistent():
    cfg = CirConfig(n=30, seed=2)
    a = generate_dataset(cfg, 0.01, 5, 2000.0, 0.02, seed=2)
    b = generate_dataset(cfg, 0.01, 5, 2000.0, 0.02, seed=2)
    np.testing.assert_array_equal(a.quotes, b.quotes)
    assert not np.array_equal(a.quotes, generate_dataset(cfg, seed=3).quotes)
    assert a.quotes.shape == (30, 5)
    assert a.prices[0] == 2000.0
    np.testing.assert_allclose(a.prices[1:], a.prices[:-1] * (1 + a.returns), rtol=1e-15)
    assert np.all((a.strikes >= 0.9 * a.prices[1:, None]) & (a.strikes <= a.prices[1:, None]))
    assert a.maturity_days.min() >= 21 and a.maturity_days.max() <= 252
    sig = np.clip(a.deviated, 1e-4, 0.9999)
    np.testing.assert_allclose(a.quotes, call_price(a.prices[1:, None], 0.02, a.strikes, a.maturity_days / 365.0,
                                                    sig), rtol=1e-14)


def test_noise_scale_reads_kappa_as_stdev_or_variance():
    cfg = CirConfig(n=400, seed=3)
    sd = generate_dataset(cfg, 0.04, 20, seed=3)
    var = generate_dataset(cfg, 0.04, 20, seed=3, options=DatasetOptions(noise_scale="variance"))
    dev_sd = (sd.deviated - sd.ground_truth[1:, None]).std()
    dev_var = (var.deviated - var.ground_truth[1:, None]).std()
    assert dev_sd == pytest.approx(0.04, rel=0.05)
    assert dev_var == pytest.approx(0.2, rel=0.05)


def test_series_inputs_are_lagged_returns():
    ds = generate_dataset(CirConfig(n=20, seed=4), seed=4)
    s = ds.to_series(3)
    np.testing.assert_array_equal(s.inputs[5], ds.returns[3:6])
    np.testing.assert_array_equal(s.inputs[0], [0.0, 0.0, ds.returns[0]])
    np.testing.assert_array_equal(s.truth, ds.ground_truth[1:])
    assert lagged_returns(np.arange(4.0), 2).tolist() == [[0, 0], [0, 1], [1, 2], [2, 3]]


def test_bundle_round_trip(tmp_path):
    ds = generate_dataset(CirConfig(n=15, seed=5), seed=5)
    write_bundle(ds, tmp_path / "b")
    back = read_bundle(tmp_path / "b")
    for name in ("ground_truth", "deviated", "returns", "prices", "strikes", "maturity_days", "quotes"):
        np.testing.assert_array_equal(getattr(back, name), getattr(ds, name))
    assert back.config == ds.config and back.options == ds.options
    with pytest.raises(DataError):
        read_bundle(tmp_path / "missing")


def test_split_and_validation():
    sp = Split.from_test_length(100, 24, 1)
    assert (sp.n_train, sp.n_val, sp.n_test) == (75, 1, 24)
    with pytest.raises(ContractError):
        Split.from_test_length(20, 20, 1)
    with pytest.raises(ContractError):
        CirConfig(v0=-1.0)
    with pytest.raises(ContractError):
        DatasetOptions(noise_scale="both")
