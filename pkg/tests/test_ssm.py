import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import kalman_filter, linear_system, rts_smoother
from urs.errors import ContractError, ShapeError
from urs.gaussian import Gaussian
from urs.pricing import implied_vol
from urs.reservoir import InitConfig, init_reservoir
from urs.ssm import (LinearModel, ReservoirModel, export_trajectory_csv, forward_filter, initial_belief,
                     k_step_predict, predict, rts_smooth)
from urs.synthetic import CirConfig, generate_dataset


def linear_problem(seed, p=3, k=2, T=30, with_input=False):
    s = linear_system(seed, p, k, T, with_input)
    model = LinearModel(s["A"], s["Q"], s["H"], s["R"], s["c"], s["B"], s["d"])
    return model, Gaussian(s["m0"], s["P0"]), s["us"], s["ys"]


@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 3), st.booleans())
@settings(max_examples=25, deadline=None)
def test_linear_filter_and_smoother_match_exact_recursions(seed, p, k, with_input):
    model, init, us, ys = linear_problem(seed, p, k, 25, with_input)
    fr = forward_filter(model, init, us, ys)
    kf = kalman_filter(model.A, model.Q, model.H, model.R, init.mean, init.cov, ys, model.c, model.d, model.B, us)
    for t, s in enumerate(fr.states):
        np.testing.assert_allclose(s.prior.mean, kf["m_pred"][t], atol=1e-8)
        np.testing.assert_allclose(s.posterior.mean, kf["m"][t], atol=1e-8)
        np.testing.assert_allclose(s.posterior.cov, kf["P"][t], atol=1e-8)
        np.testing.assert_allclose(s.cross_prev, kf["cross"][t], atol=1e-8)
    assert fr.log_evidence == pytest.approx(kf["loglik"], abs=1e-6)
    tr = rts_smooth(fr)
    sm, sP, cross = rts_smoother(model.A, init.mean, init.cov, kf)
    for t in range(len(ys) + 1):
        np.testing.assert_allclose(tr.marginals[t].mean, sm[t], atol=1e-8)
        np.testing.assert_allclose(tr.marginals[t].cov, sP[t], atol=1e-8)
    for t in range(len(ys)):
        np.testing.assert_allclose(tr.cross[t], cross[t], atol=1e-8)


def test_k_step_predict_matches_exact_propagation():
    model, init, _, ys = linear_problem(3, 2, 1, 10)
    fc = k_step_predict(model, init, [None] * 4)
    m, P = init.mean, init.cov
    for f in fc:
        m = model.A @ m + model.c
        P = model.A @ P @ model.A.T + model.Q
        np.testing.assert_allclose(f.state.mean, m, atol=1e-10)
        np.testing.assert_allclose(f.state.cov, P, atol=1e-10)
        assert f.price is None
    with pytest.raises(ContractError):
        k_step_predict(model, init, [])


def test_contract_and_shape_errors():
    model, init, _, ys = linear_problem(0, 2, 1, 5)
    with pytest.raises(ContractError):
        forward_filter(model, init, [None] * 4, ys)
    with pytest.raises(ShapeError):
        predict(model, Gaussian(np.zeros(3), np.eye(3)), None)
    empty = forward_filter(model, init, [], [])
    with pytest.raises(ContractError):
        rts_smooth(empty)


@pytest.fixture(scope="module")
def reservoir_run():
    ds = generate_dataset(CirConfig(n=40, seed=2), seed=2)
    s = ds.to_series(10)
    prm = init_reservoir(InitConfig(p=4, seed=2, bias_fill=-2.3))
    init = initial_belief(s.batches[0], 4)
    fr = forward_filter(ReservoirModel(prm), init, s.inputs, s.batches)
    return s, prm, init, fr, rts_smooth(fr)


def test_reservoir_filter_outputs_are_valid(reservoir_run):
    s, prm, init, fr, tr = reservoir_run
    assert np.isfinite(fr.log_evidence)
    for st_ in fr.states:
        assert st_.posterior.is_psd() and st_.prior.is_psd()
    for g in tr.marginals:
        assert g.is_psd()
    # smoothing never increases the marginal variance of the readout
    for t, st_ in enumerate(fr.states, start=1):
        w = np.full(4, 0.25)
        assert w @ tr.marginals[t].cov @ w <= w @ st_.posterior.cov @ w * (1 + 1e-6) + 1e-15


def test_initial_belief_reads_out_implied_vol(reservoir_run):
    s, *_ = reservoir_run
    b = s.batches[0]
    g = initial_belief(b, 4, 1e-3)
    iv = np.mean([implied_vol(sp, px) for sp, px in zip(b.specs(), b.prices)])
    assert g.mean.mean() == pytest.approx(iv, rel=1e-12)
    np.testing.assert_array_equal(g.cov, 1e-3 * np.eye(4))


def test_export_trajectory_csv(tmp_path, reservoir_run):
    s, prm, init, fr, tr = reservoir_run
    path = tmp_path / "traj.csv"
    export_trajectory_csv(path, tr, prm, s.batches)
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == len(s) + 1
    assert rows[0]["price_1"] == "" and rows[1]["price_5"] != ""
    for r in rows:
        assert float(r["sigma_lo"]) <= float(r["sigma_mean"]) <= float(r["sigma_hi"])
