import csv
import io

import numpy as np
import pytest

from spectralrep import dist, oracle, train
from spectralrep.errors import ConfigError, DimensionMismatch, IncompatiblePair


def _sc(**kw):
    return train.config_from_mapping({"objective": "spectral_contrastive", "d": 2, **kw})


def test_max_iters_zero_rejected():
    with pytest.raises(ConfigError):
        _sc(max_iters=0)


def test_nonpositive_tol_rejected():
    with pytest.raises(ConfigError):
        _sc(tol=0.0)


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        train.config_from_mapping({"objective": "spectral_contrastive", "colour": 1})


def test_incompatible_pair():
    with pytest.raises(IncompatiblePair):
        train.config_from_mapping({"objective": "minc", "learner": "direct"})


def test_opt_keys_become_options():
    cfg = train.config_from_mapping({"objective": "nce_ranking", "opt": {"k": 4}})
    assert cfg.options == {"k": 4}


def test_spectral_contrastive_defaults():
    trace = train.run_train(_sc())
    last = trace.records[-1]
    assert trace.converged
    assert last["angle"] <= 1e-3
    assert last["loss"] <= 1e-4
    iters = [r["iter"] for r in trace.records]
    assert all(b > a for a, b in zip(iters, iters[1:]))
    assert all(np.isfinite(v) for r in trace.records for v in r.values())


def test_trace_deterministic():
    a = train.trace_to_json(train.run_train(_sc(seed=3)))
    b = train.trace_to_json(train.run_train(_sc(seed=3)))
    assert a == b


def test_sampled_trace_deterministic():
    cfg = _sc(batch="sampled", batch_size=64, max_iters=50, seed=1)
    assert train.trace_to_json(train.run_train(cfg)) == train.trace_to_json(train.run_train(cfg))


def test_trace_json_round_trip():
    trace = train.run_train(_sc(max_iters=30))
    back = train.trace_from_json(train.trace_to_json(trace))
    assert train.trace_to_json(back) == train.trace_to_json(trace)


def test_eval_oracle_params():
    j = dist.block4()
    phi, psi = oracle.oracle_factors(j, 2)
    met = train.run_eval({"phi": phi, "psi": psi}, j, "spectral_contrastive", "direct")
    assert abs(met["eckart_young_gap"]) <= 1e-9
    assert met["max_angle"] <= 1e-9
    assert met["ratio_err_raw"] <= 1e-9
    assert met["downstream_mse"] <= 1e-9


def test_eval_zero_params():
    j = dist.synth_random_lowrank(5, 5, 2, 0)
    z = np.zeros((5, 2))
    met = train.run_eval({"phi": z, "psi": z}, j, "spectral_contrastive", "direct")
    assert met["fit_residual"] == pytest.approx(float(np.sum(dist.t_matrix(j).t ** 2)), abs=1e-12)


def test_eval_matches_trace_final_row():
    trace = train.run_train(_sc())
    met = train.run_eval(trace)
    assert abs(met["max_angle"] - trace.records[-1]["angle"]) <= 1e-12


def test_eval_dimension_mismatch():
    trace = train.run_train(_sc(max_iters=5))
    with pytest.raises(DimensionMismatch):
        train.run_eval(trace, "lowrank8")


def test_eval_needs_ids_for_raw_params():
    with pytest.raises(ConfigError):
        train.run_eval({"phi": np.zeros((4, 2))}, "block4")


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_sweep_single_config_matches_train_and_eval():
    text, _ = train.run_sweep([{"objective": "spectral_contrastive", "d": 2, "run_id": "a"}])
    row = _rows(text)[0]
    trace = train.run_train(_sc(run_id="a"))
    met = train.run_eval(trace)
    assert row["status"] == "ok"
    assert float(row["max_angle"]) == met["max_angle"]
    assert float(row["fit_residual"]) == met["fit_residual"]
    assert int(row["iterations"]) == trace.iterations
    assert tuple(_rows(text)[0].keys()) == train.CSV_COLUMNS


def test_sweep_records_failures_and_continues():
    text, rows = train.run_sweep([{"objective": "minc", "learner": "direct", "run_id": "b"},
                                  {"objective": "spectral_contrastive", "max_iters": 20, "run_id": "a"}])
    status = {r["run_id"]: r["status"] for r in _rows(text)}
    assert status == {"a": "ok", "b": "IncompatiblePair"}


def test_sweep_parallelism_byte_identical():
    configs = [{"objective": "spectral_contrastive", "run_id": "r2", "seed": 2, "max_iters": 200},
               {"objective": "barlow_twins", "run_id": "r1", "max_iters": 200},
               {"objective": "siglip", "run_id": "r0", "max_iters": 200}]
    serial, _ = train.run_sweep(configs, parallelism=1)
    parallel, _ = train.run_sweep(configs, parallelism=3)
    assert serial == parallel
    assert [r["run_id"] for r in _rows(serial)] == ["r0", "r1", "r2"]


def test_sweep_needs_configs():
    with pytest.raises(ConfigError):
        train.run_sweep([])


def test_every_learner_runs():
    cases = [
        {"objective": "minc", "learner": "minc", "max_iters": 20},
        {"objective": "byol", "learner": "byol", "max_iters": 20},
        {"objective": "fdiv_kl", "learner": "gvpi", "max_iters": 20},
        {"objective": "moco", "learner": "moco", "max_iters": 20},
        {"objective": "deepcluster", "learner": "em", "fixture": "mixture8", "max_iters": 2},
        {"objective": "dino", "learner": "dino", "fixture": "mixture8", "max_iters": 5},
        {"objective": "swav", "learner": "swav", "fixture": "mixture8", "max_iters": 5},
    ]
    for case in cases:
        trace = train.run_train(train.config_from_mapping(case))
        assert trace.records and trace.status == "ok"
        met = train.run_eval(trace)
        assert set(met) >= {"fit_residual", "max_angle", "ratio_err_raw", "downstream_mse"}
