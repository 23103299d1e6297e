import dataclasses

import numpy as np
import pytest
from helpers import central_diff, grad_close

from selfonn1d.ecg import segment_record
from selfonn1d.errors import ConfigError, NumericError, ParameterError, ProtocolError
from selfonn1d.network import (
    NetworkConfig,
    TrainSchedule,
    beats_to_arrays,
    best_of_runs,
    build_network,
    fit,
    forward,
    layer_macs,
    load_model,
    loss_and_grads,
    mac_count,
    model_from_bytes,
    model_to_bytes,
    param_count,
    param_walk_count,
    run_seeds,
    save_model,
    select_best,
    sgd_step,
    sgd_update,
    train_patient,
)
from selfonn1d.synth import SyntheticSpec, generate_record

MINI = NetworkConfig(input_length=32, kernel=5, layer_neurons=(3, 2), subsample=(4, 3), Q=3)


@pytest.fixture(scope="module")
def tiny_beats():
    spec = SyntheticSpec(beats_per_class=8, seed=3)
    return segment_record(generate_record(spec, 100)).beats


def test_reference_parameter_counts():
    assert param_count(NetworkConfig(Q=7, layer_neurons=(16, 8))) == 16969
    assert param_count(NetworkConfig(Q=1, layer_neurons=(32, 16))) == 8913


@pytest.mark.parametrize("Q", [1, 3, 5, 7, 9])
def test_formula_matches_parameter_walk(Q):
    for layers in ((16, 8), (32, 16)):
        cfg = NetworkConfig(Q=Q, layer_neurons=layers)
        assert param_count(build_network(cfg)) == param_walk_count(build_network(cfg))


def test_q3_count_by_hand():
    # 2*16*15*3+16 + 16*8*15*3+8 + (8*10+10) + (10*5+5)
    assert param_count(NetworkConfig(Q=3)) == 1456 + 5768 + 90 + 55 == 7369
    assert param_walk_count(build_network(NetworkConfig(Q=3))) == 7369


def test_map_trace_and_flatten():
    cfg = NetworkConfig()
    assert cfg.map_trace() == [128, 114, 19, 5, 1]
    assert cfg.preact_lengths() == [114, 5]
    assert cfg.flatten_width == 8
    assert MINI.map_trace() == [32, 28, 7, 3, 1]


def test_inconsistent_dims_report_trace():
    with pytest.raises(ConfigError, match="128 -> 114 -> 1 -> -13"):
        NetworkConfig(subsample=(100, 5))


def test_mac_accounting():
    cfg = NetworkConfig(Q=7)
    assert 2 * 114 * 15 * 7 == 23940
    assert layer_macs(cfg) == [16 * 23940, 8 * 16 * 5 * 15 * 7]
    assert mac_count(cfg) == 16 * 23940 + 67200 + 8 * 10 + 10 * 5


def test_schedule_validation():
    with pytest.raises(ConfigError):
        TrainSchedule(max_epochs=0)
    with pytest.raises(ConfigError):
        TrainSchedule(target_train_error=0.0)
    with pytest.raises(ConfigError):
        TrainSchedule(lr0=0.0)
    TrainSchedule(target_train_error=1.0)


@pytest.mark.parametrize("loss", ["cross_entropy", "mse"])
def test_end_to_end_gradient_matches_finite_differences(rng, loss):
    cfg = dataclasses.replace(MINI, loss=loss, seed=7)
    model = build_network(cfg)
    X = rng.uniform(-1, 1, (4, 2, 32))
    y = np.array([0, 2, 4, 1])
    _, grads = loss_and_grads(model, X, y)

    params = model.parameters()
    numeric = central_diff(lambda: loss_and_grads(model, X, y)[0], params)
    for a, n in zip(grads, numeric):
        assert grad_close(a, n).all()


def _perfect_model(loss):
    model = build_network(dataclasses.replace(MINI, loss=loss))
    W2, b2 = model.dense[1]
    W2[:] = 0.0
    b2[:] = -800.0 if loss == "mse" else 0.0
    b2[2] = 800.0
    return model


@pytest.mark.parametrize("loss", ["cross_entropy", "mse"])
def test_zero_gradient_batch_leaves_model_unchanged(rng, loss):
    model = _perfect_model(loss)
    before = model_to_bytes(model)
    x = rng.uniform(-1, 1, (1, 2, 32))
    X = np.concatenate([x, x])
    _, batch_loss = sgd_step(model, X, [2, 2], lr=0.5)
    assert batch_loss == 0.0
    assert model_to_bytes(model) == before


def test_lr_zero_leaves_model_unchanged(rng):
    model = build_network(MINI)
    before = [p.copy() for p in model.parameters()]
    _, loss = sgd_step(model, rng.uniform(-1, 1, (1, 2, 32)), [3], lr=0.0)
    assert np.isfinite(loss) and loss > 0
    for a, b in zip(model.parameters(), before):
        assert np.array_equal(a, b)
    with pytest.raises(ParameterError):
        sgd_step(model, rng.uniform(-1, 1, (1, 2, 32)), [3], lr=-1.0)
    with pytest.raises(ProtocolError):
        sgd_step(model, np.zeros((0, 2, 32)), [], lr=0.1)


def test_scalar_update_by_hand():
    w = np.array([0.5])
    sgd_update([w], [np.array([2.0])], lr=0.1)
    assert w[0] == 0.5 - 0.1 * 2.0


def test_sgd_step_applies_minus_lr_times_gradient(rng):
    model = build_network(MINI)
    X = rng.uniform(-1, 1, (3, 2, 32))
    y = [0, 1, 2]
    _, grads = loss_and_grads(model.copy(), X, y)
    expected = [p - 0.05 * g for p, g in zip(model.parameters(), grads)]
    sgd_step(model, X, y, lr=0.05)
    for a, b in zip(model.parameters(), expected):
        np.testing.assert_array_equal(a, b)


def test_non_finite_input_names_beat(rng):
    model = build_network(MINI)
    X = rng.uniform(-1, 1, (3, 2, 32))
    X[1, 0, 5] = np.nan
    with pytest.raises(NumericError) as exc:
        sgd_step(model, X, [0, 1, 2], lr=0.1, beat_ids=["p:1", "p:2", "p:3"])
    assert exc.value.where["beat"] == "p:2"


def test_target_error_one_stops_after_first_epoch(tiny_beats):
    model = train_patient(tiny_beats, [], NetworkConfig(Q=1), TrainSchedule(target_train_error=1.0))
    assert model.meta["epochs"] == 1


def test_empty_training_set_rejected():
    with pytest.raises(ProtocolError):
        train_patient([], [], NetworkConfig(), TrainSchedule())


def test_union_dedupes_shared_beats(tiny_beats):
    sched = TrainSchedule(max_epochs=1)
    a = train_patient(tiny_beats, tiny_beats[:5], NetworkConfig(Q=1), sched, seed=4)
    b = train_patient(tiny_beats, [], NetworkConfig(Q=1), sched, seed=4)
    assert model_to_bytes(a) == model_to_bytes(b)


def test_training_is_bit_deterministic(tiny_beats):
    sched = TrainSchedule(max_epochs=3)
    a = train_patient(tiny_beats[:20], tiny_beats[20:], NetworkConfig(Q=3), sched, seed=11)
    b = train_patient(tiny_beats[:20], tiny_beats[20:], NetworkConfig(Q=3), sched, seed=11)
    assert model_to_bytes(a) == model_to_bytes(b)


def test_history_and_prefix_min(tiny_beats):
    model = train_patient(tiny_beats, [], NetworkConfig(Q=3), TrainSchedule(max_epochs=8, target_train_error=0.001), seed=2)
    hist = model.meta["history"]
    errs = [h["train_error"] for h in hist]
    prefix = np.minimum.accumulate(errs)
    assert all(a >= b for a, b in zip(prefix, prefix[1:]))
    # learning rate follows the up/down rule on epoch mean loss
    for prev, cur, nxt in zip(hist, hist[1:], hist[2:]):
        factor = 1.05 if cur["loss"] < prev["loss"] else 0.7
        assert nxt["lr"] == pytest.approx(cur["lr"] * factor, rel=1e-12)
    assert hist[1]["lr"] == pytest.approx(0.01 * 1.05)


def test_best_of_runs_single_run_equals_train_patient(tiny_beats):
    sched = TrainSchedule(max_epochs=2, runs=1)
    a = best_of_runs(tiny_beats, [], NetworkConfig(Q=1), sched, seed=9)
    b = train_patient(tiny_beats, [], NetworkConfig(Q=1), sched, seed=9)
    pa = [p.tobytes() for p in a.parameters()]
    assert pa == [p.tobytes() for p in b.parameters()]


def test_best_of_runs_selects_best_seed(tiny_beats):
    sched = TrainSchedule(max_epochs=4, runs=5)
    seeds = run_seeds(21, 5)
    assert len(set(seeds)) == 5
    singles = [train_patient(tiny_beats, [], NetworkConfig(Q=3), sched, s) for s in seeds]
    expected = select_best(singles)
    best = best_of_runs(tiny_beats, [], NetworkConfig(Q=3), sched, seed=21)
    assert best.meta["seed"] == expected.meta["seed"]
    assert [p.tobytes() for p in best.parameters()] == [p.tobytes() for p in expected.parameters()]
    assert [r["seed"] for r in best.meta["runs"]] == seeds
    again = best_of_runs(tiny_beats, [], NetworkConfig(Q=3), sched, seed=21)
    assert model_to_bytes(again) == model_to_bytes(best)


def test_select_best_tie_breaks():
    class M:
        def __init__(self, err, ep, seed):
            self.meta = {"final_train_error": err, "epochs": ep, "seed": seed}

    ms = [M(0.1, 5, 1), M(0.02, 9, 7), M(0.02, 4, 8), M(0.02, 4, 3)]
    assert select_best(ms).meta["seed"] == 3


def test_fit_reaches_target_on_separable_arrays(rng):
    # two well-separated classes of miniature inputs
    X = rng.uniform(-0.1, 0.1, (40, 2, 32))
    y = np.repeat([0, 1], 20)
    X[y == 1, 0, 10:20] += 0.8
    model = fit(X, y, MINI, TrainSchedule(max_epochs=50, lr0=0.05, batch_size=8), seed=0)
    assert model.meta["final_train_error"] <= 0.03


def test_serialization_roundtrip_bit_exact(tmp_path, rng):
    model = build_network(dataclasses.replace(NetworkConfig(Q=5), seed=13))
    model.meta = {"seed": 13, "epochs": 3, "final_train_error": 0.1 + 1e-17, "history": []}
    path = tmp_path / "m.npz"
    save_model(model, path)
    back = load_model(path)
    assert back.config == model.config
    assert back.meta == model.meta
    for a, b in zip(model.parameters(), back.parameters()):
        assert a.tobytes() == b.tobytes()
    assert model_to_bytes(back) == model_to_bytes(model)


def test_serialized_kernel_order_is_position_then_power():
    model = build_network(NetworkConfig(Q=2, kernel=3, input_length=16, subsample=(2, 1), layer_neurons=(1, 1)))
    layer = model.layers[0]
    layer.weights[0, 0] = [1, 2, 3, 10, 20, 30]  # powers 1 then 2, taps 0..2
    import io

    with np.load(io.BytesIO(model_to_bytes(model))) as z:
        flat = z["layer0_weights"]
    np.testing.assert_array_equal(flat[:6], [1, 10, 2, 20, 3, 30])


def test_corrupted_header_rejected():
    data = model_to_bytes(build_network(MINI))
    import io
    import json

    with np.load(io.BytesIO(data)) as z:
        arrays = {k: z[k] for k in z.files}
    header = json.loads(str(arrays["header"]))
    header["version"] = 99
    arrays["header"] = np.array(json.dumps(header))
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    with pytest.raises(ConfigError):
        model_from_bytes(buf.getvalue())


def test_beats_to_arrays_shapes(tiny_beats):
    X, y, ids = beats_to_arrays(tiny_beats)
    assert X.shape == (len(tiny_beats), 2, 128)
    assert set(y) <= set(range(5))
    assert ids[0].startswith("100:")


def test_forward_shape_check():
    with pytest.raises(Exception):
        forward(build_network(MINI), np.zeros((1, 2, 31)))
