import numpy as np
import pytest

from opsched.cost import uniform_profile
from opsched.fixtures import random_chain
from opsched.nn import ConfigError, Tensor
from opsched.predictor import (GroundTruthGrid, PredictorConfig, ThresholdModel, accuracy_pm10,
                               closed_form_sparsity_threshold, generate_ground_truth, intensity_threshold,
                               oracle_thresholds, predict, sparsity_threshold, threshold_loss, train)

SMALL = PredictorConfig(hidden=16, heads=2, encoder_layers=1, lstm_hidden=8, epochs=3, lr=1e-3)
TINY_GRID = GroundTruthGrid(sparsity_levels=(0.0, 0.25, 0.5, 0.75, 1.0), size_levels=3, batches=(1,))


def test_identical_devices_give_sentinel():
    gt = generate_ground_truth(uniform_profile(kappa_cpu=0.0, kappa_gpu=0.0), TINY_GRID)
    assert {s.s for s in gt} == {1.0}


def test_ratio_two_gives_half():
    gt = generate_ground_truth(uniform_profile(ratio=2.0), TINY_GRID)
    assert {round(s.s, 12) for s in gt} == {0.5}
    assert closed_form_sparsity_threshold(2.0) == 0.5


def test_ground_truth_ranges(nano):
    gt = generate_ground_truth(nano)
    assert len(gt) == 5 * 8 * 11 * 2
    assert all(0.0 <= s.s <= 1.0 and s.c >= 1.0 for s in gt)
    assert all(np.all(np.isfinite(s.x)) for s in gt)


def test_threshold_helpers():
    assert sparsity_threshold([0.0, 0.5, 1.0], [-1.0, -1.0, 1.0]) == pytest.approx(0.75)
    assert sparsity_threshold([0.0, 1.0], [1.0, 1.0]) == 0.0
    assert intensity_threshold([1.0, 2.0, 3.0], [1.0, 1.0, -1.0]) == pytest.approx(2.5)
    assert intensity_threshold([1.0, 2.0], [-1.0, -1.0]) == 1.0


def test_oracle_thresholds_match_closed_form():
    p = uniform_profile(ratio=4.0)
    g = random_chain(3, 0)
    s, c = oracle_thresholds(g.nodes[0], p)
    assert abs(s - 0.75) <= 0.01
    assert c >= 1.0


@pytest.mark.parametrize("pred_s,pred_c,true_s,true_c,expect", [
    ([0.5], [1e6], [0.5], [1e6], (100.0, 100.0)),
    ([0.56], [1e6], [0.5], [1e6], (0.0, 100.0)),
    ([0.54], [10 ** 6.5], [0.5], [1e6], (100.0, 100.0)),
    ([0.5], [10 ** 6.7], [0.5], [1e6], (100.0, 0.0)),
    ([0.004], [1e6], [0.0], [1e6], (100.0, 100.0)),
])
def test_accuracy_examples(pred_s, pred_c, true_s, true_c, expect):
    assert accuracy_pm10(pred_s, pred_c, true_s, true_c) == pytest.approx(expect)


def test_accuracy_length_mismatch():
    with pytest.raises(ValueError):
        accuracy_pm10([0.1, 0.2], [1.0], [0.1], [1.0])


def test_loss_matches_scalar_recomputation(rng):
    pred = rng.random((2, 3, 2))
    s, c = rng.random((2, 3)), rng.random((2, 3))
    mask = np.array([[1, 1, 0], [1, 0, 0]], dtype=float)
    got = threshold_loss(Tensor(pred), s, c, mask).item()
    ref, n = 0.0, 0
    for i in range(2):
        for j in range(3):
            if mask[i, j]:
                ref += (pred[i, j, 0] - s[i, j]) ** 2 + (pred[i, j, 1] - c[i, j]) ** 2
                n += 1
    assert got == pytest.approx(ref / n, rel=1e-12)


def test_default_model_size():
    assert ThresholdModel(PredictorConfig()).num_parameters() < 1_500_000


def test_config_validation():
    with pytest.raises(ConfigError):
        PredictorConfig(hidden=10, heads=3)
    with pytest.raises(ConfigError):
        PredictorConfig(epochs=0)


def test_untrained_predictions_are_in_range():
    model = ThresholdModel(SMALL)
    preds = predict(model, random_chain(6, 2))
    assert len(preds) == 6
    assert all(0.0 <= p.s <= 1.0 and np.isfinite(p.c) and p.c > 0 for p in preds)
    with pytest.raises(ValueError):
        model.predict_raw(np.zeros((0, 6)))


def test_training_learns_constant_labels(nano):
    gt = [smp.__class__(smp.x, 0.3, 1e6, smp.kind, smp.size, smp.batch, smp.profile)
          for smp in generate_ground_truth(nano, TINY_GRID)]
    cfg = PredictorConfig(hidden=16, heads=2, encoder_layers=1, lstm_hidden=8, epochs=60, lr=3e-3)
    rep = train(gt, cfg)
    assert rep.history[-1].train_loss < rep.history[0].train_loss
    assert rep.test_acc == (100.0, 100.0)


def test_checkpoint_round_trip(tmp_path, nano):
    rep = train(generate_ground_truth(nano, TINY_GRID), SMALL)
    path = tmp_path / "pred.json"
    rep.model.save(path)
    other = ThresholdModel.load(path)
    g = random_chain(4, 1)
    assert predict(other, g) == predict(rep.model, g)
    assert rep.metrics_csv().startswith("epoch,train_loss,test_loss,acc_s,acc_c")
