"""sklearn-facing estimator facade."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from revcast import data as dt
from revcast.errors import ShapeError
from revcast.estimator import SequencePredictor, check_sequence_array


def small_estimator(**overrides) -> SequencePredictor:
    kwargs = dict(stages="2x1,2x1", predictor_units=2, frames_in=3, frames_out=1,
                  steps=3, batch_size=2, eval_every=2, seed=0)
    kwargs.update(overrides)
    return SequencePredictor(**kwargs)


def toy_batch(n=6, frames=5, size=8):
    return dt.gen_batch("bouncing", n, size, frames, seed=0, square=2)


def test_check_sequence_array_shapes():
    x = np.zeros((2, 3, 4, 4, 1), dtype=np.float32)
    out = check_sequence_array(x)
    assert out.shape == x.shape and out.dtype == np.float64
    promoted = check_sequence_array(np.zeros((3, 4, 4, 1)))
    assert promoted.shape == (1, 3, 4, 4, 1)
    with pytest.raises(ShapeError, match="must have shape"):
        check_sequence_array(np.zeros((4, 4, 1)))
    with pytest.raises(ShapeError, match="empty axis"):
        check_sequence_array(np.zeros((0, 3, 4, 4, 1)))
    bad = np.zeros((1, 3, 4, 4, 1))
    bad[0, 0, 0, 0, 0] = np.nan
    with pytest.raises(ShapeError, match="non-finite"):
        check_sequence_array(bad)


def test_get_params_set_params_and_clone():
    est = small_estimator()
    params = est.get_params()
    assert params["stages"] == "2x1,2x1"
    assert params["predictor_units"] == 2
    est.set_params(steps=5, learning_rate=1e-3)
    assert est.steps == 5 and est.learning_rate == 1e-3
    copy = clone(est)
    assert copy.get_params() == est.get_params()
    assert copy is not est


def test_predict_and_score_require_fit():
    est = small_estimator()
    x = toy_batch(2)
    with pytest.raises(NotFittedError):
        est.predict(x)
    with pytest.raises(NotFittedError):
        est.score(x)


def test_fit_predict_score_roundtrip():
    est = small_estimator()
    batch = toy_batch()
    fitted = est.fit(batch)
    assert fitted is est
    assert est.config_.height == 8 and est.config_.channels == 1
    assert est.history_[-1]["step"] == 2

    pred = est.predict(batch[:2])
    assert pred.shape == (2, 1, 8, 8, 1)  # frames_out = 1
    assert pred.dtype == np.float32
    assert np.all(np.isfinite(pred))

    longer = est.predict(batch[:1], steps=3)
    assert longer.shape == (1, 3, 8, 8, 1)

    one = est.predict(batch[0])  # 4-d input promoted to a batch of one
    assert one.shape == (1, 1, 8, 8, 1)

    s = est.score(batch)
    model_mse = -s
    assert np.isfinite(s) and model_mse > 0


def test_fit_rejects_short_or_mismatched_input():
    est = small_estimator()
    with pytest.raises(ShapeError, match="need at least"):
        est.fit(toy_batch(frames=3))  # frames_in 3 + frames_out 1 > 3
    est.fit(toy_batch())
    with pytest.raises(ShapeError, match="does not match the fitted"):
        est.predict(np.zeros((1, 3, 16, 16, 1)))


def test_fit_is_deterministic_for_a_seed():
    batch = toy_batch()
    a = small_estimator().fit(batch)
    b = small_estimator().fit(batch)
    assert a.history_ == b.history_
    assert np.array_equal(a.predict(batch[:1]), b.predict(batch[:1]))
