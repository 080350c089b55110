import pickle
import sys
from pathlib import Path

import numpy as np
import pytest

from hbae.forward.base import ModelFailure
from hbae.forward.external import ExternalModel

FAKE = str(Path(__file__).with_name("fake_model.py"))


def model(mode, **kw):
    return ExternalModel([sys.executable, FAKE, mode], **kw)


def test_handshake_sets_dims():
    m = model("echo")
    assert (m.input_dim, m.output_dim) == (3, 3)
    m.close()


def test_echo_round_trip():
    m = model("echo")
    k = np.array([0.1, -2.5, 1e-300])
    np.testing.assert_array_equal(m.evaluate(k), k)
    m.close()


def test_plus_one():
    m = model("plus1")
    np.testing.assert_array_equal(m.evaluate([1.0, 2.0, 3.0]), [2.0, 3.0, 4.0])
    m.close()


def test_every_third_call_fails():
    m = model("fail3")
    reasons = []
    for i in range(6):
        try:
            m.evaluate(np.full(3, float(i)))
            reasons.append(None)
        except ModelFailure as exc:
            reasons.append(exc.reason)
    assert reasons == [None, None, "simulator-error", None, None, "simulator-error"]
    assert m.n_restarts == 0
    m.close()


def test_batch_reports_failures():
    m = model("fail3")
    Y, reasons = m.evaluate_many(np.arange(9.0).reshape(3, 3))
    assert reasons == [None, None, "simulator-error"]
    assert np.all(np.isnan(Y[2]))
    m.close()


def test_timeout_then_restart():
    m = model("hang", timeout=1.0)
    m.evaluate(np.zeros(3))
    with pytest.raises(ModelFailure) as exc:
        m.evaluate(np.ones(3))
    assert exc.value.reason == "timeout"
    np.testing.assert_array_equal(m.evaluate(np.full(3, 2.0)), np.full(3, 2.0))
    assert m.n_restarts == 1
    m.close()


def test_process_death_then_restart():
    m = model("die")
    m.evaluate(np.zeros(3))
    with pytest.raises(ModelFailure) as exc:
        m.evaluate(np.ones(3))
    assert exc.value.reason == "process-died"
    np.testing.assert_array_equal(m.evaluate(np.full(3, 5.0)), np.full(3, 5.0))
    assert m.n_restarts == 1
    m.close()


@pytest.mark.parametrize("mode", ["garbage", "badid"])
def test_protocol_violation(mode):
    m = model(mode)
    with pytest.raises(ModelFailure) as exc:
        m.evaluate(np.zeros(3))
    assert exc.value.reason == "protocol-violation"
    m.close()


def test_bad_handshake():
    with pytest.raises(ModelFailure) as exc:
        model("badhello")
    assert exc.value.reason == "protocol-violation"


def test_dimension_mismatch_in_handshake():
    m = ExternalModel([sys.executable, FAKE, "echo", "4"], input_dim=3, output_dim=3)
    with pytest.raises(ModelFailure) as exc:
        m.evaluate(np.zeros(3))
    assert exc.value.reason == "protocol-violation"


def test_lazy_start_and_pickle():
    m = model("plus1", input_dim=3, output_dim=3)
    assert m._proc is None
    clone = pickle.loads(pickle.dumps(m))
    np.testing.assert_array_equal(clone.evaluate(np.zeros(3)), np.ones(3))
    clone.close()


def test_default_timeout():
    m = model("echo", input_dim=3, output_dim=3)
    assert m.timeout == 300.0
