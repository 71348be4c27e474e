import logging

import pytest

from middlewares.timing import PhaseTimer


def test_phases_accumulate(mocker):
    mocker.patch("middlewares.timing.time.perf_counter", side_effect=[0.0, 1.5, 2.0, 2.25])
    timer = PhaseTimer()
    with timer.phase("estimation"):
        pass
    with timer.phase("estimation"):
        pass
    assert timer.timings == {"estimation": 1.75}


def test_disabled_timer_records_nothing(caplog):
    timer = PhaseTimer(enabled=False)
    with caplog.at_level(logging.INFO):
        with timer.phase("initialization"):
            pass
    assert timer.timings == {}
    assert "Name: initialization" in caplog.text


def test_phase_is_timed_when_body_raises():
    timer = PhaseTimer()
    with pytest.raises(RuntimeError):
        with timer.phase("inference"):
            raise RuntimeError("boom")
    assert "inference" in timer.timings
