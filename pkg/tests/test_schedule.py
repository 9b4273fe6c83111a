import pytest

from hybrid_cnn.training import Schedule, ScheduleKind


def test_fixed_schedule_ignores_the_epoch():
    schedule = Schedule()
    assert [schedule.lr_at(e, 0.1) for e in (0, 10, 1000)] == [0.1, 0.1, 0.1]


def test_step_decay_divides_at_each_milestone():
    schedule = Schedule.step_decay()
    assert schedule.kind is ScheduleKind.STEP_DECAY
    assert schedule.lr_at(0, 0.1) == 0.1
    assert schedule.lr_at(59, 0.1) == 0.1
    assert schedule.lr_at(60, 0.1) == pytest.approx(0.02)
    assert schedule.lr_at(120, 0.1) == pytest.approx(0.004)
    assert schedule.lr_at(199, 0.1) == pytest.approx(0.0008)


def test_kind_accepts_its_string_value():
    schedule = Schedule("step-decay", [2, 4], 2.0)
    assert schedule.lr_at(3, 1.0) == 0.5
    assert schedule.to_dict() == {"kind": "step-decay", "milestones": [2, 4], "factor": 2.0}


def test_violations():
    assert Schedule.step_decay().violations() == []
    assert len(Schedule("step-decay", [5, 5], 0.0).violations()) == 2
    assert len(Schedule("fixed", [-1]).violations()) == 1
