import math

import pytest
import torch

from elasticnas.data import synthetic_dataset
from elasticnas.errors import MissingTimeEntry
from elasticnas.schedule import (
    COMPOFA_ELASTIC_KERNEL,
    COMPOFA_SINGLE_STAGE,
    COMPOUND_PROGRESSIVE,
    INDEP_FIXED_PROGRESSIVE,
    INDEP_FIXED_SINGLE_STAGE,
    LONG_LR,
    OFA_PROGRESSIVE,
    SCHEDULE_KINDS,
    SHORT_LR,
    TEACHER_LR,
    TrainingSchedule,
    TrainPhase,
    family_train_time,
    make_schedule,
    phase_space,
    run_training,
    schedule_to_dict,
)
from elasticnas.space import cardinality, get_space, max_arch
from elasticnas.supernet import build_supernet, toy_base

TOY_SPACE = get_space("toy-compound")


class TestPresets:
    def test_total_epochs(self):
        assert make_schedule(OFA_PROGRESSIVE).total_epochs() == 605
        assert make_schedule(COMPOFA_SINGLE_STAGE).total_epochs() == 330
        assert make_schedule(COMPOFA_ELASTIC_KERNEL).total_epochs() == 455
        assert make_schedule(INDEP_FIXED_PROGRESSIVE).total_epochs() == 480

    def test_progressive_phase_epochs_and_samples(self):
        sched = make_schedule(OFA_PROGRESSIVE)
        assert [p.epochs for p in sched.phases] == [180, 125, 25, 125, 25, 125]
        assert [p.n_sample for p in sched.phases] == [1, 1, 2, 2, 4, 4]

    def test_single_stage_lr_pair(self):
        sched = make_schedule(COMPOFA_SINGLE_STAGE)
        assert [p.epochs for p in sched.phases] == [180, 25, 125]
        assert [p.n_sample for p in sched.phases] == [1, 4, 4]
        assert sched.phases[0].lr == TEACHER_LR == 1.95
        assert (sched.phases[1].lr, sched.phases[2].lr) == (0.06, 0.18)
        assert (SHORT_LR, LONG_LR) == (0.06, 0.18)

    def test_teacher_phase_never_distills(self):
        for kind in SCHEDULE_KINDS:
            sched = make_schedule(kind)
            assert sched.phases[0].name == "teacher"
            assert not sched.phases[0].distill
            assert all(p.distill for p in sched.phases[1:])

    def test_monotonic_unlocking(self):
        for kind in SCHEDULE_KINDS:
            sched = make_schedule(kind)
            for prev, cur in zip(sched.phases, sched.phases[1:]):
                assert set(prev.depths) <= set(cur.depths)
                assert set(prev.widths) <= set(cur.widths)
                if prev.kernels is not None and cur.kernels is not None:
                    assert set(prev.kernels) <= set(cur.kernels)

    def test_scaled_epochs_round_up(self):
        sched = make_schedule(OFA_PROGRESSIVE, scale=1 / 12)
        assert [p.epochs for p in sched.phases] == [
            math.ceil(e / 12) for e in (180, 125, 25, 125, 25, 125)
        ]
        with pytest.raises(ValueError):
            make_schedule(OFA_PROGRESSIVE, scale=0)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            make_schedule("NoSuchSchedule")

    def test_to_dict_round_trips_fields(self):
        sched = make_schedule(COMPOUND_PROGRESSIVE)
        obj = schedule_to_dict(sched)
        assert [row["epochs"] for row in obj["phases"]] == [180, 25, 125]
        assert obj["phases"][0]["distill"] is False


class TestFamilyTrainTime:
    def test_small_example(self):
        sched = TrainingSchedule(
            phases=(
                TrainPhase("a", (2,), (3,), None, 1, 2, 0.1),
                TrainPhase("b", (2,), (3,), None, 1, 3, 0.1),
            ),
            epoch_seconds={"a": 5.0, "b": 7.0},
        )
        assert family_train_time(sched) == pytest.approx(31.0)

    def test_missing_entry(self):
        sched = TrainingSchedule(
            phases=(TrainPhase("a", (2,), (3,), None, 1, 2, 0.1),),
            epoch_seconds={},
        )
        with pytest.raises(MissingTimeEntry):
            family_train_time(sched)

    def test_progressive_wall_clock_totals_163h03m(self):
        # published per-phase GPU minutes for the progressive preset
        minutes = {"teacher": 1725, "elastic-kernel": 1611, "depth-1": 466,
                   "depth-2": 2312, "width-1": 606, "width-2": 3063}
        sched = make_schedule(OFA_PROGRESSIVE)
        sched = TrainingSchedule(
            phases=sched.phases,
            epoch_seconds={p.name: minutes[p.name] * 60 / p.epochs
                           for p in sched.phases},
        )
        total_s = family_train_time(sched)
        assert total_s == pytest.approx(9783 * 60)
        hours, rem = divmod(round(total_s), 3600)
        assert (hours, rem // 60) == (163, 3)


class TestPhaseSpace:
    def test_teacher_phase_is_singleton(self):
        sched = make_schedule(COMPOFA_SINGLE_STAGE)
        sub = phase_space(TOY_SPACE, sched.phases[0])
        assert cardinality(sub) == 1
        assert max_arch(sub).blocks == max_arch(TOY_SPACE).blocks

    def test_final_phase_recovers_full_space(self):
        sched = make_schedule(COMPOFA_SINGLE_STAGE)
        sub = phase_space(TOY_SPACE, sched.phases[-1])
        assert cardinality(sub) == cardinality(TOY_SPACE)

    def test_kernel_restriction_fixes_kernel(self):
        space = get_space("ofa")
        phase = TrainPhase("t", (4,), (6,), (7,), 1, 1, 0.1, distill=False)
        sub = phase_space(space, phase)
        assert sub.fixed_kernel == 7


def _tiny_schedule():
    return TrainingSchedule(
        phases=(
            TrainPhase("teacher", (4,), (6,), None, 1, 2, TEACHER_LR,
                       distill=False),
            TrainPhase("all", (2, 3, 4), (3, 4, 6), None, 2, 2, LONG_LR),
        )
    )


class TestRunTraining:
    def _dataset(self):
        return synthetic_dataset(seed=0, n_train=128, n_val=64)

    def test_deterministic_given_seed(self):
        data = self._dataset()
        runs = []
        for _ in range(2):
            params = build_supernet(toy_base(), TOY_SPACE, seed=1)
            params, metrics = run_training(
                params, TOY_SPACE, _tiny_schedule(), data, seed=7)
            runs.append((params, metrics))
        (pa, ma), (pb, mb) = runs
        assert ma == mb
        assert all(torch.equal(pa.params[k], pb.params[k]) for k in pa.params)

    def test_metrics_shape_and_finite_losses(self):
        params = build_supernet(toy_base(), TOY_SPACE, seed=1)
        _, metrics = run_training(
            params, TOY_SPACE, _tiny_schedule(), self._dataset(), seed=3)
        assert len(metrics["epochs"]) == 4
        assert all(math.isfinite(row["loss"]) for row in metrics["epochs"])
        assert [row["phase"] for row in metrics["phase_eval"]] == [
            "teacher", "all"]
        for row in metrics["phase_eval"]:
            for tag in ("min", "median", "max"):
                assert 0.0 <= row[tag] <= 1.0

    def test_empty_schedule_is_noop(self):
        params = build_supernet(toy_base(), TOY_SPACE, seed=2)
        before = params.clone_tensors()
        _, metrics = run_training(
            params, TOY_SPACE, TrainingSchedule(phases=()), self._dataset(),
            seed=0)
        assert metrics == {"epochs": [], "phase_eval": []}
        assert all(torch.equal(before[k], params.params[k]) for k in before)

    def test_teacher_phase_trains_only_max_slice(self):
        # during the teacher-only phase nothing outside the max-depth slice
        # changes, and the max slice does
        from elasticnas.supernet import param_masks

        params = build_supernet(toy_base(), TOY_SPACE, seed=4)
        before = params.clone_tensors()
        sched = TrainingSchedule(phases=(
            TrainPhase("teacher", (4,), (6,), None, 1, 1, TEACHER_LR,
                       distill=False),
        ))
        run_training(params, TOY_SPACE, sched, self._dataset(), seed=0)
        masks = param_masks(params, max_arch(TOY_SPACE))
        changed = any(
            not torch.equal(before[k], params.params[k]) for k in before)
        assert changed
        for k, t in params.params.items():
            outside = ~masks[k]
            assert torch.equal(t[outside], before[k][outside]), k

    def test_loss_drops_over_short_run(self):
        data = synthetic_dataset(seed=1, n_train=256, n_val=64, noise=0.1)
        params = build_supernet(toy_base(), TOY_SPACE, seed=0)
        sched = TrainingSchedule(phases=(
            TrainPhase("teacher", (4,), (6,), None, 1, 8, TEACHER_LR,
                       distill=False),
        ))
        _, metrics = run_training(params, TOY_SPACE, sched, data, seed=0)
        losses = [row["loss"] for row in metrics["epochs"]]
        assert losses[-1] < losses[0]
