import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from shakenlattice.lattice import LatticeConfig, ground_bloch_state, measure_populations
from shakenlattice.optimizer import (EvaluatorError, InterferometerBuilder, OptimizerConfig,
                                     SegmentEvaluator, TargetState, UndefinedErrorSignal,
                                     dcrab_optimize, optimize_interferometer, percent_error)
from shakenlattice.protocol import ShakingProtocol
from shakenlattice.sensing import NoiseModel

CFG = LatticeConfig()
SPLIT = TargetState.split()
EMPTY = ShakingProtocol(())
QUICK = OptimizerConfig(max_super_iterations=2, max_evals=40, stop_error=1e-6, max_attempts=1)

vectors = st.lists(st.floats(0, 1), min_size=5, max_size=5).filter(lambda v: sum(v) > 1e-3)


def split_evaluator(noise=None):
    return SegmentEvaluator(CFG, EMPTY, 0.0, ground_bloch_state(CFG), noise=noise, label="split")


# percent error ---------------------------------------------------------------

def test_percent_error_examples():
    assert percent_error([0, 1, 0, 1, 0], SPLIT) == pytest.approx(0.0, abs=1e-12)
    assert percent_error([1, 0, 0, 0, 0], SPLIT) == pytest.approx(100.0, abs=1e-12)
    cos = 0.4 / (0.6 * math.sqrt(0.5))
    e = percent_error([0, 0.4, 0.2, 0.4, 0], SPLIT)
    assert e == pytest.approx((1 - cos) * 100, abs=1e-12)
    assert round(e, 2) == 5.72


def test_percent_error_undefined_for_zero_vector():
    with pytest.raises(UndefinedErrorSignal):
        percent_error(np.zeros(5), SPLIT)
    with pytest.raises(ValueError):
        percent_error(np.ones(3), SPLIT)


@given(vectors, vectors, st.floats(1e-6, 1e6))
def test_percent_error_scale_invariant_and_symmetric(p, q, alpha):
    p, q = np.asarray(p), np.asarray(q)
    assert abs(percent_error(alpha * p, q) - percent_error(p, q)) < 1e-12
    assert abs(percent_error(p, q) - percent_error(q, p)) < 1e-12


def test_target_validation():
    with pytest.raises(ValueError):
        TargetState((0, 0, 0, 0, 0))
    with pytest.raises(ValueError):
        TargetState((0.5, -0.1, 0.6, 0, 0))
    with pytest.raises(ValueError):
        TargetState((1, 0))
    assert TargetState.ground().populations == (0, 0, 1, 0, 0)


def test_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(band=(30e3, 18e3))
    with pytest.raises(ValueError):
        OptimizerConfig(n_freq=0)
    with pytest.raises(ValueError):
        OptimizerConfig(xatol=0)


# dCRAB ----------------------------------------------------------------------

def test_own_distribution_target_returns_immediately():
    own = measure_populations(ground_bloch_state(CFG), 2).populations
    record = dcrab_optimize(TargetState(tuple(own)), split_evaluator(), OptimizerConfig())
    assert record.best_error == pytest.approx(0.0, abs=1e-12)
    assert len(record.evaluations) == 1 and record.converged


def test_dcrab_record_invariants():
    record = dcrab_optimize(SPLIT, split_evaluator(), QUICK, rng=np.random.default_rng(3))
    errors = [e.error for e in record.evaluations]
    assert record.best_error == min(errors)
    assert np.all(np.diff(record.history) <= 0)
    assert len(record.history) == QUICK.max_super_iterations + 1
    lo, hi = QUICK.band
    for f in record.best_segment.frequencies:
        assert lo <= f <= hi
    assert record.best_segment.n_tones == QUICK.n_freq * QUICK.max_super_iterations
    assert record.best_segment.amplitude_sum <= math.pi
    assert not record.converged


def test_dcrab_deterministic():
    a = dcrab_optimize(SPLIT, split_evaluator(), QUICK, rng=np.random.default_rng(11))
    b = dcrab_optimize(SPLIT, split_evaluator(), QUICK, rng=np.random.default_rng(11))
    assert a.evaluations == b.evaluations
    assert a.best_segment == b.best_segment
    logs = []
    for rec in (a, b):
        fh = io.StringIO()
        rec.write_log(fh)
        logs.append(fh.getvalue())
    assert logs[0] == logs[1]
    first = json.loads(logs[0].splitlines()[0])
    assert {"stage", "super_iteration", "evaluation", "coefficients", "error"} <= set(first)


def test_evaluator_failure_reports_coefficients():
    def broken(segment):
        if segment.n_tones:
            raise FloatingPointError("boom")
        return measure_populations(ground_bloch_state(CFG), 2)

    with pytest.raises(EvaluatorError, match="coefficients"):
        dcrab_optimize(SPLIT, broken, QUICK, rng=np.random.default_rng(0))


def test_noisy_objective_is_seeded():
    noise = NoiseModel(n_atoms=1e4, offset=0.0, read_noise=1e-3, seed=5)
    a = dcrab_optimize(SPLIT, split_evaluator(noise), QUICK, rng=np.random.default_rng(1))
    b = dcrab_optimize(SPLIT, split_evaluator(noise), QUICK, rng=np.random.default_rng(1))
    assert a.evaluations == b.evaluations


def test_split_reaches_five_percent(family):
    _, records = family[1]
    assert records[0].stage == "split"
    assert records[0].best_error < 5.0


def test_history_monotone_for_all_stages(family):
    for rec in family[5][1]:
        assert np.all(np.diff(rec.history) <= 0)
        assert rec.best_error == min(e.error for e in rec.evaluations)


# interferometers ------------------------------------------------------------

def test_family_protocols_are_nested(family):
    for n in range(1, 5):
        shorter, longer = family[n][0], family[n + 1][0]
        assert longer.segments[: len(shorter.segments) - 1] == shorter.segments[:-1]
        assert shorter.segments[-1] == longer.segments[-1]
        assert shorter.duration == pytest.approx(0.4e-3 * n)


def test_reseed_attempts_and_nonconvergence_flag():
    cfg = OptimizerConfig(max_super_iterations=1, max_evals=12, stop_error=1e-9, max_attempts=2)
    protocol, records = optimize_interferometer(1, cfg, CFG)
    assert protocol.meta["converged"] is False
    assert records[0].seed == (0, 0, 1)


def test_shared_propagation_mode():
    cfg = OptimizerConfig(max_super_iterations=1, max_evals=20, share_propagation=True)
    builder = InterferometerBuilder(CFG, cfg)
    protocol = builder.protocol(3)
    props = protocol.segments[1:-1]
    assert len(props) == 4 and all(s == props[0] for s in props)
    assert len(builder.records_for(3)) == 2


def test_interferometer_index_validation():
    with pytest.raises(ValueError):
        InterferometerBuilder(CFG, QUICK).protocol(0)


@pytest.mark.xfail(strict=True, reason="split-state error does not grow with propagation steps "
                   "in the loss-free model; each stage stops below the same error cap")
def test_split_error_grows_with_propagation(family):
    records = family[5][1]
    assert records[-1].best_error > records[0].best_error
