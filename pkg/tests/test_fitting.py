import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shakenlattice.fitting import fit_scaling, levenberg_marquardt, power_law, table_hash

T_MS = np.array([0.4, 0.8, 1.2, 1.6, 2.0])


def line(p, x):
    return p[0] * x + p[1]


def test_linear_data_exact():
    x = np.linspace(-2, 3, 7)
    res = levenberg_marquardt(line, x, 2 * x + 1, [0.0, 0.0])
    assert np.max(np.abs(res.params - [2, 1])) < 1e-12
    assert res.converged


def test_synthetic_scaling_with_fixed_offset():
    d = 2.0 * T_MS**-2 + 0.014
    fit = fit_scaling(T_MS, d, c_mode=0.014)
    assert abs(fit.a - 2.0) < 1e-6 and abs(fit.b - 2.0) < 1e-6
    assert fit.c == 0.014 and fit.c_fixed


def test_free_offset_exact_recovery():
    d = 0.7 * T_MS**-2.0
    fit = fit_scaling(T_MS, d, c_mode="free")
    assert abs(fit.a - 0.7) < 1e-6 and abs(fit.b - 2.0) < 1e-6 and abs(fit.c) < 1e-6


def test_exponential_decay_matches_grid_search():
    rng = np.random.default_rng(2)
    x = np.linspace(0, 4, 25)
    y = 3.0 * np.exp(-0.8 * x) + rng.normal(0, 0.02, x.size)

    def model(p, xx):
        return p[0] * np.exp(-p[1] * xx)

    def cost(A, k):
        r = y[None, None, :] - A[..., None] * np.exp(-k[..., None] * x)
        return np.sum(r**2, axis=-1)

    center, width = np.array([3.0, 0.8]), np.array([1.0, 0.5])
    for _ in range(40):
        A, k = np.meshgrid(np.linspace(center[0] - width[0], center[0] + width[0], 41),
                           np.linspace(center[1] - width[1], center[1] + width[1], 41), indexing="ij")
        i = np.unravel_index(np.argmin(cost(A, k)), A.shape)
        center = np.array([A[i], k[i]])
        width = width / 4
    res = levenberg_marquardt(model, x, y, [1.0, 0.3])
    assert np.max(np.abs(res.params - center)) < 1e-6


def test_residual_not_worse_than_start():
    rng = np.random.default_rng(0)
    d = 1.3 * T_MS**-1.8 + 0.01 + rng.normal(0, 0.01, T_MS.size)
    res = levenberg_marquardt(power_law, T_MS, d, [1.0, 2.0, 0.0])
    assert res.residual_norm <= res.initial_residual_norm


@settings(max_examples=40, deadline=None)
@given(st.floats(0.2, 5.0), st.floats(1.0, 3.0), st.integers(0, 1000))
def test_unit_invariance_of_exponent(a, b, seed):
    rng = np.random.default_rng(seed)
    d = a * T_MS**-b * (1 + 0.05 * rng.normal(size=T_MS.size))
    ms = fit_scaling(T_MS, d, c_mode=0.0)
    s = fit_scaling(T_MS * 1e-3, d, c_mode=0.0)
    assert abs(ms.b - s.b) < 1e-9
    assert s.a == pytest.approx(ms.a * 1e-3 ** ms.b, rel=1e-6)


def test_masked_parameter_untouched():
    x = np.linspace(1, 2, 5)
    res = levenberg_marquardt(power_law, x, 3 * x**-2 + 0.1, [1.0, 1.0, 0.123456789],
                              mask=[True, True, False])
    assert res.params[2] == 0.123456789 and res.stderr[2] == 0


def test_input_validation():
    with pytest.raises(ValueError):
        levenberg_marquardt(line, [1.0], [2.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        levenberg_marquardt(line, [1.0, np.nan], [2.0, 3.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        fit_scaling(T_MS[:2], [1.0, 0.5], c_mode=0.0)
    with pytest.raises(ValueError):
        fit_scaling(T_MS[:3], [1.0, 0.5, 0.3], c_mode="free")


def test_singular_problem_flagged():
    x = np.linspace(0, 1, 6)
    res = levenberg_marquardt(lambda p, xx: p[0] * xx + 0 * p[1], x, 2 * x + 0.1, [1.0, 1.0])
    assert not res.converged


def test_provenance():
    d = 2.0 * T_MS**-2
    fit = fit_scaling(T_MS, d, c_mode=0.0)
    doc = fit.to_dict()
    assert doc["provenance"]["table_sha256"] == table_hash(T_MS, d)
    assert doc["provenance"]["c_mode"] == 0.0
