import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinflywheel import dstsfit as df
from spinflywheel import hilbert as hb
from spinflywheel import tomography as tg
from spinflywheel.dstsfit import DstsParams

from oracles import q_displaced_thermal, q_thermal

PI = math.pi
REF = DstsParams.from_polar(2 + 1j, 0.2, 1.0, 0.5)


def _grid_for(p, n_rings=16, base=6):
    return tg.polar_grid(tg.adapted_radius(p.mean_number() + 1.0), n_rings, base)


def _noiseless(p, dim=96):
    return tg.noiseless_dataset(df.dsts_state(p, dim), _grid_for(p))


# parameters


def test_params_validation_and_gauge():
    with pytest.raises(ValueError):
        DstsParams(0, 0, -0.1)
    p = DstsParams.from_polar(1.0, 0.3, -0.5, 0.2)
    assert 0 <= p.zeta_arg < 2 * PI
    assert p.zeta_arg == pytest.approx(2 * PI - 0.5)
    assert DstsParams(1.0, 0.0, 0.0).zeta_arg == 0.0


def test_from_vector_reflections():
    p = DstsParams.from_vector([0.1, 0.2, -0.3, 0.4, -0.5])
    assert p.nbar == 0.5
    assert p.zeta_abs == pytest.approx(0.3)
    assert p.zeta_arg == pytest.approx(0.4 + PI)
    q = DstsParams.from_vector(p.vector())
    assert q.zeta == pytest.approx(p.zeta) and q.beta == p.beta


# states


def test_dsts_vacuum_is_ground():
    rho = df.dsts_state(DstsParams(), 16).rho
    assert np.allclose(rho, np.asarray(hb.fock_state(0, 16)), atol=1e-15)


def test_dsts_coherent_number():
    st_ = df.dsts_state(DstsParams(2.0, 0, 0), 64)
    assert st_.expect(hb.number_op(64)).real == pytest.approx(4.0, abs=1e-8)


def test_dsts_squeezed_thermal_number():
    p = DstsParams.from_polar(0, 0.3, 0.0, 1.0)
    n = df.dsts_state(p, 128).expect(hb.number_op(128)).real
    assert n == pytest.approx(3 * math.sinh(0.3) ** 2 + 1, rel=1e-4)
    # 3 sinh^2(0.3) + 1 = 1.27820 (a value of 1.2754 does not follow from the closed form)
    assert n == pytest.approx(1.2782, abs=1e-4)


@settings(max_examples=15, deadline=None)
@given(
    b=st.floats(0, 2.5),
    bphi=st.floats(0, 2 * PI),
    r=st.floats(0, 0.5),
    phi=st.floats(0, 2 * PI),
    nbar=st.floats(0, 2),
)
def test_dsts_mean_number_closed_form(b, bphi, r, phi, nbar):
    p = DstsParams.from_polar(b * np.exp(1j * bphi), r, phi, nbar)
    st_ = df.dsts_state(p, 128)
    n = st_.expect(hb.number_op(128)).real
    assert n == pytest.approx(p.mean_number(), rel=1e-4, abs=1e-10)
    assert st_.min_eigenvalue() > -1e-8


def test_dsts_truncation_warning():
    with pytest.warns(hb.TruncationWarning):
        df.dsts_state(DstsParams(3.0, 0, 0), 32)


# model Q


def test_model_vacuum():
    al = np.array([0, 0.5, 1 + 1j, -2j])
    assert np.allclose(df.model_q(DstsParams(), al), np.exp(-np.abs(al) ** 2) / PI, atol=1e-15)


def test_model_thermal():
    al = np.array([0, 0.7, 2 - 1j])
    assert np.allclose(df.model_q(DstsParams(0, 0, 1.0), al), q_thermal(1.0, al), atol=1e-15)
    assert df.model_q(DstsParams(0, 0, 1.0), 0.0) == pytest.approx(1 / (2 * PI))


def test_model_displaced_thermal_peak():
    p = DstsParams(1.0, 0, 1.0)
    assert df.model_q(p, 1.0) == pytest.approx(1 / (2 * PI), abs=1e-15)
    al = np.array([0.0, 1 + 1j, 2.0])
    assert np.allclose(df.model_q(p, al), q_displaced_thermal(1.0, 1.0, al), atol=1e-15)


@settings(max_examples=20, deadline=None)
@given(
    br=st.floats(-1.5, 1.5),
    bi=st.floats(-1.5, 1.5),
    r=st.floats(0, 0.5),
    phi=st.floats(0, 2 * PI),
    nbar=st.floats(0, 1.5),
)
def test_gaussian_matches_fock_path(br, bi, r, phi, nbar):
    p = DstsParams.from_polar(complex(br, bi), r, phi, nbar)
    al = tg.polar_grid(4.0, 4, 6).alpha
    g = df.model_q(p, al, "gaussian")
    f = df.model_q(p, al, "fock", dim=96)
    assert np.max(np.abs(g - f)) < 1e-6
    assert np.max(np.abs(f - tg.q_values(df.dsts_state(p, 96), al))) < 1e-8


def test_model_method_validation():
    with pytest.raises(ValueError):
        df.model_q(DstsParams(), 0.0, method="wigner")


@pytest.mark.parametrize("method", ["gaussian", "fock"])
def test_rotation_covariance(method):
    phi = PI / 3
    p = DstsParams.from_polar(1.1 - 0.4j, 0.3, 0.7, 0.6)
    rot = DstsParams.from_polar(p.beta * np.exp(1j * phi), p.zeta_abs, p.zeta_arg + 2 * phi, p.nbar)
    al = tg.polar_grid(4.0, 5, 6).alpha
    a = df.model_q(p, al, method, dim=96)
    b = df.model_q(rot, al * np.exp(1j * phi), method, dim=96)
    assert np.max(np.abs(a - b)) < 1e-8


def test_gauge_two_pi_shift():
    p = DstsParams.from_polar(0.5, 0.25, 1.3, 0.4)
    q = DstsParams.from_polar(0.5, 0.25, 1.3 + 2 * PI, 0.4)
    assert q.zeta_arg == pytest.approx(p.zeta_arg, abs=1e-14)
    diff = np.abs(df.dsts_state(p, 48).rho - df.dsts_state(q, 48).rho).max()
    assert diff < 1e-13


def test_residual_local_minimum():
    data = _noiseless(REF)
    base = df.rms_residual(REF, data)
    assert base < 1e-12
    x0 = REF.vector()
    for i in range(5):
        for h in (-1e-2, 1e-2):
            x = x0.copy()
            x[i] += h
            assert df.rms_residual(DstsParams.from_vector(x), data) > base


# initialization


def test_init_coherent():
    beta = 1.5 - 0.5j
    p0 = df.init_from_moments(_noiseless(DstsParams(beta, 0, 0)))
    assert abs(p0.beta - beta) < 0.02
    assert p0.nbar < 0.02 and p0.zeta_abs < 0.1


def test_init_thermal():
    p0 = df.init_from_moments(_noiseless(DstsParams(0, 0, 1.0)))
    # the 80/20 split puts nbar_0 at 0.8 x excess; quadrature error sits on top
    assert p0.nbar == pytest.approx(0.8, abs=0.005)
    assert abs(p0.nbar - 1.0) <= 0.2 + 0.005


def test_init_vacuum():
    p0 = df.init_from_moments(_noiseless(DstsParams()))
    assert abs(p0.beta) < 1e-10 and p0.nbar < 1e-3 and p0.zeta_abs < 0.05


def test_init_clamps_negative_excess():
    d = _noiseless(DstsParams())
    shrunk = tg.QDataSet(d.grid, d.values * 0.9, d.shots, raw=False)
    p0 = df.init_from_moments(shrunk)
    assert p0.nbar == 0.0 and p0.zeta_abs == 0.0


# fitting


def test_fit_noiseless_round_trip():
    res = df.fit(_noiseless(REF), seed=0)
    p = res.params
    assert abs(p.beta - REF.beta) < 1e-3
    assert abs(p.zeta_abs - REF.zeta_abs) < 1e-3
    assert abs(p.zeta_arg - REF.zeta_arg) < 1e-3
    assert abs(p.nbar - REF.nbar) < 1e-3
    assert res.rms_residual >= 0
    assert df.rms_residual(p, _noiseless(REF)) == pytest.approx(res.rms_residual, abs=1e-10)
    assert res.iterations > 0 and res.multistart_spread >= 0


def test_fit_shot_noise_small_sample():
    # the full >= 20-seed study lives in the acceptance suite
    rho = df.dsts_state(REF, 96)
    for seed in range(3):
        res = df.fit(tg.rescale_raw(tg.scan(rho, seed=seed)), seed=seed)
        assert abs(abs(res.params.beta) - abs(REF.beta)) / abs(REF.beta) < 0.05
        assert abs(res.params.nbar - REF.nbar) < 0.15


def test_fit_vacuum_shots():
    shots = 1000
    raw = tg.scan(hb.fock_state(0, 32), shots_per_point=shots, seed=4)
    data = tg.rescale_raw(raw)
    res = df.fit(data, seed=0)
    p = PI * df.model_q(DstsParams(), data.grid.alpha)
    floor = math.sqrt(np.mean(p * (1 - p) / shots)) / PI / data.meta["s"]
    assert res.rms_residual < 2 * floor
    assert abs(res.params.beta) < 0.05 and res.params.nbar < 0.05 and res.params.zeta_abs < 0.1


def test_fit_deterministic():
    data = tg.rescale_raw(tg.scan(df.dsts_state(REF, 96), seed=8))
    a = df.fit(data, n_starts=3, seed=5)
    b = df.fit(data, n_starts=3, seed=5)
    assert a == b


def test_fit_zero_squeeze_indeterminate():
    res = df.fit(_noiseless(DstsParams(1.0 + 0.5j, 0, 0.3)))
    assert res.zeta_indeterminate
    assert res.params.zeta_arg == 0.0


def test_fit_needs_points():
    d = tg.noiseless_dataset(hb.fock_state(0, 8), tg.polar_grid(2.0, 2, 4))
    with pytest.raises(ValueError, match="30"):
        df.fit(d)


def test_fit_convergence_error(monkeypatch):
    monkeypatch.setattr(df, "MAX_ITER", 5)
    with pytest.raises(df.FitConvergenceError) as info:
        df.fit(_noiseless(REF), n_starts=2)
    assert isinstance(info.value.best, df.FitResult)


def test_fit_poorly_constrained_warning(monkeypatch):
    monkeypatch.setattr(df, "PARAM_TOL", 1e-13)
    data = tg.rescale_raw(tg.scan(df.dsts_state(REF, 96), seed=1))
    with pytest.warns(df.PoorlyConstrainedWarning):
        df.fit(data, n_starts=3)


def test_moment_gaussian_identities():
    # N, M match the Fock-basis <b^+ b>, <b b> of the fluctuation operator
    p = DstsParams.from_polar(0.8j, 0.35, 2.1, 0.7)
    rho = df.dsts_state(p, 128).rho
    a, adag, _ = hb.ladder_ops(128)
    b = a.matrix - p.beta * np.eye(128)
    n_fl = np.trace(b.conj().T @ b @ rho).real
    m_fl = np.trace(b @ b @ rho)
    N, M = df.gaussian_moments(p)
    assert N == pytest.approx(n_fl, rel=1e-8)
    assert abs(M - m_fl) < 1e-8


# records


def test_fit_record_round_trip(tmp_path):
    res = df.fit(_noiseless(REF), n_starts=2)
    rec = res.record(t_he_us=3.0)
    assert rec["t_he_us"] == 3.0
    assert df.FitResult.from_record(rec) == res
    path = tmp_path / "fits.jsonl"
    df.write_fit_log([rec], path)
    df.append_fit_record(res.record(t_he_us=6.0), path)
    back = df.read_fit_log(path)
    assert [r["t_he_us"] for r in back] == [3.0, 6.0]
    assert df.FitResult.from_record(back[0]) == res
