import math

import pytest
from hypothesis import given, strategies as st

from opsched.cost import (DeviceProfile, HardwareProfile, ProfileError, default_profiles, load_profile,
                          op_latency, transfer_latency, uniform_profile)
from opsched.graph import make_node


def _work(intensity, rho=0.0):
    # a node whose byte traffic is zero: only the compute term matters
    return make_node(0, "ReLU", (1, 1, 1, 1), (1, 1, 1, 1), rho, intensity=intensity, weight_bytes=0)


def _dev(kappa=0.0, peak=1e9, bw=1e30, overhead=0.0):
    return DeviceProfile("CPU", peak, bw, 1e12, kappa, overhead, 10.0, 1.0)


def test_unit_ratio_latency():
    est = op_latency(_work(10 ** 9), _dev())
    assert est.latency == pytest.approx(1.0)


def test_fully_sparse_fully_exploited():
    dev = _dev(kappa=1.0, bw=1e3, overhead=1e-3)
    n = _work(10 ** 9, rho=1.0)
    est = op_latency(n, dev)
    assert est.compute_time == 0.0
    assert est.latency == pytest.approx(est.memory_time + 1e-3)


def test_kappa_ratio():
    n = _work(10 ** 9, rho=0.5)
    g = op_latency(n, _dev(kappa=0.2)).compute_time
    c = op_latency(n, _dev(kappa=1.0)).compute_time
    assert g / c == pytest.approx(1.8)


def test_transfer_examples():
    p0 = uniform_profile(transfer_bandwidth=1e9)
    assert transfer_latency(0, p0, overlappable=False) == 0.0
    p = HardwareProfile("t", p0.cpu, p0.gpu, 1e9, 1e-4, 0.0, 0.0)
    assert transfer_latency(1e6, p, overlappable=False) == pytest.approx(1.1e-3)
    p78 = p.with_(overlap_factor=0.78)
    assert transfer_latency(1e6, p78) == pytest.approx(2.42e-4)
    assert transfer_latency(1e6, p.with_(overlap_factor=1.0)) == 0.0


def test_default_profiles(agx, nano):
    assert agx.gpu.mem_bandwidth == 204.8e9
    assert agx.gpu.mem_capacity == 64e9
    assert nano.gpu.mem_capacity == 8e9
    assert nano.gpu.mem_bandwidth == 102e9
    assert set(default_profiles()) == {"orin_nano", "agx_orin"}


def test_invalid_device():
    with pytest.raises(ProfileError):
        DeviceProfile("CPU", 1e9, 1e9, 1e9, 1.5, 0.0, 1.0, 0.5)
    with pytest.raises(ProfileError):
        DeviceProfile("CPU", 1e9, 1e9, 1e9, 0.5, 0.0, 1.0, 2.0)


def test_unknown_profile():
    with pytest.raises(ProfileError):
        load_profile("no_such_board")


def test_profile_dir_env(tmp_path, monkeypatch, agx):
    import json
    custom = agx.with_(name="bench_board")
    (tmp_path / "bench_board.json").write_text(json.dumps(custom.to_dict()))
    monkeypatch.setenv("SPAROA_PROFILE_DIR", str(tmp_path))
    assert load_profile("bench_board") == custom


def test_zero_work_identity():
    n = make_node(0, "Reshape", (1, 1, 1, 1), (1, 1, 1, 1), weight_bytes=0)
    dev = DeviceProfile("GPU", 1e9, 1e30, 1e9, 0.2, 7e-6, 5.0, 1.0)
    # zero FLOPs; the 8 activation bytes vanish against the huge bandwidth
    assert op_latency(n, dev).latency == pytest.approx(7e-6, rel=1e-12)


@given(st.floats(0, 1), st.floats(0, 1), st.integers(1, 10 ** 12), st.floats(0, 1))
def test_monotone_in_sparsity(r1, r2, intensity, kappa):
    lo, hi = sorted((r1, r2))
    dev = _dev(kappa=kappa, bw=1e9, overhead=1e-6)
    a = op_latency(_work(intensity, lo), dev).latency
    b = op_latency(_work(intensity, hi), dev).latency
    assert b <= a


@given(st.integers(1, 10 ** 12), st.integers(1, 10 ** 12), st.floats(0, 1))
def test_monotone_in_intensity(i1, i2, rho):
    lo, hi = sorted((i1, i2))
    dev = _dev(kappa=0.5, bw=1e9, overhead=1e-6)
    assert op_latency(_work(lo, rho), dev).latency <= op_latency(_work(hi, rho), dev).latency


@given(st.integers(1, 10 ** 10), st.floats(0, 1))
def test_energy_at_least_idle(intensity, rho):
    dev = _dev(kappa=0.3, bw=1e9, overhead=1e-6)
    est = op_latency(_work(intensity, rho), dev)
    assert est.energy >= dev.idle_power * est.latency
