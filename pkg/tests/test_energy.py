import pytest

from mectwin.energy import LocalCompute, eta_dt, eta_dt_local, eta_urllc, local_energy_per_packet


def test_local_energy_examples():
    assert local_energy_per_packet(1e-15, 5000, 10560) == pytest.approx(2.64e-4)
    assert local_energy_per_packet(1e-15, 0, 10560) == 0.0
    assert local_energy_per_packet(1e-15, 4000, 10) == pytest.approx(4 * local_energy_per_packet(1e-15, 2000, 10))


def test_eta_urllc_examples():
    assert eta_urllc(0.0, 2.64e-4, 0.2, 1.25e-4, 256) == pytest.approx(2.64e-4 / 256)
    assert eta_urllc(1.0, 2.64e-4, 0.2, 1.25e-4, 256) == pytest.approx(0.2 * 1.25e-4 / 256)
    assert eta_urllc(0.5, 2.64e-4, 0.2, 1.25e-4, 256) == pytest.approx(5.645e-7, rel=1e-3)


def test_eta_dt_examples():
    lam, c, b, k0 = 1e-3, 3e6, 7.5e4, 1e-15
    assert eta_dt(0.0, lam, c, b, 123.0, 1.25e-4, k0) == pytest.approx(k0 * lam ** 2 * c ** 3 / b)
    assert eta_dt(1.0, lam, c, b, 0.1, 1.25e-4, k0) == pytest.approx(0.1 * 1.25e-4 / (lam * b))
    assert eta_dt_local(0.5, lam, c, b, k0) == pytest.approx(k0 * lam ** 2 * c ** 3 / b / 8)


def test_local_compute_validation():
    LocalCompute(1e-15, 100, 5000)
    with pytest.raises(ValueError):
        LocalCompute(1e-15, 6000, 5000)
    with pytest.raises(ValueError):
        LocalCompute(0.0, 0, 5000)
