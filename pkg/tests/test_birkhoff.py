import numpy as np

from nonstat_dyn.birkhoff import (band_pass_check,
                                  birkhoff_averages, covariance_decay,
                                  lln_summability, lp_distance, observable,
                                  orbit_points, quasi_birkhoff_band,
                                  wilson_interval)
from nonstat_dyn.densities import GridDensity
from nonstat_dyn.maps import doubling_family, instantiate, pm_family
from nonstat_dyn.sequences import ParameterSequence
from nonstat_dyn.transfer import build_ulam, fixed_density


def test_observable_norms():
    psi = observable("cos", 4096)
    assert abs(psi.norm_l1 - 2 / np.pi) < 1e-3
    assert abs(psi.norm_sup - 1.0) < 1e-6
    assert psi.seminorm(0.5) < np.inf


def test_constant_observable_average_is_one():
    fam = doubling_family()
    res = birkhoff_averages(fam, ParameterSequence.iid(0.0, 0.01, 0), 20,
                            observable("one", 64), 500, seed=0)
    assert np.all(res.averages == 1.0)
    assert np.all(res.tail_min == 1.0)
    assert np.all(res.tail_max == 1.0)


def test_doubling_cos_averages_near_zero():
    fam = doubling_family()
    res = birkhoff_averages(fam, ParameterSequence.constant(0.0), 100,
                            observable("cos", 256), 100000, seed=1)
    close = np.abs(res.averages[0]) < 0.02
    assert close.sum() >= 95


def test_pm_averages_concentrate_at_space_average():
    fam = pm_family(0.5)
    cells = 512
    psi = observable("x", cells)
    phi_hat = fixed_density(build_ulam(instantiate(fam, 0.1), cells))
    target = float(np.mean(psi.values * phi_hat.values))
    res = birkhoff_averages(fam, ParameterSequence.iid(0.1, 0.01, 2), 50,
                            psi, 20000, seed=2)
    assert np.median(np.abs(res.averages[0] - target)) < 0.02


def test_band_trivial_for_constant_observable():
    band = quasi_birkhoff_band(observable("one", 64), GridDensity.uniform(64),
                               0.05)
    assert band.lo <= 1.0 <= band.hi
    fam = doubling_family()
    res = birkhoff_averages(fam, ParameterSequence.constant(0.0), 10,
                            observable("one", 64), 100, seed=3)
    chk = band_pass_check(res, band)
    assert chk.fraction == 1.0


def test_band_unperturbed_mixing_pass_fraction_grows():
    fam = doubling_family()
    psi = observable("cos", 256)
    band = quasi_birkhoff_band(psi, GridDensity.uniform(256), 0.02)
    fracs = []
    for n in (2000, 50000):
        res = birkhoff_averages(fam, ParameterSequence.constant(0.0), 60,
                                psi, n, seed=4)
        fracs.append(band_pass_check(res, band).fraction)
    assert fracs[-1] >= fracs[0]
    assert fracs[-1] >= 0.95


def test_wilson_interval_basic():
    lo, hi = wilson_interval(95, 100)
    assert 0.88 < lo < 0.95 < hi <= 1.0


def test_orbit_points_deterministic():
    fam = doubling_family()
    seq = ParameterSequence.iid(0.0, 0.01, 5)
    a = orbit_points(fam, seq, np.array([0.3]), 100, seed=6)
    b = orbit_points(fam, seq, np.array([0.3]), 100, seed=6)
    assert np.array_equal(a, b)


def test_dither_defeats_binary_collapse():
    fam = doubling_family()
    seq = ParameterSequence.constant(0.0)
    no_dither = orbit_points(fam, seq, np.array([0.3]), 200, seed=7, dither=0.0)
    with_dither = orbit_points(fam, seq, np.array([0.3]), 200, seed=7)
    # exact binary arithmetic collapses every orbit onto the fixed point 0
    assert np.all(no_dither[-100:] == 0.0)
    assert np.mean(with_dither[-100:] == 0.0) < 0.5


def test_covariance_doubling_cos_orthogonality():
    fam = doubling_family()
    cov = covariance_decay(fam, ParameterSequence.constant(0.0),
                           observable("cos", 256), (4, 12), ensemble=10000,
                           seed=8)
    for i in range(13):
        for j in range(13):
            if 1 <= abs(i - j) <= 10:
                assert abs(cov.R[i, j]) < 3 * cov.se[i, j]
    # variance on the diagonal
    assert np.all(np.diag(cov.R)[:13] > 0.3)


def test_covariance_symmetry_exact():
    fam = pm_family(0.5)
    cov = covariance_decay(fam, ParameterSequence.iid(0.1, 0.01, 9),
                           observable("x", 128), (3, 8), ensemble=2000, seed=9)
    assert np.array_equal(cov.R, cov.R.T)


def test_covariance_spectral_means_match_ensemble():
    fam = pm_family(0.5)
    cov = covariance_decay(fam, ParameterSequence.iid(0.1, 0.01, 10),
                           observable("x", 256), (4, 10), ensemble=20000,
                           seed=10)
    sd = np.sqrt(np.diag(cov.R)) / np.sqrt(20000)
    assert np.all(np.abs(cov.means_ensemble - cov.means_spectral) <= 3 * sd)


def test_covariance_pm_fit_decays():
    fam = pm_family(0.5)
    cov = covariance_decay(fam, ParameterSequence.iid(0.1, 0.01, 11),
                           observable("x", 256), (4, 14), ensemble=10000,
                           seed=11)
    assert cov.q_fit < 1.0
    lln = lln_summability(cov)
    assert lln.verdict == "summable"


def test_lln_closed_form_identity():
    class FakeCov:
        q_fit = 0.5
        c_fit = 1.0
    rep = lln_summability(FakeCov(), k_max=1000)
    assert abs(rep.partial_sum - np.log(2.0)) < 1e-6
    assert abs(rep.unit_partial_sum - (-np.log1p(-0.5))) < 1e-12


def test_lln_inconclusive_at_unit_rate():
    class FakeCov:
        q_fit = 1.0
        c_fit = 1.0
    assert lln_summability(FakeCov()).verdict == "inconclusive"


def test_lp_self_distance_within_ball_radius():
    phi = fixed_density(build_ulam(instantiate(pm_family(0.5), 0.1), 1024))
    atoms = ((np.arange(1024) + 0.5) / 1024, phi.values / 1024)
    rep = lp_distance(atoms, phi, ball_count=64)
    assert rep.estimate <= rep.ball_radius


def test_lp_two_diracs_bracketing():
    uni = GridDensity.uniform(256)
    for s_true in (0.1, 0.2, 0.3):
        a, b = 0.21, 0.21 + s_true
        mu = (np.array([a]), np.array([1.0]))
        nu_atoms = np.array([b])
        # distance of two diracs: compare atom measure against shifted atom
        rep = lp_distance(mu, GridDensity.indicator(b - 1 / 512, b + 1 / 512,
                                                    256, height=256.0),
                          ball_count=64)
        assert s_true / 2 <= rep.estimate <= s_true + 1e-9


def test_lp_uniform_orbit_close():
    fam = doubling_family()
    seq = ParameterSequence.iid(0.0, 0.01, 12)
    orbit = orbit_points(fam, seq, np.array([0.37]), 20000, seed=12)
    phi = GridDensity.uniform(512)
    rep = lp_distance(orbit[:, 0], phi, ball_count=64)
    assert rep.estimate < 0.05
