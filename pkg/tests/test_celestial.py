import numpy as np
import pytest

from wacyl.celestial import (CartesianState, CircularChart, CometOrbit,
                             ExtensionParams, Masses, SurrogateSystem,
                             asymptotic_metric, check_speed_window,
                             confinement_check, decay_diagnostics,
                             eval_H0_cartesian, eval_H0_split, eval_Hc,
                             extend_Hc, grad_Hc, hess_Hc,
                             integrate_system, leapfrog_conservative,
                             legendre_tail, solve_hyperbolic_kepler,
                             split_coordinates, split_inverse)
from wacyl.celestial import _split_matrices


MASSES = Masses(1.0, 1e-3, 1e-3, mc=1e-3)


def fast_orbit(v=250.0, masses=MASSES, e=1.5):
    mu = masses.M + masses.mc
    return CometOrbit(eccentricity=e, a_h=mu / v ** 2, mu_grav=mu,
                      t_peri=-1.0)


# ---- ephemeris -----------------------------------------------------

def test_kepler_pericenter():
    assert solve_hyperbolic_kepler(2.0, 0.0) == 0.0


def test_kepler_vs_bisection_oracle():
    H = solve_hyperbolic_kepler(2.0, 1.0)
    lo, hi = 0.0, 5.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 2.0 * np.sinh(mid) - mid < 1.0:
            lo = mid
        else:
            hi = mid
    assert abs(H - 0.5 * (lo + hi)) < 1e-12


def test_kepler_rejects_elliptic():
    with pytest.raises(ValueError):
        solve_hyperbolic_kepler(0.9, 1.0)


def test_asymptotic_radial_speed():
    orbit = fast_orbit(v=25.0)
    t1 = 100.0 * abs(orbit.t_peri)
    slope = (orbit.radius(2 * t1) - orbit.radius(t1)) / t1
    assert abs(slope / orbit.v_asymptotic - 1.0) < 0.01


def test_pericenter_position_and_domain():
    from wacyl.celestial import comet_position
    orbit = CometOrbit(eccentricity=1.5, a_h=0.01, mu_grav=3.0,
                       t_peri=-1.0, orientation=0.0)
    # mean anomaly 0 at t_peri: position at the pericenter a_h (e - 1)
    pos = orbit.position(orbit.t_peri)
    assert np.allclose(pos, [0.01 * 0.5, 0.0], atol=1e-15)
    with pytest.raises(ValueError):
        comet_position(orbit, 0.5)
    assert np.allclose(comet_position(orbit, 2.0), orbit.position(2.0))


def test_speed_window_compliant_and_violating():
    eps = 0.1
    good = fast_orbit(v=4.0 / eps)
    rep = check_speed_window(good, np.geomspace(1, 1000, 30), eps)
    assert rep["pass"]
    assert rep["sup_t_over_c"] < eps
    slow = fast_orbit(v=1.0)   # |c(1)| ~ 2 < 1/eps
    rep2 = check_speed_window(slow, np.geomspace(1, 100, 20), eps)
    assert not rep2["precondition_c1"] or not rep2["precondition_v"]
    assert not rep2["pass"]


# ---- splitting and Hamiltonians ------------------------------------

def unit_state():
    return CartesianState(
        x=np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
        y=np.array([[0.1, 0.2], [-0.05, 0.3], [0.2, -0.1]]))


def test_split_direct_substitution():
    sc = split_coordinates(unit_state(), Masses(1.0, 1.0, 1.0))
    assert np.allclose(sc.X[1], [-1.0, 0.0])
    assert np.allclose(sc.X[2], [0.0, -1.0])
    assert np.allclose(sc.X[0], [1.0 / 3.0, 1.0 / 3.0])


def test_split_roundtrip_and_symplectic():
    mm = Masses(1.3, 0.7, 2.1)
    st = unit_state()
    sc = split_coordinates(st, mm)
    back = split_inverse(sc, mm)
    assert np.abs(back.x - st.x).max() < 1e-14
    assert np.abs(back.y - st.y).max() < 1e-14
    A, B = _split_matrices(mm)
    rng = np.random.default_rng(1)
    for _ in range(100):
        dx1, dy1, dx2, dy2 = rng.standard_normal((4, 3, 2))
        o1 = (dy1 * dx2).sum() - (dy2 * dx1).sum()
        o2 = ((B @ dy1) * (A @ dx2)).sum() - ((B @ dy2) * (A @ dx1)).sum()
        assert abs(o1 - o2) < 1e-12


def test_H0_split_equals_cartesian():
    rng = np.random.default_rng(4)
    mm = Masses(1.0, 0.5, 0.25)
    for _ in range(1000):
        st = CartesianState(x=rng.standard_normal((3, 2)),
                            y=rng.standard_normal((3, 2)))
        sc = split_coordinates(st, mm)
        assert abs(eval_H0_cartesian(st, mm)
                   - eval_H0_split(sc, mm)) < 1e-12


def test_H0_equilateral_potential():
    st = CartesianState(
        x=np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]]),
        y=np.zeros((3, 2)))
    assert eval_H0_cartesian(st, Masses(1.0, 1.0, 1.0)) == \
        pytest.approx(-3.0)


def test_K_translation_invariant():
    mm = Masses(1.0, 0.5, 0.25)
    st = unit_state()
    sc = split_coordinates(st, mm)
    shifted = CartesianState(x=st.x + np.array([2.0, -1.0]), y=st.y)
    sc2 = split_coordinates(shifted, mm)
    k1 = eval_H0_split(sc, mm) - (sc.Y[0] ** 2).sum() / (2 * mm.M)
    k2 = eval_H0_split(sc2, mm) - (sc2.Y[0] ** 2).sum() / (2 * mm.M)
    assert abs(k1 - k2) < 1e-12


def test_Hc_zero_mass_and_single_body():
    pos = np.array([[0.1, 0.0], [0.0, 0.2], [-0.1, -0.05]])
    orbit = fast_orbit()
    assert eval_Hc(pos, orbit, Masses(1.0, 1.0, 1.0, mc=0.0), 2.0) == 0.0
    lone = Masses(1.0, 0.0, 0.0, mc=2.0)
    got = eval_Hc(np.zeros((3, 2)), lambda t: np.array([3.0, 0.0]),
                  lone, 2.0)
    assert got == pytest.approx(-2.0 / 3.0)


def test_grad_and_hess_vs_finite_differences():
    pos = np.array([[0.1, 0.0], [0.0, 0.2], [-0.1, -0.05]])
    orbit = fast_orbit(v=25.0)
    t = 5.0
    g = grad_Hc(pos, orbit, MASSES, t)
    h = 1e-6
    for i in range(3):
        for a in range(2):
            pp = pos.copy()
            pp[i, a] += h
            pm = pos.copy()
            pm[i, a] -= h
            fd = (eval_Hc(pp, orbit, MASSES, t)
                  - eval_Hc(pm, orbit, MASSES, t)) / (2 * h)
            assert abs(g[i, a] - fd) <= 1e-8 * max(1.0, abs(fd))
    Hs = hess_Hc(pos, orbit, MASSES, t)
    for i in range(3):
        for a in range(2):
            pp = pos.copy()
            pp[i, a] += h
            pm = pos.copy()
            pm[i, a] -= h
            fd = (grad_Hc(pp, orbit, MASSES, t)[i]
                  - grad_Hc(pm, orbit, MASSES, t)[i]) / (2 * h)
            assert np.abs(Hs[i][:, a] - fd).max() <= 1e-5 * np.abs(
                fd).max()


def test_Hc_linear_in_comet_mass():
    pos = np.array([[0.1, 0.0], [0.0, 0.2], [-0.1, -0.05]])
    orbit = fast_orbit()
    m2 = Masses(1.0, 1e-3, 1e-3, mc=2e-3)
    assert eval_Hc(pos, orbit, m2, 4.0) == pytest.approx(
        2.0 * eval_Hc(pos, orbit, MASSES, 4.0), rel=1e-14)


# ---- multipole expansion -------------------------------------------

def test_legendre_origin_single_term():
    rep = legendre_tail(np.zeros(2), np.array([2.0, 0.0]), 0)
    assert rep["partial_sums"][0] == pytest.approx(0.5)
    assert rep["truncation_error"] < 1e-15


def test_legendre_geometric_tail():
    rep = legendre_tail(np.array([0.2, 0.1]), np.array([1.0, 0.3]), 20)
    assert rep["valid"] and rep["within_bound"]
    assert rep["truncation_error"] <= rep["geometric_bound"]


def test_legendre_collinear_geometric_series():
    rep = legendre_tail(np.array([0.3, 0.0]), np.array([1.0, 0.0]), 60)
    assert rep["partial_sums"][-1] == pytest.approx(1.0 / 0.7, rel=1e-12)


def test_legendre_invalid_ratio():
    rep = legendre_tail(np.array([2.0, 0.0]), np.array([1.0, 0.0]), 5)
    assert not rep["valid"]


# ---- decay diagnostics ---------------------------------------------

def chart_sampler(chart, orbit, eps):
    def sampler(rng, t):
        th = rng.uniform(0, 1, 4)
        rmax = eps * orbit.radius(t) / 3.0
        xi = rng.standard_normal(2)
        xi = xi / np.linalg.norm(xi) * rng.uniform(0, rmax)
        return chart.positions(th, xi, np.zeros(2))
    return sampler


def test_decay_diagnostics_zero_mass():
    masses = Masses(1.0, 1e-3, 1e-3, mc=0.0)
    orbit = fast_orbit(v=40.0)
    chart = CircularChart(masses, a1=0.05, a2=1.0)
    rep = decay_diagnostics(chart_sampler(chart, orbit, 0.1), orbit,
                            masses, 0.1, 0, [1.0, 10.0], n_samples=5)
    assert rep["sup_Hc"] == 0.0 and rep["sup_gradHc_t2"] == 0.0


def test_decay_diagnostics_bounded_profile():
    orbit = fast_orbit(v=40.0)
    chart = CircularChart(MASSES, a1=0.05, a2=1.0)
    rep = decay_diagnostics(chart_sampler(chart, orbit, 0.1), orbit,
                            MASSES, 0.1, 1, np.geomspace(1, 1000, 20),
                            n_samples=25)
    assert rep["pass"]
    assert rep["constants_source"] == "calibrated"


def test_decay_diagnostics_refuses_bad_region():
    orbit = fast_orbit(v=40.0)

    def bad_sampler(rng, t):
        return np.full((3, 2), 10.0 * orbit.radius(t))

    with pytest.raises(ValueError):
        decay_diagnostics(bad_sampler, orbit, MASSES, 0.1, 0, [1.0])


# ---- extension ------------------------------------------------------

def test_extension_params_validation():
    with pytest.raises(ValueError):
        ExtensionParams(epsilon=0.7)
    with pytest.raises(ValueError):
        ExtensionParams(epsilon=0.1, inner_factor=0.5, outer_factor=0.2)


@pytest.fixture(scope="module")
def hex_field():
    orbit = fast_orbit(v=25.0)
    chart = CircularChart(MASSES, a1=0.05, a2=1.0)
    return extend_Hc(ExtensionParams(epsilon=0.1), orbit, MASSES, chart)


def test_extension_identity_inside(hex_field):
    t = 5.0
    rin = 0.1 * hex_field.comet.radius(t) / 6.0
    xi = np.array([0.3 * rin, 0.1 * rin])
    th = np.array([0.2, 0.7, 0.0, 0.0])
    direct = eval_Hc(hex_field.chart.positions(th, xi, np.zeros(2)),
                     hex_field.comet, MASSES, t)
    assert hex_field.value(th, xi, np.zeros(2), t) == pytest.approx(
        direct, rel=1e-14)


def test_extension_constant_outside(hex_field):
    t = 5.0
    rout = 0.1 * hex_field.comet.radius(t) / 3.0
    th = np.array([0.2, 0.7, 0.0, 0.0])
    v1 = hex_field.value(th, np.array([1.5 * rout, 0.0]),
                         np.zeros(2), t)
    v2 = hex_field.value(th, np.array([0.0, -2.5 * rout]),
                         np.zeros(2), t)
    v0 = hex_field.value(th, np.zeros(2), t=t, r=np.zeros(2))
    assert v1 == pytest.approx(v0, rel=1e-14)
    assert v2 == pytest.approx(v0, rel=1e-14)
    g = hex_field.grad_xi(th, np.array([1.5 * rout, 0.0]),
                          np.zeros(2), t)
    assert np.abs(g).max() < 1e-12


def test_extension_b_field_norm_budget(hex_field):
    rep = hex_field.b_field_norms(np.geomspace(1, 100, 10), n_theta=4)
    assert rep["surrogate"]
    assert rep["pass"]


# ---- trajectories ---------------------------------------------------

def test_conservative_run_conserves():
    masses = Masses(1.0, 1e-3, 1e-3, mc=0.0)
    chart = CircularChart(masses, a1=0.5, a2=2.0)
    st0 = chart.state(np.array([0.0, 0.25, 0.0, 0.0]), np.zeros(2),
                      np.zeros(2), np.zeros(2))
    traj = integrate_system(st0, None, masses, 1.0, 101.0, tol=1e-12,
                            n_samples=50)
    assert traj["H0_drift"] / abs(traj["H0"][0]) <= 1e-9
    assert traj["Y0_drift"] <= 1e-12


def test_two_body_period_matches_kepler():
    masses = Masses(1.0, 1e-3, 1e-12, mc=0.0)
    chart = CircularChart(masses, a1=0.5, a2=50.0)
    st0 = chart.state(np.zeros(4), np.zeros(2), np.zeros(2),
                      np.zeros(2))
    period = 2 * np.pi / chart.n1
    traj = integrate_system(st0, None, masses, 1.0, 1.0 + 5 * period,
                            tol=1e-12, n_samples=400)
    X1 = traj["x"][:, 0, :] - traj["x"][:, 1, :]
    ang = np.unwrap(np.arctan2(X1[:, 1], X1[:, 0]))
    slope = np.polyfit(traj["t"], ang, 1)[0]
    assert abs(2 * np.pi / abs(slope) / period - 1.0) <= 1e-6


def test_leapfrog_conserves_energy():
    masses = Masses(1.0, 1e-3, 1e-3, mc=0.0)
    chart = CircularChart(masses, a1=0.5, a2=2.0)
    st0 = chart.state(np.array([0.0, 0.25, 0.0, 0.0]), np.zeros(2),
                      np.zeros(2), np.zeros(2))
    h0 = eval_H0_cartesian(st0, masses)
    out = leapfrog_conservative(st0, masses, 1.0, 11.0, 40000)
    h1 = eval_H0_cartesian(out, masses)
    assert abs(h1 - h0) / abs(h0) < 1e-7


def test_comet_coupling_energy_drift_bounded():
    # with mc > 0 the H0 drift is driven by the interaction gradient
    orbit = fast_orbit(v=25.0)
    chart = CircularChart(MASSES, a1=0.05, a2=1.0)
    st0 = chart.state(np.array([0.1, 0.6, 0.0, 0.0]), np.zeros(2),
                      np.zeros(2), np.zeros(2))
    traj = integrate_system(st0, orbit, MASSES, 1.0, 21.0, tol=1e-11,
                            n_samples=40)
    speeds = np.abs(traj["y"] / MASSES.as_array()[None, :, None]).max()
    grad_sup = max(np.abs(grad_Hc(x, orbit, MASSES, t)).max()
                   for t, x in zip(traj["t"], traj["x"]))
    # |dH0/dt| <= |grad Hc| |xdot| along the run, integrated over 20 units
    assert traj["H0_drift"] <= 6 * 20.0 * grad_sup * speeds


# ---- surrogate system: metric and confinement -----------------------

@pytest.fixture(scope="module")
def surrogate_run():
    orbit = fast_orbit(v=250.0)
    chart = CircularChart(MASSES, a1=0.05, a2=1.0)
    hexf = extend_Hc(ExtensionParams(epsilon=0.1), orbit, MASSES, chart)
    system = SurrogateSystem(hexf)
    theta0 = np.array([0.1, 0.7, 0.0, 0.0])
    xi0 = np.array([0.3, -0.2])
    eta0 = system.leading_drift_momentum(theta0, xi0, 1.0)
    state0 = np.concatenate([theta0, xi0, np.zeros(2), eta0])
    traj = system.integrate(state0, 1.0, 101.0, tol=1e-10, n_samples=80)
    return orbit, system, theta0, xi0, traj


def test_surrogate_confinement_compliant(surrogate_run):
    orbit, system, theta0, xi0, traj = surrogate_run
    rep = confinement_check(traj["t"], traj["states"][:, 4:6], orbit,
                            0.1, C_bar=1.0)
    assert rep["pass"]
    assert rep["v_above_threshold"]
    assert rep["first_violation"] is None


def test_surrogate_asymptotic_profile(surrogate_run):
    orbit, system, theta0, xi0, traj = surrogate_run

    def phi0(q):
        return np.concatenate([q[:4], q[4:6], np.zeros(4)])

    def base_flow(q0, t0, t):
        return np.concatenate([q0[:4] + system.omega * (t - t0),
                               q0[4:6]])

    rep = asymptotic_metric(traj, phi0, base_flow,
                            np.concatenate([theta0, xi0]), 1.0)
    assert rep["max"] <= 1e-3
    assert rep["envelope_non_increasing"]


def test_exact_invariance_without_comet():
    masses0 = Masses(1.0, 1e-3, 1e-3, mc=0.0)
    orbit = fast_orbit(v=250.0, masses=masses0)
    chart = CircularChart(masses0, a1=0.05, a2=1.0)
    hexf = extend_Hc(ExtensionParams(epsilon=0.1), orbit, masses0, chart)
    system = SurrogateSystem(hexf)
    theta0 = np.array([0.1, 0.7, 0.0, 0.0])
    xi0 = np.array([0.3, -0.2])
    state0 = np.concatenate([theta0, xi0, np.zeros(4)])
    traj = system.integrate(state0, 1.0, 51.0, tol=1e-11, n_samples=30)

    def phi0(q):
        return np.concatenate([q[:4], q[4:6], np.zeros(4)])

    def base_flow(q0, t0, t):
        return np.concatenate([q0[:4] + system.omega * (t - t0),
                               q0[4:6]])

    rep = asymptotic_metric(traj, phi0, base_flow,
                            np.concatenate([theta0, xi0]), 1.0)
    assert rep["max"] <= 1e-9


def test_confinement_stress_subthreshold_v():
    # deliberate violation: slow comet plus an extremal outward drift
    orbit = fast_orbit(v=25.0)
    chart = CircularChart(MASSES, a1=0.05, a2=1.0)
    hexf = extend_Hc(ExtensionParams(epsilon=0.1), orbit, MASSES, chart)
    system = SurrogateSystem(hexf)
    theta0 = np.array([0.1, 0.7, 0.0, 0.0])
    r1 = orbit.radius(1.0)
    xi0 = np.array([0.95 * 0.1 * r1 / 6.0, 0.0])
    C_bar = 1.0
    eta0 = MASSES.M * (1.0 + C_bar) * 1.5 * np.array([1.0, 0.0])
    state0 = np.concatenate([theta0, xi0, np.zeros(2), eta0])
    traj = system.integrate(state0, 1.0, 41.0, tol=1e-9, n_samples=50)
    rep = confinement_check(traj["t"], traj["states"][:, 4:6], orbit,
                            0.1, C_bar=C_bar)
    assert not rep["v_above_threshold"]
    assert not rep["pass"]
    assert rep["first_violation"] is not None
