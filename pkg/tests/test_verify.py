from __future__ import annotations

import copy

import numpy as np
import pytest

from conftest import example, identity_program, step_result
from sosinv.frontend import AVOID, Branch, ConstraintSet, Cpds, SublevelProperty, cpds_hash
from sosinv.poly import Polynomial, monomial_basis
from sosinv.synth import Certificate, Multiplier
from sosinv.verify import (CertificateBindingError, check_certificate, emit_sublevel_grid, falsify,
                           read_grid, sample_initial, simulate, simulate_batch, sublevel_grid)

X1 = Polynomial.variable(2, 0)
X2 = Polynomial.variable(2, 1)


# -- simulation ----------------------------------------------------------------------


def test_running_example_branch_one_step():
    c, _ = example("ex6")
    tr = simulate(c, [0.9, 0.0], 1)
    assert tr.branch_trace == [0]
    np.testing.assert_allclose(tr.points[1], [0.81, 0.729], rtol=0, atol=1e-15)


def test_running_example_branch_two_step():
    c, _ = example("ex6")
    tr = simulate(c, [1.1, 0.2], 1)
    assert tr.branch_trace == [1]
    expected = [0.5 * 1.1 ** 3 + 0.4 * 0.2 ** 2, -0.6 * 1.1 ** 2 + 0.3 * 0.2 ** 2]
    np.testing.assert_allclose(tr.points[1], expected, rtol=0, atol=1e-15)


def test_identity_program_trajectory_is_constant():
    c, _ = identity_program()
    tr = simulate(c, [0.0, 0.0], 25)
    assert len(tr) == 26 and np.all(tr.points == 0.0)
    assert tr.exit_step is None and not tr.warnings


def test_initial_state_outside_warns():
    c, _ = example("ex6")
    tr = simulate(c, [5.0, 5.0], 1)
    assert any("outside the initial set" in w for w in tr.warnings)


def test_exit_step_and_no_further_updates():
    guard = ConstraintSet(1, (), (Polynomial.parse("x1 - 3", 1),))
    x = Polynomial.variable(1, 0)
    c = Cpds(1, ConstraintSet(1, (), (Polynomial.parse("x1^2 - 1", 1),)), guard,
             (Branch(ConstraintSet.everything(1), (x + 1,)),), init_compact=True)
    tr = simulate(c, [0.0], 10)
    assert tr.exit_step == 4
    np.testing.assert_array_equal(tr.points[:, 0], [0, 1, 2, 3, 4])


def test_overlap_uses_lowest_index_with_warning():
    everything = ConstraintSet.everything(2)
    c = Cpds(2, everything, everything, (Branch(everything, (X1 + 1, X2)), Branch(everything, (X1 - 1, X2))),
             init_compact=True)
    tr = simulate(c, [0.0, 0.0], 1)
    assert tr.branch_trace == [0] and tr.points[1][0] == 1.0
    assert any("overlap" in w for w in tr.warnings)


def test_uncovered_state_is_frozen_with_warning():
    guard = ConstraintSet(2, (), (X1,))
    c = Cpds(2, ConstraintSet.everything(2), ConstraintSet.everything(2), (Branch(guard, (X1 - 1, X2)),),
             init_compact=True)
    tr = simulate(c, [0.5, 0.0], 5)
    assert tr.frozen_step == 0 and len(tr) == 1
    assert any("no branch" in w for w in tr.warnings)


def _random_cpds(rng):
    d = int(rng.integers(1, 3))
    monos = monomial_basis(d, 2)

    def rand_poly():
        return Polynomial(d, {m: float(rng.uniform(-1, 1)) for m in monos if rng.random() < 0.7})

    cut = rand_poly()
    upd1 = tuple(rand_poly() for _ in range(d))
    upd2 = tuple(rand_poly() for _ in range(d))
    branches = (Branch(ConstraintSet(d, (), (cut,)), upd1), Branch(ConstraintSet(d, (-cut,), ()), upd2))
    box = [(-1.0, 1.0)] * d
    from sosinv.frontend import box_constraints

    return Cpds(d, box_constraints(box), ConstraintSet.everything(d), branches, init_box=tuple(box))


@pytest.mark.property
def test_simulator_agrees_with_transfer_function():
    """One simulated step equals the brute-force image: the unique branch
    whose guard holds is applied, and the batch simulator agrees."""
    rng = np.random.default_rng(11)
    for _ in range(50):
        c = _random_cpds(rng)
        pts = rng.uniform(-1, 1, (40, c.dim))
        batch, _ = simulate_batch(c, pts, 1)
        for k, x in enumerate(pts):
            holders = [i for i, b in enumerate(c.branches)
                       if all(p.evaluate(x) <= 0 for p in b.guard.weak)
                       and all(p.evaluate(x) < 0 for p in b.guard.strict)]
            assert len(holders) == 1
            expected = np.array([q.evaluate(x) for q in c.branches[holders[0]].update])
            tr = simulate(c, x, 1)
            assert tr.branch_trace == holders
            np.testing.assert_array_equal(tr.points[1], expected)
            # the vectorised path may differ in the last ulp (summation order)
            np.testing.assert_allclose(batch[1, k], expected, rtol=1e-14, atol=1e-15)


def test_sample_initial_in_set():
    c, _ = example("ex9")
    pts = sample_initial(c, 1000, np.random.default_rng(0))
    assert pts.shape == (1000, 2) and c.init.contains(pts).all()


# -- certificate checking --------------------------------------------------------------


def _identity_certificate():
    c, prop = identity_program()
    basis = tuple(monomial_basis(2, 1))
    zero = np.zeros((3, 3))
    muls = {
        "sigma0": Multiplier("sigma0", "sigma0", "init", basis, zero.copy()),
        "sigma_branch[1]": Multiplier("sigma_branch[1]", "sigma_branch", "branch[1]", basis, zero.copy()),
        "psi": Multiplier("psi", "psi", "property", basis, zero.copy()),
    }
    # p = kappa, w = 0; the init multipliers absorb w - p = -(x1^2 + x2^2) through the box tests
    # x_l (x_l - 0) <= 0 with unit constant multipliers
    one = np.zeros((3, 3))
    one[0, 0] = 1.0
    muls["sigma_in[1]"] = Multiplier("sigma_in[1]", "sigma_in", "init", basis, one.copy(), c.init.polynomials[0])
    muls["sigma_in[2]"] = Multiplier("sigma_in[2]", "sigma_in", "init", basis, one.copy(), c.init.polynomials[1])
    cert = Certificate(1, 2, ("x1", "x2"), prop.kappa, 0.0, muls, prop.kappa, prop.mode, cpds_hash(c, prop))
    return cert, c, prop


def test_hand_built_identity_certificate_verifies():
    cert, c, prop = _identity_certificate()
    rep = check_certificate(cert, c, prop)
    assert rep.verified, rep.summary()
    assert rep.max_residual == 0.0


def test_synthesized_certificate_verifies():
    c, prop = example("lyap")
    rep = check_certificate(step_result("lyap", 1).certificate, c, prop)
    assert rep.verified and rep.max_residual <= 1e-6


def test_perturbed_gram_rejected_and_localized():
    c, prop = example("lyap")
    base = step_result("lyap", 1).certificate
    for name in base.multipliers:
        cert = copy.deepcopy(base)
        G = cert.multipliers[name].gram
        i = G.shape[0] - 1
        G[i, 0] += 1e-2
        if i:
            G[0, i] += 1e-2
        rep = check_certificate(cert, c, prop)
        assert not rep.verified
        assert rep.failing_identities == [base.multipliers[name].identity]


def test_hash_mismatch_raises():
    c, prop = example("ex9")
    with pytest.raises(CertificateBindingError):
        check_certificate(step_result("lyap", 1).certificate, c, prop)


def test_negative_gram_rejected():
    cert, c, prop = _identity_certificate()
    cert.multipliers["psi"].gram[2, 2] = -1e-3
    cert.multipliers["psi"].gram[0, 0] = 0.0
    rep = check_certificate(cert, c, prop)
    assert not rep.verified
    assert any("eigenvalue" in p for p in rep.problems)


def test_degree_budget_enforced():
    cert, c, prop = _identity_certificate()
    basis = tuple(monomial_basis(2, 2))
    cert.multipliers["psi"] = Multiplier("psi", "psi", "property", basis, np.zeros((6, 6)))
    cert.multipliers["psi"].gram[5, 5] = 1e-12
    rep = check_certificate(cert, c, prop)
    assert not rep.verified and any("budget" in p for p in rep.problems)


def test_unknown_multiplier_rejected():
    cert, c, prop = _identity_certificate()
    cert.multipliers["mu[7][1]"] = Multiplier("mu[7][1]", "mu", "branch[7]", ((0, 0),), np.zeros((1, 1)))
    assert not check_certificate(cert, c, prop).verified


@pytest.mark.property
def test_verdict_invariant_under_scaling():
    """Doubling template, bound and multipliers keeps the homogeneous
    identities verified; psi is re-derived for the property identity."""
    c, prop = example("lyap")
    cert = copy.deepcopy(step_result("lyap", 1).certificate)
    cert.template = cert.template.scale(2.0)
    cert.bound *= 2.0
    for name, mul in cert.multipliers.items():
        mul.gram = 2.0 * mul.gram
    # property identity p - kappa = psi is not homogeneous: re-derive psi
    psi = cert.multipliers["psi"]
    old = step_result("lyap", 1).certificate.multipliers["psi"].gram
    target = (cert.template - prop.kappa)
    # 2p - kappa = 2 psi_old + kappa, so add kappa's Gram (basis {1, x1, x2}) to 2 psi_old
    kappa_gram = np.zeros_like(old)
    for a, za in enumerate(psi.basis):
        if sum(za) == 1:
            kappa_gram[a, a] = 1.0
    psi.gram = 2.0 * old + kappa_gram
    assert (target - psi.polynomial()).max_abs_coefficient() <= 1e-6
    rep = check_certificate(cert, c, prop)
    assert rep.verified, rep.summary()


# -- falsification --------------------------------------------------------------------


@pytest.mark.property
def test_falsify_never_contradicts_verified():
    """Every certificate that verifies survives 10^4 simulated states."""
    checked = 0
    for name, m in [("lyap", 1), ("lyap", 2), ("ex9", 3)]:
        c, prop = example(name)
        cert = step_result(name, m).certificate
        assert check_certificate(cert, c, prop).verified
        res = falsify(cert, c, prop, n_traj=100, steps=99, seed=m)
        assert not res.refuted, res.counterexample
        checked += res.states_checked
    c, prop = identity_program()
    from sosinv.synth import synthesize_step

    cert = synthesize_step(c, prop, 1).certificate
    assert check_certificate(cert, c, prop).verified
    assert not falsify(cert, c, prop, n_traj=10, steps=9, seed=0).refuted
    assert checked >= 10_000


def test_falsify_finds_nothing_for_verified_certificate():
    c, prop = example("lyap")
    res = falsify(step_result("lyap", 1).certificate, c, prop, n_traj=100, steps=6, seed=0)
    assert not res.refuted and res.states_checked == 700


def test_falsify_lowered_bound_found_at_step_zero():
    c, prop = example("lyap")
    cert = copy.deepcopy(step_result("lyap", 1).certificate)
    pts = sample_initial(c, 2000, np.random.default_rng(0))
    cert.bound = float(np.max(cert.template.evaluate(pts))) - 0.05
    res = falsify(cert, c, prop, n_traj=2000, steps=3, seed=0)
    assert res.refuted and res.counterexample.step == 0


def test_falsify_is_reproducible():
    c, prop = example("lyap")
    cert = step_result("lyap", 1).certificate
    a = falsify(cert, c, prop, 20, 5, seed=3)
    b = falsify(cert, c, prop, 20, 5, seed=3)
    np.testing.assert_array_equal(a.samples, b.samples)


def test_falsify_reports_kappa_sign_in_avoid_mode():
    c, prop = example("ex9")
    res = falsify(step_result("ex9", 3).certificate, c, prop, 100, 6, seed=0)
    assert prop.mode == AVOID and res.kappa_negative and not res.refuted


# -- grids -----------------------------------------------------------------------------


def test_constant_template_grid_all_inside(tmp_path):
    cert, _, _ = _identity_certificate()
    cert.template = Polynomial.zero(2)
    cert.bound = 1.0
    grid = emit_sublevel_grid(cert, (-2, 2, -2, 2), 20, tmp_path / "flat")
    assert grid.inside.all()
    box, res, values = read_grid(tmp_path / "flat.grid")
    assert box == (-2.0, 2.0, -2.0, 2.0) and res == 20
    np.testing.assert_array_equal(values, -np.ones((20, 20)))
    assert (tmp_path / "flat.svg").read_text().startswith("<svg")
    assert (tmp_path / "flat.kappa.grid").exists()


def test_grid_header_format(tmp_path):
    cert, _, _ = _identity_certificate()
    emit_sublevel_grid(cert, (-1, 1, -2, 2), 5, tmp_path / "g")
    head = (tmp_path / "g.grid").read_text().splitlines()[0]
    assert head == "# -1 1 -2 2 5"


def test_grid_orientation():
    cert, _, _ = _identity_certificate()
    cert.template = X1 + 2 * X2
    cert.bound = 0.0
    g = sublevel_grid(cert, (0, 1, 0, 1), 3)
    assert g.values[0, 2] == pytest.approx(1.0)  # y = 0, x = 1
    assert g.values[2, 0] == pytest.approx(2.0)  # y = 1, x = 0


def test_grid_requires_two_dimensions():
    c, prop = example("ex7")
    cert = Certificate(1, 3, ("x1", "x2", "x3"), Polynomial.zero(3), 0.0, {}, prop.kappa, prop.mode, "")
    with pytest.raises(ValueError):
        sublevel_grid(cert, (-1, 1, -1, 1), 10)
