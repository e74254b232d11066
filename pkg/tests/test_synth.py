from __future__ import annotations

import json

import numpy as np
import pytest

from conftest import example, hierarchy, identity_program, step_result
from sosinv.frontend import SublevelProperty
from sosinv.poly import Polynomial
from sosinv.sosbuild import DegreeError, size_report
from sosinv.synth import (CERTIFICATE, INCONCLUSIVE, INFEASIBLE_STEP, Certificate, CertificateFormatError,
                          SynthOptions, TemplateBasis, default_range, format_report, loads_certificate,
                          run_hierarchy, synthesize_step)
from sosinv.verify import check_certificate, sample_initial


def test_lyapunov_step():
    r = step_result("lyap", 1)
    assert r.outcome == CERTIFICATE
    cert = r.certificate
    assert cert.template.degree() <= 2
    assert cert.bound == pytest.approx(1.25, abs=1e-6)
    assert cert.establishes_property
    assert set(cert.multipliers) >= {"sigma0", "sigma_in[1]", "sigma_in[2]", "sigma_branch[1]", "psi"}


def test_identity_program_bound_is_zero():
    c, prop = identity_program()
    r = synthesize_step(c, prop, 1)
    assert r.outcome == CERTIFICATE
    assert r.certificate.bound == pytest.approx(0.0, abs=1e-6)
    assert check_certificate(r.certificate, c, prop).verified


def test_certificate_round_trip_is_bit_exact():
    cert = step_result("lyap", 1).certificate
    text = cert.dumps()
    back = loads_certificate(text)
    assert back.dumps() == text
    assert back.bound == cert.bound and back.template == cert.template
    for name, mul in cert.multipliers.items():
        assert np.array_equal(back.multipliers[name].gram, mul.gram)
        assert back.multipliers[name].basis == mul.basis


def test_certificate_lower_triangle_layout():
    cert = step_result("lyap", 1).certificate
    data = json.loads(cert.dumps())
    for entry in data["multipliers"]:
        n = len(entry["basis"])
        G = cert.multipliers[entry["name"]].gram
        expected = [G[i, j] for i in range(n) for j in range(i + 1)]
        assert entry["gram_lower"] == expected
    assert "time" not in json.dumps(data["solver_stats"])


def test_malformed_certificate_rejected():
    with pytest.raises(CertificateFormatError):
        loads_certificate("{}")
    with pytest.raises(CertificateFormatError):
        loads_certificate("not json")
    text = step_result("lyap", 1).certificate.dumps().replace('"gram_lower": [', '"gram_lower": [1, ', 1)
    with pytest.raises(CertificateFormatError):
        loads_certificate(text)


def test_bound_dominates_initial_set():
    cert = step_result("lyap", 1).certificate
    c, _ = example("lyap")
    pts = sample_initial(c, 10_000, np.random.default_rng(0))
    assert cert.bound >= np.max(cert.template.evaluate(pts)) - 1e-7


def test_bound_monotone_across_steps():
    rep = hierarchy("lyap", 1, 3)
    bounds = [b for _, b in rep.bounds]
    assert len(bounds) == 3
    for a, b in zip(bounds, bounds[1:]):
        assert b <= a + 1e-6


def test_singleton_basis():
    rep = hierarchy("lyap", 1, 1)
    assert len(rep.basis.certificates) == 1 and [s.step for s in rep.steps] == [1]


def test_template_basis_membership():
    rep = hierarchy("lyap", 1, 3)
    basis = rep.basis
    assert len(basis.templates) == 3
    c, _ = example("lyap")
    pts = sample_initial(c, 500, np.random.default_rng(1))
    assert basis.contains(pts).all()
    assert not basis.contains(np.array([[5.0, 5.0]]))[0]


def test_template_basis_rejects_mixed_inputs():
    a = step_result("lyap", 1).certificate
    c, prop = identity_program()
    b = synthesize_step(c, prop, 1).certificate
    with pytest.raises(ValueError):
        TemplateBasis([a, b])


def test_avoid_mode_requires_negative_bound():
    r = step_result("ex9", 3)
    assert r.outcome == CERTIFICATE
    assert r.certificate.bound >= 0
    assert not r.establishes_property


def test_infeasible_step_is_reported_not_raised():
    r = step_result("ex7", 2)
    assert r.outcome == INFEASIBLE_STEP and r.certificate is None
    assert "infeasible" in r.message
    assert r.sizes is not None


def test_size_guard_gives_inconclusive():
    c, prop = example("ex8")
    r = synthesize_step(c, prop, 5)
    assert r.outcome == INCONCLUSIVE
    assert "too large" in r.message
    r2 = synthesize_step(*example("lyap"), 1, SynthOptions(max_block_side=1))
    assert r2.outcome == INCONCLUSIVE


def test_structural_errors_propagate():
    c, _ = example("ex6")
    with pytest.raises(DegreeError):
        synthesize_step(c, SublevelProperty(Polynomial.parse("x1^4", 2)), 1)


def test_hierarchy_records_failures():
    c, _ = example("ex6")
    rep = run_hierarchy(c, SublevelProperty(Polynomial.parse("x1^4", 2)), 1, 2)
    assert rep.steps[0].outcome == INCONCLUSIVE and "not run" in rep.steps[0].message
    with pytest.raises(ValueError):
        run_hierarchy(c, SublevelProperty(Polynomial.parse("x1^2", 2)), 3, 2)


def test_default_range():
    c, prop = example("ex6")
    assert default_range(c, prop) == (1, 5)
    assert default_range(c, SublevelProperty(Polynomial.parse("x1^6", 2))) == (3, 5)


def test_report_columns_and_counts():
    rep = hierarchy("lyap", 1, 2)
    text = format_report(rep)
    assert "Nb. vars" in text and "Mat. size" in text and "Time" in text
    c, prop = example("lyap")
    for s in rep.steps:
        closed = size_report(c, prop, s.step)
        assert s.built_variables == closed.total_variables
        assert s.built_matrix_side == closed.matrix_side
    assert format_report(rep, show_time=False) == format_report(rep, show_time=False)


def test_threaded_hierarchy_matches_serial(monkeypatch):
    c, prop = example("lyap")
    serial = run_hierarchy(c, prop, 1, 2)
    monkeypatch.setenv("SOSINV_THREADS", "2")
    threaded = run_hierarchy(c, prop, 1, 2)
    assert [s.certificate.dumps() for s in serial.steps] == [s.certificate.dumps() for s in threaded.steps]


def test_certificate_is_a_plain_record():
    cert = step_result("lyap", 1).certificate
    assert isinstance(cert, Certificate)
    assert cert.sublevel_value(np.zeros(2)) == pytest.approx(cert.template.constant_term() - cert.bound)
