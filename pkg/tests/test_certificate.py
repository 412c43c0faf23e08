import numpy as np
import pytest

from _oracles import claim_holds, tamper_text
from ellcone.certificate import Certificate, CertificateFormatError, Step, le_step, lmi_step
from ellcone.ellipsoid import Ellipsoid, includes, join
from ellcone.interval import Interval, IntervalArray, Verdict


def _sample_certificate():
    cert = Certificate()
    _, _, c1 = includes(Ellipsoid(np.eye(2), [0.0, 0.0]), Ellipsoid(np.eye(2) / 4, [0.1, 0.0]))
    _, _, c2 = join([Ellipsoid(np.eye(2), [0.0, 0.0]), Ellipsoid(np.eye(2), [1.0, 1.0])])
    cert.extend(c1)
    cert.extend(c2)
    cert.add(le_step("demo.le", Interval(0.1, 0.2), 0.3, "0.2 below 0.3"))
    cert.notes.append("demo note")
    return cert


def test_round_trip_byte_identical():
    cert = _sample_certificate()
    text = cert.dumps()
    again = Certificate.loads(text).dumps()
    assert again == text
    assert Certificate.loads(text).failures() == []


def test_hex_floats_are_bit_exact():
    x = 0.1
    cert = Certificate([lmi_step("t", [np.array([[x]])], [1.0], "+", "tenth")])
    back = Certificate.loads(cert.dumps())
    assert back.steps[0].matrices[0].lo[0, 0] == x


def test_interval_entries_round_trip():
    A = IntervalArray(np.array([[1.0, -0.5], [-0.5, 2.0]]), np.array([[1.5, 0.0], [0.0, 2.5]]))
    cert = Certificate([lmi_step("t", [A], [1.0], "+")])
    back = Certificate.loads(cert.dumps()).steps[0].matrices[0]
    assert np.array_equal(back.lo, A.lo) and np.array_equal(back.hi, A.hi)


def test_verify_kinds():
    assert lmi_step("t", [np.eye(2)], [1.0], "+").verify() is Verdict.CERTIFIED
    assert lmi_step("t", [np.eye(2)], [-1.0], "+").verify() is Verdict.UNKNOWN
    assert lmi_step("t", [np.eye(2)], [1.0], "-").verify() is Verdict.UNKNOWN
    assert le_step("t", 1.0, 2.0).verify() is Verdict.CERTIFIED
    assert le_step("t", 2.0, 1.0).verify() is Verdict.UNKNOWN
    with pytest.raises(ValueError):
        Step("t", "eq", ())


def test_empty_certificate():
    text = Certificate().dumps()
    assert Certificate.loads(text).failures() == []
    assert len(Certificate.loads(text)) == 0


@pytest.mark.parametrize("text", ["", "garbage 1\n", "ellcone-certificate 99\n",
                                  "ellcone-certificate 1\nstep lmi x\nclaim c\nmatrix 1 1\n",
                                  "ellcone-certificate 1\nstep lmi x\nclaim c\nalpha ? 0x1p0\nend\n",
                                  "ellcone-certificate 1\nstep lmi x\nclaim c\nmatrix 1 1\nzz\nend\n"])
def test_malformed(text):
    with pytest.raises(CertificateFormatError):
        Certificate.loads(text)


def test_sign_flip_detected():
    cert = _sample_certificate()
    text = cert.dumps()
    lines = text.splitlines()
    k = next(i for i, l in enumerate(lines) if l.startswith("alpha + "))
    tag, sign, v = lines[k].split()
    lines[k] = f"{tag} {sign} {(-float.fromhex(v)).hex()}"
    bad = Certificate.loads("\n".join(lines) + "\n")
    assert bad.failures()


def test_bit_flips_never_certify_false_claims(rng):
    text = _sample_certificate().dumps()
    for _ in range(200):
        t, idx = tamper_text(text, rng)
        cert = Certificate.loads(t)
        for i in range(len(cert)):
            if cert.steps[i].verify():
                assert claim_holds(cert.steps[i]), (i, idx)


def test_nan_entry_is_unknown_not_malformed():
    text = "ellcone-certificate 1\nstep lmi x\nclaim c\nalpha + 0x1p0\nmatrix 1 1\nnan\nend\n"
    cert = Certificate.loads(text)
    assert cert.failures() == [0]
