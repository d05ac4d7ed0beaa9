"""End-to-end tests of the command-line interface."""

import json
import os

import numpy as np
import pytest

from jetx.cli import main


def write_jet(path, jet_dict):
    with open(path, "w") as fh:
        json.dump(jet_dict, fh)


@pytest.fixture
def jet_file(tmp_path):
    path = tmp_path / "jet.json"
    write_jet(path, {"dim": 1, "points": [[-1.0], [0.0], [1.0]],
                     "values": [0.5, 0.0, 0.5],
                     "gradients": [[-1.0], [0.0], [1.0]]})
    return str(path)


HOLDER = '{"kind":"holder","alpha":0.5}'
LINEAR = '{"kind":"linear","slope":1.0}'


class TestCheck:
    def test_check_writes_report(self, jet_file, tmp_path):
        out = str(tmp_path)
        rc = main(["check", "--jet", jet_file, "--modulus", LINEAR,
                   "--M", "2.0", "--out", out])
        assert rc == 0
        rep = json.load(open(os.path.join(out, "check.json")))
        conditions = [r["condition"] for r in rep["reports"]]
        assert {"A-value", "M-omega-G", "W", "MG", "W11", "equivalences"} <= set(conditions)

    def test_affine_jet_reports_zero(self, tmp_path):
        path = tmp_path / "affine.json"
        write_jet(path, {"dim": 1, "points": [[0.0], [1.0]], "values": [0.0, 2.0],
                         "gradients": [[2.0], [2.0]]})
        rc = main(["check", "--jet", str(path), "--modulus", HOLDER,
                   "--out", str(tmp_path)])
        assert rc == 0
        rep = json.load(open(tmp_path / "check.json"))
        a = [r for r in rep["reports"] if r["condition"] == "A-value"][0]
        assert a["constant"] <= 1e-12


class TestExtend:
    def test_writes_grid_and_diagnostics(self, jet_file, tmp_path):
        out = str(tmp_path)
        rc = main(["extend", "--jet", jet_file, "--modulus", HOLDER,
                   "--res", "65", "--out", out])
        assert rc == 0
        lines = open(os.path.join(out, "extension.csv")).read().splitlines()
        assert lines[0] == "x0,F,dF_dx0"
        assert len(lines) == 66
        diag = json.load(open(os.path.join(out, "extension.json")))
        assert diag["variant"] == "general"
        assert "sampled" in diag and "ratio_constant" in diag["sampled"]

    def test_deterministic_outputs(self, jet_file, tmp_path):
        out = str(tmp_path)
        args = ["extend", "--jet", jet_file, "--modulus", HOLDER,
                "--res", "65", "--seed", "5", "--out", out]
        main(args)
        first = open(os.path.join(out, "extension.json"), "rb").read()
        first_csv = open(os.path.join(out, "extension.csv"), "rb").read()
        main(args)
        assert open(os.path.join(out, "extension.json"), "rb").read() == first
        assert open(os.path.join(out, "extension.csv"), "rb").read() == first_csv

    def test_box_excluding_point_is_status_1(self, jet_file, tmp_path):
        rc = main(["extend", "--jet", jet_file, "--modulus", HOLDER,
                   "--box", "3,5", "--res", "33", "--out", str(tmp_path)])
        assert rc == 1

    def test_not_extendable_is_status_2(self, tmp_path):
        path = tmp_path / "jump.json"
        write_jet(path, {"dim": 1, "points": [[0.0], [1e-7]], "values": [0.0, 1.0],
                         "gradients": [[0.0], [0.0]]})
        rc = main(["extend", "--jet", str(path), "--modulus", HOLDER,
                   "--res", "33", "--out", str(tmp_path)])
        assert rc == 2

    def test_resolution_limits(self, jet_file, tmp_path):
        rc = main(["extend", "--jet", jet_file, "--modulus", HOLDER,
                   "--res", "9", "--out", str(tmp_path)])
        assert rc == 1
        rc = main(["extend", "--jet", jet_file, "--modulus", HOLDER,
                   "--res", "4097", "--out", str(tmp_path)])
        assert rc == 1


class TestErrors:
    def test_malformed_jet_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"dim": 1, "points": [[0.0],')
        rc = main(["check", "--jet", str(path), "--modulus", LINEAR,
                   "--out", str(tmp_path)])
        assert rc == 1

    def test_schema_error_dim_mismatch(self, tmp_path):
        path = tmp_path / "bad.json"
        write_jet(path, {"dim": 2, "points": [[0.0]], "values": [0.0],
                         "gradients": [[0.0]]})
        rc = main(["check", "--jet", str(path), "--modulus", LINEAR,
                   "--out", str(tmp_path)])
        assert rc == 1

    def test_malformed_modulus(self, jet_file, tmp_path):
        rc = main(["check", "--jet", jet_file, "--modulus", "{bad",
                   "--out", str(tmp_path)])
        assert rc == 1

    def test_missing_jet_file(self, tmp_path):
        rc = main(["check", "--jet", str(tmp_path / "missing.json"),
                   "--modulus", LINEAR, "--out", str(tmp_path)])
        assert rc == 1


class TestConjugateAndVerify:
    def test_conjugate_table(self, tmp_path):
        rc = main(["conjugate", "--modulus", HOLDER, "--box", "0,4",
                   "--res", "17", "--out", str(tmp_path)])
        assert rc == 0
        lines = open(tmp_path / "conjugate.csv").read().splitlines()
        assert lines[0] == "t,omega,phi,phi_star"
        assert len(lines) == 18
        row = [float(v) for v in lines[-1].split(",")]
        assert row[0] == 4.0
        assert row[1] == pytest.approx(2.0)          # omega(4) = sqrt(4)
        assert row[2] == pytest.approx(16.0 / 3.0)   # phi(4)
        assert row[3] == pytest.approx(64.0 / 3.0)   # phi*(4) = 4^3/3

    def test_verify_roundtrip(self, jet_file, tmp_path):
        rc = main(["verify", "--jet", jet_file, "--modulus", HOLDER,
                   "--res", "65", "--samples", "1500", "--out", str(tmp_path)])
        assert rc == 0
        rep = json.load(open(tmp_path / "verification.json"))
        assert rep["passed"] is True
        assert any(c["name"] == "prop26-minform" for c in rep["checks"])

    def test_verify_variants(self, jet_file, tmp_path):
        for variant, modulus in (("bounded", HOLDER), ("lipschitz", HOLDER),
                                 ("c11", LINEAR)):
            rc = main(["verify", "--jet", jet_file, "--modulus", modulus,
                       "--variant", variant, "--res", "65",
                       "--samples", "1200", "--out", str(tmp_path)])
            assert rc == 0, variant
