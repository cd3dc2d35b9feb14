"""Batch CLI: commands, artifacts, manifest, determinism."""

import hashlib
import json

import numpy as np
import pytest

from wgscat import cli, inversion


MODEL_DOC = {
    "schema_version": 1,
    "cross_section": {"kind": "interval", "length": float(np.pi)},
    "grid": {"n_omega": 4, "n_x": 24},
    "n_max": 5,
    "potential": {"kind": "square_well", "depth": 1.0, "x_box": [0.0, 1.0]},
}


def write_config(tmp_path, tasks, name="config.json", model=MODEL_DOC):
    cfg = {"schema_version": 1, "model": model, "tasks": tasks}
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def run(args):
    return cli.main([str(a) for a in args])


class TestInvertDemo:
    def test_scalar_family_table(self, tmp_path):
        fam = {
            "schema_version": 1,
            "base": [[[0.0, 0.0]]],
            "remainder": {"kind": "polynomial", "coeffs": [[[[1.0, 0.0]]]]},
            "bound": 1.0,
            "radius": 0.5,
            "sector": None,
        }
        (tmp_path / "family.json").write_text(json.dumps([fam]))
        cfg = write_config(
            tmp_path,
            {"invert_demo": {"families": "family.json",
                             "z_values": [[1e-3, 0.0], [1e-2, -1e-3]]}},
        )
        out = tmp_path / "out"
        rc = run(["invert-demo", "--config", cfg, "--out", out])
        assert rc == 0
        rows = (out / "invert_demo.csv").read_text().strip().splitlines()
        assert rows[0] == "family,re_z,im_z,kernel_dim,rel_error"
        assert len(rows) == 3

    def test_corpus_passes(self, tmp_path):
        rng = np.random.default_rng(5)
        fams = [inversion.random_family_dict(rng, 6, k % 3) for k in range(10)]
        (tmp_path / "corpus.json").write_text(json.dumps(fams))
        cfg = write_config(
            tmp_path,
            {"invert_demo": {"families": "corpus.json", "z_values": [[2e-3, -1e-3]]}},
        )
        rc = run(["invert-demo", "--config", cfg, "--out", tmp_path / "out"])
        assert rc == 0

    def test_missing_family_file_nonzero_exit(self, tmp_path):
        cfg = write_config(
            tmp_path, {"invert_demo": {"families": "nope.json", "z_values": [[1e-3, 0]]}}
        )
        out = tmp_path / "out"
        rc = run(["invert-demo", "--config", cfg, "--out", out])
        assert rc != 0
        # partial outputs are removed on failure; no manifest either
        assert not list(out.glob("*.csv")) and not (out / "manifest.json").exists()

    def test_missing_config_nonzero_exit(self, tmp_path):
        rc = run(["modes", "--config", tmp_path / "nothing.json", "--out", tmp_path / "o"])
        assert rc == 2


class TestModelCommands:
    def test_modes_artifacts(self, tmp_path):
        cfg = write_config(tmp_path, {"modes": {}})
        out = tmp_path / "out"
        assert run(["modes", "--config", cfg, "--out", out]) == 0
        rows = (out / "modes.csv").read_text().strip().splitlines()
        assert rows[1].startswith("1,")
        lam1 = float(rows[1].split(",")[1])
        assert lam1 == pytest.approx(1.0)
        groups = json.loads((out / "threshold_groups.json").read_text())
        assert groups[0]["members"] == [1]

    def test_smatrix_zero_potential_identity_rows(self, tmp_path):
        model = dict(MODEL_DOC)
        model["potential"] = {"kind": "square_well", "depth": 0.0, "x_box": [0.0, 1.0]}
        cfg = write_config(
            tmp_path, {"smatrix": {"energies": [2.5], "tail_tol": 10.0}}, model=model
        )
        out = tmp_path / "out"
        assert run(["smatrix", "--config", cfg, "--out", out]) == 0
        rows = (out / "smatrix.csv").read_text().strip().splitlines()[1:]
        for row in rows:
            cells = row.split(",")
            n, s, np_, sp = cells[1], cells[2], cells[3], cells[4]
            re, im = float(cells[5]), float(cells[6])
            expect = 1.0 if (n, s) == (np_, sp) else 0.0
            assert abs(re - expect) <= 1e-12 and abs(im) <= 1e-12

    def test_smatrix_deterministic_across_runs(self, tmp_path):
        cfg = write_config(
            tmp_path, {"smatrix": {"energies": [2.2, 3.0], "tail_tol": 0.1}}
        )
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert run(["smatrix", "--config", cfg, "--out", out1, "--seed", 7]) == 0
        assert run(["smatrix", "--config", cfg, "--out", out2, "--seed", 7]) == 0
        assert (out1 / "smatrix.csv").read_bytes() == (out2 / "smatrix.csv").read_bytes()
        m1 = json.loads((out1 / "manifest.json").read_text())
        m2 = json.loads((out2 / "manifest.json").read_text())
        assert m1["artifacts"] == m2["artifacts"]

    def test_output_independent_of_thread_count(self, tmp_path):
        cfg = write_config(
            tmp_path, {"smatrix": {"energies": [2.2, 2.8, 3.4], "tail_tol": 0.1}}
        )
        out1, out2 = tmp_path / "t1", tmp_path / "t2"
        assert run(["smatrix", "--config", cfg, "--out", out1, "--threads", 1]) == 0
        assert run(["smatrix", "--config", cfg, "--out", out2, "--threads", 2]) == 0
        assert (out1 / "smatrix.csv").read_bytes() == (out2 / "smatrix.csv").read_bytes()

    def test_manifest_checksums_complete(self, tmp_path):
        cfg = write_config(tmp_path, {"modes": {}})
        out = tmp_path / "out"
        assert run(["modes", "--config", cfg, "--out", out]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        listed = {e["file"]: e["sha256"] for e in manifest["artifacts"]}
        produced = {p.name for p in out.iterdir() if p.name != "manifest.json"}
        assert set(listed) == produced
        for name, digest in listed.items():
            assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest

    def test_eigenvalues_count_stability(self, tmp_path):
        model = dict(MODEL_DOC)
        model["grid"] = {"n_omega": 4, "n_x": 30}
        cfg = write_config(
            tmp_path,
            {"eigenvalues": {"window": [0.6, 0.95], "resolutions": [10, 20],
                             "tail_tol": 0.2}},
            model=model,
        )
        out = tmp_path / "out"
        assert run(["eigenvalues", "--config", cfg, "--out", out]) == 0
        doc = json.loads((out / "eigenvalue_counts.json").read_text())
        assert doc["stable"] and doc["counts"][0] == 1

    def test_verify_command(self, tmp_path):
        cfg = write_config(tmp_path, {"verify": {"lam": 4.0, "tail_tol": 0.2}})
        out = tmp_path / "out"
        assert run(["verify", "--config", cfg, "--out", out]) == 0
        doc = json.loads((out / "verify.json").read_text())
        assert doc["ok"] and doc["optical_identity_defect"] <= 1e-12

    def test_threshold_scan_artifacts(self, tmp_path):
        cfg = write_config(
            tmp_path,
            {"threshold_scan": {"lam": 4.0, "eps": 2e-2, "halvings": 4,
                                "tail_tol": 0.2,
                                "pairs": [[[1, 1], [1, 1]], [[2, 1], [2, 1]]]}},
        )
        out = tmp_path / "out"
        assert run(["threshold-scan", "--config", cfg, "--out", out]) == 0
        doc = json.loads((out / "threshold_scan.json").read_text())
        assert len(doc) == 2 and doc[0]["gap"] is not None

    def test_expansion_report(self, tmp_path):
        cfg = write_config(
            tmp_path, {"expansion": {"lam": 4.0, "eps": 2e-2, "tail_tol": 0.2}}
        )
        out = tmp_path / "out"
        assert run(["expansion", "--config", cfg, "--out", out, "--verify"]) == 0
        doc = json.loads((out / "expansion.json").read_text())
        assert doc["structural"]["ok"]
        assert max(doc["oracle_rel_errors"]) <= 1e-6
