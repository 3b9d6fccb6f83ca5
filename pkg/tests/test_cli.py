import base64
import csv
import json

import numpy as np
import pytest

from bloomlab.cli import main


def write_config(tmp_path, **kw):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"depth": 5, "trials": 3, **kw}))
    return str(path)


@pytest.mark.parametrize("cmd", ["check-domination", "check-bloom", "check-lowerbound",
                                 "check-cauchy", "check-conjugation", "check-maximal"])
def test_checks_pass_and_write_reports(cmd, tmp_path, capsys):
    out = tmp_path / "out"
    assert main([cmd, "--config", write_config(tmp_path), "--out", str(out), "--trials", "2"]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith(f"{cmd}: PASS trials=2")
    report = json.loads((out / "report.json").read_text())
    assert report["summary"]["passed"] and len(report["trials"]) == 2
    assert (out / "trials.csv").exists()


def test_quiet_and_overrides(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["check-maximal", "--out", str(out), "--seed", "5", "--depth", "4", "--trials", "2", "-q"]) == 0
    assert capsys.readouterr().out == ""
    cfg = json.loads((out / "report.json").read_text())["config"]
    assert (cfg["seed"], cfg["depth"], cfg["trials"]) == (5, 4, 2)


def test_schema_errors_exit_2(tmp_path):
    assert main(["check-bloom", "--config", write_config(tmp_path, dim=5), "--out", str(tmp_path)]) == 2
    assert main(["check-bloom", "--config", write_config(tmp_path, nonsense=1), "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["check-bloom", "--config", str(bad)]) == 2
    assert main(["no-such-command"]) == 2
    assert main(["check-bloom", "--depth", "99", "--out", str(tmp_path)]) == 2


def test_io_errors_exit_3(tmp_path):
    assert main(["check-bloom", "--config", str(tmp_path / "missing.json")]) == 3
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["check-maximal", "--depth", "3", "--trials", "1", "--out", str(blocker / "sub")]) == 3


def test_bloom_zero_symbols_gives_zero_ratios(tmp_path):
    cfg = write_config(tmp_path, symbols={"norm": 0.0}, weights={"strength": 0.0})
    assert main(["check-bloom", "--config", cfg, "--out", str(tmp_path), "-q"]) == 0
    with open(tmp_path / "trials.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and all(float(r["ratio"]) == 0.0 for r in rows)


def test_certificate_roundtrip_and_tamper(tmp_path, capsys):
    assert main(["check-domination", "--config", write_config(tmp_path), "--out", str(tmp_path), "-q"]) == 0
    cert_path = tmp_path / "certificate.json"
    assert main(["verify-certificate", str(cert_path)]) == 0
    assert main(["verify-certificate", "--config", str(cert_path), "-q"]) == 0
    data = json.loads(cert_path.read_text())
    # let the root also claim the leaves witnessed by another cube: the sets overlap
    root, child = data["cubes"][0], data["cubes"][1]
    bits = {k: np.frombuffer(base64.b64decode(data["witness_bitsets"][k]), dtype=np.uint8) for k in (root, child)}
    merged = bits[root] | bits[child]
    data["witness_bitsets"][root] = base64.b64encode(merged.tobytes()).decode()
    tampered = tmp_path / "tampered.json"
    tampered.write_text(json.dumps(data))
    capsys.readouterr()
    assert main(["verify-certificate", str(tampered)]) == 1
    err = capsys.readouterr().err
    assert "overlap" in err and root in err
    del data["cubes"]
    tampered.write_text(json.dumps(data))
    assert main(["verify-certificate", str(tampered)]) == 2


def test_gen_instance_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["gen-instance", "--seed", "7", "--out", str(a), "-q"]) == 0
    assert main(["gen-instance", "--seed", "7", "--out", str(b), "-q"]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    assert {"config.json", "operator.json", "f1.json", "b1.json", "mu1.json", "setup.json"} <= set(names)
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    c = tmp_path / "c"
    main(["gen-instance", "--seed", "8", "--out", str(c), "-q"])
    assert (c / "f1.json").read_bytes() != (a / "f1.json").read_bytes()
