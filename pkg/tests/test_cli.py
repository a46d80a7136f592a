import csv

import pytest
from hypothesis import given, strategies as st

from roughpde.cli import ManifestError, RunManifest, execute, main

CHEAP = ["--n", "32", "--sheet", "fbm", "--H", "0.45", "--level", "4", "--seed", "7"]


def run(tmp_path, monkeypatch, *argv):
    monkeypatch.setenv("ROUGHPDE_OUT", str(tmp_path))
    return main(list(argv))


manifests = st.fixed_dictionaries(
    {"subcommand": st.just("audit"), "kind": st.sampled_from(["chen", "adjoint", "rho"])},
    optional={
        "grid": st.fixed_dictionaries({}, optional={"n": st.integers(8, 512), "d": st.just(1)}),
        "partition": st.fixed_dictionaries({}, optional={"T": st.floats(0.1, 4.0), "level": st.integers(0, 3)}),
        "sheet": st.fixed_dictionaries({"kind": st.just("fbm")},
                                       optional={"H": st.floats(0.3, 0.9), "seed": st.integers(0, 2**31),
                                                 "level": st.integers(1, 8)}),
        "tolerances": st.fixed_dictionaries({}, optional={"tol": st.floats(1e-16, 1e-3)}),
        "output": st.fixed_dictionaries({}, optional={"name": st.text("abcxyz-_", min_size=1, max_size=8)}),
    })


@given(manifests)
def test_manifest_roundtrip(raw):
    m = RunManifest.from_dict(raw)
    back = RunManifest.loads(m.dumps())
    assert back == m
    assert back.digest == m.digest


def test_digest_ignores_output_table():
    a = RunManifest.from_dict({"subcommand": "audit", "kind": "chen", "output": {"name": "x"}})
    b = RunManifest.from_dict({"subcommand": "audit", "kind": "chen"})
    assert a.digest == b.digest


@pytest.mark.parametrize("raw, text", [
    ({"subcommand": "audit", "kind": "chen", "grid": {"q": 1}}, "unknown key: grid.q"),
    ({"subcommand": "audit", "kind": "chen", "tolerances": {"order": 1}}, "unknown key: tolerances.order"),
    ({"subcommand": "audit"}, "missing required key: kind"),
    ({}, "missing required key: subcommand"),
    ({"subcommand": "audit", "kind": "chen", "grid": {"d": 2}}, "grid.d"),
    ({"subcommand": "audit", "kind": "chen", "grid": {"n": "many"}}, "grid.n"),
    ({"subcommand": "run", "kind": "heat", "sheet": {"H": 0.4}}, "missing required key: sheet.kind"),
    ({"subcommand": "run", "kind": "teleport"}, "kind"),
    ({"subcommand": "run", "kind": "duality", "sheet": {"level": 3}}, "missing required key: sheet.kind"),
])
def test_manifest_errors_name_the_key(raw, text):
    with pytest.raises(ManifestError, match=text):
        RunManifest.from_dict(raw)


def test_bare_sheet_keys_extend_the_default_sheet():
    from roughpde.cli import _kinds, resolve
    m = RunManifest.from_dict({"subcommand": "run", "kind": "wong-zakai", "sheet": {"seed": 9}})
    sheet = resolve(m).sheet
    assert sheet == {**_kinds("run")["wong-zakai"].sheet, "seed": 9}


def test_empty_manifest_exits_1(tmp_path, monkeypatch, capsys):
    path = tmp_path / "empty.toml"
    path.write_text("")
    assert run(tmp_path, monkeypatch, "run", "--manifest", str(path)) == 1
    assert "missing required key: kind" in capsys.readouterr().err


def test_unknown_flag_key_exits_1(tmp_path, monkeypatch, capsys):
    assert run(tmp_path, monkeypatch, "audit", "chen", "--set", "grid.q=3") == 1
    assert "grid.q" in capsys.readouterr().err


def test_exit_codes(tmp_path, monkeypatch):
    assert run(tmp_path, monkeypatch, "audit", "chen", *CHEAP) == 0
    assert run(tmp_path, monkeypatch, "audit", "chen", *CHEAP, "--set", "tolerances.tol=1e-30", "--out", "strict") == 2
    summary = (tmp_path / "strict" / "summary.txt").read_text()
    assert "fail" in summary
    assert run(tmp_path, monkeypatch, "audit", "chen", *CHEAP[:-2], "--H", "1.5", "--out", "badH") == 1


def test_artifacts_are_byte_identical_and_carry_digest(tmp_path, monkeypatch):
    m = RunManifest.from_dict({"subcommand": "audit", "kind": "chen", "grid": {"n": 32},
                               "sheet": {"kind": "fbm", "H": 0.45, "level": 4, "seed": 3}})
    code1, _, _ = execute(m, tmp_path / "a")
    code2, _, _ = execute(m, tmp_path / "b")
    assert code1 == code2 == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "report.csv" in files and "manifest.toml" in files
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    with open(tmp_path / "a" / "report.csv") as fh:
        first, header = next(csv.reader(fh)), None
    assert first[0] == f"# manifest_digest={m.digest}"
    assert all("[" in c and c.endswith("]") for c in first[1:])
    assert RunManifest.loads((tmp_path / "a" / "manifest.toml").read_text()) == m


def test_run_writes_fields(tmp_path, monkeypatch):
    assert run(tmp_path, monkeypatch, "run", "heat", "--out", "h") == 0
    names = {p.name for p in (tmp_path / "h").iterdir()}
    assert {"summary.txt", "report.csv", "checks.csv"} <= names
    for pgm in (n for n in names if n.endswith(".pgm")):
        assert (tmp_path / "h" / pgm).read_bytes().startswith(b"P5\n")
        assert (tmp_path / "h" / (pgm + ".csv")).read_text().startswith("# manifest_digest=")


def test_sweep_rows(tmp_path, monkeypatch):
    code = run(tmp_path, monkeypatch, "sweep", "audit", "chen", "--n", "32", "--sheet", "fbm", "--level", "4",
               "--axis", "sheet.seed", "--values", "1,2,3", "--workers", "2", "--out", "sw")
    assert code == 0
    with open(tmp_path / "sw" / "sweep.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0].startswith("# manifest_digest=")
    assert [r[0] for r in rows[2:]] == ["1", "2", "3"]
    assert all(r[2] == "pass" for r in rows[2:])
    assert {p.name for p in (tmp_path / "sw").iterdir()} >= {"sheet.seed=1", "sheet.seed=2", "sheet.seed=3"}


def test_single_value_sweep(tmp_path, monkeypatch):
    assert run(tmp_path, monkeypatch, "sweep", "audit", "rho", "--n", "32", "--sheet", "fbm", "--level", "4",
               "--axis", "sheet.seed", "--values", "5", "--workers", "1", "--out", "one") == 0
    with open(tmp_path / "one" / "sweep.csv") as fh:
        assert len(list(csv.reader(fh))) == 3


def test_sweep_child_config_failure_aborts(tmp_path, monkeypatch):
    code = run(tmp_path, monkeypatch, "sweep", "audit", "chen", "--n", "32", "--sheet", "fbm", "--level", "4",
               "--axis", "sheet.H", "--values", "0.45,1.5", "--workers", "1", "--out", "bad")
    assert code == 1
    assert not (tmp_path / "bad" / "sweep.csv").exists()


def test_sweep_needs_axis(tmp_path, monkeypatch, capsys):
    assert run(tmp_path, monkeypatch, "sweep", "audit", "chen") == 1
    assert "sweep.axis" in capsys.readouterr().err


def test_output_root_from_manifest(tmp_path, monkeypatch):
    monkeypatch.delenv("ROUGHPDE_OUT", raising=False)
    path = tmp_path / "m.toml"
    path.write_text(f'subcommand = "audit"\nkind = "rho"\n[grid]\nn = 32\n[sheet]\nkind = "fbm"\nlevel = 4\n'
                    f'[output]\nroot = "{tmp_path / "root"}"\nname = "r"\n')
    assert main(["audit", "--manifest", str(path)]) == 0
    assert (tmp_path / "root" / "r" / "report.csv").exists()
    monkeypatch.setenv("ROUGHPDE_OUT", str(tmp_path / "env"))
    assert main(["audit", "--manifest", str(path)]) == 0
    assert (tmp_path / "env" / "r" / "report.csv").exists()
