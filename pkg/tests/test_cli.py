import csv
import json
import math
from pathlib import Path

import pytest

from nelsonsim import cli
from nelsonsim.experiments import SweepRecord

GOLDEN = Path(__file__).parent / "golden"


def run(tmp_path, *args):
    return cli.main([*args, "--output", str(tmp_path)])


def rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


# --- config ----------------------------------------------------------------------------

def test_empty_file_gives_defaults(tmp_path):
    f = tmp_path / "c.cfg"
    f.write_text("")
    cfg = cli.parse_config(f)
    ref = cli.RunConfig(**cli.PRESETS["tiny"])
    assert cfg == ref


def test_comments_and_blank_lines(tmp_path):
    f = tmp_path / "c.cfg"
    f.write_text("# a comment\n\nmu = 50   # trailing\n")
    assert cli.parse_config(f).mu == 50.0


def test_constraint_violation_exits_4(tmp_path, capsys):
    f = tmp_path / "c.cfg"
    f.write_text("eps = 2, K = 1\n")
    with pytest.raises(cli.ConfigError) as e:
        cli.parse_config(f)
    assert e.value.code == cli.EXIT_CONSTRAINT
    assert cli.main(["integrals", "--config", str(f), "--output", str(tmp_path)]) == 4
    assert "eps" in capsys.readouterr().err


def test_flag_overrides_file(tmp_path):
    f = tmp_path / "c.cfg"
    f.write_text("mu = 50\nt = 0.2\n")
    cfg = cli.parse_config(f, {"mu": "75"})
    assert (cfg.mu, cfg.t) == (75.0, 0.2)


def test_unknown_key_exits_3(tmp_path):
    f = tmp_path / "c.cfg"
    f.write_text("nu = 3\n")
    assert cli.main(["integrals", "--config", str(f), "--output", str(tmp_path)]) == 3


def test_unreadable_file_exits_5(tmp_path):
    assert cli.main(["integrals", "--config", str(tmp_path / "missing.cfg"), "--output", str(tmp_path)]) == 5


def test_unknown_subcommand_exits_2(tmp_path):
    assert cli.main(["frobnicate"]) == 2


def test_bad_value_is_a_constraint_error():
    with pytest.raises(cli.ConfigError) as e:
        cli.build_config({"points": "four"})
    assert e.value.code == cli.EXIT_CONSTRAINT
    with pytest.raises(cli.ConfigError):
        cli.build_config({"points": "4"})


def test_exit_codes_distinct():
    codes = [cli.EXIT_OK, cli.EXIT_FAIL, cli.EXIT_USAGE, cli.EXIT_UNKNOWN_KEY, cli.EXIT_CONSTRAINT, cli.EXIT_UNREADABLE]
    assert codes == [0, 1, 2, 3, 4, 5]


@pytest.mark.parametrize("overrides", [{}, {"preset": "desk", "mu": "1234.5", "K": "3"}, {"mus": "10,20,40", "record_timing": "true", "eps": "0.25"}])
def test_serialize_round_trip(overrides):
    cfg = cli.build_config(overrides)
    again = cli.parse_serialized(cfg.serialize())
    assert again.serialize() == cfg.serialize()
    assert again.digest() == cfg.digest()


def test_mu_scaling_default_params():
    cfg = cli.build_config({"mu": "1000", "lambda_uv": "100"})
    p = cfg.params()
    assert p.K == pytest.approx(10.0) and p.eps == pytest.approx(1e-3)


def test_help_lists_defaults(capsys):
    assert cli.main(["--help"]) == 0
    out = capsys.readouterr().out
    assert "--krylov-tol" in out and "default: 1e-11" in out


# --- output ---------------------------------------------------------------------------

def test_empty_records_give_header_only(tmp_path):
    csv_path, json_path = cli.emit_report([], SweepRecord.HEADER, tmp_path, "empty", cli.build_config({}))
    assert csv_path.read_text() == ",".join(SweepRecord.HEADER) + "\n"
    meta = json.loads(json_path.read_text())
    assert meta["rows"] == 0 and len(meta["config_hash"]) == 64


def test_emit_report_io_error_has_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        cli.emit_report([], SweepRecord.HEADER, blocker / "sub", "r")


def test_integrals_subcommand(tmp_path):
    assert run(tmp_path, "integrals") == 0
    r = rows(tmp_path / "integrals.csv")
    names = {x["quantity"] for x in r}
    assert {"E_Lambda", "E_K0", "e0", "norm_G", "norm_B", "norm_kB"} <= names
    assert list(r[0]) == list(cli.INTEGRALS_SCHEMA)
    assert all(math.isfinite(float(x["value"])) for x in r)


def test_sweep_tiny_preset(tmp_path):
    assert run(tmp_path, "sweep") == 0
    r = rows(tmp_path / "sweep.csv")
    assert len(r) == 3
    assert all(float(x["loglog_slope"]) < 0 for x in r)
    meta = json.loads((tmp_path / "sweep.json").read_text())
    assert meta["slope"] < 0 and meta["config_hash"] == cli.build_config({"subcommand": "sweep"}).digest()


@pytest.mark.parametrize("name", ["integrals", "sweep"])
def test_golden_files(tmp_path, name):
    assert run(tmp_path, name) == 0
    got, want = rows(tmp_path / f"{name}.csv"), rows(GOLDEN / f"{name}_tiny.csv")
    assert len(got) == len(want)
    for g, w in zip(got, want):
        assert list(g) == list(w)
        for k in w:
            try:
                assert float(g[k]) == pytest.approx(float(w[k]), rel=1e-9, abs=1e-15), k
            except ValueError:
                assert g[k] == w[k]


def test_byte_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["sweep", "--output", str(a)]) == 0
    assert cli.main(["sweep", "--output", str(b)]) == 0
    assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()
    ma, mb = (json.loads((d / "sweep.json").read_text()) for d in (a, b))
    ma.pop("config"), mb.pop("config")
    assert ma == mb


@pytest.mark.parametrize("sub", ["verify-gross", "verify-cancel", "verify-selfenergy", "verify-bounds", "evolve"])
def test_fast_subcommands_run(tmp_path, sub):
    assert run(tmp_path, sub) == 0
    stem = sub.replace("-", "_")
    assert (tmp_path / f"{stem}.csv").exists() and (tmp_path / f"{stem}.json").exists()


def test_evolve_saves_state(tmp_path):
    from nelsonsim.propagator import SimState

    assert run(tmp_path, "evolve") == 0
    s = SimState.load(tmp_path / "state")
    assert s.norm == pytest.approx(1.0, abs=1e-12) and s.basis_hash


def test_failure_exits_1(tmp_path):
    # an absurdly tight invariant tolerance cannot be met
    assert run(tmp_path, "evolve", "--invariant-tol", "1e-30") == 1


@pytest.mark.parametrize("sub", ["verify-removal", "verify-energy"])
def test_slower_subcommands_run_on_tiny_preset(tmp_path, sub):
    assert run(tmp_path, sub) == 0
    assert rows(tmp_path / f"{sub.replace('-', '_')}.csv")
