import math
import subprocess
import sys
import time
from dataclasses import replace

import pytest

from srekit.cli import main, parse_config, render_config
from srekit.cli.config import ConfigError, ExperimentConfig
from srekit.cli.runner import EXIT_CONFIG, EXIT_USAGE, execute

AR_MIN = """
[model]
model_id = ar
phi1 = 0.5
[run]
T = 300
"""

JOINT = """
[model]
model_id = joint_filter
[run]
seed = 3
T = 400
replicates = {reps}
n_moment = 300
[checks]
checks = p1, p2, p3
[output]
directory = {out}
"""


def write(tmp_path, text, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_minimal_config_defaults():
    cfg = parse_config(AR_MIN)
    assert cfg.model.phi1 == 0.5
    assert cfg.burn_in == 30
    assert cfg.run.ci_level == 0.99
    assert cfg.checks.checks == ("p1",)


def test_constraint_error_names_invariant():
    with pytest.raises(ConfigError) as info:
        parse_config("[model]\nmodel_id = joint_filter\nomega_sigma = -1\n")
    assert "line 3" in str(info.value)
    assert "JointFilterParams" in str(info.value)


def test_duplicate_section_reports_both_lines():
    with pytest.raises(ConfigError) as info:
        parse_config("[model]\nmodel_id = ar\n\n[model]\nphi1 = 0.2\n")
    assert "line 4" in str(info.value) and "line 1" in str(info.value)


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("[model]\nphi9 = 1\n", "unknown key 'phi9'"),
        ("[run]\nT = ten\n", "line 2"),
        ("[model]\nmodel_id = ar\nomega = 1.0\n", "not a parameter"),
        ("[checks]\nchecks = p1, p7\n", "unknown check"),
        ("[model]\nmodel_id = ar\n[checks]\nchecks = p3\n", "p3 needs"),
        ("[plots]\nx = 1\n", "unknown section"),
        ("[run]\nT = 10\nT = 20\n", "duplicate key"),
        ("phi1 = 1\n", "outside"),
    ],
)
def test_parse_errors(text, fragment):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert fragment in str(info.value)


def test_render_round_trip():
    cfg = parse_config(JOINT.format(reps=2, out="x"))
    assert parse_config(render_config(cfg)) == cfg


def test_joint_verify_exit_zero(tmp_path):
    out = tmp_path / "out"
    code = main(["verify", "--config", write(tmp_path, JOINT.format(reps=1, out=out)), "--quiet"])
    assert code == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["conditions.csv", "gaps_p2_coupling.csv", "gaps_p3_conclusion.csv", "gaps_p3_ii.csv",
                     "gaps_p3_iii.csv", "ratefits.csv", "report.txt"]
    lines = (out / "ratefits.csv").read_text().splitlines()
    assert lines[0].startswith("# seed=3 version=")
    assert lines[1].split(",")[:3] == ["replicate", "series", "slope"]
    assert b"\r" not in (out / "conditions.csv").read_bytes()


def test_ar_explosive_exit_one(tmp_path):
    text = "[model]\nmodel_id = ar\nphi1 = 1.5\n[checks]\nchecks = p1\n[output]\ndirectory = %s\n" % (tmp_path / "o")
    assert main(["verify", "--config", write(tmp_path, text), "--quiet"]) == 1


def test_inconclusive_exit_two(tmp_path):
    # phi1 = 1 gives E log Lambda = 0 exactly: neither side of zero can be certified
    text = "[model]\nmodel_id = ar\nphi1 = 1.0\n[run]\nT = 50\n[checks]\nchecks = lyapunov\n" \
           "[output]\ndirectory = %s\n" % (tmp_path / "o")
    assert main(["verify", "--config", write(tmp_path, text), "--quiet"]) == 2


def test_replicates_are_deterministic_and_schedule_free(tmp_path):
    cfg = write(tmp_path, JOINT.format(reps=8, out=tmp_path / "a"))
    assert main(["verify", "--config", cfg, "--quiet"]) == 0
    assert main(["verify", "--config", cfg, "--quiet", "--out", str(tmp_path / "b")]) == 0
    assert main(["verify", "--config", cfg, "--quiet", "--jobs", "8", "--out", str(tmp_path / "c")]) == 0
    for f in sorted((tmp_path / "a").glob("*.csv")):
        ref = f.read_bytes()
        assert (tmp_path / "b" / f.name).read_bytes() == ref
        assert (tmp_path / "c" / f.name).read_bytes() == ref


def test_lyapunov_subcommand(tmp_path):
    text = "[model]\nmodel_id = ar\nphi1 = 0.5\n[run]\nr_max = 4\n[output]\ndirectory = %s\n" % (tmp_path / "o")
    assert main(["lyapunov", "--config", write(tmp_path, text), "--quiet"]) == 0
    rows = (tmp_path / "o" / "lyapunov.csv").read_text().splitlines()[2:]
    assert len(rows) == 4
    for r, row in enumerate(rows, start=1):
        assert float(row.split(",")[3]) == r * math.log(0.5)


def test_minus_infinity_token(tmp_path):
    text = "[model]\nmodel_id = ar\nphi1 = 0.0\n[run]\nr_max = 1\n[output]\ndirectory = %s\n" % (tmp_path / "o")
    assert main(["lyapunov", "--config", write(tmp_path, text), "--quiet"]) == 0
    row = (tmp_path / "o" / "lyapunov.csv").read_text().splitlines()[2].split(",")
    assert row[3] == "-inf" and row[5] == "contractive"


def test_simulate_large_garch_is_fast(tmp_path):
    text = "[model]\nmodel_id = garch\nview = data_generating\n[run]\nT = 100000\n[output]\ndirectory = %s\n" \
           % (tmp_path / "o")
    start = time.perf_counter()
    assert main(["simulate", "--config", write(tmp_path, text), "--quiet"]) == 0
    assert time.perf_counter() - start < 5.0
    lines = (tmp_path / "o" / "trajectory.csv").read_text().splitlines()
    assert lines[1] == "replicate,t,y,sigma2" and len(lines) == 100_003


def test_converge_and_lemma_probe(tmp_path):
    text = "[model]\nmodel_id = ar\n[perturbation]\namplitude = 1.0\nrate = 0.8\n[output]\ndirectory = %s\n" \
           % (tmp_path / "o")
    assert main(["converge", "--config", write(tmp_path, text), "--quiet"]) == 0
    assert (tmp_path / "o" / "gaps_p3_conclusion.csv").exists()
    assert main(["lemma-probe", "--out", str(tmp_path / "l"), "--quiet"]) == 0
    assert "lemma3" in (tmp_path / "l" / "lemmas.csv").read_text()


def test_seed_override(tmp_path):
    cfg = write(tmp_path, JOINT.format(reps=1, out=tmp_path / "a"))
    main(["verify", "--config", cfg, "--quiet", "--seed", "9"])
    assert (tmp_path / "a" / "conditions.csv").read_text().startswith("# seed=9 ")


def test_config_error_exit(tmp_path, capsys):
    assert main(["verify", "--config", write(tmp_path, "[model]\nphi9 = 1\n")]) == EXIT_CONFIG
    assert "line 2" in capsys.readouterr().err


def test_degenerate_noise_refused(tmp_path):
    text = "[model]\nmodel_id = ar\nnoise = degenerate\n[output]\ndirectory = %s\n" % (tmp_path / "o")
    assert main(["verify", "--config", write(tmp_path, text), "--quiet"]) == EXIT_CONFIG


def test_unknown_subcommand_exit_64(capsys):
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == EXIT_USAGE
    assert "usage" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "srekit", "lemma-probe", "--quiet", "--out", str(tmp_path)],
                          capture_output=True)
    assert proc.returncode == 0


def test_no_output_files_when_disabled(tmp_path):
    cfg = ExperimentConfig().with_output(str(tmp_path / "none"))
    cfg = replace(cfg, output=replace(cfg.output, csv=False, report=False))
    assert execute(cfg).files == []
    assert not (tmp_path / "none").exists()
