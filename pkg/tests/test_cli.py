import json

from auditmas.cli import main
from auditmas.domain import read_log, replay

SMALL = """\
seed = 4
[corpus]
n_contracts = 4
n_vulns = 2
"""


def write_cfg(tmp_path, text=SMALL):
    p = tmp_path / "s.toml"
    p.write_text(text)
    return str(p)


def test_run_replay_report(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--reps", "2", "--out", str(out)]) == 0
    logs = sorted((out / "logs").glob("*.jsonl"))
    assert len(logs) == 2
    assert (out / "run_runs.csv").exists() and (out / "run_summary.json").exists()

    assert main(["replay", str(logs[0]), "--out", str(tmp_path / "rep")]) == 0
    state = json.loads((tmp_path / "rep" / "final_state.json").read_text())
    assert state == replay(read_log(logs[0])).to_dict()

    capsys.readouterr()
    assert main(["report", *map(str, logs)]) == 0
    text = capsys.readouterr().out
    assert text.startswith("row,variant,seed")


def test_experiment_sweep_with_variants(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert main(["experiment", "--config", cfg, "--reps", "1", "--variant", "FullMAS,SequentialPipeline"]) == 0
    out = capsys.readouterr().out
    assert "FullMAS" in out and "SequentialPipeline" in out


def test_bad_config_exits_2_with_line(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "[corpus]\nn_contracts = 4\nnope = 1\n")
    assert main(["run", "--config", cfg]) == 2
    assert "line 3" in capsys.readouterr().err


def test_missing_file_exits_2(tmp_path, capsys):
    assert main(["replay", str(tmp_path / "missing.jsonl")]) == 2


def test_incomplete_log_reported(tmp_path, capsys):
    log = tmp_path / "cut.jsonl"
    cfg = write_cfg(tmp_path)
    main(["run", "--config", cfg, "--out", str(tmp_path / "o")])
    full = next((tmp_path / "o" / "logs").glob("*.jsonl")).read_text().splitlines()
    log.write_text("\n".join(full[:-1]) + "\n")
    assert main(["report", str(log)]) == 1
    assert "incomplete" in capsys.readouterr().err
