import json

import pytest
import yaml

from conftest import tiny_run_config
from slotworld.cli import main
from slotworld.config import config_to_dict


def write_tiny_config(tmp_path, **overrides):
    config = tiny_run_config(out_dir=tmp_path / "run", **overrides)
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(config_to_dict(config)))
    return path


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--bogus"])
    assert exc.value.code == 2


def test_unknown_command_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["juggle"])
    assert exc.value.code == 2


def test_missing_config_file_is_runtime_error(tmp_path, capsys):
    code = main(["eval", "--config", str(tmp_path / "nope.yaml")])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_eval_fresh_agent_near_random_baseline(tmp_path, capsys):
    config_path = write_tiny_config(tmp_path)
    out = tmp_path / "eval.json"
    code = main(
        ["eval", "--config", str(config_path), "--episodes", "2", "--out", str(out)]
    )
    assert code == 0
    printed = capsys.readouterr().out
    assert "success" in printed
    stats = json.loads(out.read_text())
    # An untrained policy on a tiny episode budget should not be solving the
    # task reliably; anything near-perfect would indicate a scoring bug.
    assert 0.0 <= stats["success_mean"] <= 0.5
    assert stats["episodes"] == 2


def test_eval_seed_fixes_reported_numbers(tmp_path, capsys):
    config_path = write_tiny_config(tmp_path)
    outputs = []
    for run in range(2):
        out = tmp_path / f"eval_{run}.json"
        assert main(
            [
                "eval",
                "--config",
                str(config_path),
                "--episodes",
                "2",
                "--seed",
                "7",
                "--out",
                str(out),
            ]
        ) == 0
        outputs.append(out.read_text())
    assert outputs[0] == outputs[1]


def test_task_flag_selects_environment(tmp_path, capsys):
    config_path = write_tiny_config(tmp_path)
    code = main(
        [
            "eval",
            "--config",
            str(config_path),
            "--episodes",
            "1",
            "--task",
            "push-distinct",
        ]
    )
    assert code == 0
    assert "push-distinct" in capsys.readouterr().out


def test_eval_episode_logs(tmp_path, capsys):
    config_path = write_tiny_config(tmp_path)
    logs = tmp_path / "episodes"
    code = main(
        [
            "eval",
            "--config",
            str(config_path),
            "--episodes",
            "2",
            "--episode-logs",
            str(logs),
        ]
    )
    assert code == 0
    files = sorted(logs.glob("episode_*.jsonl"))
    assert len(files) == 2
    records = [json.loads(line) for line in files[0].read_text().splitlines()]
    assert len(records) == 8  # tiny config episode length
    assert {"step", "action", "reward", "done", "success"} <= set(records[0])


def test_rollout_writes_png(tmp_path, capsys):
    config_path = write_tiny_config(tmp_path)
    out = tmp_path / "strip.png"
    code = main(["rollout", "--config", str(config_path), "--out", str(out)])
    assert code == 0
    assert out.exists() and out.stat().st_size > 0


def test_attn_writes_overlays(tmp_path, capsys):
    config_path = write_tiny_config(tmp_path)
    out = tmp_path / "attn"
    code = main(["attn", "--config", str(config_path), "--out", str(out)])
    assert code == 0
    for name in ("attn_overlay.png", "attn_heat.png", "attn_strip.png"):
        assert (out / name).exists()


@pytest.mark.slow
def test_train_cli_end_to_end(tmp_path, capsys):
    config_path = write_tiny_config(tmp_path)
    out = tmp_path / "cli_run"
    code = main(["train", "--config", str(config_path), "--out", str(out)])
    assert code == 0
    assert (out / "final.ckpt").exists()
    # Checkpointed policy evaluates through the CLI.
    code = main(
        [
            "eval",
            "--config",
            str(config_path),
            "--checkpoint",
            str(out / "final.ckpt"),
            "--episodes",
            "1",
        ]
    )
    assert code == 0
