# Copyright 2026 The maskdesk Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import os
import shutil
import subprocess
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[2]


def cli():
    path = os.environ.get("MASKDESK_CLI") or shutil.which("maskdesk")
    if not path:
        candidate = ROOT / "build" / "tools" / "maskdesk"
        path = str(candidate) if candidate.exists() else None
    if not path:
        pytest.skip("maskdesk binary not built")
    return path


def run(*args, cwd=None):
    return subprocess.run([cli(), *args], capture_output=True, text=True, cwd=cwd, timeout=300)


TOY = str(ROOT / "configs" / "toy.cfg")


def test_usage_and_config_errors_exit_2():
    assert run("no-such-command").returncode == 2
    assert run("config", "--set", "trainer.learning_rate=1").returncode == 2
    assert run("config", "--set", "trainer.lr").returncode == 2
    assert run("config", "--set", "parser.target_size=320").returncode == 2


def test_config_prints_merged_values():
    r = run("config", "-c", TOY, "--set", "trainer.steps=7")
    assert r.returncode == 0
    assert "steps = 7" in r.stdout
    assert "n_queries = 16" in r.stdout


def test_verify_passes_and_detects_mutation():
    assert run("verify", "-c", TOY).returncode == 0
    bad = run("verify", "-c", TOY, "--set", "losses.dice_eps=10")
    assert bad.returncode == 1
    assert "FAIL" in bad.stdout


def test_runtime_failure_exits_1(tmp_path):
    r = run("eval", "-c", TOY, "--set", f"paths.shard_dir={tmp_path}/missing")
    assert r.returncode == 1


def test_small_pipeline_end_to_end(tmp_path):
    sets = ["--set", f"paths.raw_dir={tmp_path}/raw", "--set", f"paths.shard_dir={tmp_path}/shards",
            "--set", f"paths.run_dir={tmp_path}/run"]
    assert run("synth", "-c", TOY, *sets, "-n", "12").returncode == 0
    assert run("ingest", "-c", TOY, *sets, "--shards", "2").returncode == 0
    train = run("train", "-c", TOY, *sets, "--set", "trainer.steps=2", "--set",
                "trainer.batch_size=2")
    assert train.returncode == 0, train.stderr
    assert (tmp_path / "run" / "loss.csv").read_text().count("\n") == 3
    assert run("eval", "-c", TOY, *sets).returncode == 0
    assert (tmp_path / "run" / "eval.csv").exists()
