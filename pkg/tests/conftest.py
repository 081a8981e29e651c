import hashlib
import os
import stat
import sys
from pathlib import Path

import pytest

sys.path.insert(0, os.path.dirname(__file__))

# measured on the build machine: 0.052-0.054 s per run of the sleep-0.05
# fake runtime; the upper bound leaves room for a loaded CI host
SLEEP_ENVELOPE = (0.045, 0.25)

FAKE_RUNTIME = """#!/bin/sh
# fake wasm runtime: "executes" a module by printing its contents
sleep 0.05
cat "$1"
"""

# prints wrong output for any module named d.wasm
FAKE_RUNTIME_BAD_D = """#!/bin/sh
sleep 0.05
case "$1" in
  */d.wasm) echo "garbage" ;;
  *) cat "$1" ;;
esac
"""

FAKE_RUNTIME_FAILING = """#!/bin/sh
echo "trap: unreachable" >&2
exit 1
"""

# writes stage marks to the profile path given as its second argument
FAKE_RUNTIME_PROFILED = """#!/bin/sh
sleep 0.02
echo '{"marks": [{"label": "init_end", "t_s": 0.005}, {"label": "load_end", "t_s": 0.012}]}' > "$2"
cat "$1"
"""


def sha256(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def write_script(path: Path, body: str) -> Path:
    path.write_text(body)
    path.chmod(path.stat().st_mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)
    return path


@pytest.fixture
def fake_runtimes(tmp_path):
    d = tmp_path / "bin"
    d.mkdir()
    return {
        "good": write_script(d / "rt_good.sh", FAKE_RUNTIME),
        "bad_d": write_script(d / "rt_bad_d.sh", FAKE_RUNTIME_BAD_D),
        "failing": write_script(d / "rt_fail.sh", FAKE_RUNTIME_FAILING),
        "profiled": write_script(d / "rt_prof.sh", FAKE_RUNTIME_PROFILED),
    }


@pytest.fixture
def wasm_modules(tmp_path):
    """Four 'modules' a-d whose content is their expected stdout."""
    d = tmp_path / "wasm"
    d.mkdir()
    out = {}
    for name in "abcd":
        p = d / f"{name}.wasm"
        p.write_text(f"output of {name}\n")
        out[name] = p
    return out
