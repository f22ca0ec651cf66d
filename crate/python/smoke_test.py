"""Smoke test for the Python extension.

Builds the extension with cargo (unless MRPT_EXT points at an existing
shared library), loads it, and exercises each exported entry point against
the fixtures shipped with the core crate.
"""

import importlib.util
import json
import os
import shutil
import subprocess
import sys
import sysconfig
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "crates" / "core" / "tests" / "fixtures"


def build() -> Path:
    subprocess.run(
        ["cargo", "build", "--release", "-p", "mrpt-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    for name in ("libmrpt.so", "libmrpt.dylib", "mrpt.dll"):
        path = ROOT / "target" / "release" / name
        if path.exists():
            return path
    raise SystemExit("extension library not found after build")


def load(lib: Path, workdir: Path):
    suffix = sysconfig.get_config_var("EXT_SUFFIX") or ".so"
    target = workdir / f"mrpt{suffix}"
    shutil.copy(lib, target)
    spec = importlib.util.spec_from_file_location("mrpt", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main() -> int:
    lib = Path(os.environ["MRPT_EXT"]) if "MRPT_EXT" in os.environ else build()
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        mrpt = load(lib, tmp)

        assert abs(mrpt.pass_at_k(10, 3, 1) - 0.3) < 1e-12
        assert mrpt.pass_at_k(5, 5, 2) == 1.0
        try:
            mrpt.pass_at_k(2, 1, 3)
        except ValueError:
            pass
        else:
            raise AssertionError("k > n must raise")
        assert abs(mrpt.pearson([1, 2, 3], [2, 4, 6]) - 1.0) < 1e-12

        marker = mrpt.normalize_body("if x:\n    return 1\nreturn 2\n")
        assert "[indent]" in marker and "[dedent]" in marker
        assert "return 1" in mrpt.denormalize(marker)

        pairs, stats = mrpt.extract(str(FIXTURES / "toy_corpus"), style="pangu", workers=2)
        assert len(pairs) == stats["pairs_emitted"] == 32, stats
        assert {"docstring", "signature", "code"} <= set(pairs[0])

        vocab = mrpt.Vocabulary.train(
            [p["docstring"] + " " + p["code"] for p in pairs], 400
        )
        assert len(vocab) == 400
        ids = vocab.encode("[descr] add two numbers [python]")
        assert ids[0] == mrpt.CONTROL_SYMBOLS.index("[descr]")
        assert vocab.decode(vocab.encode("return a + b")) == "return a + b"

        problems = FIXTURES / "toy_problems.jsonl"
        records = [json.loads(l) for l in problems.read_text().splitlines() if l.strip()]
        samples = tmp / "samples.jsonl"
        with samples.open("w") as fh:
            for rec in records:
                for i, completion in enumerate([rec["canonical_solution"], "    return None\n"]):
                    fh.write(json.dumps({"task_id": rec["task_id"], "sample_index": i, "completion": completion}) + "\n")
        report = mrpt.evaluate(str(problems), str(samples), ks=[1, 2])
        assert report["pass_at_k"] == {"1": 0.5, "2": 1.0}, report["pass_at_k"]

        try:
            mrpt.evaluate(str(problems), str(tmp / "missing.jsonl"), ks=[1])
        except FileNotFoundError:
            pass
        else:
            raise AssertionError("missing samples must raise")

    print("python smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
