"""
The command-line driver
=======================

Write a model and calibration set to disk, then run every subcommand the way
a batch job would: calibrate, prune-db, bench, search, export and eval.
"""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np

from zipkit.chain import make_calibration, synthetic_chain, synthetic_inputs
from zipkit.store import save_calibration, save_model, write_blob

work = Path(tempfile.mkdtemp(prefix="zipkit-demo-"))
model = synthetic_chain(4, hidden=32, ffn_width=128, n_heads=8)
save_model(model, work / "model")
save_calibration(make_calibration(model, synthetic_inputs(32, 512)), work / "calib")

(work / "run.json").write_text(json.dumps({
    "model": str(work / "model"),
    "calibration": str(work / "calib"),
    "output": str(work / "out"),
    "targets": [1.5, 2.0, 3.0],
    "steps": 300,
}))


def zipkit(*args):
    cmd = [sys.executable, "-m", "zipkit", *args]
    print("$ zipkit", " ".join(args))
    proc = subprocess.run(cmd, capture_output=True, text=True)
    print(proc.stdout, end="")
    print("exit code", proc.returncode)
    return proc.returncode


cfg = ["--config", str(work / "run.json")]
zipkit("calibrate", *cfg)
zipkit("prune-db", *cfg)
zipkit("bench", *cfg, "--reps", "5")
zipkit("search", *cfg)
zipkit("export", *cfg, "--target", "2")
print(json.loads((work / "out" / "export" / "target_2" / "manifest.json").read_text())["metadata"])

# A broken latency table is reported with exit code 3.
(work / "bad.json").write_text("{}")
zipkit("search", *cfg, "--table", str(work / "bad.json"))

# eval reads tensors from a small JSON bundle.
rng = np.random.default_rng(0)
tensors = {}
for name, arr in {"s": rng.standard_normal((1, 4, 8)), "t": rng.standard_normal((1, 4, 8))}.items():
    write_blob(work / f"{name}.bin", arr)
    tensors[name] = {"blob": f"{name}.bin", "shape": list(arr.shape)}
(work / "bundle.json").write_text(json.dumps(
    {"tensors": tensors, "student_hidden": ["s"], "teacher_hidden": ["t"]}))
zipkit("eval", str(work / "bundle.json"))
print("artifacts in", work)
