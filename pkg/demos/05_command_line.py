"""Driving the tool through its command-line interface.

Equivalent shell commands:

    urnlab validate --config configs/model_a_validate.json
    urnlab limit    --config configs/model_a_limit.json
    urnlab moments  --config configs/model_d_moments.json
    urnlab report   --config configs/model_a_limit.json
"""

import sys
import tempfile
from pathlib import Path

from urnlab.cli import main

configs = Path(__file__).resolve().parent.parent / "configs"
out = Path(tempfile.mkdtemp(prefix="urnlab-demo-"))
for command, cfg in [("validate", "model_a_validate"), ("limit", "model_a_limit"),
                     ("moments", "model_d_moments"), ("report", "model_a_limit")]:
    status = main([command, "--config", str(configs / f"{cfg}.json"), "--out", str(out)])
    print(f"urnlab {command}: exit {status}")
    if status:
        sys.exit(status)
print("files:", ", ".join(sorted(p.name for p in out.iterdir())))
