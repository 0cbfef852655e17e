"""Smoke test for the Python extension: build with
`pip install --no-build-isolation ./crates/python`, then run this script."""

import json
import sys
import tempfile
from pathlib import Path

import pibsde_py

ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    assert "validate" in pibsde_py.SUBCOMMANDS

    text = pibsde_py.baseline_scenario()
    assert len(pibsde_py.scenario_hash(text)) == 64

    report = json.loads(pibsde_py.run(text, "solve", paths=2000, steps=16, seed=3))
    again = json.loads(pibsde_py.run(text, "solve", paths=2000, steps=16, seed=3))
    assert report == again, "reports differ under a fixed seed"
    checks = {c["name"]: c for c in report["checks"]}
    assert checks["bsde.terminal_condition"]["passed"]
    print(f"solve: {len(checks)} checks, y0 = {report['metrics']['bsde.y0']:.4f}")

    delayed = (ROOT / "scenarios" / "delayed_w2.toml").read_text()
    with tempfile.TemporaryDirectory() as out:
        hedge = json.loads(pibsde_py.run(delayed, "hedge", output_dir=out, paths=20000, steps=32))
        files = sorted(p.name for p in Path(out).iterdir())
    failed = [c["name"] for c in hedge["checks"] if not c["passed"]]
    theta = next(c for c in hedge["checks"] if c["name"] == "hedge.theta_oracle_rms")
    print(f"hedge: {len(hedge['checks'])} checks, theta oracle rms {theta['statistic']:.4f}, wrote {len(files)} files")
    assert not failed, failed

    try:
        pibsde_py.run("[market]\nsigma = 1.0\n")
    except ValueError as e:
        print(f"parse error surfaced: {str(e).splitlines()[0]}")
    else:
        raise AssertionError("malformed scenario accepted")

    print("smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
