"""Smoke test for the `chemotaxis` extension module.

Build with `cargo build --release -p chemotaxis-py --features extension-module`,
copy `target/release/libchemotaxis.so` to `chemotaxis.so` somewhere on
PYTHONPATH (the script looks in `target/release` by default), then run
`python python/smoke_test.py`.
"""

import json
import math
import os
import pathlib
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent
sys.path.insert(0, os.environ.get("CHEMOTAXIS_LIB_DIR", str(ROOT / "target" / "release")))

import chemotaxis  # noqa: E402


def check(name, ok):
    print(f"{'PASS' if ok else 'FAIL'} {name}")
    return ok


def main():
    results = []

    grid = chemotaxis.Grid(1, 64, 2 * math.pi)
    values = [math.sin(3 * k * grid.spacing) for k in range(64)]
    back = grid.roundtrip(values)
    results.append(check("fft roundtrip", max(abs(a - b) for a, b in zip(values, back)) < 1e-12))

    params = chemotaxis.ModelParams(1.0, 1.0, 1.0, 1.0)
    results.append(check("effective diffusion", params.effective_diffusion() == 1.0))
    lo, hi = chemotaxis.damped_wave_eigen(0.1, 1.0, 1.0)
    results.append(check("eigen sum equals -beta", abs((lo + hi) + 1.0) < 1e-12))
    results.append(check("propagator gap", params.propagator_gap([0.3, -0.2], 5.0) < 1e-10))
    results.append(check("sk condition", params.sk_holds(2, [[1.0, 0.0], [0.6, 0.8]])))

    rates = dict(chemotaxis.expected_rates(1))
    results.append(check("expected u_L2 rate n=1", rates["u_L2"] == 0.25))

    times = [1.0 + 0.5 * k for k in range(40)]
    fit = json.loads(chemotaxis.fit_decay(times, [3.0 * t**-0.75 for t in times], (1.0, 20.0)))
    results.append(check("power fit exponent", abs(fit["exponent"] + 0.75) < 1e-10))

    conv = json.loads(chemotaxis.convolution_bound_check(0.5, 0.75, [4.0, 16.0, 64.0]))
    results.append(check("convolution ratio bounded", 0.0 < conv["max_ratio"] < 10.0))

    config = """
scenario = "kernel_rates"
[grid]
dim = 1
points = 256
length = 200.0
[model]
gamma = 1.0
beta = 1.0
a = 1.0
b = 1.0
[time]
t_end = 60.0
"""
    resolved = json.loads(chemotaxis.parse_config(config))
    results.append(check("config resolves", resolved["scenario"] == "kernel_rates"))
    try:
        chemotaxis.parse_config(config.replace("gamma = 1.0", "gamma = -1.0"))
        results.append(check("bad config rejected", False))
    except ValueError as err:
        results.append(check("bad config rejected", "gamma" in str(err)))

    with tempfile.TemporaryDirectory() as tmp:
        report, code = chemotaxis.run_scenario(config, output_dir=tmp)
        report = json.loads(report)
        files = sorted(p.name for p in pathlib.Path(tmp).iterdir())
        results.append(check("kernel scenario report", code in (0, 1) and "checks" in report))
        results.append(check("output files", {"report.json", "series.csv"} <= set(files)))

    sim = dict(chemotaxis.simulate(config.replace("kernel_rates", "zero_state").replace("60.0", "2.0")))
    results.append(check("simulate columns", "u_L2" in sim and len(sim["t"]) == len(sim["u_L2"])))

    return 0 if all(results) else 1


if __name__ == "__main__":
    sys.exit(main())
