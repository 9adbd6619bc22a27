"""Smoke test for the `fpk` extension module.

Build first with

    cargo build -p fpk-python --release --features extension-module

then run `python3 crates/python/python/smoke_test.py`. When `fpk` is not
importable, the script copies the cargo-built shared library into a
temporary directory under the module name and imports it from there.
"""

import importlib
import json
import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parents[3]


def load_fpk():
    try:
        return importlib.import_module("fpk")
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libfpk.so"
        if lib.is_file():
            tmp = pathlib.Path(tempfile.mkdtemp())
            shutil.copy(lib, tmp / "fpk.so")
            sys.path.insert(0, str(tmp))
            return importlib.import_module("fpk")
    sys.exit("fpk extension not found; build it with cargo first")


def main():
    fpk = load_fpk()

    problem = fpk.Problem(1, 64, "1", "cos(2*pi*x1)", f0="1 + 0.3*sin(2*pi*x1)")
    assert problem.dim == 1 and problem.cells_per_axis == 64

    shift, feq = problem.equilibrium()
    assert abs(shift + 0.23591435850717854) < 1e-8, shift
    assert abs(sum(feq) / len(feq) - 1.0) < 1e-12

    f0 = problem.initial_density()
    energy0 = problem.free_energy(f0)
    assert problem.dissipation(f0) > 0.0

    records, final = problem.run(0.02, record_every=20)
    assert abs(records[-1]["t"] - 0.02) < 1e-12
    assert all(abs(r["mass"] - 1.0) < 1e-12 for r in records)
    assert problem.free_energy(final) < energy0
    assert problem.free_energy(feq) <= problem.free_energy(final)

    ledger = problem.ledger()
    assert ledger["dim"] == 1 and ledger["grad_d"] == 0.0

    report = problem.check("T2", 1.0, 1.0, 1.0 / (4 * math.pi**2))
    assert report["theorem"] == "T2"
    assert isinstance(report["overall"], bool)

    assert abs(fpk.gronwall_bound(1.0, 1.0 / 6.0, 3.0, 1.0, 0.0) - math.sqrt(1.2)) < 1e-10
    assert abs(fpk.gronwall_threshold(1.0, 1.0 / 6.0, 3.0) - math.sqrt(6.0)) < 1e-12

    scenario = json.loads((ROOT / "scenarios" / "heat_1d.json").read_text())
    out = fpk.run_scenario(json.dumps(scenario))
    rate = out["decay_fit"]["rate"]
    assert abs(rate - 8 * math.pi**2) / (8 * math.pi**2) < 0.05, rate

    try:
        fpk.Problem(4, 8, "1", "0")
    except ValueError:
        pass
    else:
        raise AssertionError("dimension 4 accepted")

    print(f"fpk smoke test passed (shift {shift:.12f}, heat decay rate {rate:.3f})")


if __name__ == "__main__":
    main()
