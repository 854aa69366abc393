"""Smoke test for the platoon_lab extension module.

Build first:
    cargo build --release -p platoon-py --features extension-module
then run this script. It imports an installed platoon_lab if there is one,
otherwise it loads the freshly built library from target/.
"""

import importlib.machinery
import importlib.util
import math
import pathlib
import sys

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load():
    try:
        import platoon_lab

        return platoon_lab
    except ImportError:
        pass
    for profile in ("release", "debug"):
        for name in ("libplatoon_lab.so", "libplatoon_lab.dylib", "platoon_lab.dll"):
            lib = ROOT / "target" / profile / name
            if lib.exists():
                loader = importlib.machinery.ExtensionFileLoader("platoon_lab", str(lib))
                spec = importlib.util.spec_from_loader("platoon_lab", loader)
                module = importlib.util.module_from_spec(spec)
                loader.exec_module(module)
                return module
    sys.exit("platoon_lab not built; see the module docstring")


def main():
    pl = load()

    gains = pl.ControlGains.reference("asym")
    assert gains.kd1 == gains.kd2 == 1.9589

    local = pl.local_conditions(gains, 0.1, 0.8)
    assert abs(sum(local["real_parts"])) < 1e-9
    assert local["real_parts"][0] < 0

    mag, x, y = pl.gap_error_gain(1.9589, 0.52, 0.1, 0.1, 0.8, 1e-6)
    assert abs(mag - 2 / 3) < 1e-6

    report = pl.string_stability(gains, 0.1, 0.1, 0.8)
    assert report["stable"] and len(report["points"]) == 2000

    scenario = pl.Scenario.reference("asym", 0.1, 0.1, 0.8)
    scenario.duration = 60.0
    scenario.record_stride = 100
    assert scenario.violations() == []
    trace = pl.simulate(scenario)
    assert trace.status == "completed"
    assert len(trace) == 601
    gaps = trace.time_gaps(len(trace) - 1)
    assert all(math.isfinite(g) for g in gaps)
    print("metrics:", trace.metrics())

    again = pl.Scenario.from_json(scenario.to_json())
    assert again.duration == 60.0

    tuned = pl.tune("asym", 0.1, 0.1, population=3, generations=1, seed=1)
    assert len(tuned["history"]) == 2

    print("platoon_lab smoke test passed")


if __name__ == "__main__":
    main()
