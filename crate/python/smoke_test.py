"""Smoke test for the mdpc_py bindings.

Run after `pip install --no-build-isolation -e crates/py`.
"""

import math
import tempfile
from pathlib import Path

import mdpc_py


def main() -> None:
    profile = mdpc_py.LoadProfile.synthetic(days=3, seed=1)
    assert len(profile) == 72
    assert all(4.0 <= d <= 12.0 for d in profile.daily_totals())

    config = mdpc_py.SimConfig(mu=10.0, horizon=4, past_len=24, x_bins=6, y_bins=6)
    results = {}
    for scheme in ("mdpc", "loadlevel", "nobattery"):
        trace = mdpc_py.simulate(profile, config, scheme)
        assert len(trace) == len(profile)
        for x, s, y in zip(trace.load, trace.action, trace.grid):
            assert math.isclose(y, x + s, abs_tol=1e-9)
        metrics = trace.metrics()
        assert 0.0 <= metrics["cumulative_mi_bits"] <= math.log2(6)
        results[scheme] = metrics
        print(f"{trace!r}: I_c {metrics['cumulative_mi_bits']:.4f} bits")

    assert results["nobattery"]["total_energy_kwh"] == sum(profile.load)

    with tempfile.TemporaryDirectory() as tmp:
        written = trace.write_csv(tmp, prefix="smoke_")
        assert written and all(Path(p).exists() for p in written)
        path = Path(tmp) / "profile.csv"
        profile.to_csv(str(path))
        assert len(mdpc_py.LoadProfile.from_csv(str(path))) == len(profile)

    eps = mdpc_py.epsilon_from_rho(window=132, x_bins=15, y_bins=15, rho=1000.0)
    assert eps > 0.0
    pairs = [(0.5 * (k % 5), 1.0 + 0.5 * (k % 5)) for k in range(200)]
    assert mdpc_py.mutual_info(pairs, epsilon=0.01) > 1.0

    try:
        mdpc_py.simulate(profile, config, "bogus")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown scheme accepted")

    checks = mdpc_py.verify(cases=10, seed=3)
    assert all(checks.values()), checks
    print("smoke test passed")


if __name__ == "__main__":
    main()
