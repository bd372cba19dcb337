"""Smoke test for the Python extension.

Build and install first, e.g.
    cd crates/python && maturin develop --release
then run `python python/smoke_test.py`.
"""

import math

import mlmc_greeks as mg


def main():
    market = mg.MarketParams()
    exact = mg.bs_call(market)
    assert abs(exact["value"] - 10.450583572185565) < 1e-9, exact

    spec = mg.MethodSpec("cond_exp", "call")
    report = mg.run_mlmc(spec, market, 0.05, seed=1)
    est = report["estimates"]
    assert report["converged"]
    assert abs(est["value"] - exact["value"]) < 0.15, est
    print(f"call value {est['value']:.4f} delta {est['delta']:.4f} vega {est['vega']:.3f} "
          f"(closed form {exact['value']:.4f} / {exact['delta']:.4f} / {exact['vega']:.3f})")

    levels = mg.collect_levels(spec, market, 0, 4, 2000, seed=1)
    assert [l["level"] for l in levels] == [0, 1, 2, 3, 4]
    assert all(math.isfinite(l["variance"]["value"]) for l in levels)

    beta = mg.variance_rates(mg.MethodSpec("pathwise", "call"), market, 2, 6, 20000)
    print("pathwise call variance rates", tuple(round(b, 2) for b in beta))
    assert 1.5 < beta[0] < 2.5

    barrier = mg.MarketParams(barrier=95.0)
    power = mg.MethodSpec("pathwise", "barrier", grid="power", market=barrier)
    assert "Power" in repr(power)

    try:
        mg.run_mlmc(mg.MethodSpec("pathwise", "digital"), market, 0.1)
    except ValueError as e:
        print("rejected as expected:", e)
    else:
        raise AssertionError("pathwise digital should be rejected")

    print("smoke test passed")


if __name__ == "__main__":
    main()
