"""Smoke test for the corrheston extension module.

    maturin develop --release -m crates/python/Cargo.toml
    python crates/python/python/smoke_test.py
"""

import math

import corrheston as ch


def main():
    p = ch.ModelParams.centered(theta=0.01, v0=0.01, alpha=0.3, beta=2.0, rho_bar=0.0, eta=0.4)
    assert abs(p.rho_0 - p.rho_bar) < 1e-15

    phi = ch.char_fn(0j, 0.25, 1.0, p)
    assert phi == 1.0

    call = ch.vanilla_price(p, 1.0, 1.0, 0.25, call=True)
    put = ch.vanilla_price(p, 1.0, 1.0, 0.25, call=False)
    assert abs(call - put) < 1e-12, (call, put)
    vols = ch.implied_vols(p, 1.0, 0.25, [0.95, 1.0, 1.05])
    assert all(0.05 < v < 0.15 for v in vols), vols

    quote = ch.SmileQuote(tenor=0.25, atm_vol=0.08, rr25=0.01, bf25=0.005)
    fit = ch.calibrate(quote, 1.0, beta=2.0, eta=0.4)
    assert max(abs(r) for r in fit.residuals) < 1e-6, fit.residuals
    back = ch.quote_from_model(fit.params, 1.0, 0.25)
    assert abs(back.rr25 - 0.01) < 1e-6

    k = ch.k_tau(p, 1.0, 0.25)
    beta_rr = ch.model_rr_beta(k, p.alpha, p.eta, p.theta)
    assert abs(ch.estimate_eta(beta_rr, k, p.alpha, p.theta) - 0.4) < 1e-12

    touch, se = ch.one_touch_price(fit.params, 1.0, 0.97, 0.25, paths=20_000, seed=1)
    bs = ch.bs_one_touch_price(1.0, 0.97, 0.08, 0.25)
    assert 0.0 < touch < 1.0 and se > 0.0 and abs(touch - bs) < 0.1, (touch, bs)
    ko, _ = ch.knockout_price(fit.params, 1.0, 0.97, 1.0, 0.25, paths=20_000)
    assert ko > 0.0
    vs, _ = ch.vol_swap_strike(fit.params, 1.0, 0.25, paths=20_000)
    assert 0.05 < vs < 0.1, vs

    try:
        ch.ModelParams.centered(0.01, 0.01, 0.3, 2.0, 0.8, 0.4)
    except ValueError:
        pass
    else:
        raise AssertionError("correlation range not enforced")

    print("smoke test ok:", f"k={k:.4f}", f"one touch {touch:.4f}±{se:.4f}", f"vol swap {vs:.5f}")


if __name__ == "__main__":
    main()
