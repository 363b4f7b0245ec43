"""Smoke test for the popcov extension module.

Build and run:
    cargo build -p popcov-python --release --features extension-module
    cp target/release/libpopcov_py.so python/popcov.so
    python3 python/smoke_test.py
"""

import math

import popcov


def close(a, b, tol=1e-12):
    return all(abs(x - y) <= tol for ra, rb in zip(a, b) for x, y in zip(ra, rb))


def main():
    a = [[1.0, 0.2, 0.3], [0.2, 2.0, 0.5], [0.3, 0.5, 3.0]]
    v = popcov.apply_v(a)
    assert close(popcov.apply_w(v), popcov.apply_w(a))
    assert abs(popcov.operator_norm("W", 4) - 1.0) < 1e-12
    assert popcov.kernel_dim("D", 5) == 5
    assert popcov.kernel_dim("V", 5) == 1

    panel = popcov.Panel(
        [[0.1, 0.2, 0.9], [0.4, 0.4, 0.5], [0.8, 0.7, 0.1], [0.3, 0.6, 0.2]],
        chrom=["1", "1", "2", "2"],
    )
    w, d, vhat = panel.estimates()
    assert close(popcov.apply_w(vhat), w)
    pairs, discarded = panel.pairing()
    assert len(pairs) == 2 and not discarded
    shat = panel.s_hat()
    assert all(shat[i][i] >= 0.0 for i in range(3))

    sim = popcov.simulate_scenario(5, 40000, seed=11)
    assert sim.n_snps == 40000 and sim.n_pops == 5
    _, _, vhat = sim.estimates()
    split = popcov.root_split(vhat)
    assert split.group_a == [0] and split.group_b == [1, 2, 3, 4], split

    sigma = popcov.scenario_sigma(20, 0.5)
    assert math.isclose(sigma[0][0], 0.0130625, rel_tol=1e-12)

    fit = popcov.ls_pair(vhat, popcov.apply_w(vhat), [vhat])
    assert fit.consistent and fit.gap < 1e-8

    try:
        popcov.Panel([])
    except ValueError:
        pass
    else:
        raise AssertionError("empty panel accepted")

    print("smoke test ok")


if __name__ == "__main__":
    main()
