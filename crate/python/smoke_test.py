"""Smoke test for the deteq_py extension module.

Build and install first:  pip install --no-build-isolation ./crates/py
"""

import math

import deteq_py as dq


def main():
    # Marchenko-Pastur: gamma = 1, z = 1 gives delta' = (sqrt 5 - 1) / 2.
    mp = dq.Mixture.identity(100, 100)
    sol = mp.solve_delta(1.0)
    assert sol.converged, sol
    assert abs(sol.delta[0] - (math.sqrt(5) - 1) / 2) < 1e-10, sol
    assert abs(mp.stieltjes(1.0) - sol.delta[0]) < 1e-10

    density, atom = mp.density([2.0], 1e-4)
    assert abs(density[0] - 1 / (2 * math.pi)) < 2e-3, density
    assert atom == 0.0

    two = dq.Mixture.toeplitz(0.1, 50, [1, 2], [5, 45], 10.0)
    assert (two.k, two.p, two.n) == (2, 50, 50)
    assert 0 < two.stieltjes(1.0) <= 1.0

    x = dq.sample_gaussian(20, 40, 7)
    assert x == dq.sample_gaussian(20, 40, 7)
    ev = dq.spectrum(x)
    frob = sum(v * v for row in x for v in row) / 40
    assert abs(sum(ev) - frob) < 1e-8 * frob

    assert dq.majorizes([2.0, 0.0], [1.0, 1.0])
    assert not dq.majorizes([1.0, 1.0], [2.0, 0.0])
    sv = dq.singular_values([[3.0, 0.0], [0.0, -4.0]])
    assert [round(s, 12) for s in sv] == [4.0, 3.0]

    grid = [0.02 * i for i in range(1, 400)]
    assert abs(dq.norm_degree("spectral:3x5") - 8.0) < 1e-15
    try:
        dq.Mixture([[[1.0, 0.0], [0.0, 1.0]]], [2], 3)
    except ValueError:
        pass
    else:
        raise AssertionError("count mismatch accepted")

    samples = [abs(math.sin(i * 0.7)) * 3 for i in range(200)]
    q, sigma, c, r2 = dq.fit_tail(samples, grid[:50])
    assert q > 0 and sigma > 0 and c >= 1

    print("deteq_py smoke test passed")


if __name__ == "__main__":
    main()
