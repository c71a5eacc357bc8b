"""Smoke test for the moran_moments extension module.

Build and install first, e.g.
    maturin build -m crates/py/Cargo.toml --release -o dist && pip install dist/*.whl
"""

import math

import moran_moments as mm


def close(a, b, rel=1e-6):
    return abs(a - b) <= rel * max(1.0, abs(b))


def main():
    p = mm.ModelParams([2, 2, 2], 4).with_rho([1], 0.5).with_rho([3], 0.25)
    assert p.n_sites == 3 and p.pop_size == 4
    assert p.rho([2, 3]) == 0.5

    initial = [([0, 0, 0], 2), ([1, 1, 1], 1), ([0, 1, 1], 1)]
    ref = [0, 0, 0]
    grid = [0.0, 0.5, 1.0]

    sys = mm.MomentSystem(p, ref)
    index = sys.index()
    assert len(sys) == len(index) and "{1,2,3}" in index
    hier = sys.solve(p, initial, grid)
    exact = mm.oracle_moments(p, initial, ref, index, grid)
    for h_row, e_row in zip(hier, exact):
        for h, e in zip(h_row, e_row):
            assert close(h, e), (h, e)

    try:
        mm.MomentSystem(p.with_resampling(1.0), ref)
    except ValueError as e:
        assert "closure" in str(e)
    else:
        raise AssertionError("resampling should be refused")

    try:
        mm.ModelParams([2, 2], 4).with_rho([1, 2], 1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("rho on the full set should be refused")

    path = mm.simulate_marginals(p, initial, ref, [[1], [1, 2, 3]], grid, 7)
    assert path[0] == [3, 2]
    assert mm.simulate_marginals(p, initial, ref, [[1]], grid, 7)[-1][0] == 3

    q = mm.ModelParams([2, 2], 10).with_rho([1], 1.0).with_resampling(1.0)
    two = [([0, 0], 5), ([1, 1], 5)]
    j0, p0, ld0 = mm.two_site_ld(q, two, [0, 0], 0.0)
    assert (j0, p0, ld0) == (5.0, 25.0, 25.0)
    _, _, ld1 = mm.two_site_ld(q, two, [0, 0], 2.0)
    assert close(ld1, 25.0 * math.exp(-(1.0 + 0.1) * 2.0))

    flow = mm.deterministic_path(p, initial, [0.0, 5.0])
    assert close(sum(flow[-1]), 1.0)

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
