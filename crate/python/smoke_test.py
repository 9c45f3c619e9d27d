#!/usr/bin/env python3
"""Smoke test for the spdelab extension module.

Build and stage the module first:

    cargo build -p spde-lab-py --release
    cp target/release/libspdelab.so python/spdelab.so

then run `python3 python/smoke_test.py`.
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import spdelab


def approx(a, b, tol):
    assert abs(a - b) <= tol, f"{a} vs {b} (tol {tol})"


def main():
    grid = spdelab.Grid(64)
    assert grid.points_per_axis == 64
    approx(grid.cell_volume, 1.0 / 64.0, 1e-15)

    # Heat semigroup: mode-1 cosine decays at exp(-4 pi^2 t).
    xs = grid.coordinates()
    cos1 = [math.cos(2.0 * math.pi * x) for x in xs]
    out = spdelab.heat(grid, cos1, 0.1)
    factor = math.exp(-4.0 * math.pi ** 2 * 0.1)
    for o, c in zip(out, cos1):
        approx(o, c * factor, 1e-12)

    # Constant fields are heat invariant and reductions behave.
    const = spdelab.heat(grid, [2.5] * 64, 1.0)
    approx(min(const), 2.5, 1e-12)
    approx(spdelab.reduce(grid, cos1, "max"), 1.0, 1e-12)

    # Projective geometry: d_P(1, 1 + 0.5 sin) = log 3.
    sin_field = [1.0 + 0.5 * math.sin(2.0 * math.pi * x) for x in xs]
    d = spdelab.hilbert(grid, [1.0] * 64, sin_field)
    approx(d, math.log(3.0), 1e-10)
    pi = spdelab.project(grid, sin_field)
    approx(sum(pi) * grid.cell_volume, 1.0, 1e-12)

    # Kernels: constant kernel increments are spatially flat and reproducible.
    kernel = spdelab.Kernel.constant(grid, 1.0)
    inc1 = kernel.sample_increment(7, 0, 3, 0.01)
    inc2 = kernel.sample_increment(7, 0, 3, 0.01)
    assert inc1 == inc2, "same (seed, stream, step) cell must be bit-identical"
    assert max(inc1) - min(inc1) < 1e-12
    approx(kernel.q_functional(pi), 1.0, 1e-12)

    gk = spdelab.Kernel.gaussian_periodic(grid, 0.25)
    assert abs(gk.trace[0] - 1.0) < 1e-12
    assert gk.sup_norm >= 1.0 - 1e-12

    # Geometric Brownian motion reduction: lambda = gamma - variance/2.
    est = spdelab.lyapunov_exponent(
        kernel, gamma=1.0, dt=2e-3, horizon=10.0, burn_in=1.0, n_paths=24, seed=5
    )
    assert abs(est["lambda_sample"] - 0.5) <= 3.0 * est["se_sample"], est
    assert abs(est["lambda_fk"] - 0.5) <= 3.0 * max(est["se_fk"], 1e-12), est

    # Nonlinear flow: zero is a fixed point; small data stays positive.
    times, mins, blown = spdelab.nonlinear_min_u(
        gk, [1e-3] * 64, "shifted-allen-cahn", 1e-3, 0.5, seed=3, alpha=1.2
    )
    assert not blown
    assert mins[0] == 1e-3 and all(m >= 0.0 for m in mins)

    # Experiment runner end to end.
    names = [n for n, _ in spdelab.list_experiments()]
    assert "lyapunov" in names and "moments" in names
    assert "paths.csv" in spdelab.schema("lyapunov")
    config = """
experiment = "lyapunov"
seed = 3

[grid]
points_per_axis = 16

[kernel]
kind = "constant"
variance = 1.0

[nonlinearity]
preset = "linear"
gamma = 1.0

[time]
dt = 2e-3
horizon = 5.0
burn_in = 1.0
record_dt = 0.05

[ensemble]
n_paths = 6
"""
    with tempfile.TemporaryDirectory() as tmp:
        manifest = spdelab.run_experiment(config, tmp, verify=True)
        assert manifest["all_pass"], manifest["verdicts"]
        assert os.path.exists(os.path.join(tmp, "paths.csv"))

    print("spdelab smoke test: all checks passed")


if __name__ == "__main__":
    main()
