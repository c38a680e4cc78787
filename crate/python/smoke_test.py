#!/usr/bin/env python3
"""Smoke test for the gensde_py extension module.

Builds nothing itself: run `cargo build -p gensde-py --release` first, then
`python3 python/smoke_test.py`. The module is loaded straight from the cargo
target directory.
"""

import json
import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_module():
    for profile in ("release", "debug"):
        so = ROOT / "target" / profile / "libgensde_py.so"
        if so.exists():
            staging = pathlib.Path(tempfile.mkdtemp(prefix="gensde_py_"))
            shutil.copy(so, staging / "gensde_py.so")
            sys.path.insert(0, str(staging))
            import gensde_py

            return gensde_py
    sys.exit("build the extension first: cargo build -p gensde-py --release")


def main():
    g = load_module()

    names = g.preset_names()
    assert "1d-brownian" in names and "flock-1d" in names, names
    assert "s2-bandwidth" in g.sweep_names()
    print(f"presets: {len(names)} registered")

    # Gaussian limit of the stable sampler: alpha = 2 has variance 2.
    draws = g.sample_alpha_stable(2.0, 50_000, seed=1)
    var = sum(x * x for x in draws) / len(draws)
    assert abs(var - 2.0) < 0.05, var
    print(f"alpha-stable sampler: var at alpha=2 is {var:.3f} (want 2)")

    # Pure Brownian motion: Var X_t = t for sigma = 1, zero drift.
    times, snaps = g.simulate_sde(
        coeffs=[[0.0, 0.0, 0.0, 0.0]],
        sigma=[[1.0]],
        times=[1.0],
        n_paths=20_000,
        dt=0.01,
        seed=7,
        init_std=1e-12,
    )
    xs = [row[0] for row in snaps[0]]
    var = sum(x * x for x in xs) / len(xs)
    assert abs(var - 1.0) < 0.05, var
    print(f"simulate_sde: Brownian variance at t=1 is {var:.3f} (want 1)")

    # Determinism and the metric axioms of the sliced distance.
    a = [[float(i) / 50.0] for i in range(100)]
    b = [[float(i) / 50.0 + 0.5] for i in range(100)]
    zero = g.sliced_w2_sq(a, a, n_projections=1, seed=3)
    shift = g.sliced_w2_sq(a, b, n_projections=1, seed=3)
    again = g.sliced_w2_sq(a, b, n_projections=1, seed=3)
    assert zero == 0.0 and shift == again and abs(shift - 0.25) < 1e-12
    print(f"sliced_w2_sq: translation by 0.5 gives {shift:.4f} (want 0.25)")

    # KDE integrates to ~1; ISE of a density against itself is 0.
    grid = [i * 0.02 - 5.0 for i in range(501)]
    dens = g.kde_density(xs[:2000], grid)
    mass = sum(0.02 * (dens[i] + dens[i + 1]) / 2 for i in range(len(grid) - 1))
    assert abs(mass - 1.0) < 1e-2, mass
    assert g.ise(dens, dens, grid) == 0.0
    assert g.relative_l2_error([1.0, 0.0], [2.0, 0.0]) == 0.5
    print(f"kde_density: total mass {mass:.4f}")

    # Flocking: total momentum is conserved by the integrator.
    _, _, vels = g.simulate_flocking(
        dim=1, n_particles=64, alpha=0.5, times=[0.0, 2.0], dt=0.01, seed=11
    )
    p0 = sum(v[0] for v in vels[0])
    p1 = sum(v[0] for v in vels[1])
    assert abs(p1 - p0) < 1e-10, (p0, p1)
    print(f"simulate_flocking: momentum drift {abs(p1 - p0):.2e}")

    # Preset data stage, then a token end-to-end training run.
    times, snaps = g.preset_dataset("ou-paired", seed=0)
    assert len(times) == len(snaps) and all(len(s) == 100 for s in snaps)
    summary = json.loads(g.run_preset("ou-paired", seed=0, steps=3))
    assert "slope" in summary and math.isfinite(summary["slope"])
    print(f"run_preset(ou-paired, 3 steps): slope {summary['slope']:.3f}")

    print("smoke test passed")


if __name__ == "__main__":
    main()
