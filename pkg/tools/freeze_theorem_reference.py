"""High-sample reference run for the frozen sphere gap in tests/test_theorem.py.

Unit sphere (icosphere level 5), one 120 degree camera at distance 2, empty
history, mu = 0.05, 1e7 volume samples.
"""
import time

from nbvkit.sensor import CameraPose, SensorIntrinsics
from nbvkit.shapes import make_analytic
from nbvkit.theorem import TheoremTrial, run_trial

t0 = time.time()
shape = make_analytic("sphere", resolution=5)
trial = TheoremTrial(shape, CameraPose.look_at([0, 0, -2], [0, 0, 0]), SensorIntrinsics.square(64, 120.0, 0.01, 100.0),
                     mus=(0.05,), n_volume=10_000_000, n_surface=4_000_000, replicates=8, seed=2024)
run_trial(trial)
r = trial.results[0]
print(f"G={trial.coverage_gain:.6f} integral={r.integral:.8f} gap={r.gap:.8f} sigma={r.sigma:.2e} "
      f"({time.time() - t0:.0f}s)")
