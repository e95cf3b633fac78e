"""Recover a model from sampled positions."""

import numpy as np

from omc_beamsched import MotionModel1D, simulate
from omc_beamsched.fitting import SampleWindow, estimate_period, fit_window, predict

truth = MotionModel1D(4200.0, 2e-5, -1.2, [1.1, -0.3, 0.05, 0.0], [2.4, 0.2, -0.1, 0.03])
traj = simulate(truth, horizon=20000.0)
window = SampleWindow(traj.times, traj.positions)

# the period guess comes from the autocorrelation, then gets refined by least squares
print("period guess: %.1f ms" % estimate_period(window))
result = fit_window(window, origin=0.0)
print("fitted period: %.6f ms, residual rms %.2e mm" % (result.model.period, result.residual_rms))
print("a:", np.round(result.model.a, 6))
print("b:", np.round(result.model.b, 6))

# sensor noise costs some accuracy but the shape survives
rng = np.random.default_rng(1)
noisy = SampleWindow(traj.times, traj.positions + rng.normal(0, 0.2, len(traj)))
rough = fit_window(noisy, origin=traj.times[-1]).model
ahead = traj.times[-1] + np.arange(0, 3000, 38.0)
err = predict(rough, ahead - traj.times[-1]) - predict(truth, ahead)
print("noisy fit: period %.1f ms, worst 3 s prediction error %.3f mm" % (rough.period, abs(err).max()))
