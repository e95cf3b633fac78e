"""Breathing motion as a four-harmonic Fourier model, with and without perturbation."""

import numpy as np

from omc_beamsched import MotionModel1D, evaluate, simulate
from omc_beamsched.formats import parse_declarations, write_declarations

# a model is a handful of numbers: period (ms), drift, base and 4 cos/sin coefficients
text = """\
const double accuracy = 100.0;

const double period = 3469.0;
const double drift = 0.0;

double base = 2.5019;
double a[4] = { -0.1959, 0.0295, -0.0022, -0.0169 };
double b[4] = { -0.4023, 0.0294, 0.033, 0.013 };
"""
model = parse_declarations(text)
print(model)

# position at the moment of creation is base plus every cosine coefficient
print("x(0)     =", evaluate(model, 0.0))
print("x(1.5 s) =", evaluate(model, 1500.0))

# the deterministic trajectory over one slot, on the 38 ms step grid
steps = simulate(model, horizon=3000.0)
print("steps per slot:", len(steps), " range: %.3f .. %.3f mm" % (steps.positions.min(), steps.positions.max()))

# lower accuracy lets the coefficients wander at random times
noisy = model.with_accuracy(85.0)
runs = np.array([simulate(noisy, horizon=3000.0, seed=s).positions for s in range(200)])
print("accuracy 85: spread at 3 s = %.3f mm (sd over 200 runs)" % runs[:, -1].std())

# and back to declarations, ready for a model checker
print(write_declarations(model))
