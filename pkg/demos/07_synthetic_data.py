"""Synthetic traces and beam lists for experiments."""

import numpy as np

from omc_beamsched import MotionModel1D
from omc_beamsched.beams import BeamSpec
from omc_beamsched.datagen import ChangeEvent, TraceSpec, gen_beam_list, gen_motion_trace

patient = MotionModel1D(4000.0, 0.0, 0.0, [0.5, 0.2, 0, 0], [3.0, 0.1, 0, 0])
spec = TraceSpec([patient], 90000.0, noise=[0.1], events=[
    ChangeEvent("period", 20000.0, 1.5),          # breathing slows
    ChangeEvent("amplitude", 50000.0, 0.5),       # and gets shallower
    ChangeEvent("baseline", 70000.0, 4.0, fade=0),
])
trace = gen_motion_trace(spec, seed=11)
for t0 in (0, 30000, 60000, 80000):
    w = trace.window(t0 + 8000, 8000)
    print("t=%5d  range %.2f mm  mean %.2f mm" % (t0, np.ptp(w.positions), w.positions.mean()))

# resampling keeps each column's range but shuffles the combinations
template = [BeamSpec.symmetric(str(10000 + i), d, th) for i, (d, th) in
            enumerate([(3000, 2.5), (9000, 4.0), (15000, 6.5), (21000, 9.0), (30000, 12.0)])]
for b in gen_beam_list(template, 8, seed=2):
    print(b.id, b.remaining_time, b.threshold)
