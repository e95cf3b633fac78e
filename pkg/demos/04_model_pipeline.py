"""Per-slot fitting and validation on a trace with a sudden baseline shift."""

from omc_beamsched import MotionModel1D
from omc_beamsched.datagen import ChangeEvent, TraceSpec, gen_motion_trace
from omc_beamsched.pipeline import OmcPipeline

patient = MotionModel1D(4000.0, 0.0, 0.0, [0.5, 0.2, 0, 0], [3.0, 0.1, 0, 0])
trace = gen_motion_trace(TraceSpec([patient], 120000.0, noise=[0.05],
                                   events=[ChangeEvent("baseline", 60000.0, 12.0, fade=0)]), seed=3)

# every 3 s a model is fitted to the recent past and checked against what happened 1 s later
for ms in OmcPipeline(trace).run_all():
    m = ms.models[0]
    print("slot %2d  t=%6.0f  tier %d  p=%.2f  %s  base %.2f" % (
        ms.slot_index, ms.created_at, ms.tiers[0], ms.validity_probs[0],
        "valid  " if ms.valid else "INVALID", m.base))
