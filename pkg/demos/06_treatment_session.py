"""Static beam order versus motion-aware scheduling on the same patient."""

from omc_beamsched import MotionModel1D
from omc_beamsched.beams import BeamSpec
from omc_beamsched.datagen import ChangeEvent, TraceSpec, gen_motion_trace
from omc_beamsched.pipeline import OmcPipeline
from omc_beamsched.protocol import LocalBeamClient
from omc_beamsched.service import BeamService, ServiceConfig
from omc_beamsched.treatment import TreatmentPlan, percent_reduction, run_omc, run_static

# the patient sits 10 mm off target until 80 s into the recording
patient = MotionModel1D(4000.0, 0.0, 10.0, [0.5, 0.2, 0, 0], [3.0, 0.1, 0, 0])
trace = gen_motion_trace(TraceSpec([patient], 200000.0, events=[ChangeEvent("baseline", 80000.0, -10.0, fade=0)]))

# one tight beam first, then two tolerant ones
plan = TreatmentPlan([BeamSpec.symmetric("A", 20000, 5.0),
                      BeamSpec.symmetric("B", 30000, 20.0),
                      BeamSpec.symmetric("C", 30000, 20.0)])

static = run_static(plan, trace)
print(static.summary())

client = LocalBeamClient(BeamService(OmcPipeline(trace), ServiceConfig(deadline=None, workers=1)))
dynamic = run_omc(plan, trace, client)
print(dynamic.summary())

print("idle time cut by %.1f%%" % percent_reduction(static.idle_time, dynamic.idle_time))
print(dynamic.to_csv())
