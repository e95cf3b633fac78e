"""Run the verification service over TCP and ask which beams are safe right now."""

import threading

from omc_beamsched import MotionModel1D
from omc_beamsched.beams import BeamSpec
from omc_beamsched.datagen import TraceSpec, gen_motion_trace
from omc_beamsched.pipeline import OmcPipeline
from omc_beamsched.protocol import BeamServer, TcpBeamClient, encode_request, BeamRequest
from omc_beamsched.service import BeamService, ServiceConfig

axes = [MotionModel1D(5088.0, 0.0, -3.65, [-0.6, 0.1, 0, 0], [2.6, 0.2, 0, 0]),
        MotionModel1D(3500.0, 0.0, 1.0, [0.3, 0, 0, 0], [1.2, 0, 0, 0]),
        MotionModel1D(3500.0, 0.0, 0.0, [0.1, 0, 0, 0], [0.4, 0, 0, 0])]
trace = gen_motion_trace(TraceSpec(axes, 60000.0))
service = BeamService(OmcPipeline(trace), ServiceConfig(deadline=3000.0))

beams = [
    BeamSpec("10001", 12000, ((-8, 0), (-2, 4), (-1, 1))),    # wide enough
    BeamSpec("10002", 8000, ((-4, -3), (-2, 4), (-1, 1))),    # x window too narrow
    BeamSpec("10003", 20000, ((-8, 0), (-2, 4), (-1, 1)), started=True),
]
print(encode_request(BeamRequest(4, tuple(beams))))

with BeamServer(("127.0.0.1", 0), service) as server:
    threading.Thread(target=server.handle_request, daemon=True).start()
    with TcpBeamClient(*server.server_address) as client:
        resp = client.request(4, beams)
print("slot", resp.slot_index, resp.status)
for row in resp.rows:
    print(row.beam_id, "p =", row.probs, "deliverable" if row.deliverable else "hold")
