"""How likely is a model to stay inside a beam's bounds over the next slot?"""

from omc_beamsched import MotionModel1D
from omc_beamsched.smc import InvariantQuery, ReachBoxQuery, SmcConfig, chernoff_runs, check_invariant, check_reach_box

model = MotionModel1D(4000.0, 0.0, 0.5, [0.5, 0.2, 0, 0], [3.0, 0.1, 0, 0])

# error 0.05 with confidence 0.95 needs this many runs
print("runs:", chernoff_runs(0.05, 0.05))

# a perfect model gives a plain yes or no
for threshold in (3.0, 4.0):
    est = check_invariant(model, None, InvariantQuery(3000.0, -threshold, threshold))
    print("accuracy 100, +-%.0f mm: p = %.3f" % (threshold, est.p_hat))

# a less trusted model gives a probability
shaky = model.with_accuracy(80.0)
for threshold in (3.5, 4.0, 5.0):
    est = check_invariant(shaky, None, InvariantQuery(3000.0, -threshold, threshold), seed=0)
    print("accuracy 80,  +-%.1f mm: p = %.3f (%d runs)" % (threshold, est.p_hat, est.runs_used))

# validation asks whether the model passes near a later observation
q = ReachBoxQuery.around_observation(created_at=0.0, t_obs=1000.0, x_obs=float(model.evaluate(1000.0)))
print("reach-box p =", check_reach_box(shaky, None, q, SmcConfig(), seed=0).p_hat)
