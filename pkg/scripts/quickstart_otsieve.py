import numpy as np

from otsieve import dgp_simulation, estimators

# draw 800 matched pairs from the Gaussian design with measurement errors
cfg = dgp_simulation.DgpConfig(family="gaussian", n=800, seed=1)
sample, equilibrium = dgp_simulation.simulate(cfg)

# fit the sieve GLS estimator with a degree (3, 3) Bernstein wage sieve
opts = estimators.EstimatorOptions(degrees=(3, 3))
report = estimators.sgls_fit(sample, options=opts)

# sandwich standard errors
report = estimators.attach_variance(report, sample)

for name, truth, est in zip(
    dgp_simulation.PARAMETERS, cfg.truth, report.estimates
):
    se = report.se[name] if report.se else np.nan
    print("%-9s truth %7.3f estimate %7.3f se %6.3f" % (name, truth, est, se))
