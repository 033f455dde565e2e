"""
Recovering the logistic ground truth
====================================

Draw a large synthetic corpus, fit the logistic model and compare the
estimates with the coefficients that generated the labels.
"""

import numpy as np

from conflictlens import logit, pipeline, synth
from conflictlens.events import one_hot_encode

config = synth.GeneratorConfig(seed=0)
events = synth.generate_dataset(config, 50_000)
print("conflict share:", np.mean([e.label for e in events]))

# Baseline-dropped layout, as used for every logistic fit
data = pipeline.drop_constant_columns(one_hot_encode(events, drop_baseline=True))
fit = logit.fit_logistic(data)
print(logit.report_text(fit))

# Nonzero terms: distance from the truth in standard errors
truth = {"intercept": synth.generator_intercept(config), **config.ground_truth.coefficients}
for row in logit.term_rows(fit):
    if row.term in truth:
        z = (row.coefficient - truth[row.term]) / row.std_error
        print(f"{row.term:28s} true {truth[row.term]:+.3f}  fit {row.coefficient:+.3f}  z {z:+.2f}")
