"""
Four classifiers, three balancing modes
=======================================

Run the 12-cell grid on one synthetic sample and print the comparison
table: default and optimised thresholds, macro F1 and macro AUCs.
"""

from conflictlens import pipeline, synth

events = synth.generate_dataset(synth.GeneratorConfig(seed=11), 1470)
cells = pipeline.run_grid(events, pipeline.RunConfig(seed=11))
print(pipeline.comparison_text([pipeline.comparison_row(c) for c in cells]))

# The optimised threshold never loses to 0.5 on the evaluated rows
for c in cells:
    if c.status == "ok":
        default, best = c.summary["thresholds"]
        print(f"{c.family:5s} {c.balance:7s} t*={best['threshold']:.2f}  "
              f"gain {best['macro_f1'] - default['macro_f1']:+.3f}")
