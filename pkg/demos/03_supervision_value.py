# Does a map make a useful supervision signal? Train the small multi-task
# evaluation model with different maps as dense targets and compare held-out
# accuracy. Ground-truth masks are the upper anchor and all-zero maps the
# no-localization baseline.
#
# Expects a dataset directory and a trained checkpoint, for example from
#   focusmap synth --out data --count 2000
#   focusmap train --data data --out focus.bin

import sys

from focusmap.dataset import load_dataset
from focusmap.evalharness import EvalConfig, format_table, train_eval_model
from focusmap.trainer import Checkpoint, baseline_maps, generate_maps

data_dir = sys.argv[1] if len(sys.argv) > 1 else "data"
checkpoint = sys.argv[2] if len(sys.argv) > 2 else "focus.bin"
data = load_dataset(data_dir)


def as_maps(records):
    return {r.id: (r.values, {"generator": r.generator}) for r in records}


sources = {
    "focus": as_maps(generate_maps(Checkpoint.load(checkpoint), data)),
    "pixdiff@0.1": as_maps(baseline_maps(data, "pixdiff@0.1")),
    "ssim": as_maps(baseline_maps(data, "ssim")),
    "gt": as_maps(baseline_maps(data, "gt")),
    "zero": as_maps(baseline_maps(data, "zero")),
}

reports = []
for seed in (0, 1, 2):
    for name, maps in sources.items():
        reports.append(train_eval_model(maps, data, EvalConfig(seed=seed), source=name))
print(format_table(reports))
