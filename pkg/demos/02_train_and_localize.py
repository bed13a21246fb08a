# Train the two-branch map generator on synthetic pairs and compare its maps
# with the ground truth and with the thresholded pixel difference.
#
# Runs the desk configuration (about two minutes per 1,500 iterations on one
# CPU core). Pass a smaller iteration count as the first argument for a quick
# look, e.g. `python demos/02_train_and_localize.py 300`.

import sys
import tempfile
import time

import numpy as np

from focusmap.dataset import load_dataset, write_synthetic_dataset
from focusmap.evalharness import map_metrics
from focusmap.imaging import SyntheticSpec, pixel_diff_map, resize_bilinear
from focusmap.trainer import TrainConfig, generate_maps, train

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 1500
workdir = tempfile.mkdtemp(prefix="focusmap_demo_")
write_synthetic_dataset(workdir, SyntheticSpec(seed=0), 2000)
data = load_dataset(workdir)
print(f"{len(data)} samples in {workdir}")

config = TrainConfig(iterations=iterations)
print("config:", config.to_dict())


def progress(r):
    if r["step"] % 250 == 0:
        print(f"  step {r['step']:5d}  lr {r['lr']:.2e}  loc {r['loss_loc']:.3f}"
              f"  fus {r['loss_fus']:.3f}  total {r['total']:.3f}")


started = time.time()
result = train(config, data, on_step=progress)
print(f"trained in {time.time() - started:.0f}s")

records = generate_maps(result.checkpoint, data)
fakes = np.flatnonzero(data.labels == 1)
focus = [map_metrics(records[i].values, data.masks[i], 0.5) for i in fakes]
pixdiff = [map_metrics(pixel_diff_map(data.references[i], data.images[i]), data.masks[i], 0.1) for i in fakes]
for name, ms in [("focus @0.5", focus), ("pixel diff @0.1", pixdiff)]:
    print(f"{name:>16}: iou {np.mean([m.iou for m in ms]):.3f}  precision {np.mean([m.precision for m in ms]):.3f}")

# one map next to its mask, upsampled to image resolution
i = fakes[0]
upsampled = resize_bilinear(records[i].values, 32, 32) >= 0.5
print(f"\n{data.ids[i]}: map (left) and mask (right)")
for a, b in zip(upsampled, data.masks[i]):
    print("  " + "".join("#" if v else "." for v in a) + "   " + "".join("#" if v else "." for v in b))

# fake-only maps: the fake-class evidence alone, without normalization
raw = generate_maps(result.checkpoint, data, fake_only=True)
for label, name in [(0, "real"), (1, "fake")]:
    print(f"fake-only mean activation on {name} samples: {np.mean([r.values.mean() for r in raw if r.label == label]):.4f}")
