"""
Generating and reading a frame dataset
======================================

Build a small dataset on disk, look at its manifest and split layout, and
read records back both as batches and as arrays.
"""

import sys
from pathlib import Path

import numpy as np

from cfamc.dataset import DatasetConfig, generate_dataset, load_arrays, load_split, split_membership

root = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output") / "walkthrough_data"

config = DatasetConfig(schemes=("BPSK", "QPSK", "QAM16"), snr_grid_db=(0.0, 10.0, 20.0),
                       frames_per_pair=40, frame_len=256, split=(30, 5, 5))
manifest = generate_dataset(config, root)
print("records per split:", manifest.record_counts)
print("checksums:", manifest.checksums)

# Each (scheme, SNR) cell is split with its own seeded permutation, so the
# split of any frame can be recomputed without opening the files.
cell = split_membership(manifest, "QPSK", 10.0)
print("QPSK @ 10 dB test frames:", cell["test"].tolist())

# Batches of records keep the per-RU frames and the SNR plan.
first = next(load_split(manifest, "val", batch_size=4))
rec = first[0]
print(f"record {rec.record_id}: {rec.label.name} at {rec.egc_snr_db} dB, "
      f"per-RU SNR {np.round(rec.plan.per_ru_snr_linear, 2)}")

# Arrays are what the training code consumes: (records, RUs, samples).
test = load_arrays(manifest, "test", max_len=128)
print("test array:", test.x.shape, test.x.dtype, "labels", np.bincount(test.labels))
