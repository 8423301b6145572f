"""
Training the encoder on handwritten digits
==========================================

The harness reads MNIST-format IDX files.  Without a local copy of MNIST this
script writes scikit-learn's bundled 8x8 digits in that format, then runs the
five-class protocol: 30 training and 10 test images per class, each image cut
into four quadrant tokens and compressed to 16 features per token by PCA.

Run as ``python demos/train_digits.py [data_dir] [epochs]``.
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from pgket import data
from pgket.experiment import ExperimentConfig, noise_compare

data_dir = Path(sys.argv[1]) if len(sys.argv) > 1 and sys.argv[1] else None
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 60

if data_dir is None:
    from sklearn.datasets import load_digits

    data_dir = Path(tempfile.mkdtemp(prefix="digits_"))
    digits = load_digits()
    data.write_idx(data_dir / "train-images-idx3-ubyte", np.rint(digits.images * 255 / 16).astype(np.uint8))
    data.write_idx(data_dir / "train-labels-idx1-ubyte", digits.target.astype(np.uint8))
    print("wrote digits as IDX to", data_dir)

cfg = ExperimentConfig(data_dir=str(data_dir), epochs=epochs, seed=0)
out = Path(tempfile.mkdtemp(prefix="pgket_run_"))
result = noise_compare(cfg, out, sigma=0.4)

print(f"\n{'':12s}{'clean':>10s}{'noisy':>10s}{'delta':>10s}")
for row in result["rows"]:
    print(f"{row['metric']:12s}{row['clean']:10.4g}{row['noisy']:10.4g}{row['delta']:+10.4g}")
print("\nrun directories under", out)
