"""Build the small MNIST subset used by the desk-scale experiment.

The source is the 5,000-image MNIST sample bundled with the `mlxtend` wheel
(BSD-3 package; MNIST itself from yann.lecun.com/exdb/mnist). A fixed
permutation (seed 20211) selects 2,000 training and 1,000 test images, written
as gzip-compressed IDX files.

    python3 scripts/make_mnist_subset.py [out_dir]
"""

import gzip
import io
import os
import struct
import subprocess
import sys
import tempfile
import zipfile

import numpy as np

TRAIN, TEST, SEED = 2000, 1000, 20211


def load_mlxtend_csv():
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.check_call(
            [sys.executable, "-m", "pip", "download", "mlxtend==0.24.0", "--no-deps", "-q", "-d", tmp]
        )
        wheel = next(f for f in os.listdir(tmp) if f.endswith(".whl"))
        with zipfile.ZipFile(os.path.join(tmp, wheel)) as z:
            raw = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz"))
    data = np.loadtxt(io.BytesIO(raw), delimiter=",")
    return data[:, :-1].astype(np.uint8), data[:, -1].astype(np.uint8)


def write_idx(path, images, labels_path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        f.write(images.tobytes())
    with gzip.GzipFile(labels_path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(labels.tobytes())


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else os.path.join("data", "mnist-subset")
    os.makedirs(out, exist_ok=True)
    x, y = load_mlxtend_csv()
    perm = np.random.RandomState(SEED).permutation(len(y))
    tr, te = perm[:TRAIN], perm[TRAIN:TRAIN + TEST]
    write_idx(os.path.join(out, "train-images-idx3-ubyte.gz"), x[tr],
              os.path.join(out, "train-labels-idx1-ubyte.gz"), y[tr])
    write_idx(os.path.join(out, "t10k-images-idx3-ubyte.gz"), x[te],
              os.path.join(out, "t10k-labels-idx1-ubyte.gz"), y[te])
    print("train", np.bincount(y[tr], minlength=10), "test", np.bincount(y[te], minlength=10))


if __name__ == "__main__":
    main()
