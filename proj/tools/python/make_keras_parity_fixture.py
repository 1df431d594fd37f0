"""Write Keras MobileNetV2 references for the C++ backbone parity test.

Each network is randomly initialized (no download), its BatchNorm statistics
are perturbed so folding is exercised, and one random input is pushed through
in inference mode. Each archive holds the Keras-named weights plus
"parity/input" (1,H,W,3) and "parity/output" (1,h,w,1280).

Exits 0 without writing anything when TensorFlow/Keras is not installed; the
parity test then skips.
"""

import argparse
import os
import sys

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
from busi_tensors import write_archive  # noqa: E402
from export_keras_mobilenet_v2 import keras_tensors  # noqa: E402


def make_fixture(keras, size, seed, path):
    keras.utils.set_random_seed(seed)
    rng = np.random.default_rng(seed)
    model = keras.applications.MobileNetV2(
        input_shape=(size, size, 3), include_top=False, weights=None)
    for layer in model.layers:
        if isinstance(layer, keras.layers.BatchNormalization):
            n = layer.gamma.shape[0]
            layer.gamma.assign(rng.uniform(0.5, 1.5, n).astype("float32"))
            layer.beta.assign(rng.normal(0.0, 0.1, n).astype("float32"))
            layer.moving_mean.assign(rng.normal(0.0, 0.1, n).astype("float32"))
            layer.moving_variance.assign(rng.uniform(0.5, 2.0, n).astype("float32"))

    x = rng.uniform(0.0, 1.0, (1, size, size, 3)).astype("float32")
    y = model(x, training=False).numpy()
    tensors = keras_tensors(model)
    tensors["parity/input"] = x
    tensors["parity/output"] = y
    write_archive(path, tensors)
    print(f"wrote {path} output_shape={y.shape}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", type=int, nargs="+", default=[64])
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out-dir", required=True)
    args = ap.parse_args()

    os.environ.setdefault("TF_CPP_MIN_LOG_LEVEL", "3")
    try:
        import keras
    except ImportError:
        print("keras not installed; parity fixture skipped")
        return
    os.makedirs(args.out_dir, exist_ok=True)
    for size in args.sizes:
        make_fixture(keras, size, args.seed + size, os.path.join(args.out_dir, f"parity_{size}.bin"))


if __name__ == "__main__":
    main()
