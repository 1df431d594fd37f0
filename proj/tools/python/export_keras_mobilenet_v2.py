"""Export Keras MobileNetV2 (no top) weights to a BUSITNS1 archive.

Tensors are named "<layer>/<variable>" (e.g. "block_3_depthwise/depthwise_kernel",
"bn_Conv1/moving_variance"), which the C++ loader folds on import.

  python3 export_keras_mobilenet_v2.py --out mobilenet_v2_notop.bin
  python3 export_keras_mobilenet_v2.py --weights local_notop.h5 --out mobilenet_v2_notop.bin
"""

import argparse
import hashlib
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
from busi_tensors import write_archive  # noqa: E402


def keras_tensors(model):
    out = {}
    for layer in model.layers:
        for var in layer.weights:
            short = var.name.split("/")[-1].split(":")[0]
            out[f"{layer.name}/{short}"] = var.numpy()
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--weights", default="imagenet",
                    help="'imagenet' (downloads via Keras) or a local no-top .h5 file")
    ap.add_argument("--size", type=int, default=150)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    import keras

    model = keras.applications.MobileNetV2(
        input_shape=(args.size, args.size, 3), include_top=False, weights=args.weights)
    tensors = keras_tensors(model)
    write_archive(args.out, tensors)
    with open(args.out, "rb") as f:
        digest = hashlib.sha256(f.read()).hexdigest()
    print(f"tensors={len(tensors)} params={model.count_params()} sha256={digest}")


if __name__ == "__main__":
    main()
