"""Collects the natural RGB test images bundled with scikit-image,
scikit-learn and matplotlib into train/val/test PNG directories.

Usage: python3 scripts/desk_corpus.py OUT_DIR
"""

import os
import sys

import matplotlib
import skimage
import sklearn
from PIL import Image

SK = os.path.join(os.path.dirname(skimage.__file__), "data")
SL = os.path.join(os.path.dirname(sklearn.__file__), "datasets", "images")
MPL = os.path.join(os.path.dirname(matplotlib.__file__), "mpl-data", "sample_data")

SPLITS = {
    "train": [
        (SK, "astronaut.png"),
        (SK, "coffee.png"),
        (SK, "motorcycle_left.png"),
        (SK, "motorcycle_right.png"),
        (SK, "rocket.jpg"),
        (SK, "hubble_deep_field.jpg"),
        (SK, "ihc.png"),
        (SK, "retina.jpg"),
        (SL, "china.jpg"),
    ],
    "val": [(MPL, "grace_hopper.jpg")],
    "test": [(SK, "chelsea.png"), (SL, "flower.jpg")],
}


def main(out):
    for split, items in SPLITS.items():
        d = os.path.join(out, split)
        os.makedirs(d, exist_ok=True)
        for root, name in items:
            img = Image.open(os.path.join(root, name)).convert("RGB")
            stem = os.path.splitext(name)[0]
            img.save(os.path.join(d, stem + ".png"))
            print(f"{split}/{stem}.png {img.size[0]}x{img.size[1]}")


if __name__ == "__main__":
    main(sys.argv[1])
