#!/usr/bin/env python3
"""Write the first three VGG16 stages as a CVTA archive for the pretrained extractor.

Usage: convert_vgg16.py OUT.cvt [--state-dict vgg16.pth]

Without --state-dict the ImageNet weights are fetched through torchvision.
"""
import argparse
import json
import struct

import numpy as np

# torchvision features.<index> -> extractor conv name
LAYERS = {
    0: "conv1_1", 2: "conv1_2",
    5: "conv2_1", 7: "conv2_2",
    10: "conv3_1", 12: "conv3_2", 14: "conv3_3",
}


def load_state_dict(path):
    import torch
    if path:
        return torch.load(path, map_location="cpu")
    from torchvision.models import vgg16, VGG16_Weights
    return vgg16(weights=VGG16_Weights.IMAGENET1K_V1).state_dict()


def write_cvta(path, arrays, meta):
    tensors, offset = [], 0
    for name, a in arrays:
        tensors.append({"name": name, "shape": list(a.shape), "offset": offset, "count": int(a.size)})
        offset += a.size
    header = json.dumps({"meta": meta, "tensors": tensors}).encode()
    with open(path, "wb") as f:
        f.write(b"CVTA")
        f.write(struct.pack("<IQ", 1, len(header)))
        f.write(header)
        for _, a in arrays:
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out")
    ap.add_argument("--state-dict")
    args = ap.parse_args()
    sd = load_state_dict(args.state_dict)
    arrays = []
    for index, name in LAYERS.items():
        arrays.append((name + ".weight", sd[f"features.{index}.weight"].double().numpy()))
        arrays.append((name + ".bias", sd[f"features.{index}.bias"].double().numpy()))
    write_cvta(args.out, arrays, {"source": "torchvision vgg16 IMAGENET1K_V1"})


if __name__ == "__main__":
    main()
