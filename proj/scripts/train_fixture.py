#!/usr/bin/env python3
"""Train and export the bundled 16x16 square-detector test fixture.

Class 0: uniform noise in [0, 128). Class 1: the same noise plus a 4x4 square
of bright pixels in [192, 256) at a random position. The network is trained on
x / 255 - 0.5; the 1/255 factor is folded into conv1 and the 0.5 shift becomes
`input_mean` = 127.5, so the engine sees raw pixel - 127.5 and zero padding
means the same thing in both parameterisations.

Outputs (under tests/fixtures/tiny/):
  arch.json, weights.fbiw, meta.json, images/*.pgm, heldout/*.pgm

The committed outputs are what the tests use; rerunning regenerates them
bit-for-bit on the same torch build.
"""

import argparse
import json
import pathlib
import struct

import numpy as np
import torch
from torch import nn

SIZE = 16
SQUARE = 4
# Activation products of this model are ~100x smaller than those of VGG-16 on
# mean-subtracted 0..255 pixels (activations ~O(1) here vs ~O(10) there), so
# the VGG-calibrated tau of 10 is scaled by this constant for the fixture.
ACTIVATION_SCALE = 0.01
TAU_DEFAULT = 10.0


def make_image(rng, with_square):
    img = rng.integers(0, 128, size=(SIZE, SIZE), dtype=np.int64)
    box = None
    if with_square:
        y, x = rng.integers(0, SIZE - SQUARE + 1, size=2)
        img[y:y + SQUARE, x:x + SQUARE] = rng.integers(192, 256, size=(SQUARE, SQUARE))
        box = [int(y), int(x), SQUARE, SQUARE]
    return img.astype(np.uint8), box


def make_dataset(rng, n):
    images, labels = [], []
    for i in range(n):
        label = i % 2
        img, _ = make_image(rng, label == 1)
        images.append(img)
        labels.append(label)
    x = torch.tensor(np.stack(images), dtype=torch.float32).unsqueeze(1) / 255.0 - 0.5
    return x, torch.tensor(labels)


class Net(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 8, 3, padding=1)
        self.conv2 = nn.Conv2d(8, 8, 3, padding=1)
        self.fc1 = nn.Linear(8 * 4 * 4, 16)
        self.fc2 = nn.Linear(16, 2)

    def forward(self, x):
        x = nn.functional.max_pool2d(torch.relu(self.conv1(x)), 2)
        x = nn.functional.max_pool2d(torch.relu(self.conv2(x)), 2)
        x = torch.flatten(x, 1)
        x = torch.relu(self.fc1(x))
        return self.fc2(x)


ARCH = {
    "input_shape": [1, SIZE, SIZE],
    "input_mean": [127.5],
    "layers": [
        {"type": "conv2d", "name": "conv1", "activation": "relu", "in_channels": 1,
         "out_channels": 8, "kernel": [3, 3], "stride": [1, 1], "padding": [1, 1]},
        {"type": "maxpool", "name": "pool1", "kernel": [2, 2], "stride": [2, 2]},
        {"type": "conv2d", "name": "conv2", "activation": "relu", "in_channels": 8,
         "out_channels": 8, "kernel": [3, 3], "stride": [1, 1], "padding": [1, 1]},
        {"type": "maxpool", "name": "pool2", "kernel": [2, 2], "stride": [2, 2]},
        {"type": "flatten", "name": "flatten"},
        {"type": "dense", "name": "fc1", "activation": "relu", "in": 128, "out": 16},
        {"type": "dense", "name": "fc2", "activation": "softmax", "in": 16, "out": 2},
    ],
}


def write_fbiw(path, entries):
    out = bytearray(b"FBIW")
    out += struct.pack("<II", 1, len(entries))
    for name, array in entries:
        array = np.ascontiguousarray(array, dtype="<f4")
        encoded = name.encode("utf-8")
        out += struct.pack("<I", len(encoded)) + encoded
        out += struct.pack("<I", array.ndim)
        out += struct.pack("<" + "I" * array.ndim, *array.shape)
        out += struct.pack("<B", 0)
        out += array.tobytes()
    path.write_bytes(bytes(out))


def write_pgm(path, img):
    h, w = img.shape
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent
                                             / "tests" / "fixtures" / "tiny"))
    parser.add_argument("--epochs", type=int, default=6)
    args = parser.parse_args()
    out = pathlib.Path(args.out)

    torch.manual_seed(1234)
    torch.use_deterministic_algorithms(True)
    rng = np.random.default_rng(20240601)

    x_train, y_train = make_dataset(rng, 6000)
    x_test, y_test = make_dataset(rng, 1000)

    model = Net()
    opt = torch.optim.Adam(model.parameters(), lr=2e-3)
    loss_fn = nn.CrossEntropyLoss()
    for epoch in range(args.epochs):
        perm = torch.randperm(len(x_train))
        for i in range(0, len(x_train), 64):
            idx = perm[i:i + 64]
            opt.zero_grad()
            loss = loss_fn(model(x_train[idx]), y_train[idx])
            loss.backward()
            opt.step()
        with torch.no_grad():
            acc = (model(x_test).argmax(1) == y_test).float().mean().item()
        print(f"epoch {epoch}: loss {loss.item():.4f} test acc {acc:.4f}")

    out.mkdir(parents=True, exist_ok=True)
    (out / "arch.json").write_text(json.dumps(ARCH, indent=2) + "\n")

    sd = {k: v.detach().numpy().astype(np.float32) for k, v in model.state_dict().items()}
    entries = []
    for layer in ("conv1", "conv2", "fc1", "fc2"):
        weight = sd[f"{layer}.weight"]
        if layer == "conv1":
            weight = (weight / np.float32(255.0)).astype(np.float32)
        entries.append((f"{layer}.weight", weight))
        entries.append((f"{layer}.bias", sd[f"{layer}.bias"]))
    write_fbiw(out / "weights.fbiw", entries)

    (out / "images").mkdir(exist_ok=True)
    (out / "heldout").mkdir(exist_ok=True)
    img, _ = make_image(rng, True)
    write_pgm(out / "images" / "square.pgm", img)
    img, _ = make_image(rng, False)
    write_pgm(out / "images" / "noise.pgm", img)

    heldout = []
    for i in range(50):
        img, box = make_image(rng, True)
        name = f"heldout/square_{i:02d}.pgm"
        write_pgm(out / name, img)
        heldout.append({"file": name, "box": box, "label": 1})

    meta = {
        "description": "16x16 bright-square detector; class 1 = square present",
        "classes": ["noise", "square"],
        "tau_default": TAU_DEFAULT,
        "activation_scale": ACTIVATION_SCALE,
        "tau_effective": TAU_DEFAULT * ACTIVATION_SCALE,
        "top_fraction": 0.5,
        "test_accuracy": round(acc, 4),
        "heldout": heldout,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")


if __name__ == "__main__":
    main()
