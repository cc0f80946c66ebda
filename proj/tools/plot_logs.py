# Copyright 2026 The Rollback Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Plot training loss and mAP from one or more train_log.csv files.

    python3 tools/plot_logs.py out/rollback/train_log.csv out/baseline/train_log.csv -o curves.png

Each file is labelled by its parent directory name. Dotted lines mark
period boundaries of the first file.
"""

import argparse
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def read_log(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    epochs = [int(r["epoch"]) for r in rows]
    loss = [float(r["loss"]) for r in rows]
    maps = [(int(r["epoch"]), float(r["map"])) for r in rows if r["map"]]
    starts = [int(r["epoch"]) for i, r in enumerate(rows) if i and r["period"] != rows[i - 1]["period"]]
    return epochs, loss, maps, starts


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("logs", nargs="+", type=Path)
    parser.add_argument("-o", "--output", type=Path, default=Path("curves.png"))
    args = parser.parse_args()

    fig, (ax_loss, ax_map) = plt.subplots(1, 2, figsize=(11, 4))
    for i, path in enumerate(args.logs):
        epochs, loss, maps, starts = read_log(path)
        label = path.parent.name or path.stem
        ax_loss.plot(epochs, loss, label=label)
        if maps:
            ax_map.plot(*zip(*maps), marker="o", label=label)
        if i == 0:
            for e in starts:
                for ax in (ax_loss, ax_map):
                    ax.axvline(e - 0.5, color="grey", linestyle=":", linewidth=0.8)
    ax_loss.set(xlabel="epoch", ylabel="training loss", yscale="log")
    ax_map.set(xlabel="epoch", ylabel="mAP")
    for ax in (ax_loss, ax_map):
        ax.legend()
    fig.tight_layout()
    fig.savefig(args.output, dpi=120)
    print(f"wrote {args.output}")


if __name__ == "__main__":
    main()
