# SPDX-License-Identifier: Apache-2.0
"""Writes a small demo dataset: synthetic scenes with a small coloured tag to find.

Run from this directory. Output: images/*.png and dataset.jsonl.
"""

import json
import os
import random

from PIL import Image, ImageDraw

rng = random.Random(7)
COLOURS = {"red": (220, 40, 40), "blue": (40, 70, 220), "green": (40, 170, 60), "yellow": (230, 210, 40)}
SOURCES = ["visual_search", "visual_search", "visual_search", "chart", "chart", "reasoning"]

os.makedirs("images", exist_ok=True)
rows = []
for i in range(12):
    w, h = rng.choice([(320, 240), (400, 300), (480, 320)])
    img = Image.new("RGB", (w, h), (rng.randint(90, 140),) * 3)
    d = ImageDraw.Draw(img)
    for _ in range(40):  # clutter
        x, y = rng.randrange(w), rng.randrange(h)
        g = rng.randint(60, 190)
        d.rectangle([x, y, x + rng.randint(4, 30), y + rng.randint(4, 30)], fill=(g, g, g))
    name = rng.choice(sorted(COLOURS))
    s = rng.randint(8, 14)
    x, y = rng.randint(0, w - s - 1), rng.randint(0, h - s - 1)
    d.rectangle([x, y, x + s, y + s], fill=COLOURS[name])
    path = f"images/scene{i:02d}.png"
    img.save(path)
    src = SOURCES[i % len(SOURCES)]
    row = {
        "id": f"scene{i:02d}",
        "image_path": path,
        "question": "What colour is the small square tag?",
        "answer": name,
        "source": src,
        "reference": name,
    }
    if src == "visual_search":
        row["gt_bboxes"] = [[x - 4, y - 4, x + s + 4, y + s + 4]]
    if i == 5:  # one multiple-choice item for the standardize stage
        row["question"] = "What colour is the small square tag? (A) red (B) blue (C) green (D) yellow"
        row["answer"] = "ABCD"[["red", "blue", "green", "yellow"].index(name)]
    rows.append(row)

with open("dataset.jsonl", "w") as f:
    for r in rows:
        f.write(json.dumps(r) + "\n")
