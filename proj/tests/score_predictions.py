#!/usr/bin/env python3
"""Rescores `concordia run` predictions from scratch and compares with metrics.csv."""

import csv
import math
import subprocess
import sys
import tempfile
from pathlib import Path

CONFIGS = {
    "chain": "[experiment]\nname = chain\nseed = 2\nfractions = 0.5, 1.0\n"
    "[synthetic]\ngenerator = latent_chain\nframes = 12\n[training]\nepochs = 3\n",
    "recommend": "[experiment]\nname = rec\nseed = 2\nfractions = 1.0\n"
    "[synthetic]\ngenerator = recommend\nusers = 10\nitems = 10\n[training]\nepochs = 3\n",
}


def classification(truth, pred):
    classes = sorted(set(truth) | set(pred))
    acc = sum(t == p for t, p in zip(truth, pred)) / len(truth)
    prec = rec = 0.0
    for c in classes:
        tp = sum(t == c and p == c for t, p in zip(truth, pred))
        np_ = sum(p == c for p in pred)
        nt = sum(t == c for t in truth)
        prec += tp / np_ if np_ else 0.0
        rec += tp / nt if nt else 0.0
    prec /= len(classes)
    rec /= len(classes)
    f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
    return {"accuracy": acc, "precision": prec, "recall": rec, "f1": f1}


def regression(truth, pred):
    t = [float(x) for x in truth]
    p = [float(x) for x in pred]
    return {"rmse": math.sqrt(sum((a - b) ** 2 for a, b in zip(t, p)) / len(t))}


def check(cli, name, text, work):
    out = work / name
    cfg = work / f"{name}.ini"
    cfg.write_text(text)
    subprocess.run([cli, "run", "--config", str(cfg), "--out", str(out)], check=True, stdout=subprocess.DEVNULL)
    with open(out / "metrics.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    failures = 0
    for row in rows:
        tag = f"{float(row['fraction']) * 100:g}"
        with open(out / f"predictions-{tag}.tsv", newline="") as f:
            preds = list(csv.DictReader(f, delimiter="\t"))
        comp = row["component"]
        truth = [p["truth"] for p in preds]
        pred = [p[comp] for p in preds]
        ours = regression(truth, pred) if "rmse" in row else classification(truth, pred)
        if int(row["n"]) != len(preds):
            print(f"{name} {row['fraction']} {comp}: n {row['n']} != {len(preds)}")
            failures += 1
        for key, value in ours.items():
            # Predictions are printed with limited digits; regression values
            # round-trip through that text.
            tol = 1e-6 if key == "rmse" else 1e-12
            if abs(float(row[key]) - value) > tol:
                print(f"{name} {row['fraction']} {comp} {key}: csv {row[key]} != rescored {value}")
                failures += 1
    print(f"{name}: {len(rows)} metric rows rescored, {failures} mismatches")
    return failures


def main():
    cli = sys.argv[1]
    with tempfile.TemporaryDirectory() as tmp:
        failures = sum(check(cli, name, text, Path(tmp)) for name, text in CONFIGS.items())
    sys.exit(1 if failures else 0)


if __name__ == "__main__":
    main()
