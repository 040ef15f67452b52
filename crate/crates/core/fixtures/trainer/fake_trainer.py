"""Stand-in for the external trainer used by the CLI tests.

train:   records its argv in OUT_DIR/checkpoint.json
predict: copies gold labels when the checkpoint saw augmented data, otherwise
         predicts neutral for everything
"""
import argparse
import json
import os
import sys


def main():
    cmd = sys.argv[1]
    ap = argparse.ArgumentParser()
    if cmd == "train":
        for flag in ("--train", "--dev", "--rules", "--out-dir", "--seed"):
            ap.add_argument(flag, required=True)
        ap.add_argument("--augmented")
        a = ap.parse_args(sys.argv[2:])
        os.makedirs(a.out_dir, exist_ok=True)
        with open(os.path.join(a.out_dir, "checkpoint.json"), "w") as f:
            json.dump({"argv": sys.argv[1:], "augmented": a.augmented is not None}, f)
    elif cmd == "predict":
        for flag in ("--checkpoint", "--test", "--rules", "--out"):
            ap.add_argument(flag, required=True)
        a = ap.parse_args(sys.argv[2:])
        with open(os.path.join(a.checkpoint, "checkpoint.json")) as f:
            ckpt = json.load(f)
        with open(a.test) as f, open(a.out, "w") as out:
            for line in f:
                if not line.strip():
                    continue
                row = json.loads(line)
                pred = row["label"] if ckpt["augmented"] else "neutral"
                probs = [1.0 if c == pred else 0.0 for c in ("favor", "against", "neutral")]
                out.write(json.dumps({"id": row["id"], "pred": pred, "probs": probs}) + "\n")
    else:
        sys.exit(f"unknown command {cmd}")


main()
