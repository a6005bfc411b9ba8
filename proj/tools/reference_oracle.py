#!/usr/bin/env python3
"""Reference oracle speaking the lmte-oracle/1 NDJSON protocol on stdin/stdout.

Numeric cells are used as-is; categorical cells (strings) count as 0.

Modes:
  sum         regression, prediction = row sum
  linear      regression, prediction = sum(w_i * x_i) + b (--weights, --bias)
  threshold   classification, class 1 iff row sum > --threshold, probs attached
  moons       classification, a fixed curved boundary on the first two columns

Fault injection (--fault) exercises the client's error paths:
  bad-handshake   first line is not a valid handshake
  wrong-task      handshake declares the other task
  malformed       replies with a non-JSON line
  count           replies with one prediction too few
  wrong-id        replies with a different id
  crash           exits before answering the first request
  slow            sleeps --delay seconds before every reply
"""

import argparse
import json
import math
import sys
import time


def numeric(cell):
    return float(cell) if isinstance(cell, (int, float)) else 0.0


def predict(args, rows):
    preds, probs = [], []
    for row in rows:
        xs = [numeric(c) for c in row]
        if args.mode == "sum":
            preds.append(sum(xs))
        elif args.mode == "linear":
            preds.append(sum(w * x for w, x in zip(args.weights, xs)) + args.bias)
        elif args.mode == "threshold":
            s = sum(xs) - args.threshold
            preds.append(1 if s > 0 else 0)
            probs.append(1.0 / (1.0 + math.exp(-max(-50.0, min(50.0, s)))))
        else:
            x1, x2 = xs[0], xs[1]
            preds.append(1 if x2 < 0.5 * math.sin(math.pi * x1) else 0)
    return preds, (probs if probs else None)


def send(obj):
    sys.stdout.write((obj if isinstance(obj, str) else json.dumps(obj)) + "\n")
    sys.stdout.flush()


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--mode", choices=["sum", "linear", "threshold", "moons"], default="sum")
    p.add_argument("--weights", type=lambda s: [float(v) for v in s.split(",")], default=[])
    p.add_argument("--bias", type=float, default=0.0)
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--fault", choices=["bad-handshake", "wrong-task", "malformed", "count", "wrong-id", "crash", "slow"])
    p.add_argument("--delay", type=float, default=5.0)
    args = p.parse_args()

    task = "regression" if args.mode in ("sum", "linear") else "classification"
    if args.fault == "bad-handshake":
        send("hello")
    elif args.fault == "wrong-task":
        send({"protocol": "lmte-oracle/1", "task": "classification" if task == "regression" else "regression"})
    else:
        send({"protocol": "lmte-oracle/1", "task": task})

    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        if args.fault == "crash":
            sys.exit(3)
        req = json.loads(line)
        preds, probs = predict(args, req["rows"])
        if args.fault == "slow":
            time.sleep(args.delay)
        if args.fault == "malformed":
            send("{not json")
            continue
        if args.fault == "count":
            preds = preds[:-1]
            probs = probs[:-1] if probs else None
        reply = {"id": req["id"] + 1 if args.fault == "wrong-id" else req["id"], "preds": preds}
        if probs is not None:
            reply["probs"] = probs
        send(reply)


if __name__ == "__main__":
    main()
