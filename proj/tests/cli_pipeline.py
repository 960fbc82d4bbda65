"""Replays the offline -> inference pipeline through the diffsteer binary."""

import hashlib
import json
import os
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

BIN = Path(sys.argv[1]).resolve()

CONFIG = {
    "data": {
        "kind": "gaussian-mixture",
        "n": 2048,
        "seed": 1,
        "means": [[-2, 0], [2, 0]],
        "covariances": [[[0.25, 0], [0, 0.25]], [[0.25, 0], [0, 0.25]]],
    },
    "model": {"encoder_widths": [32, 32], "bottleneck_width": 32, "time_embedding_dim": 16},
    "train": {"steps": 1500, "seed": 7},
    "rfm": {"bandwidth": 30, "iterations": 5},
    "classifier": {"steps": 800, "seed": 4},
    "steering": {
        "attributes": [
            {"direction": "rfm/direction.bin", "w_rfm": 1.0, "class_stats": "stats/stats_0.bin", "lambda": 1.0}
        ],
        "uncond_stats": "stats/stats_all.bin",
        "sigma_end": 3.0,
        "rfm_window": {"lo": 0, "hi": 3.5},
    },
}

failures = []


def check(ok, what):
    print(("ok    " if ok else "FAIL  ") + what)
    if not ok:
        failures.append(what)


def run(root, *args, env=None, expect=0):
    p = subprocess.run([str(BIN), *args], cwd=root, capture_output=True, text=True, env=env)
    if p.returncode != expect:
        print(p.stdout, p.stderr)
        raise SystemExit(f"diffsteer {' '.join(args)}: exit {p.returncode}, expected {expect}")
    return p


def manifest(root, d):
    return json.loads((root / d / "manifest.json").read_text())


def sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


PIPELINE = [
    ("data", ["make-data", "--config", "cfg.json"]),
    ("model", ["train-denoiser", "--config", "cfg.json", "--data", "data/data.bin"]),
    ("stats", ["fit-stats", "--data", "data/data.bin", "--labels", "data/labels.bin", "--k", "2"]),
    ("act", ["collect-activations", "--config", "cfg.json", "--model", "model/model.bin", "--block", "enc0",
             "--t", "62", "--data", "data/data.bin", "--labels", "data/labels.bin", "--seed", "5"]),
    ("act_hi", ["collect-activations", "--config", "cfg.json", "--model", "model/model.bin", "--block", "enc0",
                "--t", "301", "--data", "data/data.bin", "--labels", "data/labels.bin", "--seed", "5"]),
    ("act_rev", ["collect-activations", "--config", "cfg.json", "--model", "model/model.bin", "--block", "enc0",
                 "--process", "reverse", "--t", "301", "--n", "256", "--seed", "9"]),
    ("rfm", ["train-rfm", "--config", "cfg.json", "--activations", "act/activations.bin", "--class", "0"]),
    ("rfm_hi", ["train-rfm", "--config", "cfg.json", "--activations", "act_hi/activations.bin", "--class", "0"]),
    ("samp", ["sample", "--config", "cfg.json", "--model", "model/model.bin", "--n", "256", "--seed", "11"]),
    ("ev", ["eval", "--config", "cfg.json", "--samples", "samp/samples.bin", "--class", "0", "--data",
            "data/data.bin", "--labels", "data/labels.bin", "--traces", "samp/traces.jsonl"]),
    ("clf", ["train-classifier", "--config", "cfg.json", "--data", "data/data.bin", "--labels", "data/labels.bin"]),
    ("samp_clf", ["sample", "--config", "cfg.json", "--model", "model/model.bin", "--n", "64", "--seed", "11",
                  "--method", "classifier", "--classifier", "clf/classifier.bin", "--w", "2", "--class", "0"]),
    ("samp_md", ["sample", "--config", "cfg.json", "--model", "model/model.bin", "--n", "64", "--seed", "11",
                 "--method", "meandiff", "--activations", "act/activations.bin", "--class", "0"]),
    ("probe", ["probe", "--activations", "act/activations.bin", "act_rev/activations.bin"]),
    ("transfer", ["transfer", "--directions", "rfm/direction.bin", "rfm_hi/direction.bin"]),
    ("bench", ["bench", "--config", "cfg.json", "--model", "model/model.bin", "--n", "32", "--seed", "3",
               "--classifier", "clf/classifier.bin", "--w", "2", "--class", "0"]),
]


def replay(root):
    (root / "cfg.json").write_text(json.dumps(CONFIG, indent=2))
    for out, args in PIPELINE:
        run(root, *args, "--out", out)


def main():
    tmp = Path(tempfile.mkdtemp(prefix="diffsteer-cli-"))
    try:
        a, b = tmp / "a", tmp / "b"
        a.mkdir()
        b.mkdir()
        replay(a)

        # Every recorded input hash matches the producing command's output hash.
        produced = {}
        for out, _ in PIPELINE:
            for name, digest in manifest(a, out)["outputs"].items():
                produced[f"{out}/{name}"] = digest
        chained = 0
        for out, _ in PIPELINE:
            for path, digest in manifest(a, out)["inputs"].items():
                key = os.path.normpath(path)
                if key == "cfg.json":
                    check(digest == sha(a / "cfg.json"), f"{out}: config hash")
                    continue
                check(key in produced, f"{out}: input {key} was produced upstream")
                check(produced.get(key) == digest, f"{out}: input {key} hash chains")
                chained += 1
        check(chained >= 20, f"{chained} chained input hashes")
        for out, _ in PIPELINE:
            m = manifest(a, out)
            for name, digest in m["outputs"].items():
                check(sha(a / out / name) == digest, f"{out}/{name}: manifest hash matches file")
            check(m["tool_version"].startswith("diffsteer "), f"{out}: tool version recorded")

        # Rerunning with identical config and inputs reproduces every artifact byte for byte.
        replay(b)
        for out, _ in PIPELINE:
            if out == "bench":
                continue  # bench.json reports wall time
            check(manifest(a, out)["outputs"] == manifest(b, out)["outputs"], f"{out}: rerun hashes identical")

        ev = json.loads((a / "ev" / "eval.json").read_text())
        check(ev["mean_accuracy"] > 0.9, f"steered accuracy {ev['mean_accuracy']:.3f} > 0.9")
        check(ev["cost"]["gradient_passes"] == 0, "steered run uses no gradient passes")
        check(ev["cost"]["forward_passes_per_step"] <= 2.0, "at most two forward passes per step")
        bench = json.loads((a / "bench" / "bench.json").read_text())["methods"]
        check(bench["classifier"]["gradient_passes_per_step"] == 1.0, "classifier baseline: one gradient pass per step")
        check(bench["unguided"]["forward_passes_per_step"] == 1.0, "unguided: one forward pass per step")
        probe_csv = (a / "probe" / "probe.csv").read_text().splitlines()
        check(probe_csv[0].startswith("block,sigma,process,accuracy"), "probe CSV header")
        check(len(probe_csv) == 3, "one probe row per activation file")
        tm = json.loads((a / "transfer" / "transfer.json").read_text())
        check(abs(tm["matrix"][0][0] - 1) < 1e-8 and abs(tm["matrix"][0][1] - tm["matrix"][1][0]) < 1e-12,
              "transfer matrix unit diagonal and symmetric")

        # Worker count does not change the samples.
        env = dict(os.environ, DIFFSTEER_THREADS="3")
        run(a, "sample", "--config", "cfg.json", "--model", "model/model.bin", "--n", "256", "--seed", "11",
            "--out", "samp_t3", env=env)
        check(manifest(a, "samp_t3")["outputs"] == manifest(a, "samp")["outputs"], "DIFFSTEER_THREADS=3 matches 1 worker")

        # Usage and configuration errors exit 2 with a useful message.
        p = run(a, "no-such-command", expect=2)
        check("no-such-command" in p.stderr and "Usage" in p.stderr, "unknown subcommand: exit 2 with usage")
        bad = json.loads(json.dumps(CONFIG))
        bad["steering"]["attributes"][0]["direction"] = "rfm/missing.bin"
        (a / "missing.json").write_text(json.dumps(bad))
        p = run(a, "sample", "--config", "missing.json", "--model", "model/model.bin", "--n", "4", "--seed", "1",
                "--out", "x", expect=2)
        check("rfm/missing.bin" in p.stderr, "missing direction file: exit 2 naming the path")
        bad = json.loads(json.dumps(CONFIG))
        bad["steering"]["rfm_window"]["middle"] = 1.0
        (a / "unknown.json").write_text(json.dumps(bad))
        p = run(a, "sample", "--config", "unknown.json", "--model", "model/model.bin", "--n", "4", "--seed", "1",
                "--out", "x", expect=2)
        check("steering.rfm_window.middle" in p.stderr, "unknown config key: exit 2 with field path")
        p = run(a, "sample", "--config", "cfg.json", "--model", "model/model.bin", "--n", "4", "--out", "x", expect=2)
        check("--seed" in p.stderr, "sample without --seed: exit 2")
        bad = json.loads(json.dumps(CONFIG))
        bad["train"]["learning_rate"] = "fast"
        (a / "type.json").write_text(json.dumps(bad))
        p = run(a, "train-denoiser", "--config", "type.json", "--data", "data/data.bin", "--out", "x", expect=2)
        check("train.learning_rate" in p.stderr, "wrongly typed field: exit 2 with field path")
        (a / "corrupt.bin").write_bytes(b"\x00" * 3)
        p = run(a, "train-rfm", "--activations", "corrupt.bin", "--class", "0", "--out", "x", expect=1)
        check(p.returncode == 1, "unreadable artifact: runtime error exit 1")
    finally:
        shutil.rmtree(tmp, ignore_errors=True)

    if failures:
        print(f"{len(failures)} check(s) failed")
        return 1
    print("all CLI checks passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
