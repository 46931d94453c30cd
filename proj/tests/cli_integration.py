#!/usr/bin/env python3
"""End-to-end checks of the bico command-line tool."""

import argparse
import json
import os
import subprocess
import sys
import tempfile

import jsonschema

ARGS = None
FAILURES = []


def bico(*argv, env=None):
    full_env = dict(os.environ)
    full_env.pop("BC_SEED", None)
    if env:
        full_env.update(env)
    return subprocess.run([ARGS.bico, *map(str, argv)], capture_output=True, text=True, env=full_env)


def schema(name):
    with open(os.path.join(ARGS.schemas, name + ".schema.json")) as f:
        return json.load(f)


def validate(doc, name):
    jsonschema.validate(doc, schema(name))


def fixture(name):
    return os.path.join(ARGS.fixtures, name)


def data_args():
    return ["--data", fixture("tiny.csv"), "--labels", fixture("tiny_labels.csv")]


def read(path):
    with open(path, "rb") as f:
        return f.read()


def case(fn):
    def run(tmp):
        try:
            fn(tmp)
            print(f"ok    {fn.__name__}")
        except AssertionError as e:
            FAILURES.append(fn.__name__)
            print(f"FAIL  {fn.__name__}: {e}")
    run.__name__ = fn.__name__
    CASES.append(run)
    return fn


CASES = []


def expect_exit(proc, code):
    assert proc.returncode == code, f"exit {proc.returncode}, expected {code}; stderr: {proc.stderr.strip()}"


@case
def summarize_is_deterministic_and_valid(tmp):
    a, b = os.path.join(tmp, "a.json"), os.path.join(tmp, "b.json")
    for out in (a, b):
        expect_exit(bico("summarize", *data_args(), "--size", 4, "--gamma", 0.3, "--lambda", 0.1, "--seed", 5, "--out", out), 0)
    assert read(a) == read(b), "outputs differ"
    doc = json.loads(read(a))
    validate(doc, "summarize")
    assert len(doc["coreset"]["indices"]) == 4
    assert set(doc["coreset"]["labels"]) <= {3, 8}


@case
def summarize_weighted_is_valid(tmp):
    proc = bico("summarize", *data_args(), "--size", 3, "--weighted", "--gamma", 0.3, "--lambda", 0.1)
    expect_exit(proc, 0)
    doc = json.loads(proc.stdout)
    validate(doc, "summarize")
    assert doc["config"]["selection"]["weighted"] is True


@case
def summarize_size_zero_gives_empty_coreset(tmp):
    proc = bico("summarize", *data_args(), "--size", 0)
    expect_exit(proc, 0)
    doc = json.loads(proc.stdout)
    validate(doc, "summarize")
    assert doc["coreset"]["indices"] == [] and doc["coreset"]["weights"] == []


@case
def summarize_size_above_n_is_config_error(tmp):
    proc = bico("summarize", *data_args(), "--size", 17)
    expect_exit(proc, 2)
    assert "InsufficientData" in proc.stderr


@case
def seed_env_overrides_flag(tmp):
    a = bico("summarize", *data_args(), "--size", 3, "--seed", 1, env={"BC_SEED": "9"})
    b = bico("summarize", *data_args(), "--size", 3, "--seed", 9)
    expect_exit(a, 0)
    assert a.stdout == b.stdout
    assert json.loads(a.stdout)["seed"] == 9


@case
def config_file_and_flag_precedence(tmp):
    cfg = os.path.join(tmp, "c.json")
    with open(cfg, "w") as f:
        json.dump({"size": 5, "lambda": 0.2, "kernel": "linear"}, f)
    proc = bico("summarize", "--config", cfg, *data_args(), "--size", 2)
    expect_exit(proc, 0)
    sel = json.loads(proc.stdout)["config"]["selection"]
    assert sel["size"] == 2 and sel["lambda"] == 0.2 and sel["kernel"]["family"] == "linear", sel


@case
def unknown_config_key_is_rejected(tmp):
    cfg = os.path.join(tmp, "bad.json")
    with open(cfg, "w") as f:
        json.dump({"size": 3, "no_such_option": 1}, f)
    expect_exit(bico("summarize", "--config", cfg, *data_args()), 2)


@case
def unknown_flag_and_bad_values_are_rejected(tmp):
    expect_exit(bico("summarize", *data_args(), "--no-such-flag"), 2)
    expect_exit(bico("summarize", *data_args(), "--kernel", "poly"), 2)
    expect_exit(bico("summarize", *data_args(), "--lambda", -1), 2)
    expect_exit(bico("summarize", "--data", fixture("missing.csv"), "--labels", fixture("tiny_labels.csv")), 2)


@case
def malformed_and_mismatched_inputs(tmp):
    bad = os.path.join(tmp, "bad.csv")
    with open(bad, "w") as f:
        f.write("1,2\n3,x\n")
    proc = bico("summarize", "--data", bad, "--labels", fixture("tiny_labels.csv"))
    expect_exit(proc, 2)
    assert "ParseError" in proc.stderr and ":2:" in proc.stderr, proc.stderr
    short = os.path.join(tmp, "short.csv")
    with open(short, "w") as f:
        f.write("0\n1\n")
    proc = bico("summarize", "--data", fixture("tiny.csv"), "--labels", short)
    expect_exit(proc, 2)
    assert "ShapeMismatch" in proc.stderr


@case
def stream_rejects_slots_not_dividing_memory(tmp):
    proc = bico("stream", "--memory", 20, "--slots", 3)
    expect_exit(proc, 2)
    assert "ConfigError" in proc.stderr


STREAM = ["stream", "--memory", 20, "--slots", 4, "--batch-size", 100, "--tasks", 3, "--train-per-class", 200, "--seed", 3]


@case
def stream_resume_matches_uninterrupted_run(tmp):
    full, part, resumed, ck = (os.path.join(tmp, n) for n in ("full.json", "part.json", "resumed.json", "ck.json"))
    expect_exit(bico(*STREAM, "--out", full), 0)
    expect_exit(bico(*STREAM, "--stop-after", 5, "--checkpoint", ck, "--out", part), 0)
    expect_exit(bico(*STREAM, "--resume", ck, "--out", resumed), 0)
    assert read(full) == read(resumed), "resumed run differs"
    doc = json.loads(read(full))
    validate(doc, "stream")
    validate(json.loads(read(ck)), "checkpoint")
    assert json.loads(read(part))["finished"] is False and doc["finished"] is True
    betas = [s["beta"] for s in doc["buffer"]["slots"]]
    assert abs(sum(betas) - doc["total_batches"]) < 1e-12 and len(betas) <= 4


@case
def stream_resume_rejects_other_configuration(tmp):
    ck = os.path.join(tmp, "ck2.json")
    expect_exit(bico(*STREAM, "--stop-after", 2, "--checkpoint", ck, "--out", os.path.join(tmp, "x.json")), 0)
    other = [a if a != 100 else 50 for a in STREAM]
    expect_exit(bico(*other, "--resume", ck), 2)


@case
def expdesign_brute_force_meets_guarantee(tmp):
    proc = bico("expdesign", "--n", 10, "--d", 3, "--size", 3, "--brute-force", "--seed", 2)
    expect_exit(proc, 0)
    doc = json.loads(proc.stdout)
    validate(doc, "expdesign")
    assert doc["guarantee_holds"] is True
    assert doc["greedy"]["reward"] <= doc["opt"] + 1e-12
    assert doc["probe_ratio"] >= doc["gamma"] - 1e-8


@case
def expdesign_on_fixture_features(tmp):
    proc = bico("expdesign", "--data", fixture("tiny.csv"), "--size", 2, "--sigma2", 0.5, "--lambda", 2)
    expect_exit(proc, 0)
    validate(json.loads(proc.stdout), "expdesign")
    expect_exit(bico("expdesign", "--n", 5, "--size", 6), 2)


@case
def eval_continual_report_and_curves(tmp):
    out, curves = os.path.join(tmp, "ev.json"), os.path.join(tmp, "ev.csv")
    expect_exit(bico("eval", "--tasks", 3, "--train-per-class", 60, "--test-per-class", 30, "--memory", 12,
                     "--out", out, "--curves", curves), 0)
    doc = json.loads(read(out))
    validate(doc, "eval")
    acc = doc["report"]["per_task_accuracy"]
    assert len(acc) == 3 and len(acc[0]) == 3
    with open(curves) as f:
        lines = f.read().splitlines()
    assert lines[0] == "checkpoint,task,accuracy" and len(lines) == 10
    final = [row[-1] for row in acc]
    assert abs(sum(final) / 3 - doc["report"]["average_accuracy"]) < 1e-12


@case
def eval_beta_sweep_picks_best(tmp):
    proc = bico("eval", "--tasks", 2, "--train-per-class", 40, "--test-per-class", 20, "--memory", 8,
                "--selector", "uniform", "--beta-sweep", "--betas", 0.1, 1, 10, "--jobs", 2)
    expect_exit(proc, 0)
    doc = json.loads(proc.stdout)
    validate(doc, "eval")
    accs = [e["average_accuracy"] for e in doc["sweep"]]
    assert len(accs) == 3 and doc["best_beta"] == doc["sweep"][accs.index(max(accs))]["beta"]


@case
def eval_streaming_is_deterministic(tmp):
    argv = ["eval", "--mode", "streaming", "--tasks", 2, "--train-per-class", 100, "--memory", 10, "--slots", 2,
            "--batch-size", 50, "--selector", "reservoir"]
    a, b = bico(*argv), bico(*argv)
    expect_exit(a, 0)
    assert a.stdout == b.stdout
    validate(json.loads(a.stdout), "eval")
    timed = bico(*argv, "--timing")
    assert "wall_time" in json.loads(timed.stdout)["report"]


@case
def eval_on_fixture_files(tmp):
    proc = bico("eval", *data_args(), "--classes-per-task", 1, "--memory", 4, "--selector", "kcenter")
    expect_exit(proc, 0)
    validate(json.loads(proc.stdout), "eval")


@case
def check_on_fixtures_passes(tmp):
    out = os.path.join(tmp, "check.json")
    proc = bico("check", *data_args(), "--out", out)
    expect_exit(proc, 0)
    assert "FAIL" not in proc.stdout
    doc = json.loads(read(out))
    validate(doc, "check")
    assert doc["all_passed"] is True


@case
def f32bin_input_matches_csv(tmp):
    import struct
    rows = [list(map(float, line.split(","))) for line in open(fixture("tiny.csv")).read().splitlines()[1:]]
    labels = [int(x) for x in open(fixture("tiny_labels.csv")).read().split()]
    feat, lab = os.path.join(tmp, "tiny.bin"), os.path.join(tmp, "tiny_labels.bin")
    with open(feat, "wb") as f:
        f.write(b"BCD1" + struct.pack("<II", len(rows), len(rows[0])))
        for r in rows:
            f.write(struct.pack("<" + "f" * len(r), *r))
    with open(lab, "wb") as f:
        f.write(struct.pack("<" + "I" * len(labels), *labels))
    proc = bico("summarize", "--data", feat, "--labels", lab, "--size", 3)
    expect_exit(proc, 0)
    assert len(json.loads(proc.stdout)["coreset"]["indices"]) == 3
    with open(feat, "ab") as f:
        f.write(b"\0")
    proc = bico("summarize", "--data", feat, "--labels", lab, "--size", 3)
    expect_exit(proc, 2)
    assert "offset" in proc.stderr


def main():
    global ARGS
    parser = argparse.ArgumentParser()
    parser.add_argument("--bico", required=True)
    parser.add_argument("--schemas", required=True)
    parser.add_argument("--fixtures", required=True)
    ARGS = parser.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        for run in CASES:
            run(tmp)
    print(f"{len(CASES) - len(FAILURES)}/{len(CASES)} passed")
    return 1 if FAILURES else 0


if __name__ == "__main__":
    sys.exit(main())
