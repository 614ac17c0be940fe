"""Render PNG figures from the CSV files a rotlab run wrote.

    python3 -m rotlab.plot --dir OUT --command bn-poly
"""

import argparse
import csv
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def read(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def col(rows, key, cast=float):
    return [cast(r[key]) for r in rows]


def plot_curve(rows, out):
    fig, ax = plt.subplots(figsize=(5, 4))
    groups = {}
    for r in rows:
        groups.setdefault((r["dist"], r["B"]), []).append(r)
    for (dist, b), g in groups.items():
        ax.plot(col(g, "x_test"), col(g, "f_expect"), label=f"{dist}, B={b}")
    x = col(rows, "x_test")
    ax.plot([min(x), max(x)], [min(x), max(x)], "k:", lw=0.8, label="identity")
    ax.set_xlabel("f_Test")
    ax.set_ylabel("E[f_Train | f_Test]")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)


def plot_flip(rows, out):
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.errorbar(col(rows, "margin"), col(rows, "flip_rate"), yerr=col(rows, "stderr"), fmt="o-")
    ax.set_xlabel("angular margin")
    ax.set_ylabel("flip rate")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)


def plot_shift(rows, out):
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter(col(rows, "ratio_var_a"), col(rows, "ratio_var_b"), s=8)
    top = max(col(rows, "ratio_var_a") + col(rows, "ratio_var_b"))
    ax.plot([0, top], [0, top], "k:", lw=0.8)
    ax.set_xlabel("Var[r] dropout-a")
    ax.set_ylabel("Var[r] dropout-b")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)


def plot_cn(rows, out):
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(col(rows, "x"), col(rows, "cn_expect"), "o-", label="CN")
    ax.plot(col(rows, "x"), col(rows, "bn_expect"), "s-", label="BN")
    ax.set_xlabel("x")
    ax.set_ylabel("conditional mean output")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)


def plot_train(rows, out):
    fig, ax = plt.subplots(figsize=(5, 4))
    names = sorted({r["regularizer"] for r in rows})
    gaps = []
    for n in names:
        g = [float(r["train_acc"]) - float(r["val_acc"]) for r in rows if r["regularizer"] == n]
        gaps.append(g)
    ax.boxplot(gaps, labels=names)
    ax.set_ylabel("train - val accuracy")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)


PLOTS = {
    "bn-curve": [("bn_curve.csv", plot_curve)],
    "bn-poly": [("bn_poly_curve.csv", plot_curve)],
    "angle-demo": [("flip_rate.csv", plot_flip)],
    "var-shift": [("var_shift.csv", plot_shift)],
    "cn-check": [("cn_check.csv", plot_cn)],
    "train-demo": [("train.csv", plot_train)],
}


def main(argv=None):
    ap = argparse.ArgumentParser(prog="python3 -m rotlab.plot")
    ap.add_argument("--dir", required=True)
    ap.add_argument("--command", required=True)
    args = ap.parse_args(argv)
    made = 0
    for name, fn in PLOTS.get(args.command, []):
        path = os.path.join(args.dir, name)
        if not os.path.exists(path):
            continue
        out = os.path.splitext(path)[0] + ".png"
        fn(read(path), out)
        print(out)
        made += 1
    if made == 0:
        print(f"nothing to plot for {args.command}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
