#!/usr/bin/env python3
"""Rebuild the 123-feature binary `a9a` encoding from the raw UCI Adult files.

Encoding: six continuous attributes are quantized (age, fnlwgt, education-num and
hours-per-week into training-set quintiles; capital-gain and capital-loss into
zero / nonzero), eight categorical attributes are one-hot encoded in the order
listed by adult.names. Missing values ("?") produce no active feature. Labels are
+1 for ">50K" and -1 otherwise.

Usage: adult_to_a9a.py adult.data adult.test OUT_DIR
Writes OUT_DIR/a9a (32561 rows) and OUT_DIR/a9a.t (16281 rows).
"""
import sys

import numpy as np

COLUMNS = [
    ("age", "quintile"),
    ("workclass", ["Private", "Self-emp-not-inc", "Self-emp-inc", "Federal-gov",
                   "Local-gov", "State-gov", "Without-pay", "Never-worked"]),
    ("fnlwgt", "quintile"),
    ("education", ["Bachelors", "Some-college", "11th", "HS-grad", "Prof-school",
                   "Assoc-acdm", "Assoc-voc", "9th", "7th-8th", "12th", "Masters",
                   "1st-4th", "10th", "Doctorate", "5th-6th", "Preschool"]),
    ("education-num", "quintile"),
    ("marital-status", ["Married-civ-spouse", "Divorced", "Never-married", "Separated",
                        "Widowed", "Married-spouse-absent", "Married-AF-spouse"]),
    ("occupation", ["Tech-support", "Craft-repair", "Other-service", "Sales",
                    "Exec-managerial", "Prof-specialty", "Handlers-cleaners",
                    "Machine-op-inspct", "Adm-clerical", "Farming-fishing",
                    "Transport-moving", "Priv-house-serv", "Protective-serv",
                    "Armed-Forces"]),
    ("relationship", ["Wife", "Own-child", "Husband", "Not-in-family", "Other-relative",
                      "Unmarried"]),
    ("race", ["White", "Asian-Pac-Islander", "Amer-Indian-Eskimo", "Other", "Black"]),
    ("sex", ["Female", "Male"]),
    ("capital-gain", "nonzero"),
    ("capital-loss", "nonzero"),
    ("hours-per-week", "quintile"),
    ("native-country", ["United-States", "Cambodia", "England", "Puerto-Rico", "Canada",
                        "Germany", "Outlying-US(Guam-USVI-etc)", "India", "Japan",
                        "Greece", "South", "China", "Cuba", "Iran", "Honduras",
                        "Philippines", "Italy", "Poland", "Jamaica", "Vietnam", "Mexico",
                        "Portugal", "Ireland", "France", "Dominican-Republic", "Laos",
                        "Ecuador", "Taiwan", "Haiti", "Columbia", "Hungary", "Guatemala",
                        "Nicaragua", "Scotland", "Thailand", "Yugoslavia", "El-Salvador",
                        "Trinadad&Tobago", "Peru", "Hong", "Holand-Netherlands"]),
]


def read_rows(path):
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("|"):
                continue
            fields = [f.strip() for f in line.split(",")]
            if len(fields) != 15:
                continue
            rows.append(fields)
    return rows


def width(kind):
    if kind == "quintile":
        return 5
    if kind == "nonzero":
        return 2
    return len(kind)


def quintile_edges(rows, col):
    values = np.array([float(r[col]) for r in rows if r[col] != "?"])
    return np.quantile(values, [0.2, 0.4, 0.6, 0.8])


def encode(rows, edges):
    out = []
    for r in rows:
        label = "+1" if r[14].startswith(">50K") else "-1"
        active = []
        offset = 1
        for col, (_, kind) in enumerate(COLUMNS):
            value = r[col]
            if value != "?":
                if kind == "quintile":
                    active.append(offset + int(np.searchsorted(edges[col], float(value), side="right")))
                elif kind == "nonzero":
                    active.append(offset + (1 if float(value) > 0 else 0))
                else:
                    active.append(offset + kind.index(value))
            offset += width(kind)
        out.append(label + " " + " ".join(f"{i}:1" for i in sorted(active)))
    return out


def main():
    train_path, test_path, out_dir = sys.argv[1:4]
    train, test = read_rows(train_path), read_rows(test_path)
    assert sum(width(k) for _, k in COLUMNS) == 123
    edges = {c: quintile_edges(train, c) for c, (_, k) in enumerate(COLUMNS) if k == "quintile"}
    for name, rows in (("a9a", train), ("a9a.t", test)):
        with open(f"{out_dir}/{name}", "w") as fh:
            fh.write("\n".join(encode(rows, edges)) + "\n")
        print(name, len(rows))


if __name__ == "__main__":
    main()
