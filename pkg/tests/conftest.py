import datetime as dt
import os

import numpy as np
import pytest

from hydroseq.dataset import export, make_dataset


def write_layout(root, static_rows, attrs, series):
    """Write a small dataset by hand. ``series`` maps feature -> (dates, {gauge: values})."""
    os.makedirs(os.path.join(root, "series"), exist_ok=True)
    with open(os.path.join(root, "static.csv"), "w") as fh:
        fh.write(",".join(["gauge_id", *attrs]) + "\n")
        for gid, vals in static_rows:
            fh.write(",".join([gid, *map(str, vals)]) + "\n")
    for feat, (dates, cols) in series.items():
        with open(os.path.join(root, "series", f"{feat}.csv"), "w") as fh:
            fh.write(",".join(["date", *cols]) + "\n")
            for t, d in enumerate(dates):
                fh.write(",".join([d, *(str(cols[g][t]) for g in cols)]) + "\n")


def day_strings(n, start=dt.date(2000, 1, 1)):
    return [(start + dt.timedelta(days=t)).isoformat() for t in range(n)]


@pytest.fixture
def tiny_dataset():
    r = np.random.default_rng(3)
    return make_dataset(
        ["a", "b"], ["area", "slope"], r.random((2, 2)),
        {f: r.random((10, 2)) for f in ("precipitation", "temperature_mean", "streamflow")},
        dt.date(2000, 1, 1), source="fixture",
    )


@pytest.fixture
def tiny_dir(tmp_path, tiny_dataset):
    export(tiny_dataset, tmp_path / "tiny")
    return tmp_path / "tiny"


CRITERIA = {}


def record(number, passed, detail):
    """Store one acceptance outcome; printed in the terminal summary."""
    CRITERIA[number] = (passed, detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")
    return passed


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        passed, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
