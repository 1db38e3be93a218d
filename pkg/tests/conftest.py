import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from matchedpairs.data import DEFAULT_COVARIATES, Dataset, Record

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_record(rid, outcome, nationality="N000", gender=1, adult=1, after2004=0, year=2000, **covs):
    values = {name: 0.0 for name in DEFAULT_COVARIATES}
    values["age_years"] = 30.0 if adult else 15.0
    values.update({k: float(v) for k, v in covs.items()})
    return Record(rid, outcome, nationality, gender, adult, after2004, year if not after2004 else max(year, 2005), values)


def make_dataset(records):
    return Dataset(list(records), DEFAULT_COVARIATES, provenance="test")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")
    return path


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        passed, detail = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}")
