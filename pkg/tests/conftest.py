import copy

import pytest

SMALL_ENV = {
    "mechanism": {"kind": "second_price", "competitor": {"kind": "uniform", "low": 5, "high": 30},
                  "click_prob": 0.4, "tie_break": "coin"},
    "valuation": {"conversion_prob": 0.3, "value": {"kind": "uniform", "low": 40, "high": 90}},
    "traffic": {"base_rate": 12.0, "period_factors": [0.5, 1.0, 0.75, 0.25]},
}


def small_config_dict(**over):
    d = {
        "seed": 11, "n_items": 3, "q": 4, "delta": 1, "horizon": 48, "eta": 0.3,
        "environment": copy.deepcopy(SMALL_ENV),
        "normalization": {"source": "simulate", "days": 30},
    }
    d.update(over)
    return d


@pytest.fixture
def config_dict():
    return small_config_dict()


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
