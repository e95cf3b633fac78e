import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

X_AXIS_BLOCK = """\
const double period = 5088.0;
const double drift = -0.0;

double base = -3.6508;
double a[4] = { -0.608, 0.205, 0.0744, -0.0764 };
double b[4] = { 2.5745, -0.414, -0.0149, 0.0096 };
"""

Y_AXIS_BLOCK = """\
const double period = 5088.0;
const double drift = 0.0;

double base = 1.698;
double a[4] = { 0.2631, -0.0887, -0.0322, 0.0331 };
double b[4] = { -1.1144, 0.1792, 0.0065, -0.0041 };
"""

Z_AXIS_BLOCK = """\
const double period = 5088.0;
const double drift = 0.0;

double base = 1.8164;
double a[4] = { 0.0757, -0.0255, -0.0093, 0.0095 };
double b[4] = { -0.3202, 0.0516, 0.0019, -0.0012 };
"""

GLOBAL_BLOCK = """\
const double accuracy = 100.0;

const double period = 3469.0;
const double drift = 0.0;

double base = 2.5019;
double a[4] = { -0.1959, 0.0295, -0.0022, -0.0169 };
double b[4] = { -0.4023, 0.0294, 0.033, 0.013 };

double v[4];
double result;

double time;
broadcast chan step;

double frequency = 2 * 3.14159265358979323846 / period;
"""

SYSTEM_BLOCK = """\
Clock = Timer(38);

const double accrate = (100.0 - accuracy) / 15.0;
"""

TEMPLATE_CSV = """\
ID,Time[ms],Threshold[mm]
80731,24281,5.0
76503,11222,5.0
75681,13682,7.5
74528,23749,10.0
67108,2243,10.0
79427,7133,12.5
70571,16927,15.0
77460,4354,15.0
70211,16240,15.0
68851,1488,17.5
59592,7335,17.5
74430,14448,17.5
69894,29738,20.0
77674,1609,20.0
78301,16381,22.5
81561,3116,25.0
61025,17047,27.5
71430,1758,31.0
81038,21519,31.0
"""


@pytest.fixture
def global_model():
    from omc_beamsched.formats import parse_declarations

    return parse_declarations(GLOBAL_BLOCK + SYSTEM_BLOCK)


@pytest.fixture
def axis_models():
    from omc_beamsched.formats import parse_declarations

    return [parse_declarations(b) for b in (X_AXIS_BLOCK, Y_AXIS_BLOCK, Z_AXIS_BLOCK)]


@pytest.fixture
def template():
    from omc_beamsched.formats import parse_beam_list

    return parse_beam_list(TEMPLATE_CSV)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
