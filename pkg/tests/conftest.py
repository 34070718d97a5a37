import pytest

from adaptron.perception import default_rules_text, default_scenario
from adaptron.rulelang import parse_ruleset

# Reference rule of the perception example, kept byte for byte (note the
# trailing space after WARNING).
SEG_RULE = """\
RULE SegmentationBad
  POLICIES WARNING 
  TRIGGER segmentation_entropy > 0.06
    STRATEGY recalibration 80
      ADAPTATION fusion set_parameter recalibration true 2
    STRATEGY enhancement_activate 10
      ADAPTATION image_enhancement activate 5
      ADAPTATION fusion change_communication camera_input rgb_enhanced 2
    STRATEGY enhancement_deactivate 10
      ADAPTATION image_enhancement deactivate 5
      ADAPTATION fusion change_communication camera_input rgb_raw 2
"""


@pytest.fixture
def seg_rule_text():
    return SEG_RULE


@pytest.fixture
def seg_rule():
    return parse_ruleset(SEG_RULE)


@pytest.fixture(scope="session")
def scenario():
    return default_scenario()


@pytest.fixture(scope="session")
def rules():
    return parse_ruleset(default_rules_text())


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 9):
        terminalreporter.write_line(mod.RESULTS.get(n, f"criterion {n}: not run"))
