from pathlib import Path

import pytest

FIXTURE_CORPUS = Path(__file__).parent / "fixture_corpus"

FLAGSHIP_ID = "20180904-154250_98_live"
OVER_CAP_ID = "20180904-045349_715_live"
INT_ROLES_ID = "20180912-010101_12_live"
NO_TRAITS_ID = "20180915-222222_34_live"
NO_DONATION_ID = "20180916-333333_56_live"
LONG_ID = "20181001-444444_78_live"
BAD_ROLE_ID = "20181002-555555_90_live"


@pytest.fixture(scope="session")
def corpus_dir() -> Path:
    return FIXTURE_CORPUS
