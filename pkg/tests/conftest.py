import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(autouse=True)
def _quiet_library_warnings():
    """Keep expected numerical warnings out of the test output.

    Tests that assert on warnings re-enable them locally via pytest.warns.
    """
    import warnings

    from gbmds.errors import GBMDSWarning

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GBMDSWarning)
        yield
