import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from scenemine.config import PipelineConfig


@pytest.fixture(scope="session")
def cfg():
    return PipelineConfig()
