import os
from pathlib import Path

import pytest
import torch

from onestep_edit.artifacts import Workspace
from onestep_edit.config import desk_preset

torch.set_num_threads(1)

CACHE_ROOT = Path(os.environ.get("ONESTEP_WORKSPACE", Path.home() / ".cache" / "onestep-edit"))


@pytest.fixture(scope="session")
def workspace() -> Workspace:
    """Shared artifact cache.  Training runs happen at most once per config
    hash; later sessions reload the checkpoints from disk."""
    return Workspace(CACHE_ROOT, desk_preset())
