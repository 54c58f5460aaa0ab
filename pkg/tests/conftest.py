from pathlib import Path

import numpy as np
import pandas as pd
import pytest

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_root() -> Path:
    return FIXTURES


@pytest.fixture
def dataset_dir(tmp_path):
    """Factory writing `<tmp>/<name>/{train,test,labels}.csv` from arrays"""

    def write(name: str, train: np.ndarray, test: np.ndarray, labels: np.ndarray) -> Path:
        base = tmp_path / name
        base.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(train, columns=[f"c{i}" for i in range(train.shape[1])]).to_csv(base / "train.csv", index=False)
        pd.DataFrame(test, columns=[f"c{i}" for i in range(test.shape[1])]).to_csv(base / "test.csv", index=False)
        pd.DataFrame({"label": labels}).to_csv(base / "labels.csv", index=False)
        return tmp_path

    return write
