"""Figure emitters: shape validation and file output."""

import matplotlib.pyplot as plt
import numpy as np
import pytest

from hnpe.figures import marginal_grid_figure, posterior_rows_figure, sweep_figure
from hnpe.metrics import SweepTable


def cloud(seed: int, dim: int = 2, n: int = 200) -> np.ndarray:
    return 0.5 + 0.1 * np.random.default_rng(seed).standard_normal((n, dim))


class TestPosteriorRows:
    def test_writes_one_row_per_size(self, tmp_path):
        path = tmp_path / "rows.png"
        fig = posterior_rows_figure({0: cloud(0), 10: cloud(1)},
                                    {0: cloud(2)}, path)
        assert path.stat().st_size > 0
        assert len(fig.axes) == 6

    def test_rejects_empty_and_wrong_shape(self):
        with pytest.raises(ValueError, match="no sample clouds"):
            posterior_rows_figure({})
        with pytest.raises(ValueError, match=r"\(n, 2\)"):
            posterior_rows_figure({0: cloud(0, dim=3)})

    def test_returns_open_figure_without_path(self):
        fig = posterior_rows_figure({0: cloud(0)})
        assert fig.axes
        plt.close(fig)


class TestMarginalGrid:
    def test_four_dimensional_grid(self, tmp_path):
        path = tmp_path / "grid.png"
        fig = marginal_grid_figure({0: cloud(0, dim=4), 9: cloud(1, dim=4)}, path)
        assert path.stat().st_size > 0
        assert len(fig.axes) == 8

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError, match="disagree"):
            marginal_grid_figure({0: cloud(0, dim=2), 9: cloud(1, dim=3)})


class TestSweepFigure:
    def test_median_and_band(self, tmp_path):
        table = SweepTable(sweep_variable="n")
        for rep in range(3):
            table.rows += [(1e3, rep, 0.5 + 0.01 * rep), (1e4, rep, 0.2)]
        path = tmp_path / "sweep.png"
        sweep_figure(table, path)
        assert path.stat().st_size > 0

    def test_empty_table_rejected(self):
        with pytest.raises(ValueError, match="no successful rows"):
            sweep_figure(SweepTable(sweep_variable="n"))
