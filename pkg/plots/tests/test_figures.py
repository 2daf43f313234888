import numpy as np
import pytest

from reabc_plots import PlotSpec, SchemaError, plot_box, plot_schedule, render
from reabc_plots.cli import main


@pytest.fixture
def schedule_csv(tmp_path):
    rng = np.random.default_rng(0)
    lines = ["algorithm,replicate,step,epsilon"]
    for algorithm in ("abc-smc", "re-abc-smc2"):
        for rep in range(3):
            eps = 100.0
            for step in range(1, 9):
                eps *= 0.4 + 0.2 * rng.random()
                lines.append(f"{algorithm},{rep},{step},{eps!r}")
    path = tmp_path / "schedules.csv"
    path.write_text("\n".join(lines) + "\n")
    return str(path)


@pytest.fixture
def stats_csv(tmp_path):
    rng = np.random.default_rng(1)
    lines = ["algorithm,replicate,statistic,value"]
    for algorithm, spread in (("abc-smc", 0.8), ("re-abc-smc2", 0.2),
                              ("re-abc-smc2-wide", 0.1)):
        for rep in range(50):
            value = 3.0 + spread * rng.standard_normal()
            lines.append(f"{algorithm},{rep},posterior_mean_sigma,{value!r}")
            lines.append(f"{algorithm},{rep},final_epsilon,{rng.random()!r}")
    path = tmp_path / "statistics.csv"
    path.write_text("\n".join(lines) + "\n")
    return str(path)


class TestSchedule:
    def test_one_line_per_run_and_legend_per_algorithm(self, schedule_csv, tmp_path):
        spec = PlotSpec((schedule_csv,), "schedule", str(tmp_path / "s"))
        fig = plot_schedule(spec)
        ax = fig.axes[0]
        assert len(ax.get_lines()) == 6  # 2 algorithms x 3 replicates
        assert len(ax.get_legend().get_texts()) == 2
        assert ax.get_yscale() == "log"

    def test_linear_flag(self, schedule_csv, tmp_path):
        spec = PlotSpec((schedule_csv,), "schedule", str(tmp_path / "s"),
                        log_scale=False)
        fig = plot_schedule(spec)
        assert fig.axes[0].get_yscale() == "linear"

    def test_missing_column_named(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("algorithm,replicate,step\nx,0,1\n")
        with pytest.raises(SchemaError, match="epsilon"):
            plot_schedule(PlotSpec((str(bad),), "schedule", str(tmp_path / "s")))

    def test_empty_input_rejected(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("algorithm,replicate,step,epsilon\n")
        with pytest.raises(SchemaError, match="no data rows"):
            plot_schedule(PlotSpec((str(empty),), "schedule", str(tmp_path / "s")))


class TestBox:
    def test_one_box_per_algorithm(self, stats_csv, tmp_path):
        spec = PlotSpec((stats_csv,), "boxplot", str(tmp_path / "b"), truth=3.0)
        fig = plot_box(spec)
        ax = fig.axes[0]
        labels = [t.get_text() for t in ax.get_xticklabels()]
        assert len(labels) == 3  # 3 algorithms x 1 posterior-mean statistic

    def test_truth_reference_line(self, stats_csv, tmp_path):
        spec = PlotSpec((stats_csv,), "boxplot", str(tmp_path / "b"), truth=3.0)
        fig = plot_box(spec)
        ax = fig.axes[0]
        ref = [ln for ln in ax.get_lines()
               if len(set(ln.get_ydata())) == 1 and ln.get_ydata()[0] == 3.0]
        assert ref, "expected a horizontal reference line at 3.0"

    def test_single_replicate_degenerate_box(self, tmp_path):
        path = tmp_path / "one.csv"
        path.write_text("algorithm,replicate,statistic,value\n"
                        "re,0,posterior_mean_sigma,2.5\n")
        fig = plot_box(PlotSpec((str(path),), "boxplot", str(tmp_path / "b")))
        assert fig.axes[0].get_xticklabels()

    def test_statistic_selector(self, stats_csv, tmp_path):
        spec = PlotSpec((stats_csv,), "boxplot", str(tmp_path / "b"),
                        statistic="final_epsilon")
        fig = plot_box(spec)
        assert len(fig.axes[0].get_xticklabels()) == 3

    def test_no_matching_statistic(self, stats_csv, tmp_path):
        with pytest.raises(SchemaError, match="statistic"):
            plot_box(PlotSpec((stats_csv,), "boxplot", str(tmp_path / "b"),
                              statistic="nope"))


class TestRendering:
    def test_byte_deterministic(self, schedule_csv, stats_csv, tmp_path):
        for kind, src in (("schedule", schedule_csv), ("boxplot", stats_csv)):
            spec_a = PlotSpec((src,), kind, str(tmp_path / f"{kind}_a"), truth=3.0)
            spec_b = PlotSpec((src,), kind, str(tmp_path / f"{kind}_b"), truth=3.0)
            png_a, svg_a = render(spec_a)
            png_b, svg_b = render(spec_b)
            assert open(png_a, "rb").read() == open(png_b, "rb").read()
            assert open(svg_a, "rb").read() == open(svg_b, "rb").read()

    def test_inputs_unchanged(self, schedule_csv, tmp_path):
        before = open(schedule_csv, "rb").read()
        render(PlotSpec((schedule_csv,), "schedule", str(tmp_path / "s")))
        assert open(schedule_csv, "rb").read() == before


class TestCli:
    def test_schedule_command(self, schedule_csv, tmp_path, capsys):
        out = str(tmp_path / "fig")
        assert main(["schedule", "--in", schedule_csv, "--out", out]) == 0
        printed = capsys.readouterr().out.strip().splitlines()
        assert printed == [out + ".png", out + ".svg"]

    def test_box_command_with_truth(self, stats_csv, tmp_path):
        out = str(tmp_path / "fig.png")
        assert main(["box", "--in", stats_csv, "--out", out, "--truth", "3.0"]) == 0
        import os

        assert os.path.exists(str(tmp_path / "fig.png"))
        assert os.path.exists(str(tmp_path / "fig.svg"))
