"""Command-line harness: batch runs, evaluation, cost reports, simulation."""
import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from conftest import ADJUDICATIONS20, CORPUS20, REPLIES20

from radflag.cli import main
from radflag.corpus import load_outcomes
from radflag.ledger import DEFAULT_PRICES, TokenTally, cost_curve, usd


@pytest.fixture()
def runner():
    return CliRunner()


def run_corpus20_cli(runner, out_dir, *extra):
    return runner.invoke(
        main,
        [
            "run",
            "--corpus", str(CORPUS20),
            "--provider", f"scripted:{REPLIES20}",
            "--out", str(out_dir),
            *extra,
        ],
    )


@pytest.fixture()
def run_outputs(runner, tmp_path):
    out_dir = tmp_path / "run"
    result = run_corpus20_cli(runner, out_dir)
    assert result.exit_code == 0, result.output
    return out_dir


class TestRunCommand:
    def test_writes_outcomes_and_cost_files(self, runner, tmp_path):
        out_dir = tmp_path / "out"
        result = run_corpus20_cli(runner, out_dir)
        assert result.exit_code == 0, result.output
        for name in (
            "outcomes_f1.jsonl",
            "outcomes_f2.jsonl",
            "outcomes_f3.jsonl",
            "token_tally.csv",
            "cost_table.txt",
            "cost_table.csv",
            "cost_summary.json",
        ):
            assert (out_dir / name).is_file(), name
        assert "f1: 20 reports, 7 flagged, 0 failed" in result.output
        assert "f2: 20 reports, 6 flagged, 0 failed" in result.output
        assert "f3: 20 reports, 4 flagged, 0 failed" in result.output

    def test_outcome_files_reload(self, run_outputs):
        outcomes = load_outcomes(run_outputs / "outcomes_f3.jsonl")
        assert len(outcomes) == 20
        assert sum(1 for o in outcomes if o.flagged) == 4

    def test_token_tally_rows(self, run_outputs):
        lines = (run_outputs / "token_tally.csv").read_text().splitlines()
        assert lines[0] == "framework,pass,model,calls,input_tokens,output_tokens"
        cells = {tuple(line.split(",")[:4]) for line in lines[1:]}
        assert ("f1", "1", "o3", "20") in cells
        assert ("f2", "1", "gpt-4.1-nano", "20") in cells
        assert ("f3", "3", "o3", "9") in cells  # verifier ran once per p2 flag
        assert len(lines) == 1 + 6

    def test_cost_summary_shape(self, run_outputs):
        summary = json.loads((run_outputs / "cost_summary.json").read_text())
        assert set(summary) == {"f1", "f2", "f3"}
        assert summary["f1"]["flagged"] == 7
        assert summary["f1"]["human_cost"] == "21.00"  # 7 flags at 3.00
        assert summary["f3"]["flagged"] == 4
        for entry in summary.values():
            assert entry["review_fee"] == "3.00"
            assert float(entry["total_cost"]) == pytest.approx(
                float(entry["model_cost"]) + float(entry["human_cost"]), abs=1e-9
            )

    def test_single_framework(self, runner, tmp_path):
        out_dir = tmp_path / "f3only"
        result = run_corpus20_cli(runner, out_dir, "--frameworks", "f3")
        assert result.exit_code == 0, result.output
        assert (out_dir / "outcomes_f3.jsonl").is_file()
        assert not (out_dir / "outcomes_f1.jsonl").exists()

    def test_refuses_overwrite_without_force(self, runner, run_outputs):
        result = run_corpus20_cli(runner, run_outputs)
        assert result.exit_code != 0
        assert "refusing to overwrite" in result.output
        assert "outcomes_f1.jsonl" in result.output
        forced = run_corpus20_cli(runner, run_outputs, "--force")
        assert forced.exit_code == 0, forced.output

    def test_missing_corpus_file(self, runner, tmp_path):
        result = runner.invoke(
            main,
            [
                "run",
                "--corpus", str(tmp_path / "nope.csv"),
                "--provider", f"scripted:{REPLIES20}",
                "--out", str(tmp_path / "out"),
            ],
        )
        assert result.exit_code != 0
        assert "not found" in result.output

    def test_unknown_framework_and_duplicates(self, runner, tmp_path):
        result = run_corpus20_cli(runner, tmp_path / "a", "--frameworks", "f1,f9")
        assert result.exit_code != 0 and "f9" in result.output
        result = run_corpus20_cli(runner, tmp_path / "b", "--frameworks", "f1,f1")
        assert result.exit_code != 0 and "duplicate" in result.output

    def test_bad_provider_specs(self, runner, tmp_path):
        for spec, fragment in [
            ("scripted:", "fixtures path"),
            ("scripted:/no/file.jsonl", "not found"),
            ("stochastic:sensitivity=0.9,bogus=1", "unknown stochastic"),
            ("psychic:now", "unknown provider kind"),
            ("http:", "JSON config"),
        ]:
            result = runner.invoke(
                main,
                [
                    "run",
                    "--corpus", str(CORPUS20),
                    "--provider", spec,
                    "--out", str(tmp_path / "x"),
                ],
            )
            assert result.exit_code != 0, spec
            assert fragment in result.output, spec

    def test_stratified_sample_deterministic(self, runner, tmp_path):
        args = ("--frameworks", "f1", "--sample", "xray=2,ct=1", "--seed", "5")
        first = run_corpus20_cli(runner, tmp_path / "a", *args)
        second = run_corpus20_cli(runner, tmp_path / "b", *args)
        assert first.exit_code == 0, first.output
        assert second.exit_code == 0, second.output
        bytes_a = (tmp_path / "a" / "outcomes_f1.jsonl").read_bytes()
        bytes_b = (tmp_path / "b" / "outcomes_f1.jsonl").read_bytes()
        assert bytes_a == bytes_b
        assert len(load_outcomes(tmp_path / "a" / "outcomes_f1.jsonl")) == 3

    def test_sample_shortfall_reported(self, runner, tmp_path):
        result = run_corpus20_cli(runner, tmp_path / "x", "--sample", "xray=9")
        assert result.exit_code != 0
        assert "short by" in result.output

    def test_stochastic_provider_end_to_end(self, runner, tmp_path):
        out_dir = tmp_path / "stoch"
        result = runner.invoke(
            main,
            [
                "run",
                "--corpus", str(CORPUS20),
                "--provider", "stochastic:sensitivity=1.0,specificity=1.0,seed=3",
                "--frameworks", "f1",
                "--out", str(out_dir),
            ],
        )
        assert result.exit_code == 0, result.output
        assert "f1: 20 reports, 0 flagged, 0 failed" in result.output


class TestEvaluateCommand:
    def evaluate_args(self, run_dir, out_dir, replicates="1000"):
        return [
            "evaluate",
            "--outcomes", str(run_dir / "outcomes_f1.jsonl"),
            "--outcomes", str(run_dir / "outcomes_f2.jsonl"),
            "--outcomes", str(run_dir / "outcomes_f3.jsonl"),
            "--adjudications", str(ADJUDICATIONS20),
            "--bootstrap-replicates", replicates,
            "--out", str(out_dir),
        ]

    def test_writes_comparison_outputs(self, runner, run_outputs, tmp_path):
        out_dir = tmp_path / "eval"
        result = runner.invoke(main, self.evaluate_args(run_outputs, out_dir))
        assert result.exit_code == 0, result.output
        assert "pairwise comparisons" in result.output
        assert "Cochran Q" in result.output
        csv_text = (out_dir / "comparison.csv").read_text()
        assert "descriptive,f1,overall,20,7,3,4" in csv_text
        assert result.output == (out_dir / "comparison.txt").read_text() + "\n"

    def test_reruns_are_byte_identical(self, runner, run_outputs, tmp_path):
        first = tmp_path / "eval1"
        second = tmp_path / "eval2"
        for out_dir in (first, second):
            result = runner.invoke(main, self.evaluate_args(run_outputs, out_dir))
            assert result.exit_code == 0, result.output
        assert (first / "comparison.csv").read_bytes() == (
            second / "comparison.csv"
        ).read_bytes()
        assert (first / "comparison.txt").read_bytes() == (
            second / "comparison.txt"
        ).read_bytes()

    def test_adjudication_gap_names_report(self, runner, run_outputs, tmp_path):
        trimmed = tmp_path / "trimmed.csv"
        lines = Path(ADJUDICATIONS20).read_text().splitlines()
        kept = [line for line in lines if not line.startswith("r03,f1")]
        assert len(kept) == len(lines) - 1
        trimmed.write_text("\n".join(kept) + "\n")
        result = runner.invoke(
            main,
            [
                "evaluate",
                "--outcomes", str(run_outputs / "outcomes_f1.jsonl"),
                "--adjudications", str(trimmed),
                "--out", str(tmp_path / "eval"),
            ],
        )
        assert result.exit_code != 0
        assert "r03" in result.output

    def test_force_guard(self, runner, run_outputs, tmp_path):
        out_dir = tmp_path / "eval"
        args = self.evaluate_args(run_outputs, out_dir, replicates="0")
        assert runner.invoke(main, args).exit_code == 0
        blocked = runner.invoke(main, args)
        assert blocked.exit_code != 0
        assert "refusing to overwrite" in blocked.output
        assert runner.invoke(main, [*args, "--force"]).exit_code == 0


class TestCompareCommand:
    def test_flag_agreement_table(self, runner, run_outputs, tmp_path):
        out_path = tmp_path / "agreement.csv"
        result = runner.invoke(
            main,
            [
                "compare",
                "--outcomes", str(run_outputs / "outcomes_f1.jsonl"),
                "--outcomes", str(run_outputs / "outcomes_f3.jsonl"),
                "--out", str(out_path),
            ],
        )
        assert result.exit_code == 0, result.output
        assert "shared reports: 20" in result.output
        assert "f1 vs f3: flags 7 vs 4, both 3, either 8" in result.output
        lines = out_path.read_text().splitlines()
        assert lines[0] == "pair,flags_a,flags_b,both,either,discordant,mcnemar_p"
        # discordant flags 4 vs 1 -> exact p = 2 * P(X <= 1 | n=5) = 0.375
        assert lines[1] == "f1 vs f3,7,4,3,8,5,0.375000"

    def test_single_framework_rejected(self, runner, run_outputs, tmp_path):
        result = runner.invoke(
            main,
            [
                "compare",
                "--outcomes", str(run_outputs / "outcomes_f1.jsonl"),
                "--out", str(tmp_path / "x.csv"),
            ],
        )
        assert result.exit_code != 0
        assert "two frameworks" in result.output


class TestCostReportCommand:
    def test_fee_sweep_matches_ledger(self, runner, run_outputs, tmp_path):
        out_dir = tmp_path / "costs"
        result = runner.invoke(
            main,
            [
                "cost-report",
                "--outcomes", str(run_outputs / "outcomes_f3.jsonl"),
                "--fee-range", "0:5:1",
                "--out", str(out_dir),
            ],
        )
        assert result.exit_code == 0, result.output
        lines = (out_dir / "cost_curve.csv").read_text().splitlines()
        assert lines[0] == "framework,fee,total_cost"
        assert len(lines) == 1 + 6  # fees 0..5 inclusive, one framework

        outcomes = load_outcomes(run_outputs / "outcomes_f3.jsonl")
        tally = TokenTally.from_outcomes(outcomes)
        flags = sum(1 for o in outcomes if o.flagged)
        expected = [
            f"f3,{fee},{usd(total)}"
            for fee, total in cost_curve(tally, DEFAULT_PRICES, flags, ("0", "5"), "1")
        ]
        assert lines[1:] == expected

    def test_summary_consistent_with_run_command(self, runner, run_outputs, tmp_path):
        out_dir = tmp_path / "costs"
        result = runner.invoke(
            main,
            [
                "cost-report",
                "--outcomes", str(run_outputs / "outcomes_f1.jsonl"),
                "--outcomes", str(run_outputs / "outcomes_f2.jsonl"),
                "--outcomes", str(run_outputs / "outcomes_f3.jsonl"),
                "--out", str(out_dir),
            ],
        )
        assert result.exit_code == 0, result.output
        summary = json.loads((out_dir / "cost_summary.json").read_text())
        from_run = json.loads((run_outputs / "cost_summary.json").read_text())
        assert summary == from_run
        assert (out_dir / "cost_table.csv").read_text() == (
            run_outputs / "cost_table.csv"
        ).read_text()

    def test_bad_fee_range(self, runner, run_outputs, tmp_path):
        result = runner.invoke(
            main,
            [
                "cost-report",
                "--outcomes", str(run_outputs / "outcomes_f1.jsonl"),
                "--fee-range", "0-5-1",
                "--out", str(tmp_path / "c"),
            ],
        )
        assert result.exit_code != 0
        assert "lo:hi:step" in result.output


class TestSimulateCommand:
    def test_ppv_grid_published_point(self, runner, tmp_path):
        out_dir = tmp_path / "sim"
        result = runner.invoke(
            main,
            [
                "simulate",
                "--sensitivity", "1.0",
                "--specificity", "0.90",
                "--prevalence", "0.01",
                "--out", str(out_dir),
            ],
        )
        assert result.exit_code == 0, result.output
        lines = (out_dir / "ppv_grid.csv").read_text().splitlines()
        assert lines[0] == (
            "sensitivity,specificity,prevalence,ppv,fp_per_tp,flag_rate"
        )
        assert lines[1] == "1.0,0.9,0.01,0.091743,9.900000,0.109000"

    def test_ppv_monotone_in_specificity(self, runner, tmp_path):
        out_dir = tmp_path / "sim"
        result = runner.invoke(
            main,
            [
                "simulate",
                "--specificity", "0.80,0.90,0.99",
                "--out", str(out_dir),
            ],
        )
        assert result.exit_code == 0, result.output
        rows = (out_dir / "ppv_grid.csv").read_text().splitlines()[1:]
        ppvs = [float(row.split(",")[3]) for row in rows]
        assert ppvs == sorted(ppvs)

    def test_fee_sweep(self, runner, tmp_path):
        out_dir = tmp_path / "sim"
        result = runner.invoke(
            main,
            [
                "simulate",
                "--fee-range", "0:10:5",
                "--flags", "88",
                "--model-cost", "5.58",
                "--out", str(out_dir),
            ],
        )
        assert result.exit_code == 0, result.output
        lines = (out_dir / "fee_curve.csv").read_text().splitlines()
        assert lines == [
            "fee,total_cost",
            "0,5.5800",
            "5,445.5800",
            "10,885.5800",
        ]

    def test_impossible_operating_point_rejected(self, runner, tmp_path):
        result = runner.invoke(
            main,
            ["simulate", "--sensitivity", "0.0", "--out", str(tmp_path / "s")],
        )
        assert result.exit_code != 0


class TestHelp:
    def test_group_lists_commands(self, runner):
        result = runner.invoke(main, ["--help"])
        assert result.exit_code == 0
        for command in ("run", "evaluate", "compare", "cost-report", "simulate", "serve"):
            assert command in result.output

    def test_serve_help(self, runner):
        result = runner.invoke(main, ["serve", "--help"])
        assert result.exit_code == 0
        assert "--data-dir" in result.output
