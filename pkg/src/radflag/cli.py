"""Command-line harness for batch runs, evaluation, and the review server.

Providers are selected with a compact spec so CI never needs credentials:

* ``scripted:fixtures.jsonl`` replays recorded replies (deterministic)
* ``stochastic:sensitivity=0.9,specificity=0.9,seed=1[,labels=labels.json]``
  draws synthetic detections
* ``http:provider.json`` speaks to a live endpoint; the JSON config names
  the credential's environment variable (the key itself never appears on
  the command line)

Outputs are deterministic for fixed inputs and seeds, and nothing is
overwritten unless ``--force`` is given.
"""
from __future__ import annotations

import json
import sys
from decimal import Decimal
from pathlib import Path

import click

from .corpus import (
    CorpusError,
    Modality,
    SamplingSpec,
    export_outcomes,
    load_corpus,
    load_outcomes,
    stratified_sample,
)
from .gateway import (
    GatewayError,
    HttpProvider,
    ModelSpec,
    Provider,
    ProviderConfig,
    ScriptedMockProvider,
    StochasticMockProvider,
)
from .ledger import (
    DEFAULT_PRICES,
    LedgerError,
    PriceTable,
    TokenTally,
    cost_curve,
    render_cost_csv,
    render_cost_table,
    total_cost,
    usd,
)
from .outcomes import Framework
from .pipeline import ADVANCED, LIGHTWEIGHT, PipelineConfigError, run_batch
from .stats import (
    StatsError,
    evaluate_run,
    expected_ppv,
    load_adjudications,
    mcnemar_exact_from_counts,
    render_comparison_csv,
    render_comparison_table,
)


def _fail(message: str) -> "click.ClickException":
    return click.ClickException(message)


def _parse_provider(spec: str) -> Provider:
    kind, _, rest = spec.partition(":")
    if kind == "scripted":
        if not rest:
            raise _fail("scripted provider needs a fixtures path")
        path = Path(rest)
        if not path.is_file():
            raise _fail(f"fixtures file not found: {path}")
        return ScriptedMockProvider.from_jsonl(path)
    if kind == "stochastic":
        params: dict[str, str] = {}
        if rest:
            for item in rest.split(","):
                key, _, value = item.partition("=")
                if not value:
                    raise _fail(f"bad stochastic parameter: {item!r}")
                params[key] = value
        labels: dict[str, bool] = {}
        if "labels" in params:
            labels_path = Path(params.pop("labels"))
            if not labels_path.is_file():
                raise _fail(f"labels file not found: {labels_path}")
            labels = {
                k: bool(v)
                for k, v in json.loads(labels_path.read_text("utf-8")).items()
            }
        sens_text = params.pop("sensitivity", "0.9")
        spec_text = params.pop("specificity", "0.9")
        seed_text = params.pop("seed", "0")
        if params:
            raise _fail(f"unknown stochastic parameters: {sorted(params)}")
        try:
            return StochasticMockProvider(
                sensitivity=float(sens_text),
                specificity=float(spec_text),
                error_labels=labels,
                seed=int(seed_text),
            )
        except ValueError as exc:
            raise _fail(f"bad stochastic provider parameters: {exc}")
    if kind == "http":
        if not rest:
            raise _fail("http provider needs a JSON config path")
        config_path = Path(rest)
        if not config_path.is_file():
            raise _fail(f"provider config not found: {config_path}")
        raw = json.loads(config_path.read_text("utf-8"))
        try:
            config = ProviderConfig(
                base_url=raw["base_url"],
                api_key_ref=raw.get("api_key_ref", ""),
                timeout=float(raw.get("timeout", 120.0)),
                max_retries=int(raw.get("max_retries", 3)),
                max_parallel=int(raw.get("max_parallel", 4)),
                backoff_base=float(raw.get("backoff_base", 0.5)),
            )
            return HttpProvider(config)
        except (KeyError, ValueError, GatewayError) as exc:
            raise _fail(f"bad provider config: {exc}")
    raise _fail(f"unknown provider kind: {kind!r} (scripted/stochastic/http)")


def _parse_frameworks(text: str) -> list[Framework]:
    frameworks = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            frameworks.append(Framework(item))
        except ValueError:
            raise _fail(f"unknown framework: {item!r} (expected f1, f2, f3)")
    if not frameworks:
        raise _fail("frameworks must be nonempty")
    if len(set(frameworks)) != len(frameworks):
        raise _fail("duplicate framework in list")
    return frameworks


def _load_prices(path: str | None) -> PriceTable:
    if path is None:
        return DEFAULT_PRICES
    try:
        return PriceTable.from_json(path)
    except (OSError, ValueError) as exc:
        raise _fail(f"bad price file: {exc}")


def _guard_outputs(paths: list[Path], force: bool) -> None:
    existing = [str(p) for p in paths if p.exists()]
    if existing and not force:
        raise _fail(
            "refusing to overwrite existing outputs (use --force): "
            + ", ".join(existing)
        )


def _parse_fee_range(text: str) -> tuple[str, str, str]:
    parts = text.split(":")
    if len(parts) != 3:
        raise _fail(f"fee range must be lo:hi:step, got {text!r}")
    return parts[0], parts[1], parts[2]


@click.group()
def main() -> None:
    """Flag internal errors in radiology reports with multi-pass LLM pipelines."""


@main.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path())
@click.option("--format", "corpus_format", default="csv", show_default=True,
              type=click.Choice(["csv", "jsonl"]))
@click.option("--provider", "provider_spec", required=True,
              help="scripted:FIXTURES | stochastic:K=V,... | http:CONFIG.json")
@click.option("--frameworks", default="f1,f2,f3", show_default=True)
@click.option("--lightweight", default="gpt-4.1-nano", show_default=True,
              help="Model for the extraction pass.")
@click.option("--advanced", default="o3", show_default=True,
              help="Model for detection and verification passes.")
@click.option("--sample", default=None,
              help="Stratified subsample, e.g. xray=250,ct=100.")
@click.option("--seed", default=0, show_default=True, help="Sampling seed.")
@click.option("--parallelism", default=4, show_default=True)
@click.option("--prompt-dir", default=None, type=click.Path(),
              help="Directory overriding the built-in pass prompts.")
@click.option("--prices", "prices_path", default=None, type=click.Path(),
              help="JSON price table: model -> {input_per_1m, output_per_1m}.")
@click.option("--review-fee", default="3.00", show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--force", is_flag=True, help="Overwrite existing outputs.")
def run(
    corpus_path: str,
    corpus_format: str,
    provider_spec: str,
    frameworks: str,
    lightweight: str,
    advanced: str,
    sample: str | None,
    seed: int,
    parallelism: int,
    prompt_dir: str | None,
    prices_path: str | None,
    review_fee: str,
    out_dir: str,
    force: bool,
) -> None:
    """Run detection frameworks over a corpus and write outcomes + costs.

    Exits nonzero if any report failed after retries.
    """
    framework_list = _parse_frameworks(frameworks)
    if parallelism < 1:
        raise _fail("parallelism must be >= 1")
    if not Path(corpus_path).is_file():
        raise _fail(f"corpus file not found: {corpus_path}")
    try:
        corpus = load_corpus(corpus_path, format=corpus_format)
    except (CorpusError, ValueError) as exc:
        raise _fail(f"corpus rejected: {exc}")
    if sample is not None:
        per_stratum: dict[Modality, int] = {}
        for item in sample.split(","):
            name, _, count = item.partition("=")
            try:
                per_stratum[Modality(name.strip())] = int(count)
            except ValueError:
                raise _fail(f"bad sample spec item: {item!r}")
        try:
            corpus = stratified_sample(corpus, SamplingSpec(per_stratum, seed))
        except CorpusError as exc:
            raise _fail(str(exc))
    if len(corpus) == 0:
        raise _fail("corpus is empty")

    provider = _parse_provider(provider_spec)
    prices = _load_prices(prices_path)
    try:
        models = {
            LIGHTWEIGHT: ModelSpec(model_name=lightweight, role=LIGHTWEIGHT),
            ADVANCED: ModelSpec(model_name=advanced, role=ADVANCED),
        }
    except ValueError as exc:
        raise _fail(str(exc))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outcome_paths = {
        fw: out / f"outcomes_{fw.value}.jsonl" for fw in framework_list
    }
    tally_path = out / "token_tally.csv"
    table_txt = out / "cost_table.txt"
    table_csv = out / "cost_table.csv"
    summary_path = out / "cost_summary.json"
    _guard_outputs(
        [*outcome_paths.values(), tally_path, table_txt, table_csv, summary_path],
        force,
    )

    all_outcomes = []
    failed_count = 0
    for framework in framework_list:
        try:
            outcomes = run_batch(
                framework,
                corpus.reports,
                provider,
                models,
                parallelism=parallelism,
                prompt_dir=prompt_dir,
            )
        except PipelineConfigError as exc:
            raise _fail(str(exc))
        export_outcomes(outcomes, outcome_paths[framework])
        failures = [o for o in outcomes if o.failed]
        failed_count += len(failures)
        flags = sum(1 for o in outcomes if o.flagged)
        click.echo(
            f"{framework.value}: {len(outcomes)} reports, {flags} flagged, "
            f"{len(failures)} failed -> {outcome_paths[framework]}"
        )
        all_outcomes.extend(outcomes)

    tally = TokenTally.from_outcomes(all_outcomes)
    with open(tally_path, "w", encoding="utf-8") as fh:
        fh.write("framework,pass,model,calls,input_tokens,output_tokens\n")
        for row in tally.rows:
            fh.write(
                f"{row.framework.value},{row.pass_index},{row.model_name},"
                f"{row.calls},{row.input_tokens},{row.output_tokens}\n"
            )
    try:
        table_txt.write_text(render_cost_table(tally, prices), encoding="utf-8")
        table_csv.write_text(render_cost_csv(tally, prices), encoding="utf-8")
        summary = {}
        for framework in framework_list:
            flags = sum(
                1
                for o in all_outcomes
                if o.framework is framework and o.flagged
            )
            breakdown = total_cost(
                tally.for_framework(framework), prices, flags, review_fee
            )
            summary[framework.value] = {
                "model_cost": usd(breakdown.model_cost),
                "flagged": flags,
                "review_fee": review_fee,
                "human_cost": usd(breakdown.human_cost, 2),
                "total_cost": usd(breakdown.total_cost),
            }
        summary_path.write_text(
            json.dumps(summary, indent=2) + "\n", encoding="utf-8"
        )
    except LedgerError as exc:
        click.echo(f"warning: cost table skipped ({exc})", err=True)

    if failed_count:
        click.echo(f"{failed_count} report runs failed", err=True)
        sys.exit(1)


@main.command()
@click.option("--outcomes", "outcome_paths", multiple=True, required=True,
              type=click.Path(), help="Outcome JSONL file(s); repeatable.")
@click.option("--adjudications", "adjudications_path", required=True,
              type=click.Path())
@click.option("--bootstrap-replicates", default=10_000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--force", is_flag=True)
def evaluate(
    outcome_paths: tuple[str, ...],
    adjudications_path: str,
    bootstrap_replicates: int,
    seed: int,
    out_dir: str,
    force: bool,
) -> None:
    """Score adjudicated outcomes: PPV/aTPR tables plus paired tests."""
    outcomes = []
    for path in outcome_paths:
        if not Path(path).is_file():
            raise _fail(f"outcome file not found: {path}")
        outcomes.extend(load_outcomes(path))
    if not Path(adjudications_path).is_file():
        raise _fail(f"adjudication file not found: {adjudications_path}")
    try:
        adjudications = load_adjudications(adjudications_path)
        report = evaluate_run(
            outcomes,
            adjudications,
            replicates=bootstrap_replicates,
            seed=seed,
        )
    except StatsError as exc:
        raise _fail(str(exc))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "comparison.csv"
    txt_path = out / "comparison.txt"
    _guard_outputs([csv_path, txt_path], force)
    csv_path.write_text(render_comparison_csv(report), encoding="utf-8")
    txt_path.write_text(render_comparison_table(report), encoding="utf-8")
    click.echo(render_comparison_table(report))


@main.command()
@click.option("--outcomes", "outcome_paths", multiple=True, required=True,
              type=click.Path())
@click.option("--out", "out_path", default=None, type=click.Path(),
              help="Optional CSV destination; prints a table regardless.")
@click.option("--force", is_flag=True)
def compare(
    outcome_paths: tuple[str, ...], out_path: str | None, force: bool
) -> None:
    """Compare flag behavior across frameworks before any adjudication."""
    outcomes = []
    for path in outcome_paths:
        if not Path(path).is_file():
            raise _fail(f"outcome file not found: {path}")
        outcomes.extend(load_outcomes(path))
    by_framework: dict[Framework, dict[str, bool]] = {}
    for outcome in outcomes:
        if outcome.failed:
            continue
        by_framework.setdefault(outcome.framework, {})[outcome.report_id] = (
            outcome.flagged
        )
    if len(by_framework) < 2:
        raise _fail("compare needs outcomes from at least two frameworks")
    frameworks = sorted(by_framework, key=lambda f: f.value)
    shared = set.intersection(*(set(m) for m in by_framework.values()))
    if not shared:
        raise _fail("no reports shared across all frameworks")
    ordered = sorted(shared)

    lines = ["pair,flags_a,flags_b,both,either,discordant,mcnemar_p"]
    echo_lines = []
    from itertools import combinations

    for fw_a, fw_b in combinations(frameworks, 2):
        a = [by_framework[fw_a][rid] for rid in ordered]
        b = [by_framework[fw_b][rid] for rid in ordered]
        both = sum(1 for x, y in zip(a, b) if x and y)
        either = sum(1 for x, y in zip(a, b) if x or y)
        only_a = sum(1 for x, y in zip(a, b) if x and not y)
        only_b = sum(1 for x, y in zip(a, b) if y and not x)
        p = mcnemar_exact_from_counts(only_a, only_b).p_value
        pair = f"{fw_a.value} vs {fw_b.value}"
        lines.append(
            f"{pair},{sum(a)},{sum(b)},{both},{either},{only_a + only_b},{p:.6f}"
        )
        echo_lines.append(
            f"{pair}: flags {sum(a)} vs {sum(b)}, both {both}, "
            f"either {either}, McNemar p={p:.4f} (flag discordance)"
        )
    click.echo(f"shared reports: {len(ordered)}")
    for line in echo_lines:
        click.echo(line)
    if out_path is not None:
        destination = Path(out_path)
        _guard_outputs([destination], force)
        destination.write_text("\n".join(lines) + "\n", encoding="utf-8")


@main.command("cost-report")
@click.option("--outcomes", "outcome_paths", multiple=True, required=True,
              type=click.Path())
@click.option("--prices", "prices_path", default=None, type=click.Path())
@click.option("--review-fee", default="3.00", show_default=True)
@click.option("--fee-range", default=None,
              help="lo:hi:step sweep written as a cost curve CSV.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--force", is_flag=True)
def cost_report(
    outcome_paths: tuple[str, ...],
    prices_path: str | None,
    review_fee: str,
    fee_range: str | None,
    out_dir: str,
    force: bool,
) -> None:
    """Price recorded outcomes: per-pass table, totals, optional fee sweep."""
    outcomes = []
    for path in outcome_paths:
        if not Path(path).is_file():
            raise _fail(f"outcome file not found: {path}")
        outcomes.extend(load_outcomes(path))
    if not outcomes:
        raise _fail("no outcomes loaded")
    prices = _load_prices(prices_path)
    tally = TokenTally.from_outcomes(outcomes)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table_txt = out / "cost_table.txt"
    table_csv = out / "cost_table.csv"
    summary_path = out / "cost_summary.json"
    curve_path = out / "cost_curve.csv"
    targets = [table_txt, table_csv, summary_path]
    if fee_range is not None:
        targets.append(curve_path)
    _guard_outputs(targets, force)

    frameworks = sorted({o.framework for o in outcomes}, key=lambda f: f.value)
    try:
        table_txt.write_text(render_cost_table(tally, prices), encoding="utf-8")
        table_csv.write_text(render_cost_csv(tally, prices), encoding="utf-8")
        summary = {}
        for framework in frameworks:
            flags = sum(
                1 for o in outcomes if o.framework is framework and o.flagged
            )
            breakdown = total_cost(
                tally.for_framework(framework), prices, flags, review_fee
            )
            summary[framework.value] = {
                "model_cost": usd(breakdown.model_cost),
                "flagged": flags,
                "review_fee": review_fee,
                "human_cost": usd(breakdown.human_cost, 2),
                "total_cost": usd(breakdown.total_cost),
            }
        summary_path.write_text(
            json.dumps(summary, indent=2) + "\n", encoding="utf-8"
        )
        if fee_range is not None:
            lo, hi, step = _parse_fee_range(fee_range)
            with open(curve_path, "w", encoding="utf-8") as fh:
                fh.write("framework,fee,total_cost\n")
                for framework in frameworks:
                    flags = sum(
                        1
                        for o in outcomes
                        if o.framework is framework and o.flagged
                    )
                    for fee, total in cost_curve(
                        tally.for_framework(framework),
                        prices,
                        flags,
                        (lo, hi),
                        step,
                    ):
                        fh.write(f"{framework.value},{fee},{usd(total)}\n")
    except LedgerError as exc:
        raise _fail(str(exc))
    click.echo(render_cost_table(tally, prices))


@main.command()
@click.option("--sensitivity", default="1.0", show_default=True,
              help="Comma-separated grid.")
@click.option("--specificity", default="0.90", show_default=True,
              help="Comma-separated grid.")
@click.option("--prevalence", default="0.01", show_default=True,
              help="Comma-separated grid.")
@click.option("--fee-range", default=None, help="lo:hi:step total-cost sweep.")
@click.option("--flags", "flag_count", default=0, show_default=True,
              help="Flagged-report count for the fee sweep.")
@click.option("--model-cost", "model_cost_usd", default="0", show_default=True,
              help="Fixed model bill for the fee sweep.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--force", is_flag=True)
def simulate(
    sensitivity: str,
    specificity: str,
    prevalence: str,
    fee_range: str | None,
    flag_count: int,
    model_cost_usd: str,
    out_dir: str,
    force: bool,
) -> None:
    """Project PPV, false alarms per true error, and cost over what-if grids."""

    def parse_grid(text: str, name: str) -> list[float]:
        try:
            values = [float(v) for v in text.split(",") if v.strip()]
        except ValueError:
            raise _fail(f"bad {name} grid: {text!r}")
        if not values:
            raise _fail(f"{name} grid is empty")
        return values

    sens_grid = parse_grid(sensitivity, "sensitivity")
    spec_grid = parse_grid(specificity, "specificity")
    prev_grid = parse_grid(prevalence, "prevalence")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid_path = out / "ppv_grid.csv"
    curve_path = out / "fee_curve.csv"
    targets = [grid_path]
    if fee_range is not None:
        targets.append(curve_path)
    _guard_outputs(targets, force)

    with open(grid_path, "w", encoding="utf-8") as fh:
        fh.write("sensitivity,specificity,prevalence,ppv,fp_per_tp,flag_rate\n")
        for s in sens_grid:
            for sp in spec_grid:
                for prev in prev_grid:
                    try:
                        value, fp_per_tp = expected_ppv(s, sp, prev)
                    except StatsError as exc:
                        raise _fail(str(exc))
                    flag_rate = s * prev + (1 - sp) * (1 - prev)
                    fh.write(
                        f"{s},{sp},{prev},{value:.6f},{fp_per_tp:.6f},"
                        f"{flag_rate:.6f}\n"
                    )
    click.echo(grid_path.read_text(encoding="utf-8").rstrip())

    if fee_range is not None:
        lo, hi, step = _parse_fee_range(fee_range)
        bill = Decimal(str(model_cost_usd))
        lo_d = Decimal(str(lo))
        hi_d = Decimal(str(hi))
        step_d = Decimal(str(step))
        if step_d <= 0:
            raise _fail("fee step must be > 0")
        with open(curve_path, "w", encoding="utf-8") as fh:
            fh.write("fee,total_cost\n")
            index = 0
            while True:
                fee = lo_d + index * step_d
                if fee > hi_d:
                    break
                fh.write(f"{fee},{usd(bill + flag_count * fee)}\n")
                index += 1
        click.echo(f"fee sweep -> {curve_path}")


@main.command()
@click.option("--data-dir", required=True, type=click.Path())
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@click.option("--ui", "ui_dir", default=None, type=click.Path(),
              help="Static review console directory to serve at /.")
@click.option("--token", default=None,
              help="Require this bearer token on API routes.")
def serve(
    data_dir: str, host: str, port: int, ui_dir: str | None, token: str | None
) -> None:
    """Start the human review service (blocking)."""
    from .review import serve as _serve

    _serve(data_dir, host=host, port=port, ui_dir=ui_dir, token=token)


if __name__ == "__main__":
    main()
