"""Cost accounting: token tallies, price tables, and review-fee arithmetic.

Total cost is the model bill plus the human bill: the model bill accumulates
input and output tokens per pass at per-million-token prices, the human bill
is the flagged-report count times a flat review fee.  All money math is
exact decimal; binary floating point appears only when callers format.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .outcomes import Framework, FrameworkOutcome

_PER_TOKEN = Decimal("1e-6")  # prices are stored per 1,000,000 tokens
_CENT4 = Decimal("0.0001")


class LedgerError(ValueError):
    """Unknown model price, malformed price file, or bad curve bounds."""


def _as_decimal(value: Decimal | str | int | float, what: str) -> Decimal:
    try:
        result = Decimal(str(value))
    except ArithmeticError as exc:
        raise LedgerError(f"{what} is not a number: {value!r}") from exc
    if not result.is_finite():
        raise LedgerError(f"{what} must be finite: {value!r}")
    return result


@dataclass(frozen=True)
class ModelPrice:
    """USD per 1,000,000 tokens, input and output priced separately."""

    input_per_million: Decimal
    output_per_million: Decimal

    def __post_init__(self) -> None:
        if self.input_per_million < 0 or self.output_per_million < 0:
            raise LedgerError("prices must be >= 0")


class PriceTable:
    """Model-name keyed prices; lookups for unknown models fail loudly."""

    def __init__(self, prices: Mapping[str, ModelPrice]):
        self._prices = dict(prices)

    def price_for(self, model_name: str) -> ModelPrice:
        try:
            return self._prices[model_name]
        except KeyError:
            raise LedgerError(f"no price on file for model {model_name!r}") from None

    def models(self) -> tuple[str, ...]:
        return tuple(sorted(self._prices))

    @classmethod
    def from_pairs(
        cls, pairs: Mapping[str, tuple[Decimal | str | float, Decimal | str | float]]
    ) -> "PriceTable":
        return cls(
            {
                name: ModelPrice(
                    _as_decimal(inp, f"{name} input price"),
                    _as_decimal(out, f"{name} output price"),
                )
                for name, (inp, out) in pairs.items()
            }
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "PriceTable":
        """Load ``{model: {input_per_1m, output_per_1m}}`` from a JSON file."""
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise LedgerError("price file must be a JSON object keyed by model name")
        prices: dict[str, ModelPrice] = {}
        for name, entry in raw.items():
            if (
                not isinstance(entry, dict)
                or "input_per_1m" not in entry
                or "output_per_1m" not in entry
            ):
                raise LedgerError(
                    f"price entry for {name!r} needs input_per_1m and output_per_1m"
                )
            prices[name] = ModelPrice(
                _as_decimal(entry["input_per_1m"], f"{name} input price"),
                _as_decimal(entry["output_per_1m"], f"{name} output price"),
            )
        return cls(prices)

    def to_json_dict(self) -> dict:
        return {
            name: {
                "input_per_1m": str(price.input_per_million),
                "output_per_1m": str(price.output_per_million),
            }
            for name, price in sorted(self._prices.items())
        }


DEFAULT_PRICES = PriceTable.from_pairs(
    {
        "o3": ("10", "40"),
        "gpt-4.1-nano": ("0.10", "0.40"),
        "o4-mini": ("1.10", "4.40"),
    }
)


@dataclass(frozen=True)
class TallyRow:
    """Aggregated usage for one (framework, pass, model) cell."""

    framework: Framework
    pass_index: int
    model_name: str
    calls: int
    input_tokens: int
    output_tokens: int

    def __post_init__(self) -> None:
        if self.calls < 0 or self.input_tokens < 0 or self.output_tokens < 0:
            raise LedgerError("tally counts must be >= 0")


@dataclass(frozen=True)
class TokenTally:
    """Sum of PassRecord usage grouped by (framework, pass_index, model)."""

    rows: tuple[TallyRow, ...]

    @classmethod
    def from_outcomes(cls, outcomes: Iterable[FrameworkOutcome]) -> "TokenTally":
        """Aggregate outcomes, failed runs included: their tokens were spent."""
        cells: dict[tuple[str, int, str], list[int]] = {}
        for outcome in outcomes:
            for record in outcome.passes:
                key = (outcome.framework.value, record.pass_index, record.model_name)
                cell = cells.setdefault(key, [0, 0, 0])
                cell[0] += 1
                cell[1] += record.input_tokens
                cell[2] += record.output_tokens
        rows = tuple(
            TallyRow(
                framework=Framework(fw),
                pass_index=idx,
                model_name=model,
                calls=calls,
                input_tokens=in_tok,
                output_tokens=out_tok,
            )
            for (fw, idx, model), (calls, in_tok, out_tok) in sorted(cells.items())
        )
        return cls(rows)

    @classmethod
    def single(
        cls,
        framework: Framework | str,
        pass_index: int,
        model_name: str,
        input_tokens: int,
        output_tokens: int,
        calls: int = 1,
    ) -> "TokenTally":
        """One-row tally, handy for pricing published token totals."""
        return cls(
            (
                TallyRow(
                    framework=Framework(framework),
                    pass_index=pass_index,
                    model_name=model_name,
                    calls=calls,
                    input_tokens=input_tokens,
                    output_tokens=output_tokens,
                ),
            )
        )

    def for_framework(self, framework: Framework | str) -> "TokenTally":
        framework = Framework(framework)
        return TokenTally(tuple(r for r in self.rows if r.framework is framework))

    def merged(self, other: "TokenTally") -> "TokenTally":
        cells: dict[tuple[str, int, str], list[int]] = {}
        for row in self.rows + other.rows:
            key = (row.framework.value, row.pass_index, row.model_name)
            cell = cells.setdefault(key, [0, 0, 0])
            cell[0] += row.calls
            cell[1] += row.input_tokens
            cell[2] += row.output_tokens
        return TokenTally(
            tuple(
                TallyRow(Framework(fw), idx, model, c, i, o)
                for (fw, idx, model), (c, i, o) in sorted(cells.items())
            )
        )


@dataclass(frozen=True)
class CostBreakdown:
    """Model bill + human bill = total, with the inputs that produced them."""

    model_cost: Decimal
    human_cost: Decimal
    total_cost: Decimal
    flagged_count: int
    review_fee: Decimal

    def __post_init__(self) -> None:
        if self.total_cost != self.model_cost + self.human_cost:
            raise LedgerError("total must equal model cost plus human cost")
        if self.human_cost != self.flagged_count * self.review_fee:
            raise LedgerError("human cost must equal flagged count times fee")


def row_cost(row: TallyRow, prices: PriceTable) -> Decimal:
    price = prices.price_for(row.model_name)
    return (
        Decimal(row.input_tokens) * price.input_per_million
        + Decimal(row.output_tokens) * price.output_per_million
    ) * _PER_TOKEN


def model_cost(tally: TokenTally, prices: PriceTable) -> Decimal:
    """Exact-decimal model bill summed over every tally row."""
    return sum((row_cost(row, prices) for row in tally.rows), Decimal(0))


def human_cost(flagged_count: int, review_fee: Decimal | str | float) -> Decimal:
    if flagged_count < 0:
        raise LedgerError("flagged_count must be >= 0")
    fee = _as_decimal(review_fee, "review fee")
    if fee < 0:
        raise LedgerError("review fee must be >= 0")
    return flagged_count * fee


def total_cost(
    tally: TokenTally,
    prices: PriceTable,
    flagged_count: int,
    review_fee: Decimal | str | float,
) -> CostBreakdown:
    bill = model_cost(tally, prices)
    human = human_cost(flagged_count, review_fee)
    return CostBreakdown(
        model_cost=bill,
        human_cost=human,
        total_cost=bill + human,
        flagged_count=flagged_count,
        review_fee=_as_decimal(review_fee, "review fee"),
    )


def cost_curve(
    tally: TokenTally,
    prices: PriceTable,
    flagged_count: int,
    fee_range: tuple[Decimal | str | float, Decimal | str | float],
    step: Decimal | str | float,
) -> list[tuple[Decimal, Decimal]]:
    """Total cost as a function of the review fee: affine with slope |E|.

    Returns (fee, total) points from lo to hi inclusive, in exact decimal
    steps so no float accumulation creeps in.
    """
    lo = _as_decimal(fee_range[0], "fee range low")
    hi = _as_decimal(fee_range[1], "fee range high")
    step_d = _as_decimal(step, "fee step")
    if lo > hi:
        raise LedgerError("fee range low must be <= high")
    if step_d <= 0:
        raise LedgerError("fee step must be > 0")
    bill = model_cost(tally, prices)
    points: list[tuple[Decimal, Decimal]] = []
    index = 0
    while True:
        fee = lo + index * step_d
        if fee > hi:
            break
        points.append((fee, bill + flagged_count * fee))
        index += 1
    return points


def usd(amount: Decimal, places: int = 4) -> str:
    """Format an exact amount for display at fixed decimals, half-up."""
    quantum = Decimal(1).scaleb(-places)
    return str(amount.quantize(quantum, rounding=ROUND_HALF_UP))


def render_cost_csv(tally: TokenTally, prices: PriceTable) -> str:
    """Machine-readable per-pass cost rows plus per-framework totals."""
    import csv

    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(
        [
            "framework",
            "pass",
            "model",
            "calls",
            "input_tokens",
            "output_tokens",
            "cost_usd",
        ]
    )
    for row in tally.rows:
        writer.writerow(
            [
                row.framework.value,
                row.pass_index,
                row.model_name,
                row.calls,
                row.input_tokens,
                row.output_tokens,
                usd(row_cost(row, prices)),
            ]
        )
    for framework in sorted({r.framework for r in tally.rows}, key=lambda f: f.value):
        sub = tally.for_framework(framework)
        writer.writerow(
            [
                framework.value,
                "total",
                "",
                sum(r.calls for r in sub.rows),
                sum(r.input_tokens for r in sub.rows),
                sum(r.output_tokens for r in sub.rows),
                usd(model_cost(sub, prices)),
            ]
        )
    return buffer.getvalue()


def render_cost_table(tally: TokenTally, prices: PriceTable) -> str:
    """Aligned-text cost table: one row per pass, a total row per framework."""
    headers = (
        "framework",
        "pass",
        "model",
        "calls",
        "input tokens",
        "output tokens",
        "cost (USD)",
    )
    body: list[tuple[str, ...]] = []
    for row in tally.rows:
        body.append(
            (
                row.framework.value,
                str(row.pass_index),
                row.model_name,
                str(row.calls),
                f"{row.input_tokens:,}",
                f"{row.output_tokens:,}",
                usd(row_cost(row, prices)),
            )
        )
    for framework in sorted({r.framework for r in tally.rows}, key=lambda f: f.value):
        sub = tally.for_framework(framework)
        body.append(
            (
                framework.value,
                "total",
                "",
                str(sum(r.calls for r in sub.rows)),
                f"{sum(r.input_tokens for r in sub.rows):,}",
                f"{sum(r.output_tokens for r in sub.rows):,}",
                usd(model_cost(sub, prices)),
            )
        )
    widths = [
        max(len(headers[i]), *(len(line[i]) for line in body)) if body else len(headers[i])
        for i in range(len(headers))
    ]

    def fmt(line: Sequence[str]) -> str:
        return "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(line)).rstrip()

    rule = "  ".join("-" * w for w in widths)
    return "\n".join([fmt(headers), rule, *(fmt(line) for line in body)]) + "\n"
