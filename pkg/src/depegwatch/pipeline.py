"""File formats and orchestration for the command-line pipeline.

CSV schemas (exact headers):

* trades.csv:       ts,pool_id,trader,token_in,amount_in,token_out,amount_out
* liquidity.csv:    ts,pool_id,provider,token,delta,lp_token_delta
* reserves.csv:     ts,pool_id,token,balance,lp_supply
* prices.csv:       ts,token,usd_price
* changepoints.csv: ts,step,run_length,probability
* runlength.csv:    ts,step,run_length,probability
* labels.csv:       ts,deviation
* scores.csv:       pool,metric,F,P,R,alpha,beta,kappa
* metric files:     ts,value

Decimal values are written as shortest round-trip strings, so re-reading a
file reproduces the exact float bits. Config files are JSON; every command
writes a manifest recording sha256 digests of its inputs and outputs.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass
from importlib import metadata
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import metrics, stableswap
from .core import (
    EventStream,
    LiquidityEvent,
    MetricSeries,
    MissingPriceError,
    PriceSample,
    PriceTable,
    ReserveSnapshot,
    TokenId,
    TradeEvent,
    ValidationError,
    aggregate,
    log_diff,
)
from .simulator import DepegEvent, ScenarioConfig, ScenarioOutput

try:
    TOOL_VERSION = metadata.version("depegwatch")
except metadata.PackageNotFoundError:  # running from a source tree
    TOOL_VERSION = "0.0.0-dev"

TRADES_HEADER = ["ts", "pool_id", "trader", "token_in", "amount_in",
                 "token_out", "amount_out"]
LIQUIDITY_HEADER = ["ts", "pool_id", "provider", "token", "delta",
                    "lp_token_delta"]
RESERVES_HEADER = ["ts", "pool_id", "token", "balance", "lp_supply"]
PRICES_HEADER = ["ts", "token", "usd_price"]
CHANGEPOINTS_HEADER = ["ts", "step", "run_length", "probability"]
LABELS_HEADER = ["ts", "deviation"]
SCORES_HEADER = ["pool", "metric", "F", "P", "R", "alpha", "beta", "kappa"]
METRIC_HEADER = ["ts", "value"]

METRIC_NAMES = ("shannonsEntropy", "giniCoefficient", "netSwapFlow",
                "netLPFlow", "logReturns", "300.Markout", "sharkflow", "pin")

# Transform applied to a raw metric series before standardizing + detecting.
DEFAULT_TRANSFORMS = {
    "shannonsEntropy": "log_diff",
    "giniCoefficient": "diff",
}


def fmt(x: float) -> str:
    """Shortest decimal string that round-trips to the same float."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


@dataclass(frozen=True)
class PoolRegistryEntry:
    pool_id: str
    name: str
    address: str
    tokens: tuple[TokenId, ...]
    amp: float
    fee: float

    def __post_init__(self) -> None:
        if len(self.tokens) < 2:
            raise ValidationError(f"pool {self.pool_id} needs >= 2 tokens")


def load_pool_registry(path: str) -> dict[str, PoolRegistryEntry]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    registry: dict[str, PoolRegistryEntry] = {}
    for pool in doc.get("pools", []):
        entry = PoolRegistryEntry(
            pool_id=pool["pool_id"],
            name=pool.get("name", pool["pool_id"]),
            address=pool.get("address", "0" * 40),
            tokens=tuple(TokenId(t["symbol"], t.get("address"))
                         for t in pool["tokens"]),
            amp=float(pool["amp"]),
            fee=float(pool.get("fee", 0.0)),
        )
        if entry.pool_id in registry:
            raise ValidationError(f"duplicate pool_id {entry.pool_id}")
        registry[entry.pool_id] = entry
    if not registry:
        raise ValidationError(f"no pools defined in {path}")
    return registry


KNOWN_PROVIDERS = ("ccxt", "chainlink", "file")


def load_price_sources(path: str) -> dict[str, tuple[str, str]]:
    """Parse the token -> (provider, locator) map; live providers are
    accepted in config but degrade to an offline error when fetched."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    mapping = doc.get("token_exchange_map")
    if mapping is None:
        raise ValidationError(f"{path} lacks a 'token_exchange_map' object")
    out = {}
    for symbol, pair in mapping.items():
        if len(pair) != 2 or pair[0] not in KNOWN_PROVIDERS:
            raise ValidationError(
                f"unsupported price source for {symbol}: {pair!r}")
        out[symbol] = (pair[0], pair[1])
    return out


def fetch_prices(sources: Mapping[str, tuple[str, str]], symbol: str) -> None:
    provider, _ = sources.get(symbol, (None, None))
    if provider in ("ccxt", "chainlink"):
        raise ValidationError(
            f"offline: provider {provider!r} for {symbol} is not fetchable; "
            "supply prices.csv")
    raise ValidationError(f"no price source for {symbol}; supply prices.csv")


class _Reader:
    """CSV reader that validates the header and reports 1-based line numbers
    (the header is line 1)."""

    def __init__(self, path: str, header: list[str]):
        self.path = path
        self.header = header

    def rows(self) -> Iterable[tuple[int, dict[str, str]]]:
        with open(self.path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                first = next(reader)
            except StopIteration:
                raise ValidationError(f"{self.path}: empty file") from None
            if first != self.header:
                raise ValidationError(
                    f"{self.path}:1: header {first!r} does not match "
                    f"schema {self.header!r}")
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(self.header):
                    raise ValidationError(
                        f"{self.path}:{lineno}: expected "
                        f"{len(self.header)} fields, got {len(row)}")
                yield lineno, dict(zip(self.header, row))


def _parse_int(path: str, lineno: int, field: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ValidationError(
            f"{path}:{lineno}: field {field} must be an integer, "
            f"got {raw!r}") from None


def _parse_float(path: str, lineno: int, field: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ValidationError(
            f"{path}:{lineno}: field {field} must be a number, "
            f"got {raw!r}") from None


def _check_sorted(path: str, ts_list: Sequence[int], period: int) -> None:
    for k in range(1, len(ts_list)):
        if ts_list[k] < ts_list[k - 1] - period:
            raise ValidationError(
                f"{path}: timestamps unsorted beyond one period at row {k + 2}")


def ingest(
    data_dir: str,
    registry: Mapping[str, PoolRegistryEntry],
    period: int = 3600,
) -> tuple[dict[str, EventStream], PriceTable]:
    """Load and validate the CSV bundle in ``data_dir``.

    Returns one EventStream per pool plus the shared price table. Rows that
    violate type invariants fail with file:line messages; streams may arrive
    up to one period out of order and are stably sorted afterwards.
    """
    token_lookup: dict[tuple[str, str], TokenId] = {}
    for entry in registry.values():
        for token in entry.tokens:
            token_lookup[(entry.pool_id, token.symbol)] = token

    def resolve(path: str, lineno: int, pool_id: str, symbol: str) -> TokenId:
        if pool_id not in registry:
            raise ValidationError(f"{path}:{lineno}: unknown pool_id {pool_id!r}")
        token = token_lookup.get((pool_id, symbol))
        if token is None:
            raise ValidationError(
                f"{path}:{lineno}: token {symbol!r} not in pool {pool_id!r}")
        return token

    trades: dict[str, list[TradeEvent]] = {p: [] for p in registry}
    path = os.path.join(data_dir, "trades.csv")
    if os.path.exists(path):
        ts_seen: list[int] = []
        for lineno, row in _Reader(path, TRADES_HEADER).rows():
            ts = _parse_int(path, lineno, "ts", row["ts"])
            pool_id = row["pool_id"]
            amount_in = _parse_float(path, lineno, "amount_in", row["amount_in"])
            amount_out = _parse_float(path, lineno, "amount_out", row["amount_out"])
            try:
                trade = TradeEvent(
                    ts=ts, trader=row["trader"],
                    token_in=resolve(path, lineno, pool_id, row["token_in"]),
                    amount_in=amount_in,
                    token_out=resolve(path, lineno, pool_id, row["token_out"]),
                    amount_out=amount_out)
            except ValidationError as err:
                raise ValidationError(f"{path}:{lineno}: {err}") from None
            trades[pool_id].append(trade)
            ts_seen.append(ts)
        _check_sorted(path, ts_seen, period)

    liquidity: dict[str, list[LiquidityEvent]] = {p: [] for p in registry}
    path = os.path.join(data_dir, "liquidity.csv")
    if os.path.exists(path):
        pending: dict | None = None
        ts_seen = []

        def flush() -> None:
            if pending is not None:
                liquidity[pending["pool_id"]].append(LiquidityEvent(
                    ts=pending["ts"], provider=pending["provider"],
                    deltas=pending["deltas"],
                    lp_token_delta=pending["lp_token_delta"]))

        for lineno, row in _Reader(path, LIQUIDITY_HEADER).rows():
            ts = _parse_int(path, lineno, "ts", row["ts"])
            pool_id = row["pool_id"]
            token = resolve(path, lineno, pool_id, row["token"])
            delta = _parse_float(path, lineno, "delta", row["delta"])
            lp_delta = _parse_float(path, lineno, "lp_token_delta",
                                    row["lp_token_delta"])
            key = (ts, pool_id, row["provider"], lp_delta)
            if pending is not None and pending["key"] == key:
                pending["deltas"][token] = pending["deltas"].get(token, 0.0) + delta
            else:
                flush()
                pending = {"key": key, "ts": ts, "pool_id": pool_id,
                           "provider": row["provider"],
                           "deltas": {token: delta}, "lp_token_delta": lp_delta}
            ts_seen.append(ts)
        flush()
        _check_sorted(path, ts_seen, period)

    snapshots: dict[str, list[ReserveSnapshot]] = {p: [] for p in registry}
    path = os.path.join(data_dir, "reserves.csv")
    if os.path.exists(path):
        grouped: dict[tuple[str, int], dict] = {}
        order: list[tuple[str, int]] = []
        for lineno, row in _Reader(path, RESERVES_HEADER).rows():
            ts = _parse_int(path, lineno, "ts", row["ts"])
            pool_id = row["pool_id"]
            token = resolve(path, lineno, pool_id, row["token"])
            balance = _parse_float(path, lineno, "balance", row["balance"])
            if balance < 0:
                raise ValidationError(f"{path}:{lineno}: negative balance")
            lp_supply = _parse_float(path, lineno, "lp_supply", row["lp_supply"])
            key = (pool_id, ts)
            if key not in grouped:
                grouped[key] = {"lp_supply": lp_supply, "balances": {}}
                order.append(key)
            grouped[key]["balances"][token] = balance
        for pool_id, ts in order:
            entry = registry[pool_id]
            doc = grouped[(pool_id, ts)]
            missing = [t.symbol for t in entry.tokens
                       if t not in doc["balances"]]
            if missing:
                raise ValidationError(
                    f"{path}: snapshot at ts {ts} for {pool_id} missing "
                    f"balances for {missing}")
            snapshots[pool_id].append(ReserveSnapshot(
                ts=ts,
                balances=tuple(doc["balances"][t] for t in entry.tokens),
                lp_supply=doc["lp_supply"]))
        for pool_id in snapshots:
            _check_sorted(path, [s.ts for s in snapshots[pool_id]], period)

    samples: list[PriceSample] = []
    path = os.path.join(data_dir, "prices.csv")
    if os.path.exists(path):
        symbol_tokens: dict[str, TokenId] = {}
        for entry in registry.values():
            for token in entry.tokens:
                symbol_tokens.setdefault(token.symbol, token)
        for lineno, row in _Reader(path, PRICES_HEADER).rows():
            ts = _parse_int(path, lineno, "ts", row["ts"])
            px = _parse_float(path, lineno, "usd_price", row["usd_price"])
            token = symbol_tokens.get(row["token"], TokenId(row["token"]))
            try:
                samples.append(PriceSample(ts, token, px))
            except ValidationError as err:
                raise ValidationError(f"{path}:{lineno}: {err}") from None

    streams = {}
    for pool_id, entry in registry.items():
        streams[pool_id] = EventStream(
            pool_id=pool_id, tokens=entry.tokens,
            trades=tuple(sorted(trades[pool_id], key=lambda e: e.ts)),
            liquidity=tuple(sorted(liquidity[pool_id], key=lambda e: e.ts)),
            snapshots=tuple(sorted(snapshots[pool_id], key=lambda s: s.ts)))
    return streams, PriceTable(samples)


# ---------------------------------------------------------------------------
# Writers


def write_csv(path: str, header: list[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([cell if isinstance(cell, str) else fmt(cell)
                             for cell in row])


def write_metric_series(path: str, series: MetricSeries) -> None:
    write_csv(path, METRIC_HEADER, series.points)


def read_metric_series(path: str, metric_name: str = "",
                       pool_id: str = "") -> MetricSeries:
    ts, values = [], []
    for lineno, row in _Reader(path, METRIC_HEADER).rows():
        ts.append(_parse_int(path, lineno, "ts", row["ts"]))
        values.append(_parse_float(path, lineno, "value", row["value"]))
    return MetricSeries(metric_name, pool_id,
                        np.array(ts, dtype=np.int64), np.array(values))


def read_labels(path: str) -> list[tuple[int, float]]:
    out = []
    for lineno, row in _Reader(path, LABELS_HEADER).rows():
        out.append((_parse_int(path, lineno, "ts", row["ts"]),
                    _parse_float(path, lineno, "deviation", row["deviation"])))
    return out


def read_changepoints(path: str) -> list[int]:
    return [_parse_int(path, lineno, "ts", row["ts"])
            for lineno, row in _Reader(path, CHANGEPOINTS_HEADER).rows()]


def read_score_rows(path: str) -> list[list[str]]:
    return [[row[c] for c in SCORES_HEADER]
            for _, row in _Reader(path, SCORES_HEADER).rows()]


def append_score_row(path: str, row: Sequence, append: bool = False) -> None:
    """Write (or append to) a scores.csv table with the pinned column set."""
    fresh = not (append and os.path.exists(path))
    with open(path, "w" if fresh else "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(SCORES_HEADER)
        writer.writerow([cell if isinstance(cell, str) else fmt(cell)
                         for cell in row])


def read_price_samples(path: str, symbol: str | None = None) -> list[PriceSample]:
    samples = []
    for lineno, row in _Reader(path, PRICES_HEADER).rows():
        if symbol is not None and row["token"] != symbol:
            continue
        try:
            samples.append(PriceSample(
                _parse_int(path, lineno, "ts", row["ts"]),
                TokenId(row["token"]),
                _parse_float(path, lineno, "usd_price", row["usd_price"])))
        except ValidationError as err:
            raise ValidationError(f"{path}:{lineno}: {err}") from None
    return samples


def write_scenario(out_dir: str, output: ScenarioOutput) -> list[str]:
    """Write the CSV bundle, registry, and truth schedule for a scenario."""
    os.makedirs(out_dir, exist_ok=True)
    cfg = output.config
    stream = output.stream
    written = []

    path = os.path.join(out_dir, "trades.csv")
    write_csv(path, TRADES_HEADER,
              [(t.ts, stream.pool_id, t.trader, t.token_in.symbol, t.amount_in,
                t.token_out.symbol, t.amount_out) for t in stream.trades])
    written.append(path)

    path = os.path.join(out_dir, "liquidity.csv")
    rows = []
    for event in stream.liquidity:
        for token in cfg.tokens:
            if token in event.deltas:
                rows.append((event.ts, stream.pool_id, event.provider,
                             token.symbol, event.deltas[token],
                             event.lp_token_delta))
    write_csv(path, LIQUIDITY_HEADER, rows)
    written.append(path)

    path = os.path.join(out_dir, "reserves.csv")
    rows = []
    for snap in stream.snapshots:
        for token, balance in zip(cfg.tokens, snap.balances):
            rows.append((snap.ts, stream.pool_id, token.symbol, balance,
                         snap.lp_supply))
    write_csv(path, RESERVES_HEADER, rows)
    written.append(path)

    path = os.path.join(out_dir, "prices.csv")
    write_csv(path, PRICES_HEADER,
              [(p.ts, p.token.symbol, p.usd_price) for p in output.prices])
    written.append(path)

    path = os.path.join(out_dir, "registry.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"pools": [{
            "pool_id": stream.pool_id,
            "name": "synthetic scenario pool",
            "tokens": [{"symbol": t.symbol, "address": t.address}
                       for t in cfg.tokens],
            "amp": cfg.pool.amp,
            "fee": cfg.pool.fee,
        }]}, fh, indent=2)
        fh.write("\n")
    written.append(path)

    path = os.path.join(out_dir, "truth.json")
    truth = {
        "rng": cfg.rng,
        "seed": cfg.seed,
        "truncated": output.truncated,
        "depeg_events": [{
            "token": e.token.symbol,
            "start": e.start,
            "target_price": e.target_price,
            "ramp": e.ramp,
            "recovery": e.recovery,
        } for e in cfg.depeg_events],
        "external_prices": {
            token.symbol: [[int(t), float(v)] for t, v in series.points]
            for token, series in sorted(output.external_prices.items(),
                                        key=lambda kv: kv[0].symbol)
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=2)
        fh.write("\n")
    written.append(path)
    return written


def load_scenario_config(path: str) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        tokens = tuple(TokenId(t["symbol"], t.get("address"))
                       for t in doc["tokens"])
        by_symbol = {t.symbol: t for t in tokens}
        pool = stableswap.PoolState(
            balances=tuple(doc["pool"]["balances"]),
            amp=doc["pool"]["amp"],
            fee=doc["pool"].get("fee", 0.0),
            lp_supply=doc["pool"]["lp_supply"])
        events = tuple(DepegEvent(
            token=by_symbol[e["token"]],
            start=e["start"],
            target_price=e["target_price"],
            ramp=e["ramp"],
            recovery=e.get("recovery"),
        ) for e in doc.get("depeg_events", []))
        return ScenarioConfig(
            seed=doc["seed"],
            duration=doc["duration"],
            step=doc["step"],
            tokens=tokens,
            pool=pool,
            peg_prices={by_symbol[s]: p
                        for s, p in doc["peg_prices"].items()},
            depeg_events=events,
            noise_vol=doc.get("noise_vol", 0.0),
            arb_threshold=doc.get("arb_threshold", 0.002),
            n_noise_traders=doc.get("n_noise_traders", 0),
            n_informed=doc.get("n_informed", 0),
            informed_lead=doc.get("informed_lead", 0),
            informed_fraction=doc.get("informed_fraction", 0.005),
            noise_fraction=doc.get("noise_fraction", 1e-4),
            lp_event_prob=doc.get("lp_event_prob", 0.0),
            lp_fraction=doc.get("lp_fraction", 0.005),
            snapshot_period=doc.get("snapshot_period", 3600),
            rng=doc.get("rng", "philox"),
        )
    except KeyError as err:
        raise ValidationError(f"{path}: missing scenario field {err}") from None


# ---------------------------------------------------------------------------
# Metric orchestration


def compute_pool_metrics(
    stream: EventStream,
    prices: PriceTable,
    entry: PoolRegistryEntry,
    cfg: metrics.MetricConfig | None = None,
    period: int = 3600,
) -> list[tuple[str, TokenId | None, MetricSeries]]:
    """Every metric series for one pool, named exactly like the score tables."""
    cfg = cfg or metrics.MetricConfig(window=period)
    out: list[tuple[str, TokenId | None, MetricSeries]] = []
    pool_id = stream.pool_id

    if stream.snapshots:
        snap_points_entropy = [
            (s.ts, metrics.shannon_entropy(s.balances)) for s in stream.snapshots]
        out.append(("shannonsEntropy", None, aggregate(
            snap_points_entropy, period, "last",
            metric_name="shannonsEntropy", pool_id=pool_id)))
        snap_points_gini = [
            (s.ts, metrics.gini(s.balances)) for s in stream.snapshots]
        out.append(("giniCoefficient", None, aggregate(
            snap_points_gini, period, "last",
            metric_name="giniCoefficient", pool_id=pool_id)))

    for token in stream.tokens:
        series = metrics.net_swap_flow(stream.trades, token, period,
                                       pool_id=pool_id)
        out.append(("netSwapFlow", token, series))
        series = metrics.net_lp_flow(stream.liquidity, token, period,
                                     pool_id=pool_id)
        out.append(("netLPFlow", token, series))
        try:
            price_series = prices.series(token, period)
        except MissingPriceError:
            price_series = None
        if price_series is not None and len(price_series) >= 2:
            out.append(("logReturns", token,
                        log_diff(price_series).with_name("logReturns")))

    markout_name = f"{cfg.markout_horizon}.Markout"
    markout_series, _ = metrics.pool_markout_series(
        stream.trades, prices, cfg.markout_horizon, period,
        pool_id=pool_id, tolerance=cfg.price_tolerance)
    out.append((markout_name, None, markout_series.with_name(markout_name)))

    if stream.trades:
        sharks = metrics.classify_sharks(stream.trades, prices, cfg)
        for token in stream.tokens:
            out.append(("sharkflow", token, metrics.shark_flow(
                stream.trades, sharks, token, period, pool_id=pool_id)))

        for token in stream.tokens:
            buckets = metrics.order_count_buckets(stream.trades, token,
                                                  cfg.pin_bucket)
            if len(buckets) >= cfg.pin_window:
                out.append(("pin", token, metrics.rolling_pin(
                    buckets, cfg.pin_window, pool_id=pool_id)))
    return out


def metric_filename(pool_id: str, metric_name: str,
                    token: TokenId | None) -> str:
    stem = f"{pool_id}__{metric_name}"
    if token is not None:
        stem += f"__{token.symbol}"
    return stem + ".csv"


def transform_series(series: MetricSeries, transform: str) -> MetricSeries:
    if transform == "none":
        return series
    if transform == "log_diff":
        return log_diff(series)
    if transform == "diff":
        if len(series) < 2:
            return MetricSeries(series.metric_name, series.pool_id,
                                np.array([], dtype=np.int64), np.array([]))
        return MetricSeries(series.metric_name, series.pool_id,
                            series.timestamps[1:].copy(),
                            np.diff(series.values))
    raise ValidationError(f"unknown transform {transform!r}")


def share_price_series(stream: EventStream, prices: PriceTable,
                       entry: PoolRegistryEntry,
                       period: int = 3600) -> tuple[MetricSeries, MetricSeries]:
    """(LP share price, virtual price) series from reserve snapshots."""
    if not stream.snapshots:
        raise ValidationError(f"pool {stream.pool_id} has no reserve snapshots")
    sp_points, vp_points = [], []
    for snap in stream.snapshots:
        state = stableswap.PoolState(balances=snap.balances, amp=entry.amp,
                                     fee=entry.fee, lp_supply=snap.lp_supply)
        price_map = {token: prices.at(token, snap.ts, period)
                     for token in stream.tokens}
        sp_points.append((snap.ts, stableswap.lp_share_price(
            state, stream.tokens, price_map)))
        vp_points.append((snap.ts, stableswap.virtual_price(state)))
    sp = aggregate(sp_points, period, "last", metric_name="lpSharePrice",
                   pool_id=stream.pool_id)
    vp = aggregate(vp_points, period, "last", metric_name="virtualPrice",
                   pool_id=stream.pool_id)
    return sp, vp


# ---------------------------------------------------------------------------
# Manifests

MANIFEST_NAME = "manifest.json"


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir: str, command: str, inputs: Sequence[str],
                   outputs: Sequence[str], config: dict | None = None) -> str:
    manifest = {
        "tool": f"depegwatch {TOOL_VERSION}",
        "command": command,
        "config": config or {},
        "inputs": {os.path.basename(p): sha256_file(p) for p in sorted(inputs)},
        "outputs": {os.path.basename(p): sha256_file(p) for p in sorted(outputs)},
    }
    path = os.path.join(out_dir, MANIFEST_NAME)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def verify_manifest(path: str) -> list[str]:
    """Re-hash the manifest's outputs; returns a list of mismatch messages."""
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    base = os.path.dirname(path)
    problems = []
    for name, digest in manifest.get("outputs", {}).items():
        target = os.path.join(base, name)
        if not os.path.exists(target):
            problems.append(f"missing output file {name}")
        elif sha256_file(target) != digest:
            problems.append(f"digest mismatch for {name}")
    return problems
