"""Parsers for the per-protocol event dumps (Uniswap V3, Aave, Morpho, Pendle).

Every dump is a JSON array or JSON-lines file of event objects whose field
names follow the protocol's extraction schema. Amounts are kept as exact
integer strings because wei-scale values overflow 64-bit types.
"""

from __future__ import annotations

import enum
import json
import logging
import os
import re
from collections import Counter
from dataclasses import dataclass, field

from .events import BaseEventKind, EventSequence, collapse_block, write_jsonl
from .exceptions import MalformedRecord, UnknownEventType

logger = logging.getLogger(__name__)


class Protocol(str, enum.Enum):
    UNISWAP = "Uniswap"
    AAVE = "Aave"
    MORPHO = "Morpho"
    PENDLE = "Pendle"

    @classmethod
    def from_name(cls, name: str) -> "Protocol":
        low = name.lower()
        for p in cls:
            if low.startswith(p.value.lower()):
                return p
        raise ValueError(f"unknown protocol {name!r}")

    @property
    def is_lending(self) -> bool:
        return self in (Protocol.AAVE, Protocol.MORPHO)


AMOUNT_FIELDS = {
    Protocol.UNISWAP: ("amount0", "amount1"),
    Protocol.AAVE: ("amount",),
    Protocol.MORPHO: ("amount", "net_amount"),
    Protocol.PENDLE: ("netLpMinted", "netSyUsed", "netPtUsed", "netLpBurned", "netSyOut",
                      "netPtOut", "lnLastImpliedRate", "netSyFee", "netSyToReserve"),
}

_LENDING = {
    Protocol.AAVE: {"supply": BaseEventKind.SUPPLY, "borrow": BaseEventKind.BORROW,
                    "withdraw": BaseEventKind.WITHDRAW, "repay": BaseEventKind.REPAY},
    Protocol.MORPHO: {"supply": BaseEventKind.SUPPLY, "borrow": BaseEventKind.BORROW,
                      "withdraw": BaseEventKind.WITHDRAW, "repay": BaseEventKind.REPAY,
                      "liquidate": BaseEventKind.LIQUIDATE},
}
_HEX = re.compile(r"^0x[0-9a-fA-F]*$")
_INT = re.compile(r"^[+-]?\d+$")


@dataclass(frozen=True)
class RawRecord:
    protocol: Protocol
    block: int
    kind: BaseEventKind
    tx_hash: str = ""
    log_index: int = 0
    wallclock: int | None = None
    amounts: dict = field(default_factory=dict)
    tx_index: int | None = None

    @property
    def sort_key(self):
        return (self.block, -1 if self.tx_index is None else self.tx_index, self.log_index)

    def amount(self, name) -> int | None:
        """Exact integer value of an amount field, or None when absent."""
        value = self.amounts.get(name)
        return None if value is None else int(value)

    def to_dict(self) -> dict:
        out = {"protocol": self.protocol.value, "block": self.block, "kind": self.kind.value,
               "tx_hash": self.tx_hash, "log_index": self.log_index,
               "wallclock": self.wallclock, "amounts": dict(self.amounts)}
        if self.tx_index is not None:
            out["tx_index"] = self.tx_index
        return out

    @classmethod
    def from_dict(cls, d) -> "RawRecord":
        return cls(Protocol(d["protocol"]), int(d["block"]), BaseEventKind(d["kind"]),
                   d.get("tx_hash", ""), int(d.get("log_index", 0)), d.get("wallclock"),
                   dict(d.get("amounts", {})), d.get("tx_index"))


def _natural(value, name, required=True):
    if value is None or value == "":
        if required:
            raise MalformedRecord(f"missing {name}")
        return None
    if isinstance(value, bool):
        raise MalformedRecord(f"{name} is not an integer: {value!r}")
    if isinstance(value, float):
        if not value.is_integer():
            raise MalformedRecord(f"{name} is not an integer: {value!r}")
        value = int(value)
    if isinstance(value, str):
        if not _INT.match(value.strip()):
            raise MalformedRecord(f"{name} is not an integer: {value!r}")
        value = int(value.strip())
    if not isinstance(value, int) or value < 0:
        raise MalformedRecord(f"{name} is not a natural number: {value!r}")
    return value


def _decimal(value, name):
    """Normalise an amount to an exact integer string; '' and None mean absent."""
    if value is None or value == "":
        return None
    if isinstance(value, bool) or isinstance(value, float):
        # floats already lost precision when the JSON was decoded
        raise MalformedRecord(f"amount {name} is not an exact integer: {value!r}")
    if isinstance(value, int):
        return str(value)
    if isinstance(value, str) and _INT.match(value.strip()):
        return value.strip()
    raise MalformedRecord(f"amount {name} is not a decimal integer: {value!r}")


def _sign(s):
    if s is None:
        return 0
    v = int(s)
    return (v > 0) - (v < 0)


def _swap_direction(protocol, amounts):
    if protocol is Protocol.UNISWAP:
        primary, secondary = amounts.get("amount0"), amounts.get("amount1")
        # amount0 > 0: token0 enters the pool
        sign = _sign(primary) or -_sign(secondary)
        inbound = sign > 0
    else:
        primary, secondary = amounts.get("netPtOut"), amounts.get("netSyOut")
        # netPtOut < 0: PT enters the pool
        sign = -_sign(primary) or _sign(secondary)
        inbound = sign > 0
    if sign == 0:
        raise MalformedRecord("swap carries no signed amount to infer its direction")
    return BaseEventKind.SWAP_IN if inbound else BaseEventKind.SWAP_OUT


def parse_record(protocol, obj) -> RawRecord:
    """Parse one protocol-specific event object into a :class:`RawRecord`."""
    protocol = Protocol(protocol) if not isinstance(protocol, Protocol) else protocol
    if not isinstance(obj, dict):
        raise MalformedRecord("record is not a JSON object")
    if protocol is Protocol.UNISWAP:
        etype = obj.get("type")
        block = _natural(obj.get("blockNumber"), "blockNumber")
        tx_hash = obj.get("txHash") or ""
        log_index = _natural(obj.get("logIndex", obj.get("log_index")), "logIndex", False)
    else:
        etype = obj.get("event_type")
        block = _natural(obj.get("block_number"), "block_number")
        tx_hash = obj.get("transaction_hash") or ""
        log_index = _natural(obj.get("log_index"), "log_index", False)
    if block == 0:
        raise MalformedRecord("block number must be positive")
    if not isinstance(tx_hash, str) or (tx_hash and not _HEX.match(tx_hash)):
        raise MalformedRecord(f"transaction hash is not 0x-prefixed hex: {tx_hash!r}")
    if not isinstance(etype, str):
        raise UnknownEventType(protocol.value, etype)
    wallclock = _natural(obj.get("timestamp"), "timestamp", False)
    tx_index = _natural(obj.get("tx_index"), "tx_index", False)
    amounts = {}
    for name in AMOUNT_FIELDS[protocol]:
        value = _decimal(obj.get(name), name)
        if value is not None:
            amounts[name] = value

    low = etype.strip().lower()
    if protocol.is_lending:
        kind = _LENDING[protocol].get(low)
        if kind is None:
            raise UnknownEventType(protocol.value, etype)
    else:
        allowed = {"mint", "burn", "swap"}
        if protocol is Protocol.PENDLE:
            allowed.add("updateimpliedrate")
        if low not in allowed:
            raise UnknownEventType(protocol.value, etype)
        if low == "swap":
            kind = _swap_direction(protocol, amounts)
        elif low == "mint":
            kind = BaseEventKind.MINT
        elif low == "burn":
            kind = BaseEventKind.BURN
        else:
            kind = BaseEventKind.UPDATE_IMPLIED_RATE
    return RawRecord(protocol, block, kind, tx_hash, log_index or 0, wallclock, amounts, tx_index)


@dataclass
class ParseResult:
    records: list
    skipped: int = 0
    errors: list = field(default_factory=list)


def parse_records(objects, protocol, strict=False) -> ParseResult:
    """Parse a stream of event objects, sorted into execution order.

    In lenient mode malformed records are skipped and counted; in strict mode
    the first error is re-raised with the record index attached.
    """
    result = ParseResult([])
    for i, obj in enumerate(objects):
        try:
            result.records.append(parse_record(protocol, obj))
        except (MalformedRecord, UnknownEventType) as exc:
            if strict:
                if isinstance(exc, UnknownEventType):
                    exc.index = i
                    raise
                raise MalformedRecord(str(exc), index=i) from exc
            result.skipped += 1
            result.errors.append(f"record {i}: {exc}")
    # sorted() is stable, so equal keys keep their input order
    result.records = sorted(result.records, key=lambda r: r.sort_key)
    return result


def reserve_deltas(rec: RawRecord):
    """Signed pool reserve changes (token0/PT, token1/SY) implied by a record."""
    a = rec.amount
    if rec.protocol is Protocol.UNISWAP:
        d0, d1 = a("amount0") or 0, a("amount1") or 0
        if rec.kind is BaseEventKind.BURN:
            return -d0, -d1
        return d0, d1
    if rec.protocol is Protocol.PENDLE:
        if rec.kind is BaseEventKind.MINT:
            return a("netPtUsed") or 0, a("netSyUsed") or 0
        if rec.kind is BaseEventKind.BURN:
            return -(a("netPtOut") or 0), -(a("netSyOut") or 0)
        if rec.kind in (BaseEventKind.SWAP_IN, BaseEventKind.SWAP_OUT):
            return -(a("netPtOut") or 0), -(a("netSyOut") or 0)
    return 0, 0


def records_to_sequence(records, pool_id) -> EventSequence:
    tpp = [r for r in records if r.kind.is_tpp]
    return collapse_block([(r.block, r.kind) for r in tpp], pool_id,
                          [r.wallclock for r in tpp])


def ingest_pool(objects, protocol, pool_id, strict=False, return_result=False):
    """Parse one pool's records and collapse them into an :class:`EventSequence`."""
    protocol = Protocol(protocol) if not isinstance(protocol, Protocol) else protocol
    if protocol.is_lending:
        raise ValueError(f"{protocol.value} events carry lending kinds and have no TPP mark")
    result = parse_records(objects, protocol, strict=strict)
    seq = records_to_sequence(result.records, pool_id)
    if return_result:
        return seq, result
    return seq


def block_extras(records):
    """Per-block summed reserve deltas as exact strings, aligned with the collapsed blocks."""
    out, last = [], None
    for r in records:
        if not r.kind.is_tpp:
            continue
        dx, dy = reserve_deltas(r)
        if r.block != last:
            out.append([0, 0])
            last = r.block
        out[-1][0] += dx
        out[-1][1] += dy
    return [{"dx": str(dx), "dy": str(dy)} for dx, dy in out]


def read_objects(path):
    with open(path) as fh:
        text = fh.read()
    if path.endswith(".jsonl"):
        return [json.loads(line) for line in text.splitlines() if line.strip()]
    data = json.loads(text)
    if isinstance(data, dict):
        data = data.get("events", data.get("data", []))
    if not isinstance(data, list):
        raise MalformedRecord("top-level JSON must be an array of events")
    return data


@dataclass
class ScanResult:
    sequences: dict
    records: dict
    manifest: dict


def scan_dataset(root, strict=False) -> ScanResult:
    """Parse every ``<protocol>/<pool>.json[l]`` file under ``root``.

    Files are visited in lexicographic order. Unreadable files are listed
    under ``manifest["errors"]`` and the scan continues.
    """
    sequences, records, pools, errors = {}, {}, {}, {}
    total = 0
    kind_totals = Counter()
    for proto_dir in sorted(os.listdir(root)) if os.path.isdir(root) else []:
        pdir = os.path.join(root, proto_dir)
        if not os.path.isdir(pdir):
            continue
        try:
            protocol = Protocol.from_name(proto_dir)
        except ValueError:
            continue
        for name in sorted(os.listdir(pdir)):
            if not (name.endswith(".json") or name.endswith(".jsonl")):
                continue
            path = os.path.join(pdir, name)
            pool_id = name.rsplit(".", 1)[0]
            key = f"{proto_dir}/{pool_id}"
            try:
                result = parse_records(read_objects(path), protocol, strict=strict)
            except (OSError, ValueError) as exc:
                errors[key] = f"{type(exc).__name__}: {exc}"
                logger.warning("skipping %s: %s", path, exc)
                continue
            recs = result.records
            records[key] = recs
            kinds = Counter(r.kind.value for r in recs)
            kind_totals.update(kinds)
            total += len(recs)
            entry = {"protocol": protocol.value, "n_records": len(recs),
                     "skipped": result.skipped,
                     "min_block": min((r.block for r in recs), default=None),
                     "max_block": max((r.block for r in recs), default=None),
                     "kind_counts": dict(sorted(kinds.items()))}
            if not protocol.is_lending:
                seq = records_to_sequence(recs, pool_id)
                sequences[key] = seq
                entry["n_events"] = len(seq)
            pools[key] = entry
    manifest = {"root": str(root), "total_events": total,
                "kind_counts": dict(sorted(kind_totals.items())),
                "pools": pools, "errors": errors}
    return ScanResult(sequences, records, manifest)


def export_unified(scan: ScanResult, out_dir):
    """Write collapsed sequences as unified JSON lines plus ``manifest.json``."""
    os.makedirs(out_dir, exist_ok=True)
    for key, seq in scan.sequences.items():
        write_jsonl(os.path.join(out_dir, key + ".jsonl"), seq, block_extras(scan.records[key]))
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(scan.manifest, fh, indent=2, sort_keys=True)
