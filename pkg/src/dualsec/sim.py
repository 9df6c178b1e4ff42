"""System harness: two cores, the controller and four security modes.

Both cores and the controller are clocked from one loop iteration per
cycle: scheduled interrupts are queued, the controller ticks (emitting hold
/ drain / PC-write lines), both cores step, power is sampled, and protocol
events retired this cycle feed the controller's next tick.

Modes gate the two mechanisms:

    NON_SECURED   neither; chk/startBal/endBal retire as nops
    SECURED_I     integrity checking only
    SECURED_M     balancing only
    SECURED       both

Net runtime of a two-application schedule follows the max rule: the slower
core's completion cycle, which under balancing decomposes into the victim's
own runtime plus the 748-cycle switch plus the balanced window.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np
import yaml

from .controller import Controller, ProtocolViolation
from .core import Core, Signals
from .isa import MemoryImage
from .power import LeakageConfig, PowerTrace


class Mode(enum.Enum):
    NON_SECURED = "NON_SECURED"
    SECURED_I = "SECURED_I"
    SECURED_M = "SECURED_M"
    SECURED = "SECURED"

    @property
    def integrity(self) -> bool:
        return self in (Mode.SECURED_I, Mode.SECURED)

    @property
    def balancing(self) -> bool:
        return self in (Mode.SECURED_M, Mode.SECURED)


@dataclass
class SystemConfig:
    mode: Mode = Mode.NON_SECURED
    max_cycles: int = 200_000
    leakage: LeakageConfig = field(default_factory=LeakageConfig)
    power_trace: bool = False
    events_trace: bool = False
    record_retires: bool = False
    record_checks: bool = False
    interrupts: tuple = ()  # (cycle, core_id, vector)


class ConfigError(Exception):
    pass


def split_image(img: MemoryImage) -> tuple[MemoryImage, MemoryImage]:
    """Split one linked image into (instruction memory, data memory)."""
    imem, dmem = MemoryImage(), MemoryImage()
    for sec in img.sections:
        half = imem if sec.kind == "code" else dmem
        half.add_section(sec.kind, sec.start, sec.end)
        for addr in range(sec.start, sec.end, 4):
            if addr in img.words:
                half.words[addr] = img.words[addr]
    return imem, dmem


def merge_images(*imgs: MemoryImage) -> MemoryImage:
    out = MemoryImage()
    for img in imgs:
        for sec in img.sections:
            out.add_section(sec.kind, sec.start, sec.end)
        out.words.update(img.words)
    return out


def has_balance_markers(img: MemoryImage) -> bool:
    from .isa import OPCODES

    startbal_op = OPCODES["startBal"]
    for sec in img.sections_of("code"):
        for addr in range(sec.start, sec.end, 4):
            if img.word(addr) >> 26 == startbal_op:
                return True
    return False


@dataclass
class CoreResult:
    status: str  # ok | trapped | running | idle
    halt_cycle: int | None
    retired: int
    chk_retired: int
    cfi_retired: int
    exceptions: list

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "halt_cycle": self.halt_cycle,
            "retired": self.retired,
            "chk_retired": self.chk_retired,
            "cfi_retired": self.cfi_retired,
            "exceptions": [vars(e) for e in self.exceptions],
        }


@dataclass
class RunResult:
    status: str  # ok | timeout | protocol-violation
    cycles: int
    net_runtime: int
    cores: tuple[CoreResult, CoreResult]
    power: PowerTrace | None
    accounting: list
    transitions: list
    balance_windows: list
    diagnostics: list[str]
    system: "System"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "cycles": self.cycles,
            "net_runtime": self.net_runtime,
            "core1": self.cores[0].to_dict(),
            "core2": self.cores[1].to_dict(),
            "accounting": [vars(r) for r in self.accounting],
            "balance_windows": list(self.balance_windows),
            "diagnostics": list(self.diagnostics),
        }


class System:
    """Two cores plus controller, stepped in lock-step from one clock."""

    def __init__(
        self,
        cfg: SystemConfig,
        app1: MemoryImage | None,
        app2: MemoryImage | None,
        complement: MemoryImage | None = None,
    ):
        self.cfg = cfg
        mode = cfg.mode

        mem1 = split_image(app1) if app1 is not None else (None, None)
        parts2 = [i for i in (app2,) if i is not None]
        if complement is not None and mode.balancing:
            parts2.append(complement)
        if parts2:
            mem2 = split_image(merge_images(*parts2))
        else:
            mem2 = (None, None)

        if mode.balancing:
            for img, name in ((app1, "core1"), (app2, "core2")):
                if img is not None and has_balance_markers(img) and name == "core1":
                    if complement is None:
                        raise ConfigError(
                            "balancing mode needs the complementary image for the balanced app"
                        )
                    if app2 is None:
                        raise ConfigError("balancing needs a victim application on core2")

        common = dict(
            integrity_enabled=mode.integrity,
            balancing_enabled=mode.balancing,
            trace=cfg.events_trace,
            record_retires=cfg.record_retires,
            record_checks=cfg.record_checks,
            leak_model=cfg.leakage.model,
        )
        self.core1 = Core(1, mem1[0], mem1[1], **common)
        self.core2 = Core(2, mem2[0], mem2[1], **common)
        # each core starts at its own application's entry with its own stack;
        # the merged memories may also hold the complementary program
        for core, app in ((self.core1, app1), (self.core2, app2)):
            if app is None:
                continue
            core.pc = app.entry()
            stacks = app.sections_of("stack")
            if stacks:
                core.regs[29] = stacks[0].end
        self.controller = Controller(self.core1, self.core2)
        self.has_app = (app1 is not None, app2 is not None)

    def run(self, mutations: list[tuple] | None = None) -> RunResult:
        """Execute until both applications finish or the cycle bound hits.

        mutations: optional list of (cycle, kind, *args) applied at the
        start of the given cycle, kinds: flip(core,addr,bit),
        replace(core,addr,word), redirect(core,new_pc).
        """
        cfg = self.cfg
        lk = cfg.leakage
        rng = np.random.default_rng(lk.seed) if lk.sigma > 0 else None
        schedule = sorted(cfg.interrupts)
        sched_i = 0
        muts = sorted(mutations or [], key=lambda m: m[0])
        mut_i = 0

        p1: list[float] = []
        p2: list[float] = []
        pending: list[tuple] = []
        core1, core2, ctrl = self.core1, self.core2, self.controller
        status = "timeout"
        diagnostics: list[str] = []
        cycle = 0

        while cycle < cfg.max_cycles:
            cycle += 1
            while mut_i < len(muts) and muts[mut_i][0] <= cycle:
                self._apply_mutation(muts[mut_i])
                mut_i += 1
            while sched_i < len(schedule) and schedule[sched_i][0] == cycle:
                _, core_id, vector = schedule[sched_i]
                ctrl.request_irq(core_id, vector)
                sched_i += 1
            try:
                s1, s2 = ctrl.tick(cycle, pending)
            except ProtocolViolation as exc:
                status = "protocol-violation"
                diagnostics.append(str(exc))
                break
            pending = []
            core1.step(cycle, s1)
            core2.step(cycle, s2)
            if core1.events_out:
                pending.extend((1, ev) for ev in core1.events_out)
                core1.events_out.clear()
            if core2.events_out:
                pending.extend((2, ev) for ev in core2.events_out)
                core2.events_out.clear()

            if cfg.power_trace:
                n1 = n2 = 0.0
                if rng is not None:
                    n1, n2 = rng.normal(0.0, lk.sigma, 2)
                p1.append(
                    lk.alpha * core1.leak_reg + lk.beta * core1.leak_mem + lk.gamma * core1.leak_fetch + n1
                )
                p2.append(
                    lk.alpha * core2.leak_reg + lk.beta * core2.leak_mem + lk.gamma * core2.leak_fetch + n2
                )

            if core1.trapped or core2.trapped:
                status = "ok"  # attack-trap: the run ends with its diagnosis
                break
            done1 = not core1.active()
            done2 = not core2.active()
            if done1 and done2 and not ctrl.busy() and not pending and sched_i >= len(schedule):
                status = "ok"
                break

        power = None
        if cfg.power_trace:
            a1 = np.array(p1)
            a2 = np.array(p2)
            power = PowerTrace(a1, a2, a1 + a2, meta={"cycles": cycle, "mode": cfg.mode.value})

        cores = tuple(
            CoreResult(
                status=self._core_status(core, has_app),
                halt_cycle=core.halt_cycle,
                retired=core.retired,
                chk_retired=core.chk_retired,
                cfi_retired=core.cfi_retired,
                exceptions=list(core.exceptions),
            )
            for core, has_app in ((core1, self.has_app[0]), (core2, self.has_app[1]))
        )
        net = max(
            [c.halt_cycle for c, has in zip(cores, self.has_app) if has and c.halt_cycle],
            default=0,
        )
        return RunResult(
            status=status,
            cycles=cycle,
            net_runtime=net,
            cores=cores,
            power=power,
            accounting=list(ctrl.accounting),
            transitions=list(ctrl.transitions),
            balance_windows=list(ctrl.balance_windows),
            diagnostics=diagnostics + list(ctrl.notes),
            system=self,
        )

    def _apply_mutation(self, mut: tuple) -> None:
        _, kind, core_id, *args = mut
        core = self.core1 if core_id == 1 else self.core2
        if kind == "flip":
            addr, bit = args
            core.imem.words[addr] = core.imem.word(addr) ^ (1 << bit)
        elif kind == "replace":
            addr, word = args
            core.imem.words[addr] = word & 0xFFFFFFFF
        elif kind == "redirect":
            (new_pc,) = args
            core.pc = new_pc
            core.pipeline.clear()
        else:
            raise ValueError(f"unknown mutation kind {kind!r}")

    @staticmethod
    def _core_status(core: Core, has_app: bool) -> str:
        if not has_app:
            return "idle"
        if core.trapped:
            return "trapped"
        if core.halted:
            return "ok"
        return "running"


# ---------------------------------------------------------------------------
# lock-step audit


def balancing_intervals(result: RunResult) -> list[tuple[int, int]]:
    """Cycle intervals during which the controller was in BALANCING."""
    intervals = []
    start = None
    for cycle, _, to, _ in result.transitions:
        if to == "BALANCING" and start is None:
            start = cycle + 1
        elif to != "BALANCING" and start is not None:
            intervals.append((start, cycle - 1))
            start = None
    if start is not None:
        intervals.append((start, result.cycles))
    return intervals


def lockstep_audit(result: RunResult) -> dict:
    """Verify both cores retire identical words cycle-for-cycle while balancing."""
    sys_ = result.system
    if not sys_.core1.record_retires:
        raise ValueError("run with record_retires=True to audit lock-step")
    intervals = balancing_intervals(result)

    def within(log):
        return [
            entry
            for entry in log
            if any(lo <= entry[0] <= hi for lo, hi in intervals)
        ]

    r1 = within(sys_.core1.retire_log)
    r2 = within(sys_.core2.retire_log)
    mismatches = [(a, b) for a, b in zip(r1, r2) if a != b]
    skew = abs(len(r1) - len(r2))
    return {
        "intervals": intervals,
        "retires": len(r1),
        "mismatches": mismatches,
        "skew": skew,
        "ok": not mismatches and skew == 0 and len(r1) > 0,
    }


# ---------------------------------------------------------------------------
# mode comparison


@dataclass
class AppBundle:
    """Build variants of one application.

    plain carries balancing markers but no chk instructions; instrumented
    adds the chk chain.  Balanced apps also carry the matching complement
    images for the victim core's memories.
    """

    name: str
    plain: MemoryImage
    instrumented: MemoryImage
    complement_plain: MemoryImage | None = None
    complement_instrumented: MemoryImage | None = None

    def variant(self, mode: Mode) -> MemoryImage:
        return self.instrumented if mode.integrity else self.plain

    def complement(self, mode: Mode) -> MemoryImage | None:
        if not mode.balancing:
            return None
        return self.complement_instrumented if mode.integrity else self.complement_plain


def run_pair(mode: Mode, app1: AppBundle, app2: AppBundle | None, **cfg_kw) -> RunResult:
    cfg = SystemConfig(mode=mode, **cfg_kw)
    system = System(
        cfg,
        app1.variant(mode),
        app2.variant(mode) if app2 else None,
        complement=app1.complement(mode),
    )
    return system.run()


def compare_modes(app1: AppBundle, app2: AppBundle | None = None, **cfg_kw) -> dict:
    """Net runtimes and overheads of an app pair across all four modes."""
    rows = {}
    for mode in Mode:
        result = run_pair(mode, app1, app2, **cfg_kw)
        rows[mode.value] = {
            "net_runtime": result.net_runtime,
            "status": result.status,
            "retired": [c.retired for c in result.cores],
            "chk_retired": [c.chk_retired for c in result.cores],
            "cfi_retired": [c.cfi_retired for c in result.cores],
        }
    base = rows[Mode.NON_SECURED.value]["net_runtime"]
    for row in rows.values():
        row["overhead_pct"] = 100.0 * (row["net_runtime"] - base) / base if base else 0.0
    chk = sum(rows[Mode.SECURED_I.value]["chk_retired"])
    baseline_retired = sum(rows[Mode.NON_SECURED.value]["retired"])
    rows["identity"] = {
        "delta_cycles_secured_i": rows[Mode.SECURED_I.value]["net_runtime"] - base,
        "chk_retires": chk,
        "baseline_retires": baseline_retired,
        "chk_fraction": chk / baseline_retired if baseline_retired else 0.0,
    }
    return rows


# ---------------------------------------------------------------------------
# config files


def load_config(path) -> dict:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict) or data.get("version") != 1:
        raise ConfigError(f"{path}: expected a mapping with 'version: 1'")
    return data


def system_from_config(data: dict, resolve=lambda p: p) -> System:
    mode = Mode(data.get("mode", "NON_SECURED"))
    lk = LeakageConfig(**data.get("leakage", {}))
    trace = data.get("trace", {})
    irqs = tuple(
        (int(i["cycle"]), int(i["core"]), int(i["vector"], 0) if isinstance(i["vector"], str) else int(i["vector"]))
        for i in data.get("interrupts", [])
    )
    cfg = SystemConfig(
        mode=mode,
        max_cycles=int(data.get("max_cycles", 200_000)),
        leakage=lk,
        power_trace=bool(trace.get("power", False)),
        events_trace=bool(trace.get("events", False)),
        record_retires=bool(trace.get("retires", False)),
        record_checks=bool(trace.get("checks", False)),
        interrupts=irqs,
    )
    apps = data.get("apps", {})

    def load_image(key):
        entry = apps.get(key)
        if entry is None:
            return None
        with open(resolve(entry["image"])) as fh:
            return MemoryImage.from_text(fh.read())

    app1 = load_image("core1")
    app2 = load_image("core2")
    complement = None
    bal = data.get("balance")
    if bal and bal.get("complement_image"):
        with open(resolve(bal["complement_image"])) as fh:
            complement = MemoryImage.from_text(fh.read())
    return System(cfg, app1, app2, complement=complement)


def write_events_jsonl(result: RunResult, path) -> None:
    """Serialize core events and controller transitions, cycle-ordered."""
    rows = []
    for core in (result.system.core1, result.system.core2):
        for ev in core.trace:
            rows.append({"cycle": ev[0], "core": ev[1], "kind": ev[2], "args": list(ev[3:])})
    for cycle, frm, to, countdown in result.transitions:
        rows.append(
            {"cycle": cycle, "core": 0, "kind": "phase", "args": [frm, to, countdown]}
        )
    rows.sort(key=lambda r: (r["cycle"], r["core"], r["kind"]))
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
